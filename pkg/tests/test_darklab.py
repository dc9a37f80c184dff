import numpy as np
import pytest
from scipy.linalg import expm

from chiralspin import darklab, evolve, netmodel, qops
from chiralspin.darklab import NotDarkError


def _model(pattern, omega, gamma_L, **kw):
    return netmodel.assemble_model(netmodel.chain(len(pattern), omega, list(pattern),
                                                  gamma_L=gamma_L, **kw))


def _fid(a, b):
    return abs(np.vdot(a, b)) ** 2


# ------------------------------------------------------------------ dimers

def test_dimer_state_limits():
    assert np.allclose(darklab.dimer_state(0), qops.basis_state("gg"))
    assert _fid(darklab.dimer_state(1e3), qops.singlet()) > 1 - 1e-6
    c = qops.collective_lowering(2)
    assert np.linalg.norm(c @ darklab.dimer_state(0.3 - 2j)) < 1e-15


def test_singlet_fraction_values():
    assert darklab.singlet_fraction(0.0, 0.2, 1.0) == 0
    assert darklab.singlet_fraction(0.5, 0.0, 0.9) == pytest.approx(1.5713484026367723j)
    with pytest.raises(darklab.UndefinedFractionError):
        darklab.singlet_fraction(0.5, 0.0, 0.0)


def test_gamma_eff_values():
    assert darklab.gamma_eff(0.0, 0.3, 0.2, 1.0) == pytest.approx(2.4)
    assert darklab.gamma_eff(0.5, 0.0, 0.0, 1.0) == pytest.approx(2 / 3)
    assert darklab.gamma_eff(0.5, 0.0, 1.0, 1.0) == 0
    with pytest.raises(ValueError):
        darklab.gamma_eff(0.5, 0.0, -1.0, 1.0)


# ------------------------------------------------------------------ dimerized chains

def test_dimerized_state_zero_detuning_is_product_of_identical_dimers():
    st = darklab.dimerized_state([0.0] * 6, 0.5, 0.9)
    d = darklab.dimer_state(darklab.singlet_fraction(0.5, 0.0, 0.9))
    assert np.allclose(st.realized, qops.kron_states(d, d, d))
    assert st.partition == ((1, 2), (3, 4), (5, 6))


def test_dimerized_state_n2_is_dimer():
    st = darklab.dimerized_state([0.3, -0.3], 0.5, 0.5)
    assert np.allclose(st.realized, darklab.dimer_state(darklab.singlet_fraction(0.5, 0.3, 0.5)))


def test_dimerized_state_errors():
    with pytest.raises(NotDarkError):
        darklab.dimerized_state([0.1, 0.1], 0.5, 1.0)
    with pytest.raises(NotDarkError):
        darklab.dimerized_state([0.1, -0.1, 0.0], 0.5, 1.0)


def test_dimerized_state_is_dark_for_chain():
    pat = [0.2, -0.2, 0.0, 0.0, -0.5, 0.5]
    st = darklab.dimerized_state(pat, 0.7, 0.8)
    assert darklab.verify_dark(st.realized, _model(pat, 0.7, 0.2)).verdict


# ------------------------------------------------------------------ tetramers

def test_tetramer_conditions():
    assert darklab.tetramer_conditions([0.1, -0.1, 0.3, -0.3]) == {"I": True, "II": False, "III": False}
    assert darklab.tetramer_conditions([0.1, 0.3, -0.1, -0.3])["II"]
    assert darklab.tetramer_conditions([0.1, 0.3, -0.3, -0.1])["III"]
    with pytest.raises(NotDarkError):
        darklab.tetramer_state([0.1, 0.2, 0.3, 0.4], 0.5, 1.0)


def test_tetramer_pattern_one_factorizes():
    pat = [0.2, -0.2, 0.4, -0.4]
    a = darklab.tetramer_coefficients(pat, 0.5, 0.9)
    assert a["a13"] == 0 and a["a1324"] == 0
    t = darklab.tetramer_state(pat, 0.5, 0.9)
    d = darklab.dimerized_state(pat, 0.5, 0.9).realized
    assert _fid(t, d) == pytest.approx(1.0, abs=1e-12)


def test_tetramer_pattern_two_strong_drive_limit_is_two_singlet_state():
    sp = lambda *p: darklab.singlet_product(p, 4)
    basis = np.array([sp((1, 2), (3, 4)), sp((1, 3), (2, 4))]).T
    q, _ = np.linalg.qr(basis)
    weights = [np.linalg.norm(q.conj().T @ darklab.tetramer_state([0.3, 0.1, -0.3, -0.1], om, 0.9)) ** 2
               for om in (5, 50, 500)]
    assert weights[0] < weights[1] < weights[2] and weights[2] > 1 - 1e-5
    ratios = [darklab.tetramer_coefficients([0.3, 0.1, -0.3, -0.1], om, 0.9)["a1324"] /
              darklab.tetramer_coefficients([0.3, 0.1, -0.3, -0.1], om, 0.9)["a1234"]
              for om in (5, 500)]
    assert ratios[0] == pytest.approx(ratios[1])


@pytest.mark.parametrize("pat", [[0.2, -0.2, 0.6, -0.6], [0.3, 0.1, -0.3, -0.1], [0.6, 0.4, -0.4, -0.6]])
def test_tetramer_state_is_dark(pat):
    cert = darklab.verify_dark(darklab.tetramer_state(pat, 5.0, 0.8), _model(pat, 5.0, 0.2))
    assert max(cert.jump_residuals) < 1e-12
    assert cert.hamiltonian_residual < 1e-10


# ------------------------------------------------------------------ swaps

def test_swap_unitary_basics():
    assert abs(darklab.swap_unitary(0.0, 2, 4) - np.eye(16)).max() < 1e-15
    u = darklab.swap_unitary(0.37, 1, 3).toarray()
    assert np.allclose(u @ u.conj().T, np.eye(8), atol=1e-12)
    with pytest.raises(ValueError):
        darklab.swap_unitary(0.1, 3, 3)


def test_swap_unitary_matches_exponential():
    theta = np.pi / 2
    ss = sum(np.kron(p, p) for p in qops.PAULI)
    ref = expm(0.5j * theta * ss)
    u = darklab.swap_unitary(theta, 1, 2).toarray()
    assert np.allclose(u, ref, atol=1e-12)
    n1 = qops.number(1, 2).toarray()
    assert np.allclose(u @ n1 @ u.conj().T, ref @ n1 @ ref.conj().T)


def test_theta_for_swap():
    assert darklab.theta_for_swap(0.3, 0.3, 1.0) == 0
    assert darklab.theta_for_swap(0.0, 0.5, 0.5) == pytest.approx(np.pi / 4)
    assert darklab.theta_for_swap(0.4, -0.4, 0.9) == pytest.approx(-0.7266423406817256)
    with pytest.raises(darklab.NoEntanglingSwapError):
        darklab.theta_for_swap(0.1, 0.2, 0.0)


def test_adjacent_transpositions():
    assert darklab.adjacent_transpositions([1, 2, 3]) == []
    assert darklab.adjacent_transpositions([1, 3, 2, 4]) == [2]
    with pytest.raises(ValueError):
        darklab.adjacent_transpositions([1, 1, 2])


def test_identity_permutation_keeps_dimers():
    pat = [0.2, -0.2, 0.5, -0.5]
    st = darklab.multimer_from_permutation([1, 2, 3, 4], pat, 0.5, 0.9)
    assert np.allclose(st.realized, darklab.dimerized_state(pat, 0.5, 0.9).realized)


def test_transposition_builds_tetramer():
    a, b, om, dg = 0.3, 0.1, 0.5, 0.8
    st = darklab.multimer_from_permutation([1, 3, 2, 4], [a, -a, b, -b], om, dg)
    assert st.pattern == (a, b, -a, -b)
    assert st.partition == ((1, 2, 3, 4),)
    assert darklab.verify_dark(st.realized, _model(st.pattern, om, 1 - dg)).verdict


def test_eight_spin_two_tetramers():
    pat = [0, 0.3, 0, -0.3, 0, 0.3, 0, -0.3]
    st = darklab.predicted_dark_state(pat, 0.5, 0.9)
    assert st.partition == ((1, 2, 3, 4), (5, 6, 7, 8))
    assert darklab.verify_dark(st.realized, _model(pat, 0.5, 0.1)).verdict


def test_swap_orders_give_same_state():
    stag, om, dg = [0.1, -0.1, 0.4, -0.4], 0.6, 0.7
    perm = [3, 1, 4, 2]
    target = darklab.permuted_pattern(perm, stag)
    a = darklab.multimer_from_permutation(perm, stag, om, dg).realized
    b = darklab.predicted_dark_state(target, om, dg).realized
    assert _fid(a, b) == pytest.approx(1.0, abs=1e-10)


def test_swap_covariance_of_steady_states():
    rng = np.random.default_rng(5)
    a, b = rng.uniform(0.1, 0.5, 2)
    pat = [a, -a, b, -b]
    om, gl = 0.6, 0.3
    rho = evolve.steady_state_direct(_model(pat, om, gl)).rho
    theta = darklab.theta_for_swap(pat[1], pat[2], 1 - gl)
    u = darklab.swap_unitary(-theta, 2, 4).toarray()
    swapped = [a, b, -a, -b]
    rho2 = evolve.steady_state_direct(_model(swapped, om, gl)).rho
    assert qops.trace_distance(rho2, u @ rho @ u.conj().T) < 1e-6


# ------------------------------------------------------------------ two guides

def test_two_waveguide_reduction_resonant():
    r = darklab.two_waveguide_reduction(0.5, 0.5, 0.0, 0.0)
    assert np.tan(r.theta) == pytest.approx(1.0)
    assert r.epsilon == pytest.approx(1.0)
    assert r.mapped == pytest.approx((0.5, -0.5))
    assert np.tan(darklab.two_waveguide_reduction(0.5, 0.5, 0, 0, branch=-1).theta) == pytest.approx(-1)
    with pytest.raises(ValueError):
        darklab.two_waveguide_reduction(0.0, 0.5, 0, 0)


def test_reduce_network_maps_onto_pairable_pattern():
    a = 0.3
    spec = netmodel.NetworkSpec(
        4, netmodel.DriveSpec.homogeneous(4, 5.0, [a, 0, 0, -a]),
        (netmodel.WaveguideSpec(0.5, 1.0), netmodel.WaveguideSpec(0.5, 1.0, order=(4, 2, 3, 1))))
    single, u, red = darklab.reduce_network(spec)
    eps = red.epsilon
    assert single.drive.detuning == pytest.approx((a, eps / 2, -eps / 2, -a))
    assert darklab.classify_pattern(single.drive.detuning).pairable
    rho1 = evolve.steady_state_direct(netmodel.assemble_model(single)).rho
    rho2 = evolve.steady_state_direct(netmodel.assemble_model(spec)).rho
    assert qops.trace_distance(rho2, u @ rho1 @ u.conj().T) < 1e-6
    assert qops.purity(rho2) == pytest.approx(1.0, abs=1e-8)


def test_swapped_pair_rejects_multiple_exchanges():
    assert darklab.swapped_pair((1, 2, 3, 4), (1, 3, 2, 4)) == 2
    with pytest.raises(NotDarkError):
        darklab.swapped_pair((1, 2, 3, 4), (2, 1, 4, 3))


# ------------------------------------------------------------------ classification

def test_classify_pattern():
    assert darklab.classify_pattern([0.0] * 4).pairable
    c = darklab.classify_pattern([0.6, 0.4, -0.4, -0.6])
    assert c.conditions == {"I": False, "II": False, "III": True}
    assert c.pairings == (((1, 4), (2, 3)),)
    assert not darklab.classify_pattern([0.0, 0.0, 0.0]).pairable
    assert not darklab.classify_pattern([0.1, 0.2]).pairable


def test_bidirectional_pairing():
    assert darklab.bidirectional_pairing([0.3, 0.1, -0.1, -0.3]).pairs == ((1, 4), (2, 3))
    assert darklab.bidirectional_pairing([0.3, -0.3, 0.1, -0.1]).pairs == ((1, 2), (3, 4))
    fig2d = [0.6, 0.4, -0.4, 0.2, -0.2, 0.1, -0.1, -0.6]
    assert (1, 8) in darklab.bidirectional_pairing(fig2d).pairs
    with pytest.raises(darklab.NonUniqueSteadyStateError):
        darklab.bidirectional_pairing([0.1, -0.1, 0.1, -0.1])


def test_bidirectional_prediction_is_dark():
    pat = [0.3, 0.1, -0.1, -0.3]
    bp = darklab.bidirectional_pairing(pat, omega=0.5)
    assert darklab.verify_dark(bp.state, _model(pat, 0.5, 1.0)).verdict


def test_bidirectional_swap_does_not_entangle_dimer_pair():
    # at dgamma = 0 the exchange is a plain SWAP up to phase: product stays product
    psi = qops.kron_states(darklab.dimer_state(0.4), darklab.dimer_state(-0.7j))
    for theta in (0.0, np.pi / 2, np.pi):
        out = darklab.swap_unitary(theta, 2, 4) @ psi
        if theta == np.pi / 2:
            assert qops.purity(qops.reduced_from_state(out, (1, 3))) == pytest.approx(1.0)
        else:
            assert qops.purity(qops.reduced_from_state(out, (1, 2))) == pytest.approx(1.0)


# ------------------------------------------------------------------ certificates

def test_verify_dark_examples():
    m0 = netmodel.assemble_model(netmodel.chain(3, 0.0))
    assert darklab.verify_dark(qops.ground_state(3), m0).verdict
    om, d, gl = 0.5, 0.3, 0.5
    dimer = darklab.dimer_state(darklab.singlet_fraction(om, d, 1 - gl))
    assert darklab.verify_dark(dimer, _model([d, -d], om, gl)).verdict
    cert = darklab.verify_dark(qops.triplet(), _model([0, 0], om, gl))
    assert cert.jump_residuals[0] == pytest.approx(np.sqrt(2))
    assert not cert.verdict
    with pytest.raises(ValueError):
        darklab.verify_dark(qops.ground_state(2), m0)


def test_multimer_state_invariants():
    with pytest.raises(NotDarkError):
        darklab.MultimerState(((1, 2),), {}, qops.triplet())
    with pytest.raises(ValueError):
        darklab.MultimerState(((1,), (2,)), {}, qops.basis_state("gg"))


def test_cluster_amplitudes_reproduce_dimer():
    alpha = 0.8 - 0.3j
    st = darklab.MultimerState.from_state(darklab.dimer_state(alpha))
    amps = st.amplitudes[(1, 2)]
    assert amps[(1, 2)] / amps[()] == pytest.approx(alpha)
