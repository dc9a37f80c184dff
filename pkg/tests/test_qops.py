import numpy as np
import pytest

from chiralspin import qops
from chiralspin.qops import SIGMA, SIGMA_X, IDENTITY


def test_embed_identity_is_identity():
    assert np.allclose(qops.embed(IDENTITY, 1, 3).toarray(), np.eye(8))


def test_embed_lowering_on_first_spin():
    out = qops.embed(SIGMA, 1, 2) @ qops.basis_state("eg")
    assert np.allclose(out, qops.basis_state("gg"))


def test_embed_product_matches_kron():
    a = (qops.embed(SIGMA_X, 2, 2) @ qops.embed(SIGMA_X, 1, 2)).toarray()
    assert np.allclose(a, np.kron(SIGMA_X, SIGMA_X))


def test_embed_rejects_bad_site():
    with pytest.raises(ValueError):
        qops.embed(SIGMA, 3, 2)
    with pytest.raises(ValueError):
        qops.embed(SIGMA, 0, 2)


def test_spin_one_is_most_significant_bit():
    psi = qops.basis_state("eg")
    assert psi[2] == 1  # index 0b10


def test_partial_trace_product_state():
    red = qops.partial_trace(qops.dm(qops.basis_state("gg")), [1])
    assert np.allclose(red, np.diag([1, 0]))


def test_partial_trace_singlet_is_mixed():
    red = qops.partial_trace(qops.dm(qops.singlet()), [1])
    assert np.allclose(red, np.eye(2) / 2)


def test_partial_trace_matches_index_loops():
    rng = np.random.default_rng(3)
    rho = qops.random_density(3, rng)
    t = rho.reshape([2] * 6)
    ref = np.zeros((4, 4), dtype=complex)
    for a in range(2):
        for c in range(2):
            for a2 in range(2):
                for c2 in range(2):
                    ref[2 * a + c, 2 * a2 + c2] = sum(t[a, b, c, a2, b, c2] for b in range(2))
    assert np.allclose(qops.partial_trace(rho, [1, 3]), ref)


def test_partial_trace_rejects_bad_keep():
    rho = qops.maximally_mixed(2)
    with pytest.raises(ValueError):
        qops.partial_trace(rho, [])
    with pytest.raises(ValueError):
        qops.partial_trace(rho, [1, 1])


def test_reduced_from_state_agrees_with_partial_trace():
    psi = qops.random_state(4, np.random.default_rng(0))
    assert np.allclose(qops.reduced_from_state(psi, [3, 1]), qops.partial_trace(qops.dm(psi), [3, 1]))


@pytest.mark.parametrize("rho, expected", [
    (qops.dm(qops.singlet()), 1.0),
    (qops.maximally_mixed(2), 0.25),
    (0.5 * qops.dm(qops.basis_state("gg")) + 0.5 * qops.dm(qops.singlet()), 0.5),
])
def test_purity_examples(rho, expected):
    assert qops.purity(rho) == pytest.approx(expected, abs=1e-14)


def test_entropy_examples():
    assert qops.entropy(qops.dm(qops.triplet())) == pytest.approx(0.0, abs=1e-12)
    assert qops.entropy(np.eye(2) / 2) == pytest.approx(np.log(2))
    assert qops.entropy(np.diag([0.9, 0.1])) == pytest.approx(0.3250829733914482, abs=1e-12)


def test_entropy_rejects_negative_eigenvalue():
    with pytest.raises(qops.PositivityError):
        qops.entropy(np.diag([1.1, -0.1]))


def test_expectation_examples():
    n1 = qops.number(1, 2)
    assert qops.expectation(n1, qops.basis_state("gg")) == 0
    assert qops.expectation(qops.total_jz(2), qops.singlet(), hermitian=True) == pytest.approx(0)
    hop = qops.raising(1, 2) @ qops.lowering(2, 2)
    assert qops.expectation(hop, qops.triplet()) == pytest.approx(0.5)
    assert qops.expectation(hop, qops.dm(qops.triplet())) == pytest.approx(0.5)


def test_expectation_dimension_mismatch():
    with pytest.raises(ValueError):
        qops.expectation(qops.number(1, 2), qops.ground_state(3))


def test_fidelity_examples():
    gg = qops.basis_state("gg")
    assert qops.fidelity_pure(gg, qops.dm(gg)) == pytest.approx(1.0)
    assert qops.fidelity_pure(qops.singlet(), qops.dm(qops.triplet())) == pytest.approx(0.0)
    assert qops.fidelity_pure(qops.singlet(), qops.maximally_mixed(2)) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        qops.fidelity_pure(gg, qops.maximally_mixed(3))


def test_as_density_checks():
    with pytest.raises(ValueError):
        qops.as_density(np.diag([0.5, 0.4]))
    with pytest.raises(qops.PositivityError):
        qops.as_density(np.diag([1.2, -0.2]))
    with pytest.raises(ValueError):
        qops.as_density(np.eye(3) / 3)


def test_as_state_rejects_unnormalized():
    with pytest.raises(ValueError):
        qops.as_state(np.ones(4))


def test_product_reduced_purity_one_only_for_pure_product():
    rng = np.random.default_rng(5)
    a, b = qops.random_state(1, rng), qops.random_state(2, rng)
    prod = qops.kron_states(a, b)
    assert qops.purity(qops.partial_trace(qops.dm(prod), [1])) == pytest.approx(1.0)
    ent = qops.kron_states(a, qops.singlet())
    assert qops.purity(qops.partial_trace(qops.dm(ent), [1, 2])) < 0.99


def test_permutation_operator_moves_spins():
    psi = qops.basis_state("egg")
    p = qops.permutation_operator([3, 1, 2])
    assert np.allclose(p @ psi, qops.basis_state("gge"))


def test_schmidt_coefficients():
    psi = qops.kron_states(qops.singlet(), qops.singlet())
    s = qops.schmidt_coefficients(psi, 2)
    assert s[0] == pytest.approx(1.0) and np.allclose(s[1:], 0)
    s = qops.schmidt_coefficients(psi, 1)
    assert np.allclose(s[:2], 1 / np.sqrt(2))


def test_trace_distance():
    assert qops.trace_distance(qops.dm(qops.singlet()), qops.dm(qops.triplet())) == pytest.approx(1)
    assert qops.trace_distance(np.eye(2) / 2, np.eye(2) / 2) == 0


def test_apply_site_matches_embed():
    psi = qops.random_state(3, np.random.default_rng(1))
    for site in (1, 2, 3):
        assert np.allclose(qops.apply_site(psi, SIGMA_X, site), qops.embed(SIGMA_X, site, 3) @ psi)
