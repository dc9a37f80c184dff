import numpy as np
import pytest
from scipy.linalg import expm

from chiralspin.integrate import Dopri5, KrylovExp


def _run(ig, t_end):
    while ig.t < t_end:
        ig.step(t_end)
    return ig


def test_dopri5_exponential_decay():
    ig = _run(Dopri5(lambda t, y: -0.7 * y, 0.0, np.array([1.0 + 0j]), 1e-10, 1e-12), 3.0)
    assert ig.t == pytest.approx(3.0)
    assert ig.y[0] == pytest.approx(np.exp(-2.1), rel=1e-8)


def test_dopri5_dense_output_inside_last_step():
    ig = Dopri5(lambda t, y: 1j * y, 0.0, np.array([1.0 + 0j]), 1e-10, 1e-12)
    ig.step(10.0)
    tm = 0.5 * (ig.t_old + ig.t)
    assert ig.interpolate(tm)[0] == pytest.approx(np.exp(1j * tm), abs=1e-7)


@pytest.mark.parametrize("real_span", [True, False])
def test_krylov_matches_matrix_exponential(real_span):
    rng = np.random.default_rng(2)
    a = rng.normal(size=(12, 12)) + 1j * rng.normal(size=(12, 12))
    a = -1j * (a + a.conj().T) / 2 - 0.3 * np.eye(12)
    y0 = rng.normal(size=12) + 0j
    ig = _run(KrylovExp(lambda t, y: a @ y, 0.0, y0, 1e-10, 1e-12, real_span=real_span), 2.0)
    assert np.allclose(ig.y, expm(2.0 * a) @ y0, atol=1e-8)
    tm = 0.5 * (ig.t_old + ig.t)
    assert np.allclose(ig.interpolate(tm), expm(tm * a) @ y0, atol=1e-8)
