"""Adaptive Dormand-Prince 5(4) stepper for complex array ODEs.

Works on arrays of any shape (state vectors or density matrices) and keeps
the 4th-order continuous extension so callers can sample or bisect inside a
step without extra right-hand-side evaluations.
"""

import numpy as np

C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# 5th minus embedded 4th order weights (7 stages, last one is FSAL)
E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension: y(t0 + s h) = y0 + h * sum_k K_k (P_k . [s, s^2, s^3, s^4])
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


class StepSizeError(RuntimeError):
    pass


def _rms(x):
    return float(np.sqrt(np.mean(np.abs(x) ** 2)))


def _maxnorm(x):
    return float(np.max(np.abs(x)))


class Dopri5:
    """One-step-at-a-time integrator for ``dy/dt = fun(t, y)``.

    After each call to :meth:`step`, ``t_old``/``y_old`` and ``t``/``y``
    bracket the last accepted step and :meth:`interpolate` evaluates the dense
    output anywhere inside it.  ``f`` holds ``fun(t, y)`` at the current point.
    """

    def __init__(self, fun, t0, y0, rtol=1e-8, atol=1e-8, max_step=np.inf, first_step=None):
        if rtol <= 0 or atol <= 0:
            raise ValueError("tolerances must be positive")
        self.fun = fun
        self.rtol = rtol
        self.atol = atol
        self.max_step = max_step
        self.t = float(t0)
        self.y = np.array(y0, dtype=complex)
        self.f = fun(self.t, self.y)
        self.t_old = self.t
        self.y_old = self.y
        self.K = None
        self.n_steps = 0
        self.n_rejected = 0
        self.h = first_step if first_step is not None else self._initial_step()

    def _initial_step(self):
        scale = self.atol + np.abs(self.y) * self.rtol
        d0 = _rms(self.y / scale)
        d1 = _rms(self.f / scale)
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, self.max_step)
        y1 = self.y + h0 * self.f
        f1 = self.fun(self.t + h0, y1)
        d2 = _rms((f1 - self.f) / scale) / h0
        if d1 <= 1e-15 and d2 <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** (1 / 5)
        return min(100 * h0, h1, self.max_step)

    def step(self, t_bound=np.inf):
        """Take one accepted step, never passing ``t_bound``."""
        t, y, f = self.t, self.y, self.f
        h = min(self.h, self.max_step)
        while True:
            if t + h >= t_bound:
                h = t_bound - t
                if h <= 0:
                    raise StepSizeError("already at t_bound")
            if h < 1e-14 * max(1.0, abs(t)):
                raise StepSizeError(f"step size underflow at t={t:.6g}")
            K = [f]
            for s in range(1, 6):
                dy = sum(a * k for a, k in zip(A[s], K))
                K.append(self.fun(t + C[s] * h, y + h * dy))
            y_new = y + h * sum(b * k for b, k in zip(B, K) if b != 0)
            f_new = self.fun(t + h, y_new)
            K.append(f_new)
            err = h * sum(e * k for e, k in zip(E, K) if e != 0)
            scale = self.atol + np.maximum(np.abs(y), np.abs(y_new)) * self.rtol
            err_norm = _maxnorm(err / scale)
            if err_norm <= 1.0:
                factor = MAX_FACTOR if err_norm == 0 else min(MAX_FACTOR, SAFETY * err_norm ** -0.2)
                break
            self.n_rejected += 1
            h *= max(MIN_FACTOR, SAFETY * err_norm ** -0.2)
        self.t_old, self.y_old = t, y
        self.t, self.y, self.f = t + h, y_new, f_new
        self.K = K
        self.h_last = h
        self.h = h * factor
        self.n_steps += 1
        return self.t

    def interpolate(self, t):
        """Dense output at ``t`` within the last accepted step."""
        if self.K is None:
            return self.y.copy()
        h = self.t - self.t_old
        s = (t - self.t_old) / h
        powers = np.array([s, s * s, s**3, s**4])
        coef = P @ powers
        return self.y_old + h * sum(c * k for c, k in zip(coef, self.K) if c != 0)


class KrylovExp:
    """Adaptive Krylov propagator ``y(t) = exp(t A) y0`` for a linear operator.

    ``fun(t, y)`` must be linear in ``y`` and independent of ``t``.  With
    ``real_span`` the Arnoldi basis is built over the reals, which keeps
    Hermitian matrices Hermitian when ``fun`` is only real-linear (the usual
    situation for a Liouvillian written in the Hermitian-rho shortcut).  The
    error estimate and step control follow the standard corrected scheme with
    one augmented basis vector, so rejected steps cost no extra operator
    applications.  Dense output within the last step is exact up to the
    local error.
    """

    GAMMA = 0.9
    DELTA = 1.2

    def __init__(self, fun, t0, y0, rtol=1e-8, atol=1e-8, max_step=np.inf,
                 first_step=None, krylov_dim=30, real_span=True):
        if rtol <= 0 or atol <= 0:
            raise ValueError("tolerances must be positive")
        if krylov_dim < 2:
            raise ValueError("krylov_dim must be at least 2")
        self.fun = fun
        self.rtol = rtol
        self.atol = atol
        self.max_step = max_step
        self.m = krylov_dim
        self.real_span = real_span
        self.t = float(t0)
        self.y = np.array(y0, dtype=complex)
        self.t_old = self.t
        self.h = first_step if first_step is not None else 1.0
        self.n_steps = 0
        self.n_rejected = 0
        self.n_applications = 0
        self._f = None
        self._basis = None

    def _apply(self, x):
        self.n_applications += 1
        return self.fun(self.t, x)

    def _dot(self, a, b):
        v = np.vdot(a, b)
        return v.real if self.real_span else v

    @property
    def f(self):
        if self._f is None:
            self._f = self._apply(self.y)
        return self._f

    def step(self, t_bound=np.inf):
        from scipy.linalg import expm

        t_left = t_bound - self.t
        if t_left <= 0:
            raise StepSizeError("already at t_bound")
        beta = float(np.linalg.norm(self.y))
        if beta == 0.0:
            h = min(t_left, self.max_step)
            self._commit(h, self.y.copy(), None)
            return self.t
        m = self.m
        tol = max(self.atol, self.rtol * beta)
        dtype = float if self.real_span else complex
        H = np.zeros((m + 2, m + 2), dtype=dtype)
        V = [self.y / beta]
        happy = False
        mb = m
        btol = 1e-14 * beta
        for j in range(m):
            if j == 0 and self._f is not None:
                p = self._f / beta
            else:
                p = self._apply(V[j])
            for i in range(j + 1):
                H[i, j] = self._dot(V[i], p)
                p = p - H[i, j] * V[i]
            s = float(np.linalg.norm(p))
            if s < btol:
                happy = True
                mb = j + 1
                break
            H[j + 1, j] = s
            V.append(p / s)
        if happy:
            size = mb
            h = min(t_left, self.max_step)
            F = expm(h * H[:size, :size])
            err = 0.0
        else:
            H[m + 1, m] = 1.0
            avnorm = float(np.linalg.norm(self._apply(V[m])))
            size = m + 2
            h = min(self.h, t_left, self.max_step)
            while True:
                F = expm(h * H[:size, :size])
                phi1 = abs(beta * F[m, 0])
                phi2 = abs(beta * F[m + 1, 0] * avnorm)
                if phi1 > 10 * phi2:
                    err, xm = phi2, 1.0 / m
                elif phi1 > phi2:
                    err, xm = phi1 * phi2 / (phi1 - phi2), 1.0 / m
                else:
                    err, xm = phi1, 1.0 / (m - 1)
                if err <= self.DELTA * h * tol:
                    break
                self.n_rejected += 1
                h = self.GAMMA * h * (h * tol / err) ** xm
                if h < 1e-14 * max(1.0, abs(self.t)):
                    raise StepSizeError(f"step size underflow at t={self.t:.6g}")
        nv = len(V) if happy else m + 1
        coef = beta * F[:nv, 0]
        y_new = sum(c * v for c, v in zip(coef, V[:nv]))
        self._basis = (V[:nv], H[:size, :size].copy(), beta, nv)
        if err == 0:
            self.h = min(10 * h, self.max_step)
        else:
            self.h = self.GAMMA * h * (h * tol / err) ** xm
        self._commit(h, y_new, self._basis)
        return self.t

    def _commit(self, h, y_new, basis):
        self.t_old = self.t
        self.y_old = self.y
        self.t = self.t + h
        self.y = y_new
        self._f = None
        self._basis = basis
        self.h_last = h
        self.n_steps += 1

    def interpolate(self, t):
        from scipy.linalg import expm

        if self._basis is None:
            return self.y.copy()
        V, H, beta, nv = self._basis
        F = expm((t - self.t_old) * H)
        coef = beta * F[:nv, 0]
        return sum(c * v for c, v in zip(coef, V))
