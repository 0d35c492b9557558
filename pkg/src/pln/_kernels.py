"""Hot loops: polynomial table evaluation and the DOP853 integrator.

Two implementations of the same algorithm live here. The numba one uses
explicit scalar loops and is compiled with ``@njit``; the numpy one is
vectorised array code driven by a Python step loop. The active backend is
chosen per call from the ``PLN_BACKEND`` environment variable
(``numba`` or ``numpy``); the default is numba when it imports.

A *table* encodes a vector of polynomials as three arrays::

    coef  (M,)    float64   term coefficients
    exps  (M, d)  int64     exponents of the d variables
    owner (M,)    int64     output slot the term is added to

The integrator always runs from t = 0 to t = 1; callers fold the time into
the coefficients.
"""

import os

import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


N_STAGES = _dop.N_STAGES
RK_A = np.ascontiguousarray(_dop.A[:N_STAGES, :N_STAGES])
RK_B = np.ascontiguousarray(_dop.B)
RK_C = np.ascontiguousarray(_dop.C[:N_STAGES])
RK_E3 = np.ascontiguousarray(_dop.E3)
RK_E5 = np.ascontiguousarray(_dop.E5)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXPONENT = -1.0 / 8.0

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_MAX_STEPS = 2
STATUS_NONFINITE = 3


def backend():
    """Name of the backend used for the next kernel call."""
    name = os.environ.get("PLN_BACKEND", "numba" if HAVE_NUMBA else "numpy").lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"PLN_BACKEND must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name


# ---------------------------------------------------------------------------
# numba path

@njit(cache=True)
def _eval_table_nb(coef, exps, owner, x, out):
    for i in range(out.shape[0]):
        out[i] = 0.0
    d = x.shape[0]
    for t in range(coef.shape[0]):
        v = coef[t]
        for l in range(d):
            e = exps[t, l]
            xl = x[l]
            for _ in range(e):
                v *= xl
        out[owner[t]] += v


@njit(cache=True)
def _rhs_nb(vcoef, vexps, vown, jcoef, jexps, jown, y, d, with_var, jbuf, out):
    x = y[:d]
    _eval_table_nb(vcoef, vexps, vown, x, out[:d])
    if with_var:
        _eval_table_nb(jcoef, jexps, jown, x, jbuf)
        # out[d + a*d + b] = sum_c J[a, c] * Phi[c, b]
        for a in range(d):
            for b in range(d):
                acc = 0.0
                for c in range(d):
                    acc += jbuf[a * d + c] * y[d + c * d + b]
                out[d + a * d + b] = acc


@njit(cache=True)
def _integrate_nb(vcoef, vexps, vown, jcoef, jexps, jown, x0, with_var,
                  rtol, atol, max_steps, A, B, C, E3, E5):
    d = x0.shape[0]
    ny = d + d * d if with_var else d
    y = np.zeros(ny)
    for i in range(d):
        y[i] = x0[i]
    if with_var:
        for i in range(d):
            y[d + i * d + i] = 1.0
    jbuf = np.zeros(d * d)
    K = np.zeros((N_STAGES + 1, ny))
    ytmp = np.zeros(ny)
    ynew = np.zeros(ny)
    f = np.zeros(ny)
    _rhs_nb(vcoef, vexps, vown, jcoef, jexps, jown, y, d, with_var, jbuf, f)
    nfev = 1

    # initial step from the size of the derivative relative to the state
    d0 = 0.0
    d1 = 0.0
    for i in range(ny):
        sc = atol + abs(y[i]) * rtol
        d0 = max(d0, abs(y[i]) / sc)
        d1 = max(d1, abs(f[i]) / sc)
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6
    else:
        h = 0.01 * d0 / d1
    h = min(h, 1.0)
    if h < 1e-6:
        h = 1e-6

    t = 0.0
    n_steps = 0
    n_rej = 0
    last_err = 0.0
    status = STATUS_OK
    while t < 1.0:
        if n_steps + n_rej >= max_steps:
            status = STATUS_MAX_STEPS
            break
        min_step = 10.0 * (np.nextafter(t, 2.0) - t)
        if h < min_step:
            status = STATUS_STEP_UNDERFLOW
            break
        if t + h > 1.0:
            h = 1.0 - t
        # stages
        for j in range(ny):
            K[0, j] = f[j]
        for s in range(1, N_STAGES):
            for j in range(ny):
                acc = 0.0
                for r in range(s):
                    acc += A[s, r] * K[r, j]
                ytmp[j] = y[j] + h * acc
            _rhs_nb(vcoef, vexps, vown, jcoef, jexps, jown, ytmp, d, with_var, jbuf, K[s])
        for j in range(ny):
            acc = 0.0
            for r in range(N_STAGES):
                acc += B[r] * K[r, j]
            ynew[j] = y[j] + h * acc
        _rhs_nb(vcoef, vexps, vown, jcoef, jexps, jown, ynew, d, with_var, jbuf, K[N_STAGES])
        nfev += N_STAGES
        # max-norm variant of the DOP853 5/3 error blend
        e5 = 0.0
        e3 = 0.0
        finite = True
        for j in range(ny):
            if not np.isfinite(ynew[j]):
                finite = False
            sc = atol + max(abs(y[j]), abs(ynew[j])) * rtol
            a5 = 0.0
            a3 = 0.0
            for r in range(N_STAGES + 1):
                a5 += E5[r] * K[r, j]
                a3 += E3[r] * K[r, j]
            e5 = max(e5, abs(a5) / sc)
            e3 = max(e3, abs(a3) / sc)
        if not finite:
            status = STATUS_NONFINITE
            break
        if e5 == 0.0:
            err = 0.0
        else:
            # scaled so that denormal error estimates cannot underflow to 0/0
            ratio = e3 / e5
            err = h * e5 / np.sqrt(1.0 + 0.01 * ratio * ratio)
        if err < 1.0:
            t = t + h if t + h < 1.0 else 1.0
            for j in range(ny):
                y[j] = ynew[j]
                f[j] = K[N_STAGES, j]
            n_steps += 1
            last_err = err
            if err == 0.0:
                h *= MAX_FACTOR
            else:
                h *= min(MAX_FACTOR, SAFETY * err ** ERR_EXPONENT)
        else:
            n_rej += 1
            h *= max(MIN_FACTOR, SAFETY * err ** ERR_EXPONENT)
    return y, status, t, n_steps, n_rej, nfev, last_err


# ---------------------------------------------------------------------------
# numpy path

def _eval_table_np(coef, exps, owner, x, n_out):
    if coef.shape[0] == 0:
        return np.zeros(n_out)
    terms = coef * np.prod(x[None, :] ** exps, axis=1)
    return np.bincount(owner, weights=terms, minlength=n_out)


def _rhs_np(vt, jt, y, d, with_var):
    x = y[:d]
    v = _eval_table_np(*vt, x, d)
    if not with_var:
        return v
    jac = _eval_table_np(*jt, x, d * d).reshape(d, d)
    phi = y[d:].reshape(d, d)
    return np.concatenate([v, (jac @ phi).ravel()])


def _integrate_np(vt, jt, x0, with_var, rtol, atol, max_steps):
    d = x0.shape[0]
    if with_var:
        y = np.concatenate([x0, np.eye(d).ravel()])
    else:
        y = x0.copy()
    ny = y.shape[0]
    f = _rhs_np(vt, jt, y, d, with_var)
    nfev = 1
    sc = atol + np.abs(y) * rtol
    d0 = np.max(np.abs(y) / sc)
    d1 = np.max(np.abs(f) / sc)
    h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h = max(min(h, 1.0), 1e-6)

    K = np.zeros((N_STAGES + 1, ny))
    t = 0.0
    n_steps = n_rej = 0
    last_err = 0.0
    status = STATUS_OK
    while t < 1.0:
        if n_steps + n_rej >= max_steps:
            status = STATUS_MAX_STEPS
            break
        if h < 10.0 * (np.nextafter(t, 2.0) - t):
            status = STATUS_STEP_UNDERFLOW
            break
        if t + h > 1.0:
            h = 1.0 - t
        K[0] = f
        for s in range(1, N_STAGES):
            K[s] = _rhs_np(vt, jt, y + h * (RK_A[s, :s] @ K[:s]), d, with_var)
        ynew = y + h * (RK_B @ K[:N_STAGES])
        K[N_STAGES] = _rhs_np(vt, jt, ynew, d, with_var)
        nfev += N_STAGES
        if not np.all(np.isfinite(ynew)):
            status = STATUS_NONFINITE
            break
        sc = atol + np.maximum(np.abs(y), np.abs(ynew)) * rtol
        e5 = np.max(np.abs(RK_E5 @ K) / sc)
        e3 = np.max(np.abs(RK_E3 @ K) / sc)
        if e5 == 0.0:
            err = 0.0
        else:
            # scaled so that denormal error estimates cannot underflow to 0/0
            ratio = e3 / e5
            err = h * e5 / np.sqrt(1.0 + 0.01 * ratio * ratio)
        if err < 1.0:
            t = t + h if t + h < 1.0 else 1.0
            y = ynew
            f = K[N_STAGES].copy()
            n_steps += 1
            last_err = err
            h *= MAX_FACTOR if err == 0.0 else min(MAX_FACTOR, SAFETY * err ** ERR_EXPONENT)
        else:
            n_rej += 1
            h *= max(MIN_FACTOR, SAFETY * err ** ERR_EXPONENT)
    return y, status, t, n_steps, n_rej, nfev, last_err


# ---------------------------------------------------------------------------
# dispatch

def eval_table(coef, exps, owner, x, n_out):
    x = np.asarray(x, dtype=np.float64)
    if backend() == "numba":
        out = np.zeros(n_out)
        _eval_table_nb(coef, exps, owner, x, out)
        return out
    return _eval_table_np(coef, exps, owner, x, n_out)


def integrate(value_table, jac_table, x0, with_var, rtol, atol, max_steps=200_000):
    """Integrate the polynomial field from t=0 to t=1.

    Returns ``(y, status, t_reached, n_steps, n_rejected, n_fev, last_err)``
    where ``y`` holds the state followed by the row-major fundamental matrix
    when ``with_var`` is set.
    """
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    if backend() == "numba":
        return _integrate_nb(*value_table, *jac_table, x0, bool(with_var),
                             float(rtol), float(atol), int(max_steps),
                             RK_A, RK_B, RK_C, RK_E3, RK_E5)
    return _integrate_np(value_table, jac_table, x0, bool(with_var),
                         float(rtol), float(atol), int(max_steps))
