"""Hamiltonian systems with commuting polynomial integrals, and their flows.

Coordinates are canonical, ``x = (q_1..q_n, p_1..p_n)``, and the field of an
integral F is ``J grad F`` so that ``dq/dt = dF/dp`` and ``dp/dt = -dF/dq``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import IntegrationError, ModelEvaluationError
from .polynomial import PolyTable

DEFAULT_TOL = 1e-12
STRUCTURE_TOL = 1e-9


def symplectic_matrix(n: int) -> np.ndarray:
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


class FieldSystem:
    """k polynomial vector fields on R^dim, flowed through the shared kernels.

    Subclasses fill in ``_field_polys``: a list over fields of per-component
    polynomials. The Jacobian table is derived from it once.
    """

    dim: int
    k: int
    name: str

    def _build_tables(self, field_polys):
        self._field_polys = field_polys
        self.value_table = PolyTable.from_fields(self.dim, field_polys)
        jac_polys = [
            [comp.derivative(b) for comp in comps for b in range(self.dim)]
            for comps in field_polys
        ]
        self.jac_table = PolyTable.from_fields(self.dim, jac_polys)

    def field(self, i: int, x) -> np.ndarray:
        """Value of field ``i`` (zero-based) at ``x``."""
        if not 0 <= i < self.k:
            raise IndexError(f"field index {i} out of range for k={self.k}")
        out = self.value_table.evaluate(np.asarray(x, dtype=float), field=i)
        if not np.all(np.isfinite(out)):
            raise ModelEvaluationError(f"non-finite field value at {x}")
        return out

    def fields_at(self, x) -> np.ndarray:
        """Matrix whose columns are the k fields at ``x`` (dim x k)."""
        return self.value_table.evaluate(np.asarray(x, dtype=float)).T

    def field_jacobian(self, i: int, x) -> np.ndarray:
        J = self.jac_table.evaluate(np.asarray(x, dtype=float), field=i)
        return J.reshape(self.dim, self.dim)


class VectorFieldSystem(FieldSystem):
    """Commuting (not necessarily Hamiltonian) polynomial fields on R^dim."""

    def __init__(self, dim: int, fields, name: str = "fields"):
        self.dim = int(dim)
        fields = [list(comps) for comps in fields]
        for comps in fields:
            if len(comps) != self.dim:
                raise ValueError("each field needs one polynomial per coordinate")
        self.k = len(fields)
        self.name = name
        self._build_tables(fields)


class HamiltonianSystem(FieldSystem):
    """n degrees of freedom with k polynomial integrals.

    Parameters
    ----------
    n : int
        Degrees of freedom; phase dimension is 2n.
    integrals : sequence of Polynomial
        F_1..F_k in the variables (q_1..q_n, p_1..p_n).
    name : str
        Label used in reports.
    """

    def __init__(self, n: int, integrals, name: str = "polynomial", meta=None):
        self.n = int(n)
        self.dim = 2 * self.n
        self.integrals = tuple(integrals)
        self.k = len(self.integrals)
        if not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        for F in self.integrals:
            if F.dim != self.dim:
                raise ValueError(f"integral has dim {F.dim}, expected {self.dim}")
        self.name = name
        self.meta = dict(meta or {})
        n_ = self.n
        field_polys = []
        for F in self.integrals:
            grad = [F.derivative(j) for j in range(self.dim)]
            field_polys.append(grad[n_:] + [-g for g in grad[:n_]])
        self._grad_table = PolyTable.from_fields(
            self.dim, [[F.derivative(j) for j in range(self.dim)] for F in self.integrals])
        self._value_table = PolyTable.from_fields(self.dim, [[F] for F in self.integrals])
        self._build_tables(field_polys)

    def integral_values(self, x) -> np.ndarray:
        """Values ``F(x)``; a stack of points gives one row per point."""
        x = np.asarray(x, dtype=float)
        if x.ndim > 1:
            return np.array([self.integral_values(row) for row in x.reshape(-1, self.dim)])
        return self._value_table.evaluate(x)[:, 0]

    def gradients(self, x) -> np.ndarray:
        """k x 2n Jacobian of the integral map."""
        G = self._grad_table.evaluate(np.asarray(x, dtype=float))
        if not np.all(np.isfinite(G)):
            raise ModelEvaluationError(f"non-finite gradient at {x}")
        return G

    def as_vector_fields(self) -> VectorFieldSystem:
        return VectorFieldSystem(self.dim, self._field_polys, name=f"{self.name}-fields")


def hamiltonian_vector_field(system: HamiltonianSystem, i: int, x) -> np.ndarray:
    """``J grad F_i(x)`` for the zero-based integral index ``i``."""
    return system.field(i, x)


@dataclass(frozen=True)
class IntegratorStats:
    n_steps: int
    n_rejected: int
    n_fev: int
    last_error: float


@dataclass(frozen=True)
class FlowResult:
    endpoint: np.ndarray
    fundamental_matrix: np.ndarray | None = None
    stats: IntegratorStats = field(default_factory=lambda: IntegratorStats(0, 0, 0, 0.0))


_STATUS_TEXT = {
    _kernels.STATUS_STEP_UNDERFLOW: "step size underflow",
    _kernels.STATUS_MAX_STEPS: "maximum number of steps exceeded",
    _kernels.STATUS_NONFINITE: "non-finite state",
}


def flow(system: FieldSystem, c, x0, t: float = 1.0, with_variational: bool = False,
         tol: float = DEFAULT_TOL) -> FlowResult:
    """Time-``t`` flow of ``X_c = sum_i c_i X_i`` starting at ``x0``.

    The field is linear in ``c``, so the integration always runs over unit
    time on ``X_{t c}``. Local error per step is kept below ``tol`` in a
    mixed absolute/relative max-norm.
    """
    if not np.isfinite(t):
        raise ValueError("flow time must be finite")
    if tol <= 0:
        raise ValueError("tol must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (system.dim,):
        raise ValueError(f"x0 must have shape ({system.dim},)")
    w = np.asarray(c, dtype=np.float64).reshape(system.k) * float(t)
    if not np.any(w):
        return FlowResult(x0.copy(), np.eye(system.dim) if with_variational else None)

    vt = system.value_table.combine(w)
    jt = system.jac_table.combine(w)
    y, status, t_reached, n_steps, n_rej, nfev, last_err = _kernels.integrate(
        vt, jt, x0, with_variational, tol, tol)
    d = system.dim
    if status != _kernels.STATUS_OK:
        raise IntegrationError(
            f"integration failed: {_STATUS_TEXT.get(status, status)} at t={t_reached * t:g}",
            t_reached=t_reached * t, last_state=np.array(y[:d]))
    stats = IntegratorStats(int(n_steps), int(n_rej), int(nfev), float(last_err))
    phi = np.array(y[d:]).reshape(d, d) if with_variational else None
    return FlowResult(np.array(y[:d]), phi, stats)


def lie_bracket(system: FieldSystem, i: int, j: int, x) -> np.ndarray:
    """``[X_i, X_j](x) = DX_j X_i - DX_i X_j``."""
    Xi = system.field(i, x)
    Xj = system.field(j, x)
    return system.field_jacobian(j, x) @ Xi - system.field_jacobian(i, x) @ Xj


def check_commutation(system: FieldSystem, points) -> float:
    """Largest commutator norm over sample points and field pairs."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        raise ValueError("need at least one sample point")
    worst = 0.0
    for x in points:
        for i in range(system.k):
            for j in range(i + 1, system.k):
                worst = max(worst, float(np.linalg.norm(lie_bracket(system, i, j, x))))
    return worst


def check_independence(system: HamiltonianSystem, points) -> float:
    """Smallest singular value of the k x 2n integral Jacobian over ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    smin = np.inf
    for x in points:
        sv = np.linalg.svd(system.gradients(x), compute_uv=False)
        smin = min(smin, float(sv[-1]))
    return smin
