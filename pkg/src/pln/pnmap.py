"""Transversal sections, the Poincare-Nekhoroshev return map and its linearisation.

A section at a torus point ``m`` is the affine slice ``m + span(S, Fb)`` where
``S`` spans the directions orthogonal to both the torus tangent and the
integral gradients, and ``Fb`` spans the gradient directions. The map sends
``p`` on the slice to ``exp(delta . X) exp(X_c) p``, with ``delta`` chosen so
the image lands back on the slice: the first factor closes the loop around
the torus, the second slides along the orbit of the commuting fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dynsys import DEFAULT_TOL, FieldSystem, HamiltonianSystem, flow
from .errors import LeafReturnError, SectionError, TrustRegionError, UnsupportedModelError
from .torus import TorusGrid

COND_BOUND = 1e6
TRUST_RADIUS = 0.1
TOL_N = 1e-8
LEAF_MAX_ITER = 25
FD_STEP = 1e-5


@dataclass(frozen=True, eq=False)
class SectionFrame:
    """Affine slice through ``base`` with the adapted frame ``[T | S | Fb]``.

    Bases are stored column-wise. ``frame_inverse`` converts ambient
    displacements to ``(phi, s, f)`` coordinates; its first k rows are the
    covectors ``xi`` that vanish on the slice and are dual to ``T``.
    ``kind`` is ``"hamiltonian"`` or ``"metric"`` (no f-directions).
    """

    base: np.ndarray
    tangent_basis: np.ndarray
    s_basis: np.ndarray
    f_basis: np.ndarray
    frame_inverse: np.ndarray
    condition_number: float
    trust_radius: float = TRUST_RADIUS
    kind: str = "hamiltonian"

    @property
    def k(self) -> int:
        return self.tangent_basis.shape[1]

    @property
    def n_s(self) -> int:
        return self.s_basis.shape[1]

    @property
    def n_f(self) -> int:
        return self.f_basis.shape[1]

    @property
    def dual_covectors(self) -> np.ndarray:
        return self.frame_inverse[: self.k]

    @property
    def frame(self) -> np.ndarray:
        return np.hstack([self.tangent_basis, self.s_basis, self.f_basis])

    def coordinates(self, p):
        """``(phi, s, f)`` coordinates of ``p - base``."""
        z = self.frame_inverse @ (np.asarray(p, dtype=float) - self.base)
        k, ns = self.k, self.n_s
        return z[:k], z[k:k + ns], z[k + ns:]

    def point(self, s=None, f=None) -> np.ndarray:
        """Slice point ``base + S s + Fb f``."""
        out = np.array(self.base)
        if s is not None and self.n_s:
            out = out + self.s_basis @ np.asarray(s, dtype=float)
        if f is not None and self.n_f:
            out = out + self.f_basis @ np.asarray(f, dtype=float)
        return out

    def with_trust_radius(self, radius: float) -> "SectionFrame":
        return SectionFrame(self.base, self.tangent_basis, self.s_basis, self.f_basis,
                            self.frame_inverse, self.condition_number, radius, self.kind)


def _resolve_point(torus: TorusGrid | None, m) -> np.ndarray:
    if isinstance(m, (tuple, list, int, np.integer)) and torus is not None \
            and np.ndim(m) <= 1 and (np.ndim(m) == 0 or len(m) == torus.k):
        return torus.point(m)
    return np.asarray(m, dtype=float)


def _finish_frame(X, S, Fb, m, cond_bound, trust_radius, kind):
    frame = np.hstack([X, S, Fb])
    sv = np.linalg.svd(frame, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    if not cond <= cond_bound:
        raise SectionError(f"section frame condition number {cond:.3g} exceeds {cond_bound:g}")
    inv = np.linalg.inv(frame)
    for arr in (m, X, S, Fb, inv):
        arr.setflags(write=False)
    return SectionFrame(m, X, S, Fb, inv, cond, trust_radius, kind)


def build_section(system: HamiltonianSystem, torus: TorusGrid | None, m,
                  cond_bound: float = COND_BOUND,
                  trust_radius: float = TRUST_RADIUS) -> SectionFrame:
    """Frame at ``m`` (a grid index of ``torus`` or an explicit point).

    A complete QR factorisation of ``[X_1..X_k | grad F_1..grad F_k]`` gives
    the gradient directions (columns k..2k) and the orthogonal complement of
    both spans (the remaining columns). The tangent block keeps the raw fields
    so that the dual covectors measure flow times directly.
    """
    m = np.array(_resolve_point(torus, m), dtype=float)
    k = system.k
    X = system.fields_at(m)
    grads = system.gradients(m).T
    M = np.hstack([X, grads])
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0 or sv[-1] / sv[0] < 1.0 / cond_bound:
        raise SectionError("fields and integral gradients are not independent at the base point")
    Q, _ = np.linalg.qr(M, mode="complete")
    Fb = np.array(Q[:, k:2 * k])
    for i in range(k):
        if grads[:, i] @ Fb[:, i] < 0:
            Fb[:, i] = -Fb[:, i]
    S = np.array(Q[:, 2 * k:])
    return _finish_frame(np.array(X), S, Fb, m, cond_bound, trust_radius, "hamiltonian")


def build_metric_section(system: FieldSystem, torus: TorusGrid | None, m,
                         cond_bound: float = COND_BOUND,
                         trust_radius: float = TRUST_RADIUS) -> SectionFrame:
    """Euclidean-orthogonal slice to ``span{X_i(m)}``; no integrals needed."""
    m = np.array(_resolve_point(torus, m), dtype=float)
    k = system.k
    X = system.fields_at(m)
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[0] == 0 or sv[-1] / sv[0] < 1.0 / cond_bound:
        raise SectionError("fields are not independent at the base point")
    Q, _ = np.linalg.qr(X, mode="complete")
    S = np.array(Q[:, k:])
    return _finish_frame(np.array(X), S, np.zeros((m.size, 0)), m, cond_bound,
                         trust_radius, "metric")


# ---------------------------------------------------------------------------
# homotopy classes

@dataclass(frozen=True, eq=False)
class HomotopyClass:
    """Winding vector ``n`` with the coefficients ``c`` closing it in unit time."""

    winding: tuple
    coefficients: np.ndarray
    period: float = 1.0
    closure_residual: float | None = None

    def __post_init__(self):
        w = tuple(int(v) for v in self.winding)
        if not any(w):
            raise ValueError("winding vector must be nonzero")
        object.__setattr__(self, "winding", w)
        c = np.array(self.coefficients, dtype=float).reshape(-1)
        if c.shape != (len(w),):
            raise ValueError("coefficients and winding must have the same length")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    def label(self) -> str:
        return ",".join(str(v) for v in self.winding)


def closure_residual(system: FieldSystem, torus: TorusGrid, c, indices=None,
                     tol: float = DEFAULT_TOL) -> float:
    """``max ||exp(X_c) m - m||`` over the given grid indices (all by default)."""
    pts = torus.flat_points() if indices is None else [torus.point(i) for i in indices]
    return max(float(np.linalg.norm(flow(system, c, m, tol=tol).endpoint - m)) for m in pts)


def find_periodic_combination(torus: TorusGrid, winding, c=None, system=None,
                              check_tol: float = 1e-8, sample=None) -> HomotopyClass:
    """Coefficients for the winding class ``winding``.

    With ``c`` given, it is taken as is. Otherwise the torus must carry its
    rate matrix ``R`` and ``c`` solves ``R^T c = 2 pi n``. When ``system`` is
    given, the closure residual is measured (on ``sample`` grid indices, or
    the whole grid) and must be below ``check_tol``.
    """
    winding = tuple(int(v) for v in winding)
    if len(winding) != torus.k:
        raise ValueError(f"winding must have {torus.k} entries")
    if not any(winding):
        raise ValueError("winding vector must be nonzero")
    if c is None:
        if torus.frequencies is None:
            raise UnsupportedModelError(
                "torus frequencies are unknown; supply the coefficient vector c")
        c = 2 * np.pi * np.linalg.solve(torus.frequencies.T, np.array(winding, dtype=float))
    res = None
    if system is not None:
        res = closure_residual(system, torus, c, sample)
        if not res < check_tol:
            raise ValueError(f"flow of X_c does not close on the torus (residual {res:.3g})")
    return HomotopyClass(winding, c, 1.0, res)


# ---------------------------------------------------------------------------
# the return map

@dataclass(frozen=True)
class PNEvaluation:
    image: np.ndarray
    delta: np.ndarray
    iterations: int
    jacobian: np.ndarray | None = None


def _leaf_return(system, section, y, target_phi, tol, max_iter=LEAF_MAX_ITER):
    """Solve ``xi (exp(delta . X) y - m) = target_phi`` for delta by Newton."""
    xi = section.dual_covectors
    m = section.base
    delta = -(xi @ (y - m) - target_phi)
    scale = max(1.0, float(np.linalg.norm(y)))
    z = y
    for it in range(1, max_iter + 1):
        z = flow(system, delta, y, tol=tol).endpoint
        g = xi @ (z - m) - target_phi
        J = xi @ system.fields_at(z)
        try:
            step = np.linalg.solve(J, g)
        except np.linalg.LinAlgError as exc:
            raise LeafReturnError("singular return Jacobian") from exc
        if not np.all(np.isfinite(step)):
            raise LeafReturnError("non-finite return step")
        delta = delta - step
        if np.linalg.norm(step) <= 1e-14 * max(1.0, float(np.linalg.norm(delta))) \
                or np.linalg.norm(g) <= 1e-15 * scale:
            z = flow(system, delta, y, tol=tol).endpoint
            return z, delta, it
    raise LeafReturnError(f"return along the leaf did not converge in {max_iter} iterations")


def pn_evaluate(system: FieldSystem, section: SectionFrame, cls: HomotopyClass, p,
                with_jacobian: bool = False, tol: float = DEFAULT_TOL,
                check_trust: bool = True, preserve_phase: bool = False) -> PNEvaluation:
    """Image of ``p`` with the return data, optionally with the ambient Jacobian.

    With ``preserve_phase`` the return solves ``xi(image - m) = xi(p - m)``,
    which extends the map off the slice; on the slice both agree. The
    Jacobian returned is always that of the extended map,
    ``Phi + X (xi X)^-1 xi (E - Phi)`` with ``Phi`` the product of the two
    flow derivatives.
    """
    p = np.asarray(p, dtype=float)
    if check_trust:
        _, s, f = section.coordinates(p)
        dist = float(np.linalg.norm(np.concatenate([s, f])))
        if dist > section.trust_radius:
            raise TrustRegionError(
                f"point is {dist:.3g} from the base point (trust radius {section.trust_radius:g})")
    phi0 = section.dual_covectors @ (p - section.base) if preserve_phase or with_jacobian \
        else np.zeros(section.k)
    first = flow(system, cls.coefficients, p, with_variational=with_jacobian, tol=tol)
    z, delta, iters = _leaf_return(system, section, first.endpoint, phi0, tol)
    jac = None
    if with_jacobian:
        second = flow(system, delta, first.endpoint, with_variational=True, tol=tol)
        Phi = second.fundamental_matrix @ first.fundamental_matrix
        Xz = system.fields_at(z)
        xi = section.dual_covectors
        corr = np.linalg.solve(xi @ Xz, xi @ (np.eye(p.size) - Phi))
        jac = Phi + Xz @ corr
    return PNEvaluation(z, delta, iters, jac)


def pn_map(system: FieldSystem, section: SectionFrame, cls: HomotopyClass, p,
           tol: float = DEFAULT_TOL) -> np.ndarray:
    """``Psi(p) = exp(delta . X) exp(X_c) p`` with the image back on the slice."""
    return pn_evaluate(system, section, cls, p, tol=tol).image


def pn_map_metric_variant(fields: FieldSystem, torus: TorusGrid, cls: HomotopyClass, p,
                          base=None, section: SectionFrame | None = None,
                          tol: float = DEFAULT_TOL) -> np.ndarray:
    """Return map on the Euclidean-orthogonal slice at ``base`` (grid index 0 by default)."""
    if section is None:
        base = (0,) * torus.k if base is None else base
        section = build_metric_section(fields, torus, base)
    return pn_map(fields, section, cls, p, tol=tol)


# ---------------------------------------------------------------------------
# linearisation

@dataclass(frozen=True, eq=False)
class PNLinearization:
    """Linearised return map at the base point.

    ``A`` acts on s-coordinates. ``section_jacobian`` acts on ``(s, f)``.
    ``full_block`` is the ambient Jacobian in ``(phi, s, F)`` coordinates,
    where the last k coordinates are the integral values themselves (for a
    metric frame the block is in ``(phi, s)`` coordinates).
    """

    A: np.ndarray
    spectrum: np.ndarray
    min_distance_to_one: float
    verdict: bool
    tol_N: float
    method: str
    section_jacobian: np.ndarray | None = None
    full_block: np.ndarray | None = None

    @property
    def margin(self) -> float:
        return self.min_distance_to_one


def _spectrum_summary(A, tol_N):
    spec = np.linalg.eigvals(A) if A.size else np.zeros(0, dtype=complex)
    spec = np.asarray(spec, dtype=complex)
    dist = float(np.min(np.abs(spec - 1.0))) if spec.size else np.inf
    return spec, dist, bool(dist > tol_N)


def coordinate_matrix(system, section: SectionFrame) -> np.ndarray:
    """Rows mapping ambient vectors to ``(phi, s, F)`` coordinates at the base."""
    k, ns = section.k, section.n_s
    rows = [section.frame_inverse[:k + ns]]
    if section.n_f:
        rows.append(system.gradients(section.base))
    return np.vstack(rows)


def section_jacobian_variational(system, section, cls, p=None, tol: float = DEFAULT_TOL):
    """Jacobian of the return map in ``(s, f)`` coordinates at slice point ``p``.

    Also returns the ambient Jacobian of the extended map.
    """
    p = section.base if p is None else np.asarray(p, dtype=float)
    ev = pn_evaluate(system, section, cls, p, with_jacobian=True, tol=tol)
    k = section.k
    D = section.frame_inverse[k:] @ ev.jacobian @ np.hstack([section.s_basis, section.f_basis])
    return D, ev


def section_jacobian_fd(system, section, cls, p=None, h: float = FD_STEP,
                        tol: float = DEFAULT_TOL) -> np.ndarray:
    """Central differences of the return map along the slice directions."""
    p = section.base if p is None else np.asarray(p, dtype=float)
    dirs = np.hstack([section.s_basis, section.f_basis])
    k = section.k
    W = section.frame_inverse[k:]
    D = np.empty((dirs.shape[1], dirs.shape[1]))
    for j in range(dirs.shape[1]):
        up = pn_map(system, section, cls, p + h * dirs[:, j], tol=tol)
        dn = pn_map(system, section, cls, p - h * dirs[:, j], tol=tol)
        D[:, j] = W @ (up - dn) / (2 * h)
    return D


def linearize_pn_map(system, section: SectionFrame, cls: HomotopyClass,
                     method: str = "variational", tol_N: float = TOL_N,
                     fd_step: float = FD_STEP, tol: float = DEFAULT_TOL) -> PNLinearization:
    """Linearisation of the return map at the section's base point.

    ``method="variational"`` differentiates through the joint variational
    flow; ``"finite-difference"`` differences the map itself.
    """
    ns = section.n_s
    if method == "variational":
        D, ev = section_jacobian_variational(system, section, cls, tol=tol)
        C = coordinate_matrix(system, section)
        full = C @ ev.jacobian @ np.linalg.inv(C)
    elif method in ("finite-difference", "fd"):
        D = section_jacobian_fd(system, section, cls, h=fd_step, tol=tol)
        full = None
        method = "finite-difference"
    else:
        raise ValueError(f"unknown method {method!r}")
    A = np.array(D[:ns, :ns])
    spec, dist, verdict = _spectrum_summary(A, tol_N)
    return PNLinearization(A, spec, dist, verdict, tol_N, method, D, full)


def unit_multiplicity(block: np.ndarray, tol: float = 1e-6) -> int:
    """Number of eigenvalues of ``block`` within ``tol`` of one."""
    ev = np.linalg.eigvals(block)
    return int(np.sum(np.abs(ev - 1.0) < tol))


def match_spectra(a, b) -> float:
    """Largest eigenvalue distance under the optimal one-to-one pairing."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise ValueError("spectra have different sizes")
    if a.size == 0:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return float(np.max(cost[r, c]))


def sort_spectrum(spec) -> np.ndarray:
    spec = np.asarray(spec, dtype=complex)
    return spec[np.lexsort((spec.imag.round(9), spec.real.round(9)))]


@dataclass(frozen=True)
class ConjugacyReport:
    discrepancy: float
    spectra: tuple
    base_points: tuple


def basepoint_conjugacy_check(system, torus: TorusGrid, cls: HomotopyClass, base_points,
                              method: str = "variational", tol_N: float = TOL_N,
                              detail: bool = False):
    """Max pairwise spectral distance of the linearisations at several base points."""
    base_points = list(base_points)
    if not base_points:
        raise ValueError("need at least one base point")
    spectra = []
    for b in base_points:
        sec = build_section(system, torus, b)
        spectra.append(linearize_pn_map(system, sec, cls, method, tol_N).spectrum)
    worst = 0.0
    for i in range(len(spectra)):
        for j in range(i + 1, len(spectra)):
            worst = max(worst, match_spectra(spectra[i], spectra[j]))
    if detail:
        return ConjugacyReport(worst, tuple(spectra), tuple(base_points))
    return worst


@dataclass(frozen=True)
class ClassVerdict:
    cls: HomotopyClass
    linearization: PNLinearization

    @property
    def verdict(self) -> bool:
        return self.linearization.verdict


@dataclass(frozen=True)
class ClassDependenceReport:
    entries: tuple
    any_pass: bool

    def verdicts(self) -> dict:
        return {e.cls.winding: e.verdict for e in self.entries}


def class_dependence_report(system, torus: TorusGrid, classes, base=None,
                            method: str = "variational",
                            tol_N: float = TOL_N) -> ClassDependenceReport:
    """Condition-N verdict and spectrum for each class at one base point."""
    classes = list(classes)
    if not classes:
        raise ValueError("need at least one class")
    base = (0,) * torus.k if base is None else base
    sec = build_section(system, torus, base)
    entries = tuple(ClassVerdict(c, linearize_pn_map(system, sec, c, method, tol_N))
                    for c in classes)
    return ClassDependenceReport(entries, any(e.verdict for e in entries))


def metric_variant_discrepancy(system, torus: TorusGrid, cls: HomotopyClass, base=None,
                               radius: float = 1e-3, count: int = 4, seed: int = 0,
                               tol: float = DEFAULT_TOL) -> float:
    """Largest pointwise gap between the symplectic and metric return maps.

    Both slices at ``base`` are the affine complement of the tangent space
    there, so the maps coincide wherever both are defined. Points are drawn
    at distance ``radius`` inside the metric slice.
    """
    base = (0,) * torus.k if base is None else base
    ham = build_section(system, torus, base)
    met = build_metric_section(system, torus, base)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        v = met.s_basis @ rng.standard_normal(met.n_s)
        p = met.base + radius * v / np.linalg.norm(v)
        a = pn_map(system, ham, cls, p, tol=tol)
        b = pn_map(system, met, cls, p, tol=tol)
        worst = max(worst, float(np.linalg.norm(a - b)))
    return worst
