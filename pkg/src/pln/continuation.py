"""Fixed points of the return map across integral levels and the torus family they trace."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .dynsys import DEFAULT_TOL, flow
from .errors import (ConditionNViolation, ConvergenceError, LeafReturnError, PartialLiftError,
                     PLNError, TrustRegionError)
from .pnmap import (TOL_N, TRUST_RADIUS, HomotopyClass, PNLinearization, SectionFrame,
                    build_section, linearize_pn_map, pn_evaluate, pn_map)
from .torus import TorusGrid

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 25
LEVEL_TOL = 1e-14
DPSI_STEP = 1e-6
SINGULAR_TOL = 1e-10
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# points on a level inside a slice

def level_point(system, section: SectionFrame, s, F_target, f0=None, max_iter: int = 30):
    """Slice point ``m + S s + Fb f`` with ``F = F_target``; returns ``(p, f)``.

    Newton in f with Jacobian ``grad F(p)^T Fb``.
    """
    F_target = np.asarray(F_target, dtype=float)
    f = np.zeros(section.n_f) if f0 is None else np.array(f0, dtype=float)
    scale = max(1.0, float(np.max(np.abs(F_target))))
    for _ in range(max_iter):
        p = section.point(s, f)
        r = system.integral_values(p) - F_target
        G = system.gradients(p) @ section.f_basis
        step = np.linalg.solve(G, r)
        f = f - step
        if np.max(np.abs(r)) <= LEVEL_TOL * scale or np.linalg.norm(step) <= 1e-15:
            p = section.point(s, f)
            return p, f
    raise ConvergenceError("could not reach the requested integral level inside the slice")


@dataclass
class _LevelJacobian:
    A_eff: np.ndarray
    dpsi_df: np.ndarray
    linearization: np.ndarray


def _level_jacobians(system, section, D, p):
    """Reduce the (s, f) Jacobian to the level set through ``p``."""
    ns = section.n_s
    D_ss, D_sf = D[:ns, :ns], D[:ns, ns:]
    if section.n_f == 0:
        return _LevelJacobian(D_ss, np.zeros((ns, 0)), D)
    gradF = system.gradients(p)
    G = gradF @ section.f_basis
    dpsi = D_sf @ np.linalg.inv(G)
    A_eff = D_ss - dpsi @ (gradF @ section.s_basis)
    return _LevelJacobian(A_eff, dpsi, D)


def _check_e_minus_a(A):
    M = np.eye(A.shape[0]) - A
    if M.size:
        sv = np.linalg.svd(M, compute_uv=False)
        # the variational Jacobian is good to about 1e-11, so anything below
        # this cannot be told apart from an exact unit multiplier
        if sv[-1] <= SINGULAR_TOL * max(1.0, sv[0]):
            raise ConditionNViolation(f"E - A is singular (smallest singular value {sv[-1]:.3g})")
    return M


def _solve_e_minus_a(A, rhs):
    return np.linalg.solve(_check_e_minus_a(A), rhs)


@dataclass(frozen=True)
class FixedPointResult:
    s: np.ndarray
    f: np.ndarray
    point: np.ndarray
    residual: float
    iterations: int
    history: tuple
    A_eff: np.ndarray
    dpsi_df: np.ndarray


def newton_fixed_point(system, section: SectionFrame, cls: HomotopyClass, F_target, s_init=None,
                       f_init=None, tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER,
                       integ_tol: float = DEFAULT_TOL) -> FixedPointResult:
    """Zero of ``s - Psi(s; F_target)`` in slice coordinates.

    Each step solves with ``E - A`` where ``A`` is the return-map derivative
    restricted to the level set. ``history`` holds the residual norms, one per
    evaluated iterate.
    """
    ns = section.n_s
    s = np.zeros(ns) if s_init is None else np.array(s_init, dtype=float)
    if np.linalg.norm(s) > section.trust_radius:
        raise TrustRegionError("initial guess lies outside the trust radius")
    f = f_init
    history = []
    for it in range(max_iter + 1):
        p, f = level_point(system, section, s, F_target, f)
        ev = pn_evaluate(system, section, cls, p, with_jacobian=True, tol=integ_tol)
        _, s_img, _ = section.coordinates(ev.image)
        r = s - s_img
        res = float(np.linalg.norm(r)) if ns else 0.0
        history.append(res)
        k = section.k
        D = section.frame_inverse[k:] @ ev.jacobian @ np.hstack([section.s_basis, section.f_basis])
        lj = _level_jacobians(system, section, D, p)
        _check_e_minus_a(lj.A_eff)
        if res < tol:
            return FixedPointResult(s, np.asarray(f), p, res, it, tuple(history),
                                    lj.A_eff, lj.dpsi_df)
        if not np.isfinite(res):
            break
        s = s - _solve_e_minus_a(lj.A_eff, r)
        if np.linalg.norm(s) > section.trust_radius:
            raise TrustRegionError("Newton iterate left the trust radius")
    raise ConvergenceError(f"no fixed point after {max_iter} Newton steps", history)


def dpsi_df(system, section: SectionFrame, cls: HomotopyClass, p=None, h: float = DPSI_STEP,
            tol: float = DEFAULT_TOL) -> np.ndarray:
    """``dPsi_s/dF`` at fixed s by central differences along the f directions."""
    p = section.base if p is None else np.asarray(p, dtype=float)
    ns, nf = section.n_s, section.n_f
    Dsf = np.empty((ns, nf))
    for j in range(nf):
        d = h * section.f_basis[:, j]
        _, up, _ = section.coordinates(pn_map(system, section, cls, p + d, tol=tol))
        _, dn, _ = section.coordinates(pn_map(system, section, cls, p - d, tol=tol))
        Dsf[:, j] = (up - dn) / (2 * h)
    G = system.gradients(p) @ section.f_basis
    return Dsf @ np.linalg.inv(G)


def tangent_predictor(linearization, dPsi_dF, dF) -> np.ndarray:
    """``ds = (E - A)^-1 dPsi/dF dF``."""
    A = linearization.A if isinstance(linearization, PNLinearization) else np.asarray(linearization)
    rhs = np.asarray(dPsi_dF, dtype=float) @ np.asarray(dF, dtype=float)
    if not np.any(rhs):
        return np.zeros(A.shape[0])
    return _solve_e_minus_a(A, rhs)


# ---------------------------------------------------------------------------
# lifting whole tori

@dataclass
class LiftContext:
    """Reference torus with its per-point slices and warm-start data.

    ``reference`` supplies the slices; ``beta0`` is the seed level, so the
    lift to ``alpha`` targets ``beta0 + alpha``.
    """

    system: object
    reference: TorusGrid
    beta0: np.ndarray
    trust_radius: float = TRUST_RADIUS
    reference_alpha: np.ndarray | None = None
    sections: dict = field(default_factory=dict)
    warm: dict = field(default_factory=dict)
    integ_tol: float = DEFAULT_TOL

    def __post_init__(self):
        self.beta0 = np.asarray(self.beta0, dtype=float)
        if self.reference_alpha is None:
            self.reference_alpha = np.zeros_like(self.beta0)

    def section(self, index) -> SectionFrame:
        sec = self.sections.get(index)
        if sec is None:
            sec = build_section(self.system, self.reference, index,
                                trust_radius=self.trust_radius)
            self.sections[index] = sec
        return sec

    def rebase(self, torus: TorusGrid, alpha):
        self.reference = torus
        self.reference_alpha = np.asarray(alpha, dtype=float)
        self.sections = {}
        self.warm = {}


@dataclass(frozen=True)
class LiftResult:
    torus: TorusGrid
    newton_iterations: int
    f_residual: float
    displacement: float
    results: dict


def _lift_point(ctx: LiftContext, index, cls, alpha, use_warm=True):
    sec = ctx.section(index)
    target = ctx.beta0 + alpha
    s0 = f0 = None
    warm = ctx.warm.get(index) if use_warm else None
    if warm is not None:
        w_alpha, res = warm
        dF = alpha - w_alpha
        s0 = res.s + tangent_predictor(res.A_eff, res.dpsi_df, dF)
        f0 = res.f
    return newton_fixed_point(ctx.system, sec, cls, target, s0, f0, integ_tol=ctx.integ_tol)


def lift_torus(system, ctx: LiftContext, alpha, cls: HomotopyClass, indices=None,
               use_warm: bool = True, store_warm: bool = True) -> LiftResult:
    """Lift every reference grid point to the fixed point on its own slice at
    level ``beta0 + alpha``. Any failing point aborts the lift."""
    if system is not ctx.system:
        raise ValueError("context belongs to another system")
    alpha = np.asarray(alpha, dtype=float)
    ref = ctx.reference
    indices = ref.indices() if indices is None else indices
    pts = np.empty(ref.grid_shape + (ref.dim,))
    worst_iter = 0
    worst_F = 0.0
    results = {}
    target = ctx.beta0 + alpha
    for index in indices:
        try:
            res = _lift_point(ctx, index, cls, alpha, use_warm)
        except PLNError as exc:
            raise PartialLiftError(f"lift failed at grid index {index}: {exc}", index) from exc
        results[index] = res
        pts[index] = res.point
        worst_iter = max(worst_iter, res.iterations)
        worst_F = max(worst_F, float(np.max(np.abs(system.integral_values(res.point) - target))))
    if store_warm:
        for index, res in results.items():
            ctx.warm[index] = (alpha, res)
    disp = float(np.max(np.linalg.norm(pts - ref.points, axis=-1))) if len(results) == ref.size \
        else max(float(np.linalg.norm(r.point - ref.point(i))) for i, r in results.items())
    torus = TorusGrid(pts, target) if len(results) == ref.size else None
    return LiftResult(torus, worst_iter, worst_F, disp, results)


# ---------------------------------------------------------------------------
# geometric checks

@dataclass(frozen=True)
class InvarianceReport:
    residual: float
    interpolation_bound: float

    @property
    def within_bound(self) -> bool:
        return self.residual <= self.interpolation_bound


def verify_invariance(system, torus: TorusGrid, h: float = 1e-2, indices=None,
                      tol: float = DEFAULT_TOL) -> InvarianceReport:
    """Distance of short flow arcs ``exp(h X_i) m`` from the interpolated torus.

    The search for the nearest surface point starts from the grid location
    predicted by the centred-difference tangents.
    """
    if min(torus.grid_shape) < 8:
        raise ValueError("need at least 8 points per angle")
    tang = torus.tangents()
    units = np.array([2 * np.pi / n for n in torus.grid_shape])
    indices = torus.indices() if indices is None else indices
    worst = 0.0
    for index in indices:
        m = torus.point(index)
        T = tang[index].T * units
        for i in range(system.k):
            c = np.zeros(system.k)
            c[i] = h
            y = flow(system, c, m, tol=tol).endpoint
            du, *_ = np.linalg.lstsq(T, y - m, rcond=None)
            u0 = np.array(index, dtype=float) + du
            worst = max(worst, torus.distance_to_surface(y, u0))
    return InvarianceReport(worst, torus.interpolation_error_bound())


def verify_isotropy(system, torus: TorusGrid) -> float:
    """Max ``|t_a^T J t_b|`` over grid points and tangent pairs."""
    if torus.k < 2:
        return 0.0
    t = torus.tangents()
    n = torus.dim // 2
    q, p = t[..., :n], t[..., n:]
    worst = 0.0
    for a in range(torus.k):
        for b in range(a + 1, torus.k):
            w = np.sum(q[..., a, :] * p[..., b, :] - p[..., a, :] * q[..., b, :], axis=-1)
            worst = max(worst, float(np.max(np.abs(w))))
    return worst


def level_residual(system, torus: TorusGrid, level) -> float:
    vals = np.array([system.integral_values(x) for x in torus.flat_points()])
    return float(np.max(np.abs(vals - np.asarray(level))))


# ---------------------------------------------------------------------------
# continuation driver

@dataclass(frozen=True)
class StepPolicy:
    initial: float = 1e-2
    grow: float = 2.0
    shrink: float = 0.5
    floor: float = 1e-6
    max_step: float = 0.05
    easy_iterations: int = 3
    easy_count: int = 3


@dataclass
class ContinuationFamily:
    """Tori at the visited levels ``beta0 + alpha`` with per-level diagnostics."""

    beta0: np.ndarray
    direction: np.ndarray
    alphas: list = field(default_factory=list)
    tori: list = field(default_factory=list)
    spectra: list = field(default_factory=list)
    status: list = field(default_factory=list)
    annotations: list = field(default_factory=list)
    stop_reason: str = ""
    system: object = field(default=None, repr=False)

    def seed_frames(self) -> dict:
        """Slice frames at every seed grid point, keyed by angle index."""
        seed = self.tori[0]
        return {i: build_section(self.system, seed, i) for i in seed.indices()}

    def __len__(self):
        return len(self.tori)

    def torus_at(self, alpha) -> TorusGrid:
        alpha = np.asarray(alpha, dtype=float)
        for a, t in zip(self.alphas, self.tori):
            if np.allclose(a, alpha, atol=1e-14, rtol=0):
                return t
        raise KeyError(f"no torus stored at alpha={alpha}")

    @property
    def reach(self) -> float:
        return float(np.linalg.norm(self.alphas[-1])) if self.alphas else 0.0

    def to_report(self) -> dict:
        levels = []
        for a, t, lin, st in zip(self.alphas, self.tori, self.spectra, self.status):
            levels.append({
                "alpha": [float(v) for v in a],
                "level": [float(v) for v in t.beta0],
                "spectrum": [[float(z.real), float(z.imag)] for z in lin.spectrum],
                "margin": _finite(lin.min_distance_to_one),
                **{key: _jsonable(val) for key, val in st.items()},
            })
        return {
            "format_version": FORMAT_VERSION,
            "beta0": [float(v) for v in self.beta0],
            "direction": [float(v) for v in self.direction],
            "levels": levels,
            "annotations": [{key: _jsonable(v) for key, v in a.items()} for a in self.annotations],
            "stop_reason": self.stop_reason,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_report(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path):
        """One row per level and grid point: level index, alpha, phi index, coordinates."""
        if not self.tori:
            raise ValueError("empty family")
        k = self.tori[0].k
        dim = self.tori[0].dim
        header = (["level_index"] + [f"alpha_{i}" for i in range(len(self.beta0))]
                  + [f"phi_{a}" for a in range(k)] + [f"x_{j}" for j in range(dim)])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for li, (a, t) in enumerate(zip(self.alphas, self.tori)):
                for index in t.indices():
                    w.writerow([li] + [repr(float(v)) for v in a] + list(index)
                               + [repr(float(v)) for v in t.point(index)])


def _finite(x):
    return float(x) if np.isfinite(x) else None


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return _finite(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def reference_linearization(system, torus: TorusGrid, cls: HomotopyClass, tol_N: float = TOL_N,
                            index=None) -> PNLinearization:
    """Linearisation on a fresh slice at one grid point (index 0 by default)."""
    index = (0,) * torus.k if index is None else index
    sec = build_section(system, torus, index)
    return linearize_pn_map(system, sec, cls, "variational", tol_N)


class _MarginDrop(PLNError):
    pass


def _leaf_return_failed(exc) -> bool:
    while exc is not None:
        if isinstance(exc, LeafReturnError):
            return True
        exc = exc.__cause__
    return False


def continue_family(system, seed: TorusGrid, classes, direction, max_range: float,
                    policy: StepPolicy | None = None, tol_N: float = TOL_N,
                    margin_switch: float | None = None, trust_radius: float = TRUST_RADIUS,
                    rebase_fraction: float = 0.5, max_levels: int = 10_000) -> ContinuationFamily:
    """March ``alpha = t * direction`` for ``0 <= t <= max_range``.

    Each step predicts with the level tangent, corrects by lifting every grid
    point, and records the spectrum at grid index 0 on a freshly built slice.
    A step is refused when the condition-N margin drops below
    ``margin_switch`` (default ``10 tol_N``) or below half its previous
    value, or when the slope of the previous step extrapolates it below
    ``margin_switch`` inside the new step. Once the step reaches the floor
    for that reason, the remaining
    classes are tried in order at the last accepted torus; the first one
    with a healthy margin takes over and the switch is annotated. A failed
    leaf return halves the slice radius and rebuilds the slices at the last
    accepted torus.
    """
    policy = policy or StepPolicy()
    margin_switch = 10 * tol_N if margin_switch is None else margin_switch
    classes = [classes] if isinstance(classes, HomotopyClass) else list(classes)
    if not classes:
        raise ValueError("need at least one class")
    direction = np.asarray(direction, dtype=float)
    nrm = np.linalg.norm(direction)
    if nrm == 0:
        raise ValueError("direction must be nonzero")
    direction = direction / nrm
    beta0 = np.asarray(seed.beta0, dtype=float)
    fam = ContinuationFamily(beta0, direction, system=system)
    ctx = LiftContext(system, seed, beta0, trust_radius)

    active = 0
    lin = reference_linearization(system, seed, classes[active], tol_N)
    if lin.min_distance_to_one <= margin_switch:
        for j, c in enumerate(classes):
            lj = reference_linearization(system, seed, c, tol_N)
            if lj.min_distance_to_one > margin_switch:
                fam.annotations.append({"event": "class-switch", "alpha": np.zeros_like(beta0),
                                        "from": classes[active].label(), "to": c.label(),
                                        "margin_before": lin.min_distance_to_one,
                                        "margin_after": lj.min_distance_to_one})
                active, lin = j, lj
                break
    fam.alphas.append(np.zeros_like(beta0))
    fam.tori.append(seed)
    fam.spectra.append(lin)
    fam.status.append({"converged": True, "condition_n_margin": lin.min_distance_to_one,
                       "newton_iterations": 0, "class": classes[active].label(),
                       "f_residual": level_residual(system, seed, beta0)})
    if lin.min_distance_to_one <= margin_switch:
        fam.stop_reason = "condition N fails at the seed for every class"
        return fam
    if max_range <= 0:
        fam.stop_reason = "range exhausted"
        return fam

    t = 0.0
    step = min(policy.initial, policy.max_step)
    easy = 0
    slope = None
    base0 = (0,) * seed.k
    while t < max_range - 1e-15 and len(fam) < max_levels:
        h = min(step, max_range - t)
        alpha = (t + h) * direction
        cls = classes[active]
        try:
            prev = fam.spectra[-1].min_distance_to_one
            # a unit-circle pair can pass through 1 inside one step without
            # the end-point margins noticing; extrapolate the last slope
            if slope is not None and slope < 0 and prev + slope * h <= margin_switch:
                raise _MarginDrop(f"margin {prev:.3g} predicted to vanish within the step")
            # cheap margin probe on the reference point before the whole grid
            probe = lift_torus(system, ctx, alpha, cls, indices=[base0], store_warm=False)
            probe_pt = probe.results[base0].point
            sec = build_section(system, None, probe_pt)
            new_lin = linearize_pn_map(system, sec, cls, "variational", tol_N)
            if new_lin.min_distance_to_one <= margin_switch or \
                    new_lin.min_distance_to_one < 0.5 * prev:
                raise _MarginDrop(f"margin {new_lin.min_distance_to_one:.3g} after {prev:.3g}")
            lifted = lift_torus(system, ctx, alpha, cls)
        except PLNError as exc:
            log.debug("step %.3g to t=%.6g refused: %s", h, t + h, exc)
            step *= policy.shrink
            easy = 0
            if _leaf_return_failed(exc):
                # the orbit left the slice neighbourhood: shrink it and rebuild
                ctx.trust_radius *= 0.5
                ctx.rebase(fam.tori[-1], fam.alphas[-1])
                fam.annotations.append({"event": "trust-radius-halved", "alpha": fam.alphas[-1],
                                        "radius": ctx.trust_radius})
            if step >= policy.floor:
                continue
            if isinstance(exc, _MarginDrop):
                switched = False
                cur = fam.tori[-1]
                for j, c in enumerate(classes):
                    if j == active:
                        continue
                    try:
                        lj = reference_linearization(system, cur, c, tol_N)
                    except PLNError:
                        continue
                    if lj.min_distance_to_one > margin_switch:
                        fam.annotations.append({
                            "event": "class-switch", "alpha": fam.alphas[-1],
                            "from": classes[active].label(), "to": c.label(),
                            "margin_before": fam.spectra[-1].min_distance_to_one,
                            "margin_after": lj.min_distance_to_one})
                        active = j
                        fam.spectra[-1] = lj
                        fam.status[-1]["class"] = c.label()
                        fam.status[-1]["condition_n_margin"] = lj.min_distance_to_one
                        ctx.warm = {}
                        slope = None
                        step = min(policy.initial, policy.max_step)
                        switched = True
                        break
                if switched:
                    continue
                fam.stop_reason = f"condition-N margin collapse at t={t:.6g} for every class"
            else:
                fam.stop_reason = f"step below floor at t={t:.6g}: {exc}"
            return fam

        t += h
        slope = (new_lin.min_distance_to_one - prev) / h
        fam.alphas.append(alpha)
        fam.tori.append(lifted.torus)
        fam.spectra.append(new_lin)
        fam.status.append({"converged": True,
                           "condition_n_margin": new_lin.min_distance_to_one,
                           "newton_iterations": lifted.newton_iterations,
                           "class": cls.label(), "f_residual": lifted.f_residual})
        if lifted.newton_iterations <= policy.easy_iterations:
            easy += 1
            if easy >= policy.easy_count:
                step = min(step * policy.grow, policy.max_step)
                easy = 0
        else:
            easy = 0
        if lifted.displacement > rebase_fraction * ctx.trust_radius:
            ctx.rebase(lifted.torus, alpha)
            fam.status[-1]["rebased"] = True
    fam.stop_reason = "range exhausted" if t >= max_range - 1e-15 else "level limit reached"
    return fam
