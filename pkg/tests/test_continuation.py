import csv
import json
import math

import numpy as np
import pytest

import oracles
from pln.continuation import (ContinuationFamily, LiftContext, StepPolicy, continue_family,
                              dpsi_df, level_residual, lift_torus, newton_fixed_point,
                              tangent_predictor, verify_invariance, verify_isotropy)
from pln.errors import ConditionNViolation, LeafReturnError, PartialLiftError, TrustRegionError
from pln.models import build_builtin
from pln.pnmap import build_section, linearize_pn_map
from pln.torus import TorusGrid


@pytest.fixture(scope="module")
def t2p8():
    return build_builtin("T2-perturbed", grid=8)


@pytest.fixture(scope="module")
def t28():
    return build_builtin("T2", grid=8)


def angles_of(x, n=3, k=2):
    return [math.atan2(x[a], x[n + a]) for a in range(k)]


# -- Newton on one slice -------------------------------------------------------

def test_seed_point_is_its_own_fixed_point(t2p8):
    sec = build_section(t2p8.system, t2p8.torus, (1, 5))
    r = newton_fixed_point(t2p8.system, sec, t2p8.classes[0], t2p8.torus.beta0)
    assert r.iterations == 0
    assert np.allclose(r.s, 0) and np.linalg.norm(r.point - sec.base) < 1e-12


@pytest.mark.parametrize("alpha", [(0.03, 0.0), (-0.02, 0.05), (0.0, -0.04)])
def test_integrable_fixed_point_stays_in_the_plane(t28, alpha):
    sec = build_section(t28.system, t28.torus, (3, 4))
    r = newton_fixed_point(t28.system, sec, t28.classes[0], t28.torus.beta0 + np.array(alpha))
    assert np.linalg.norm(r.s) < 1e-12
    assert abs(r.point[2]) < 1e-12 and abs(r.point[5]) < 1e-12


def test_perturbed_fixed_point_converges_fast(t2p8):
    sec = build_section(t2p8.system, t2p8.torus, (2, 3))
    target = t2p8.torus.beta0 + np.array([0.05, 0.0])
    r = newton_fixed_point(t2p8.system, sec, t2p8.classes[0], target)
    assert r.residual < 1e-10 and r.iterations <= 5
    assert np.max(np.abs(t2p8.system.integral_values(r.point) - target)) < 1e-12


def test_newton_is_quadratic():
    b = build_builtin("T2-perturbed", grid=8, epsilon=0.1)
    sec = build_section(b.system, b.torus, (2, 3))
    r = newton_fixed_point(b.system, sec, b.classes[0], b.torus.beta0 + np.array([0.08, 0.0]))
    h = r.history
    assert len(h) >= 3
    for e0, e1 in zip(h, h[1:]):
        if e0 > 1e-12:
            assert e1 <= 10 * e0 ** 2


def test_newton_rejects_far_guess(t2p8):
    sec = build_section(t2p8.system, t2p8.torus, (0, 0))
    with pytest.raises(TrustRegionError):
        newton_fixed_point(t2p8.system, sec, t2p8.classes[0], t2p8.torus.beta0, s_init=[1.0, 0.0])


def test_newton_reports_condition_n_failure():
    b = build_builtin("half-nu", grid=8)
    sec = build_section(b.system, b.torus, (0, 0))
    target = b.torus.beta0 + np.array([0.0, 0.01])
    with pytest.raises(ConditionNViolation):
        newton_fixed_point(b.system, sec, b.classes[0], target, s_init=[1e-3, 0.0])


# -- predictor -----------------------------------------------------------------

def test_predictor_null_step():
    assert np.array_equal(tangent_predictor(np.diag([0.3, 0.2]), np.ones((2, 2)), [0, 0]),
                          np.zeros(2))


def test_predictor_with_zero_a():
    M = np.array([[1.0, 2.0], [0.5, -1.0]])
    dF = np.array([0.1, -0.3])
    assert np.allclose(tangent_predictor(np.zeros((2, 2)), M, dF), M @ dF)


def test_predictor_singular():
    with pytest.raises(ConditionNViolation):
        tangent_predictor(np.eye(2), np.ones((2, 2)), [1.0, 0.0])


def test_integrable_predictor_is_zero(t28):
    sec = build_section(t28.system, t28.torus, (1, 1))
    D = dpsi_df(t28.system, sec, t28.classes[0])
    lin = linearize_pn_map(t28.system, sec, t28.classes[0])
    assert np.abs(tangent_predictor(lin, D, [0.1, 0.2])).max() < 1e-8


def test_predictor_matches_lifted_motion(t2p8):
    sys_, cls = t2p8.system, t2p8.classes[0]
    sec = build_section(sys_, t2p8.torus, (2, 2))
    lin = linearize_pn_map(sys_, sec, cls)
    dF = np.array([1e-3, 0.0])
    ds = tangent_predictor(lin, dpsi_df(sys_, sec, cls), dF)
    s = newton_fixed_point(sys_, sec, cls, t2p8.torus.beta0 + dF).s
    assert np.linalg.norm(s) > 1e-7
    assert np.linalg.norm(ds - s) < 1e-3 * np.linalg.norm(s)


# -- whole-torus lifts ---------------------------------------------------------

def test_lift_at_zero_is_seed(t2p8):
    ctx = LiftContext(t2p8.system, t2p8.torus, t2p8.torus.beta0)
    res = lift_torus(t2p8.system, ctx, [0.0, 0.0], t2p8.classes[0])
    assert np.abs(res.torus.points - t2p8.torus.points).max() < 1e-10


def test_integrable_lift_is_exact(t28):
    alpha = np.array([0.05, -0.03])
    ctx = LiftContext(t28.system, t28.torus, t28.torus.beta0)
    res = lift_torus(t28.system, ctx, alpha, t28.classes[0])
    acts = oracles.integrable_t2_level_actions(t28.torus.beta0 + alpha)
    for x in res.torus.flat_points():
        ref = oracles.integrable_torus_point(angles_of(x), acts)
        assert np.linalg.norm(x - ref) < 1e-9


def test_perturbed_lift_matches_oracle(t2p8):
    alpha = np.array([0.05, 0.0])
    ctx = LiftContext(t2p8.system, t2p8.torus, t2p8.torus.beta0)
    res = lift_torus(t2p8.system, ctx, alpha, t2p8.classes[0])
    assert res.f_residual < 1e-8
    level = t2p8.torus.beta0 + alpha
    for x in res.torus.flat_points()[::5]:
        ref = oracles.perturbed_t2_torus_point(angles_of(x), level)
        assert np.linalg.norm(x - ref) < 1e-8
    rep = verify_invariance(t2p8.system, res.torus)
    assert rep.residual < 1e-6 + rep.interpolation_bound
    assert level_residual(t2p8.system, res.torus, level) < 1e-8


def test_one_step_equals_two_half_steps(t2p8):
    sys_, cls = t2p8.system, t2p8.classes[0]
    alpha = np.array([0.04, 0.02])
    one = lift_torus(sys_, LiftContext(sys_, t2p8.torus, t2p8.torus.beta0), alpha, cls)
    ctx = LiftContext(sys_, t2p8.torus, t2p8.torus.beta0)
    half = lift_torus(sys_, ctx, alpha / 2, cls)
    ctx.rebase(half.torus, alpha / 2)
    two = lift_torus(sys_, ctx, alpha, cls)
    # the two lifts sit on different slices, so compare the surfaces
    for x in two.torus.flat_points():
        ref = oracles.perturbed_t2_torus_point(angles_of(x), t2p8.torus.beta0 + alpha)
        assert np.linalg.norm(x - ref) < 1e-8
    d = max(two.torus.distance_to_surface(x, np.array(i, dtype=float))
            for i, x in zip(one.torus.indices(), one.torus.flat_points()))
    assert d < 1e-8


def test_displacement_is_linear(t2p8):
    disp = []
    for a in (1e-2, 1e-3, 1e-4):
        ctx = LiftContext(t2p8.system, t2p8.torus, t2p8.torus.beta0)
        res = lift_torus(t2p8.system, ctx, [a, 0.0], t2p8.classes[0],
                         indices=[(0, 0), (3, 5), (7, 2)])
        assert res.torus is None
        disp.append(res.displacement)
    assert 8 < disp[0] / disp[1] < 12 and 8 < disp[1] / disp[2] < 12


def test_partial_lift_names_the_point():
    b = build_builtin("half-nu", grid=8)
    ctx = LiftContext(b.system, b.torus, b.torus.beta0)
    with pytest.raises(PartialLiftError) as info:
        lift_torus(b.system, ctx, [0.0, 0.05], b.classes[0])
    assert info.value.phi_index == (0, 0)


# -- geometric checks ----------------------------------------------------------

def test_integrable_torus_invariant(t2):
    rep = verify_invariance(t2.system, t2.torus)
    assert rep.within_bound


def loop(n, offset=0.0):
    th = 2 * np.pi * np.arange(n) / n
    pts = np.zeros((n, 4))
    pts[:, 0], pts[:, 2] = np.sin(th), np.cos(th)
    pts[:, 1] = offset
    return pts


def test_non_invariant_loop_is_flagged(t1):
    good = TorusGrid(loop(128), t1.torus.beta0)
    bad = TorusGrid(loop(128, 0.3), t1.system.integral_values(loop(1, 0.3)[0]))
    g = verify_invariance(t1.system, good)
    b = verify_invariance(t1.system, bad)
    assert g.within_bound
    h = 1e-2
    assert b.residual > 0.1 * h and b.residual > 10 * b.interpolation_bound


def test_invariance_needs_dense_grid(t1):
    with pytest.raises(ValueError):
        verify_invariance(t1.system, TorusGrid(loop(6), t1.torus.beta0))


def test_isotropy_trivial_for_loops(t1):
    assert verify_isotropy(t1.system, t1.torus) == 0.0


def test_isotropy_of_oscillator_torus(t2):
    assert verify_isotropy(t2.system, t2.torus) < 1e-8


def test_sheared_torus_is_not_isotropic(t2):
    n = 16
    th = 2 * np.pi * np.arange(n) / n
    a, b = np.meshgrid(th, th, indexing="ij")
    pts = np.zeros((n, n, 6))
    pts[..., 0], pts[..., 3] = np.sin(a), np.cos(a)
    pts[..., 1], pts[..., 4] = np.sin(b), np.cos(b) + np.sin(a)
    assert verify_isotropy(t2.system, TorusGrid(pts)) > 0.5


# -- families ------------------------------------------------------------------

def test_zero_range_gives_seed_only(t2p8):
    fam = continue_family(t2p8.system, t2p8.torus, t2p8.classes, [1, 0], 0.0)
    assert len(fam) == 1 and fam.stop_reason == "range exhausted"
    assert fam.status[0]["converged"]


def test_integrable_family_has_constant_margin(t28):
    fam = continue_family(t28.system, t28.torus, t28.classes, [1, 0], 0.5)
    assert fam.stop_reason == "range exhausted"
    assert fam.reach == pytest.approx(0.5)
    margins = [lin.min_distance_to_one for lin in fam.spectra]
    assert max(margins) - min(margins) < 1e-8
    for a, t in zip(fam.alphas, fam.tori):
        assert level_residual(t28.system, t, t28.torus.beta0 + a) < 1e-8


@pytest.fixture(scope="module")
def perturbed_family(t2p8):
    return continue_family(t2p8.system, t2p8.torus, t2p8.classes, [1, 0], 0.12)


def test_perturbed_family(perturbed_family, t2p8):
    fam = perturbed_family
    assert fam.stop_reason == "range exhausted"
    assert np.allclose(fam.tori[0].points, t2p8.torus.points)
    for a, t, st in zip(fam.alphas, fam.tori, fam.status):
        assert level_residual(t2p8.system, t, t2p8.torus.beta0 + a) < 1e-8
        assert st["converged"] and st["newton_iterations"] <= 5
    assert fam.torus_at(fam.alphas[-1]) is fam.tori[-1]
    with pytest.raises(KeyError):
        fam.torus_at([9.0, 9.0])


def test_family_export(perturbed_family, tmp_path):
    fam = perturbed_family
    fam.write_json(tmp_path / "fam.json")
    data = json.loads((tmp_path / "fam.json").read_text())
    assert data["format_version"] == 1
    assert len(data["levels"]) == len(fam)
    assert data["levels"][0]["alpha"] == [0.0, 0.0]
    assert {"spectrum", "margin", "level", "converged", "class"} <= set(data["levels"][1])
    fam.write_csv(tmp_path / "fam.csv")
    with open(tmp_path / "fam.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:5] == ["level_index", "alpha_0", "alpha_1", "phi_0", "phi_1"]
    assert len(rows) == 1 + 64 * len(fam)
    last = [float(v) for v in rows[-1][5:]]
    assert np.allclose(last, fam.tori[-1].point((7, 7)))


def test_seed_frames(perturbed_family):
    frames = perturbed_family.seed_frames()
    assert len(frames) == 64
    assert all(f.condition_number < 1e6 for f in frames.values())


def test_failing_seed_class_is_reported():
    b = build_builtin("half-nu", grid=8)
    fam = continue_family(b.system, b.torus, b.classes[:1], [0, 1], 0.1)
    assert len(fam) == 1
    assert "condition N" in fam.stop_reason


def test_leaf_failure_halves_trust_radius(t28, monkeypatch):
    import pln.continuation as cont
    real = cont.lift_torus
    calls = {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            try:
                raise LeafReturnError("left the neighbourhood")
            except LeafReturnError as exc:
                raise PartialLiftError("lift failed", (0, 0)) from exc
        return real(*args, **kw)

    monkeypatch.setattr(cont, "lift_torus", flaky)
    fam = continue_family(t28.system, t28.torus, t28.classes, [1, 0], 0.03)
    events = [a for a in fam.annotations if a["event"] == "trust-radius-halved"]
    assert len(events) == 1 and events[0]["radius"] == pytest.approx(0.05)
    assert fam.stop_reason == "range exhausted"


def test_step_policy_defaults():
    p = StepPolicy()
    assert (p.initial, p.grow, p.shrink, p.floor) == (1e-2, 2.0, 0.5, 1e-6)


@pytest.mark.slow
def test_class_switch():
    b = build_builtin("class-switch", grid=8)
    fam = continue_family(b.system, b.torus, b.classes, b.direction, 0.25)
    switches = [a for a in fam.annotations if a.get("event") == "class-switch"]
    assert len(switches) == 1
    at = float(np.linalg.norm(switches[0]["alpha"]))
    assert abs(at - oracles.CLASS_SWITCH_ALPHA) < 5e-3
    assert fam.reach > at
    classes = [st["class"] for st in fam.status]
    assert classes[0] == b.classes[0].label() and classes[-1] == b.classes[1].label()
    assert fam.stop_reason == "range exhausted"
    assert isinstance(fam, ContinuationFamily)
