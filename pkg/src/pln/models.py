"""Builtin test models and the JSON model description loader.

Model file layout::

    {"model": "<builtin id>", "params": {...}}
    {"model": "oscillator", "s": 2, "r": 1, "omega": [1, 2], "nu": [1.732],
     "epsilon": 0.0, "G": [[coef, [action exps], [q exps], [p exps]], ...],
     "actions": [0.5, 0.4]}
    {"model": "polynomial", "n": 2, "k": 1,
     "monomials": [[[coef, [e_1, .., e_2n]], ...], ...],
     "torus": {"planes": [0], "actions": [0.5], "frequencies": [[1.0]]}}

Every layout accepts optional ``"classes"`` (winding lists or
``{"winding": [...], "c": [...]}``), ``"direction"`` and ``"grid"``.
Numbers may be given as strings ``"p/q"`` or ``"sqrt(x)"``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dynsys import FieldSystem, HamiltonianSystem, VectorFieldSystem
from .errors import ConfigError, UnsupportedModelError
from .oscillators import ActionPolynomial, OscillatorModel, build_phase_model
from .pnmap import HomotopyClass, find_periodic_combination
from .polynomial import Polynomial
from .torus import TorusGrid


@dataclass
class ModelBundle:
    name: str
    system: FieldSystem
    torus: TorusGrid
    classes: list
    direction: np.ndarray | None = None
    oscillator: OscillatorModel | None = None
    kind: str = "hamiltonian"
    notes: dict = field(default_factory=dict)


def parse_number(v):
    """Numbers, ``"p/q"`` rationals (kept exact) and ``"sqrt(x)"`` strings."""
    if isinstance(v, bool):
        raise ConfigError(f"not a number: {v!r}")
    if isinstance(v, (int, float, Fraction)):
        return v
    if isinstance(v, str):
        s = v.strip()
        m = re.fullmatch(r"(-?)sqrt\((.+)\)", s)
        if m:
            val = math.sqrt(float(Fraction(m.group(2))))
            return -val if m.group(1) else val
        try:
            return Fraction(s)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"cannot parse number {v!r}") from exc
    raise ConfigError(f"not a number: {v!r}")


def classes_from_spec(torus, system, spec, check=True):
    out = []
    for entry in spec:
        if isinstance(entry, dict):
            w = entry["winding"]
            c = entry.get("c")
            c = None if c is None else [float(parse_number(x)) for x in c]
        else:
            w, c = entry, None
        out.append(find_periodic_combination(torus, w, c=c,
                                             system=system if check and c is None else None,
                                             sample=torus.sample(8)))
    return out


# ---------------------------------------------------------------------------
# builtin oscillator models

def _t1(**p):
    return OscillatorModel(1, 1, (p.get("omega", 1.0),), (p.get("nu", math.sqrt(2)),),
                           actions=(p.get("action", 0.5),), name="T1"), [(1,)], None


def _t2(**p):
    return OscillatorModel(2, 1, tuple(p.get("omega", (1, 2))), (p.get("nu", math.sqrt(3)),),
                           actions=tuple(p.get("actions", (0.5, 0.4))), name="T2"), [(1, 1)], [1.0, 0.0]


def _t2_perturbed(**p):
    """T2 with ``G = (I_1 - a_1) q_3 + I_2 J_3 + J_3^2``.

    The linear transverse term vanishes only on the seed level of I_1, so
    neighbouring tori are displaced in q_3 and the lift is non-trivial.
    """
    actions = tuple(p.get("actions", (0.5, 0.4)))
    a1 = actions[0]
    G = ActionPolynomial.from_terms(2, 1, [
        (1.0, (1, 0), (1,), (0,)),
        (-a1, (0, 0), (1,), (0,)),
        (0.5, (0, 1), (2,), (0,)),
        (0.5, (0, 1), (0,), (2,)),
        (0.25, (0, 0), (4,), (0,)),
        (0.5, (0, 0), (2,), (2,)),
        (0.25, (0, 0), (0,), (4,)),
    ])
    model = OscillatorModel(2, 1, tuple(p.get("omega", (1, 2))), (p.get("nu", math.sqrt(3)),),
                            G=G, epsilon=p.get("epsilon", 1e-3), actions=actions,
                            name="T2-perturbed", torus_flat=True)
    return model, [(1, 1)], [1.0, 0.0]


def _half_nu(**p):
    """``omega_s = 1`` and ``nu = 1/2``: class ``n_s = 2`` resonates, ``n_s = 1`` does not."""
    model = OscillatorModel(2, 1, (p.get("omega1", math.sqrt(2)), 1), (Fraction(1, 2),),
                            actions=tuple(p.get("actions", (0.5, 0.5))), name="half-nu")
    return model, [(0, 2), (0, 1)], [0.0, 1.0]


def _class_switch(**p):
    """``G = I_2^2 / 2`` with ``epsilon = 1`` so the torus frequency in plane 2
    is ``1 + I_2``. For class (1, 2) the transverse rotation number
    ``2 nu / (1 + I_2)`` reaches 1 at ``I_2 = 2 nu - 1``; class (1, 1) stays
    near 1/2."""
    G = ActionPolynomial.from_terms(2, 1, [(0.5, (0, 2), (0,), (0,))])
    model = OscillatorModel(2, 1, (math.sqrt(2), 1.0), (p.get("nu", 0.8),), G=G, epsilon=1.0,
                            actions=tuple(p.get("actions", (0.5, 0.5))), name="class-switch")
    return model, [(1, 2), (1, 1)], [0.0, 1.0]


_OSCILLATORS = {
    "T1": _t1,
    "T2": _t2,
    "T2-perturbed": _t2_perturbed,
    "half-nu": _half_nu,
    "class-switch": _class_switch,
}


def oscillator_bundle(model: OscillatorModel, grid=32, classes=None, direction=None,
                      actions=None) -> ModelBundle:
    system, torus = build_phase_model(model, actions=actions, grid=grid)
    classes = [] if classes is None else classes
    cls = classes_from_spec(torus, system, classes)
    d = None if direction is None else np.asarray(direction, dtype=float)
    return ModelBundle(model.name, system, torus, cls, d, model)


# ---------------------------------------------------------------------------
# negative controls and the non-Hamiltonian example

def _broken_commutation(grid=32, **p):
    """``(H, q_1)`` on the T2 torus: the fields do not commute."""
    base = build_builtin("T2", grid=grid)
    dim = base.system.dim
    H = base.system.integrals[1]
    system = HamiltonianSystem(3, [H, Polynomial.variable(dim, 0)], name="broken-commutation")
    torus = TorusGrid(base.torus.points, system.integral_values(base.torus.point((0, 0))))
    return ModelBundle("broken-commutation", system, torus, [], None, None,
                       notes={"negative_control": "commutation"})


def _broken_coupling(grid=32, **p):
    """``(I_1 + kappa q_1 q_3, H)`` on the T2 torus: the first field leaves the
    torus and does not commute with the second, so the linearisation depends
    on the base point."""
    kappa = p.get("kappa", 0.3)
    base = build_builtin("T2", grid=grid)
    dim = base.system.dim
    F1 = base.system.integrals[0] + kappa * Polynomial(dim, {(1, 0, 1, 0, 0, 0): 1.0})
    system = HamiltonianSystem(3, [F1, base.system.integrals[1]], name="broken-coupling")
    torus = TorusGrid(base.torus.points, system.integral_values(base.torus.point((0, 0))))
    cls = [HomotopyClass((1, 1), base.classes[0].coefficients)]
    return ModelBundle("broken-coupling", system, torus, cls, None, None,
                       notes={"negative_control": "commutation"})


def limit_cycle_system(mu: float = 0.1) -> VectorFieldSystem:
    """``x' = -y + mu x (1 - r^2)``, ``y' = x + mu y (1 - r^2)``; unit-circle cycle."""
    x = Polynomial.variable(2, 0)
    y = Polynomial.variable(2, 1)
    g = 1.0 - x * x - y * y
    return VectorFieldSystem(2, [[-1.0 * y + mu * x * g, x + mu * y * g]], name="limit-cycle")


def _limit_cycle(grid=64, **p):
    mu = p.get("mu", 0.1)
    system = limit_cycle_system(mu)
    th = 2 * np.pi * np.arange(grid) / grid
    torus = TorusGrid(np.stack([np.cos(th), np.sin(th)], axis=-1), None, np.array([[1.0]]))
    cls = [find_periodic_combination(torus, (1,))]
    return ModelBundle("limit-cycle", system, torus, cls, None, None, kind="vector-field",
                       notes={"mu": mu, "multiplier": math.exp(-4 * math.pi * mu)})


_SPECIAL = {
    "broken-commutation": _broken_commutation,
    "broken-coupling": _broken_coupling,
    "limit-cycle": _limit_cycle,
}

BUILTINS = tuple(_OSCILLATORS) + tuple(_SPECIAL)


def build_builtin(name: str, grid=None, **params) -> ModelBundle:
    if name in _OSCILLATORS:
        model, classes, direction = _OSCILLATORS[name](**params)
        return oscillator_bundle(model, 32 if grid is None else grid, classes, direction)
    if name in _SPECIAL:
        kw = {} if grid is None else {"grid": grid}
        return _SPECIAL[name](**kw, **params)
    raise UnsupportedModelError(f"unknown builtin model {name!r}; known: {', '.join(BUILTINS)}")


# ---------------------------------------------------------------------------
# JSON descriptions

def _polynomial_bundle(spec, grid):
    try:
        n = int(spec["n"])
        k = int(spec["k"])
        mono = spec["monomials"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"polynomial model needs n, k and monomials: {exc}") from exc
    if len(mono) != k:
        raise ConfigError(f"expected {k} monomial lists, got {len(mono)}")
    dim = 2 * n
    integrals = []
    for terms in mono:
        for coef, exps in terms:
            if len(exps) != dim:
                raise ConfigError(f"monomial exponent {exps} should have {dim} entries")
        integrals.append(Polynomial.from_monomials(
            dim, [(float(parse_number(c)), e) for c, e in terms]))
    system = HamiltonianSystem(n, integrals, name=spec.get("name", "polynomial"))
    tspec = spec.get("torus")
    if tspec is None:
        raise ConfigError("polynomial model needs a torus description")
    if "points" in tspec:
        pts = np.asarray(tspec["points"], dtype=float)
    else:
        planes = [int(v) for v in tspec["planes"]]
        acts = [float(parse_number(v)) for v in tspec["actions"]]
        if len(planes) != k or len(acts) != k:
            raise ConfigError("torus needs one plane and one action per integral")
        shape = (grid,) * k
        mesh = np.meshgrid(*[2 * np.pi * np.arange(g) / g for g in shape], indexing="ij")
        pts = np.zeros(shape + (dim,))
        for a, (pl, act) in enumerate(zip(planes, acts)):
            pts[..., pl] = math.sqrt(2 * act) * np.sin(mesh[a])
            pts[..., n + pl] = math.sqrt(2 * act) * np.cos(mesh[a])
    freqs = tspec.get("frequencies")
    freqs = None if freqs is None else np.array(
        [[float(parse_number(v)) for v in row] for row in freqs])
    beta0 = system.integral_values(pts.reshape(-1, dim)[0])
    torus = TorusGrid(pts, beta0, freqs)
    return system, torus


def load_model(source, grid: int | None = None) -> ModelBundle:
    """Model bundle from a JSON file path or an already parsed dict."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"model file not found: {path}")
        try:
            spec = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    else:
        spec = dict(source)
    if "model" not in spec:
        raise ConfigError("model description needs a 'model' entry")
    grid = int(spec.get("grid", 32)) if grid is None else int(grid)
    kind = spec["model"]
    classes = spec.get("classes")
    direction = spec.get("direction")
    if kind == "polynomial":
        system, torus = _polynomial_bundle(spec, grid)
        cls = classes_from_spec(torus, system, classes or [])
        d = None if direction is None else np.asarray(direction, dtype=float)
        return ModelBundle(spec.get("name", "polynomial"), system, torus, cls, d)
    if kind == "oscillator":
        try:
            s, r = int(spec["s"]), int(spec["r"])
            G = spec.get("G")
            G = None if G is None else ActionPolynomial.from_terms(
                s, r, [(float(parse_number(c)), a, b, d) for c, a, b, d in G])
            model = OscillatorModel(
                s, r, tuple(parse_number(v) for v in spec["omega"]),
                tuple(parse_number(v) for v in spec["nu"]), G=G,
                epsilon=float(parse_number(spec.get("epsilon", 0.0))),
                actions=tuple(float(parse_number(v)) for v in spec["actions"]),
                name=spec.get("name", "oscillator"),
                torus_flat=bool(spec.get("torus_flat", False)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"oscillator model is missing a field: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return oscillator_bundle(model, grid, classes or [(0,) * (s - 1) + (1,)], direction)
    params = spec.get("params", {})
    bundle = build_builtin(kind, grid=grid, **params)
    if classes is not None:
        bundle.classes = classes_from_spec(bundle.torus, bundle.system, classes)
    if direction is not None:
        bundle.direction = np.asarray(direction, dtype=float)
    return bundle
