"""Perturbed harmonic oscillators with explicitly known integrals.

Index bookkeeping
-----------------
The phase model has ``n = s + r`` degrees of freedom:

=================  ===========================  ==================
planes             actions                      frequencies
=================  ===========================  ==================
1 .. s             I_1 .. I_s  (torus planes)   omega_1 .. omega_s
s+1 .. s+r         J_1 .. J_r  (transverse)     nu_1 .. nu_r
=================  ===========================  ==================

with ``I = (q^2 + p^2)/2`` in every plane and the angle ``phi = atan2(q, p)``
advancing at unit rate under the field of ``I``. The integrals are
``F_k = I_k`` for ``k < s`` and ``F_s = H``::

    H = sum_k omega_k I_k + sum_j nu_j J_j + epsilon * G

The invariant torus is ``{I = c, J = 0}``. Counting torus planes this way,
the transverse pairs number ``r = n - s``; the alternative count
``r = n + 1 - s`` arises when the plane carried by H is not counted among the
torus planes. ``r`` is stored explicitly so neither convention is inferred.

Winding solutions are returned in the "period 2 pi" normalisation, where the
coefficients ``(alpha, beta)`` make ``alpha . X + beta X_H`` wind ``n`` times in
time ``2 pi``. The numerical pipeline flows for unit time, so its coefficient
vector is ``2 pi (alpha, beta)`` (see :func:`coefficients_from_winding`).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

import numpy as np

from .dynsys import HamiltonianSystem
from .errors import DegenerateClassError, DegenerateFrequencyError
from .polynomial import Polynomial, action, action_power
from .torus import TorusGrid

INTEGER_TOL = 1e-9


def _exact(*values) -> bool:
    return all(isinstance(v, Rational) for v in values)


def integer_distance(x) -> float:
    return abs(x - round(x))


def is_integer(x, tol: float = INTEGER_TOL) -> bool:
    """Exact for rationals; ``dist(x, Z) <= tol`` otherwise (a semi-decision)."""
    if isinstance(x, Rational):
        return Fraction(x).denominator == 1
    return integer_distance(float(x)) <= tol


class ActionPolynomial:
    """Perturbation ``G(I; q_t, p_t)``: polynomial in the s torus actions and
    the transverse canonical coordinates.

    Terms are keyed by ``(a_1..a_s, b_1..b_r, d_1..d_r)`` meaning
    ``prod I_k^a_k * prod q_j^b_j * prod p_j^d_j``. Only the actions of the
    torus planes enter, so G is invariant under each torus rotation.
    """

    def __init__(self, s: int, r: int, terms=None):
        self.s = s
        self.r = r
        self.poly = Polynomial(s + 2 * r, terms or {})

    @classmethod
    def from_terms(cls, s, r, terms):
        """``terms``: iterable of ``(coef, action_exps, q_exps, p_exps)``."""
        d = {}
        for coef, a, b, e in terms:
            key = tuple(a) + tuple(b) + tuple(e)
            d[key] = d.get(key, 0.0) + float(coef)
        return cls(s, r, d)

    def to_terms(self):
        s, r = self.s, self.r
        return [[c, list(e[:s]), list(e[s:s + r]), list(e[s + r:])]
                for e, c in self.poly.terms.items()]

    def __call__(self, I, qt=None, pt=None):
        qt = np.zeros(self.r) if qt is None else qt
        pt = np.zeros(self.r) if pt is None else pt
        return self.poly(np.concatenate([I, qt, pt]))

    def action_gradient(self, I) -> np.ndarray:
        """``g_k = dG/dI_k`` on the transverse zero set."""
        z = np.concatenate([np.asarray(I, dtype=float), np.zeros(2 * self.r)])
        return np.array([self.poly.derivative(k)(z) for k in range(self.s)])

    def transverse_gradient(self, I) -> np.ndarray:
        z = np.concatenate([np.asarray(I, dtype=float), np.zeros(2 * self.r)])
        return np.array([self.poly.derivative(self.s + j)(z) for j in range(2 * self.r)])

    def vanishes_on_torus_set(self) -> bool:
        """True when every term carries a transverse factor, so that
        ``G(I; 0) = 0`` and ``dG/dI_k(I; 0) = 0`` for all I."""
        s = self.s
        return all(any(e[s:]) for e in self.poly.terms)

    def to_phase(self, n: int) -> Polynomial:
        s, r = self.s, self.r
        dim = 2 * n
        out = Polynomial(dim)
        for e, c in self.poly.terms.items():
            term = Polynomial.constant(dim, c)
            for k in range(s):
                if e[k]:
                    term = term * action_power(dim, k, n + k, e[k])
            mono = [0] * dim
            for j in range(r):
                mono[s + j] = e[s + j]
                mono[n + s + j] = e[s + r + j]
            out = out + term * Polynomial(dim, {tuple(mono): 1.0})
        return out


@dataclass(frozen=True)
class OscillatorModel:
    s: int
    r: int
    omega: tuple
    nu: tuple
    G: ActionPolynomial | None = None
    epsilon: float = 0.0
    actions: tuple | None = None
    name: str = "oscillator"
    torus_flat: bool = False

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(self.omega))
        object.__setattr__(self, "nu", tuple(self.nu))
        if len(self.omega) != self.s or len(self.nu) != self.r:
            raise ValueError("omega must have s entries and nu must have r entries")
        if self.s < 1 or self.r < 0:
            raise ValueError("need s >= 1 and r >= 0")
        freqs = [float(v) for v in self.omega + self.nu]
        if any(v == 0 for v in freqs):
            raise ValueError("frequencies must be nonzero")
        if len(set(freqs)) != len(freqs):
            raise ValueError("frequencies must be pairwise distinct")
        if self.G is not None and (self.G.s, self.G.r) != (self.s, self.r):
            raise ValueError("perturbation shape does not match (s, r)")
        if self.torus_flat and self.G is not None and not self.G.vanishes_on_torus_set():
            raise ValueError("G does not satisfy G(I;0) = dG/dI(I;0) = 0")
        if self.actions is not None:
            object.__setattr__(self, "actions", tuple(float(a) for a in self.actions))
            if len(self.actions) != self.s or any(a <= 0 for a in self.actions):
                raise ValueError("actions must be s positive numbers")

    @property
    def n(self) -> int:
        return self.s + self.r

    def g(self, I) -> np.ndarray:
        """``epsilon * dG/dI_k`` at ``(I; J = 0)``."""
        if self.G is None or self.epsilon == 0:
            return np.zeros(self.s)
        return self.epsilon * self.G.action_gradient(I)


# ---------------------------------------------------------------------------
# winding solutions and multipliers

def _check_winding(n_vec, s):
    n_vec = tuple(int(v) for v in n_vec)
    if len(n_vec) != s:
        raise ValueError(f"winding must have {s} entries")
    if not any(n_vec):
        raise ValueError("winding vector must be nonzero")
    return n_vec


def solve_winding(model: OscillatorModel, n_vec):
    """Closed-orbit coefficients for the unperturbed frequencies.

    ``beta = n_s / omega_s`` and ``alpha_k = (n_k omega_s - n_s omega_k) / omega_s``.
    Exact when the frequencies are rationals.
    """
    n_vec = _check_winding(n_vec, model.s)
    ns = n_vec[-1]
    if ns == 0:
        raise DegenerateClassError(
            "n_s = 0 gives beta = 0: every transverse multiplier is one")
    ws = model.omega[-1]
    if _exact(ws, *model.omega):
        ws = Fraction(ws)
        beta = Fraction(ns) / ws
        alpha = tuple((n_vec[k] * ws - ns * Fraction(model.omega[k])) / ws
                      for k in range(model.s - 1))
    else:
        ws = float(ws)
        beta = ns / ws
        alpha = tuple((n_vec[k] * ws - ns * float(model.omega[k])) / ws
                      for k in range(model.s - 1))
    return alpha, beta


def solve_winding_shifted(model: OscillatorModel, n_vec, I):
    """Closed-orbit coefficients with the torus frequencies shifted by
    ``g_k = dG/dI_k`` evaluated at the constant action vector ``I``.

    Solves ``alpha_k + beta (omega_k + g_k) = n_k`` and
    ``beta (omega_s + g_s) = n_s``.
    """
    n_vec = _check_winding(n_vec, model.s)
    ns = n_vec[-1]
    g = model.g(I)
    shifted = [float(w) + float(gk) for w, gk in zip(model.omega, g)]
    if shifted[-1] == 0.0:
        raise DegenerateFrequencyError("omega_s + g_s vanishes on this torus")
    if ns == 0:
        raise DegenerateClassError(
            "n_s = 0 gives beta = 0: every transverse multiplier is one")
    if not np.any(g) and _exact(*model.omega):
        return solve_winding(model, n_vec)
    beta = ns / shifted[-1]
    alpha = tuple((n_vec[k] * shifted[-1] - ns * shifted[k]) / shifted[-1]
                  for k in range(model.s - 1))
    return alpha, beta


def winding_residual(model, n_vec, alpha, beta, I=None):
    """Left minus right side of the closed-orbit equations (zero for solutions)."""
    g = [0] * model.s if I is None else list(model.g(I))
    out = []
    for k in range(model.s - 1):
        out.append(alpha[k] + beta * (model.omega[k] + g[k]) - n_vec[k])
    out.append(beta * (model.omega[-1] + g[-1]) - n_vec[-1])
    return out


def coefficients_from_winding(alpha, beta) -> np.ndarray:
    """Unit-time coefficient vector for the integrals ``(I_1..I_{s-1}, H)``."""
    return 2 * np.pi * np.array([float(a) for a in alpha] + [float(beta)])


@dataclass(frozen=True)
class FloquetReport:
    rotation_numbers: tuple
    multipliers: tuple
    integer_distances: tuple
    verdict: bool
    form: str


def floquet_and_condition_n(model: OscillatorModel, beta, form: str = "unperturbed",
                            tol: float = INTEGER_TOL) -> FloquetReport:
    """Transverse rotation numbers ``rho_j = beta nu_j`` and the condition-N verdict.

    Multipliers are ``exp(2 pi i rho_j)``, so a multiplier equals one exactly
    when ``rho_j`` is an integer. ``form`` labels which frequency set produced
    ``beta`` (``"unperturbed"`` for the bare frequencies, ``"shifted"`` otherwise).
    """
    if form not in ("unperturbed", "shifted"):
        raise ValueError("form must be 'unperturbed' or 'shifted'")
    rho = []
    for v in model.nu:
        if _exact(beta, v):
            rho.append(Fraction(beta) * Fraction(v))
        else:
            rho.append(float(beta) * float(v))
    mult = tuple(cmath.exp(2j * math.pi * float(x)) for x in rho)
    dist = tuple(float(integer_distance(Fraction(x) if isinstance(x, Rational) else x))
                 for x in rho)
    verdict = all(not is_integer(x, tol) for x in rho)
    return FloquetReport(tuple(rho), mult, dist, verdict, form)


# ---------------------------------------------------------------------------
# phase-space realisation

def hamiltonian_polynomial(model: OscillatorModel) -> Polynomial:
    n = model.n
    dim = 2 * n
    H = Polynomial(dim)
    for k, w in enumerate(model.omega):
        H = H + float(w) * action(dim, k, n + k)
    for j, v in enumerate(model.nu):
        H = H + float(v) * action(dim, model.s + j, n + model.s + j)
    if model.G is not None and model.epsilon != 0:
        H = H + model.epsilon * model.G.to_phase(n)
    return H


def build_phase_model(model: OscillatorModel, actions=None, grid=32):
    """Hamiltonian system ``(I_1, .., I_{s-1}, H)`` and its torus ``{I = c, J = 0}``.

    Returns ``(system, torus)``. ``grid`` is points per angle (int) or a
    tuple of length s.
    """
    n = model.n
    dim = 2 * n
    c = np.array(actions if actions is not None else model.actions, dtype=float)
    if c.shape != (model.s,) or np.any(c <= 0):
        raise ValueError("need s positive torus actions")
    if model.G is not None and model.epsilon != 0:
        tg = model.epsilon * model.G.transverse_gradient(c)
        if np.max(np.abs(tg), initial=0.0) > 1e-14:
            raise ValueError("perturbation has a transverse gradient on the torus; "
                             "{J = 0} is not invariant at these actions")
    integrals = [action(dim, k, n + k) for k in range(model.s - 1)]
    integrals.append(hamiltonian_polynomial(model))
    system = HamiltonianSystem(n, integrals, name=model.name,
                               meta={"oscillator": model})

    shape = (grid,) * model.s if np.isscalar(grid) else tuple(grid)
    if len(shape) != model.s or min(shape) < 1:
        raise ValueError("grid shape must have s positive entries")
    axes = [2 * np.pi * np.arange(m) / m for m in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.zeros(shape + (dim,))
    for k in range(model.s):
        rad = math.sqrt(2 * c[k])
        points[..., k] = rad * np.sin(mesh[k])
        points[..., n + k] = rad * np.cos(mesh[k])
    beta0 = system.integral_values(points.reshape(-1, dim)[0])

    g = model.g(c)
    rates = np.zeros((model.s, model.s))
    for k in range(model.s - 1):
        rates[k, k] = 1.0
    rates[-1] = [float(w) + gk for w, gk in zip(model.omega, g)]
    return system, TorusGrid(points, beta0, rates)
