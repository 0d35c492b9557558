"""Reference computations that share no code with the package.

Flows use scipy's solve_ivp; linear flows use matrix exponentials; exact
algebra uses sympy; closed forms are written out by hand.
"""

import math

import numpy as np
import sympy as sp
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import fsolve

# frozen values derived by hand
T1_ANGLE = (2 * math.pi * math.sqrt(2)) % (2 * math.pi)          # transverse rotation of T1
T2_ANGLE = (2 * math.pi * math.sqrt(3) / 2) % (2 * math.pi)      # class (1,1): beta = 1/2
LIMIT_CYCLE_MULTIPLIER = math.exp(-0.4 * math.pi)               # exp(-2 mu 2 pi), mu = 0.1
CLASS_SWITCH_ALPHA = 0.155                                       # I_2 0.5 -> 0.6 along H


def wrap(angle):
    """Angle in (-pi, pi]."""
    a = (angle + math.pi) % (2 * math.pi) - math.pi
    return math.pi if a == -math.pi else a


def symplectic(n):
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


def quadratic_flow_matrix(hessian, t):
    """Exact flow matrix of ``x' = J H x`` for a quadratic Hamiltonian."""
    n = hessian.shape[0] // 2
    return expm(symplectic(n) @ hessian * t)


def oscillator_hessian(freqs):
    """Hessian of ``sum_j w_j (q_j^2 + p_j^2)/2``."""
    w = np.asarray(freqs, dtype=float)
    return np.diag(np.concatenate([w, w]))


def scipy_flow(rhs, x0, t, rtol=1e-12, atol=1e-13):
    sol = solve_ivp(lambda _t, y: rhs(y), (0.0, t), np.asarray(x0, dtype=float),
                    method="DOP853", rtol=rtol, atol=atol)
    return sol.y[:, -1]


def limit_cycle_rhs(mu):
    def rhs(y):
        x, v = y
        g = 1.0 - x * x - v * v
        return np.array([-v + mu * x * g, x + mu * v * g])
    return rhs


def limit_cycle_return_derivative(mu=0.1, h=1e-5):
    """Poincare map on the positive x-axis via event detection, differentiated
    by central differences."""
    rhs = limit_cycle_rhs(mu)

    def event(t, y):
        return y[1]
    event.direction = 1.0
    event.terminal = True

    def P(r):
        # start just past the section so the first crossing is the return
        y0 = scipy_flow(rhs, [r, 0.0], 0.5)
        sol = solve_ivp(lambda _t, y: rhs(y), (0.0, 20.0), y0, method="DOP853",
                        rtol=1e-13, atol=1e-14, events=event)
        return sol.y_events[0][0][0]

    return (P(1.0 + h) - P(1.0 - h)) / (2 * h)


def perturbed_t2_torus_point(phi, level, nu=math.sqrt(3), eps=1e-3, a1=0.5, omega=(1.0, 2.0)):
    """Point of the invariant torus of the perturbed T2 model at angles ``phi``.

    Unknowns: action I_2 and transverse equilibrium q_3 (p_3 = 0), from
    ``H = level[1]`` and ``dH/dq_3 = 0`` with ``I_1 = level[0]``.
    """
    I1 = level[0]

    def H(I2, q):
        J = q * q / 2
        return (omega[0] * I1 + omega[1] * I2 + nu * J
                + eps * ((I1 - a1) * q + I2 * J + J * J))

    def eqs(z):
        I2, q = z
        dq = nu * q + eps * ((I1 - a1) + I2 * q + q ** 3 / 2)
        return [H(I2, q) - level[1], dq]

    guess = [(level[1] - omega[0] * I1) / omega[1], 0.0]
    I2, q = fsolve(eqs, guess, xtol=1e-13)
    x = np.zeros(6)
    r1, r2 = math.sqrt(2 * I1), math.sqrt(2 * I2)
    x[0], x[3] = r1 * math.sin(phi[0]), r1 * math.cos(phi[0])
    x[1], x[4] = r2 * math.sin(phi[1]), r2 * math.cos(phi[1])
    x[2] = q
    return x


def integrable_torus_point(phi, actions):
    """Point with ``I_k = actions[k]`` at angles ``phi``, transverse plane at rest."""
    n = len(actions) + 1
    x = np.zeros(2 * n)
    for k, (a, f) in enumerate(zip(actions, phi)):
        r = math.sqrt(2 * a)
        x[k], x[n + k] = r * math.sin(f), r * math.cos(f)
    return x


def integrable_t2_level_actions(level, omega=(1.0, 2.0)):
    """Actions (I_1, I_2) of the integrable T2 torus at level ``(I_1, H)``."""
    I1 = level[0]
    return I1, (level[1] - omega[0] * I1) / omega[1]


def sympy_q(lam_rows, n_vec, s):
    """``Q = B^T (A^T)^-1 n`` exactly with sympy."""
    L = sp.Matrix(lam_rows)
    A = L[:, :s]
    B = L[:, s:]
    return list(B.T * A.T.inv() * sp.Matrix(n_vec))


def sympy_poisson(F, G, q, p):
    return sp.simplify(sum(sp.diff(F, qi) * sp.diff(G, pi) - sp.diff(F, pi) * sp.diff(G, qi)
                           for qi, pi in zip(q, p)))
