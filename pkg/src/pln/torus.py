"""Discrete k-tori: angle-indexed phase points on a common integral level."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class TorusGrid:
    """Sample points ``m(phi)`` of an invariant k-torus.

    ``points`` has shape ``grid_shape + (dim,)``; index ``i`` along axis ``a``
    corresponds to the angle ``2 pi i / grid_shape[a]``. ``frequencies`` is an
    optional k x k matrix whose row i holds the angular rates of field X_i on
    the k torus angles; it is what turns a winding vector into coefficients.
    ``beta0`` is the common integral level (absent for non-Hamiltonian fields).
    """

    points: np.ndarray
    beta0: np.ndarray | None = None
    frequencies: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.beta0 is not None:
            b = np.array(self.beta0, dtype=float).reshape(-1)
            if b.shape != (self.k,):
                raise ValueError("beta0 must have one entry per torus angle")
            b.setflags(write=False)
            object.__setattr__(self, "beta0", b)
        if self.frequencies is not None:
            fr = np.array(self.frequencies, dtype=float)
            if fr.shape != (self.k, self.k):
                raise ValueError(f"frequencies must be {self.k}x{self.k}, got {fr.shape}")
            fr.setflags(write=False)
            object.__setattr__(self, "frequencies", fr)

    @property
    def k(self) -> int:
        return self.points.ndim - 1

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return tuple(self.points.shape[:-1])

    @property
    def dim(self) -> int:
        return self.points.shape[-1]

    @property
    def size(self) -> int:
        return int(np.prod(self.grid_shape))

    def flat_points(self) -> np.ndarray:
        return self.points.reshape(-1, self.dim)

    def indices(self):
        return list(itertools.product(*(range(n) for n in self.grid_shape)))

    def point(self, index) -> np.ndarray:
        if isinstance(index, (int, np.integer)):
            index = np.unravel_index(int(index), self.grid_shape)
        return np.array(self.points[tuple(index)])

    def angles(self, index) -> np.ndarray:
        return np.array([2 * np.pi * i / n for i, n in zip(index, self.grid_shape)])

    def sample(self, count: int) -> list[tuple[int, ...]]:
        """``count`` grid indices spread evenly through the flattened grid."""
        count = max(1, min(count, self.size))
        flat = np.linspace(0, self.size, count, endpoint=False).astype(int)
        return [tuple(int(v) for v in np.unravel_index(i, self.grid_shape)) for i in flat]

    # -- interpolation ------------------------------------------------------
    def interpolate(self, u) -> np.ndarray:
        """Periodic piecewise multilinear interpolant at grid coordinates ``u``."""
        value, _ = self._interp_with_jac(np.asarray(u, dtype=float))
        return value

    def _interp_with_jac(self, u):
        shape = self.grid_shape
        k = len(shape)
        base = np.floor(u).astype(int)
        frac = u - base
        value = np.zeros(self.dim)
        jac = np.zeros((self.dim, k))
        for corner in itertools.product((0, 1), repeat=k):
            idx = tuple((base[a] + corner[a]) % shape[a] for a in range(k))
            w = np.where(corner, frac, 1.0 - frac)
            pt = self.points[idx]
            value += np.prod(w) * pt
            for a in range(k):
                dw = 1.0 if corner[a] else -1.0
                jac[:, a] += dw * np.prod(np.delete(w, a)) * pt
        return value, jac

    def distance_to_surface(self, y, u0, iterations: int = 12) -> float:
        """Distance from ``y`` to the interpolated surface, searched from ``u0``.

        Gauss-Newton on the multilinear patch; the best distance seen is kept
        because the interpolant is only piecewise smooth.
        """
        u = np.array(u0, dtype=float)
        best = np.inf
        for _ in range(iterations):
            value, jac = self._interp_with_jac(u)
            r = value - y
            best = min(best, float(np.linalg.norm(r)))
            step, *_ = np.linalg.lstsq(jac, r, rcond=None)
            if not np.all(np.isfinite(step)):
                break
            u = u - np.clip(step, -0.5, 0.5)
            if np.linalg.norm(step) < 1e-14:
                break
        value, _ = self._interp_with_jac(u)
        return min(best, float(np.linalg.norm(value - y)))

    def interpolation_error_bound(self) -> float:
        """``sum_a max_i |second difference along a| / 8`` in grid units.

        This is the standard bound for multilinear interpolation with the
        second derivative replaced by its grid estimate.
        """
        bound = 0.0
        for a in range(self.k):
            d2 = (np.roll(self.points, -1, axis=a) - 2 * self.points
                  + np.roll(self.points, 1, axis=a))
            bound += float(np.max(np.linalg.norm(d2, axis=-1))) / 8.0
        return bound

    def tangents(self) -> np.ndarray:
        """Centred-difference tangents ``dm/dphi_a``, shape ``grid + (k, dim)``."""
        out = np.empty(self.grid_shape + (self.k, self.dim))
        for a, n in enumerate(self.grid_shape):
            dphi = 2 * np.pi / n
            out[..., a, :] = (np.roll(self.points, -1, axis=a)
                              - np.roll(self.points, 1, axis=a)) / (2 * dphi)
        return out
