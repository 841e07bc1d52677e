"""Shared discretization grids: a uniform time grid and a weighted mark grid.

The time grid doubles as the quadrature grid for jump-time integrals, so a
value that lands on a node at one level of the recursion is read off exactly,
without interpolation, at the next level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i*T/M on [0, T]."""

    T: float
    M: int

    def __post_init__(self):
        if self.T <= 0.0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if self.M < 1:
            raise ValueError(f"step count M must be >= 1, got {self.M}")

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.M + 1)

    def index_at_or_after(self, t: float) -> int:
        """Index of the first node >= t (jump times snap forward).

        Times beyond T (including +inf) return M + 1, i.e. "after the grid".
        """
        if t <= 0.0:
            return 0
        if t > self.T:
            return self.M + 1
        # guard against 0.30000000000000004-style round-off pushing t past
        # the node it conceptually sits on
        i = int(np.ceil(t / self.dt - 1e-9))
        return min(i, self.M)


@dataclass(frozen=True)
class MarkGrid:
    """Quadrature rule for the mark space E: points e_j with weights w_j.

    The weights carry the Lebesgue measure of E, so that
    sum_j w_j * g(e_j) approximates the integral of g over E. A purely
    discrete mark space is represented by unit weights (counting measure).
    """

    points: np.ndarray
    weights: np.ndarray

    def __init__(self, points, weights=None):
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        if weights is None:
            w = np.ones_like(pts)
        else:
            w = np.atleast_1d(np.asarray(weights, dtype=float))
        if pts.ndim != 1 or w.shape != pts.shape:
            raise ValueError("points and weights must be 1-d and congruent")
        if len(np.unique(pts)) != len(pts):
            raise ValueError("mark points must be distinct")
        if np.any(w <= 0.0):
            raise ValueError("mark weights must be strictly positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return len(self.points)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Weighted sum over the mark axis (the last axis of `values`)."""
        values = np.asarray(values)
        return values @ self.weights

    def index_of(self, e: float) -> int:
        """Index of the closest grid point (marks snap to the grid)."""
        return int(np.argmin(np.abs(self.points - e)))


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    """Trapezoidal quadrature weights for an increasing 1-d node array."""
    nodes = np.asarray(nodes, dtype=float)
    if nodes.size == 1:
        return np.zeros(1)
    w = np.empty_like(nodes)
    w[0] = 0.5 * (nodes[1] - nodes[0])
    w[-1] = 0.5 * (nodes[-1] - nodes[-2])
    w[1:-1] = 0.5 * (nodes[2:] - nodes[:-2])
    return w
