"""Path generation: Brownian batches, the two-asset market around a single
shock, and wealth accumulation for a traded strategy.

All randomness flows through counter-based per-path streams, so a batch is a
pure function of (seed, shape) and identical across thread counts and chunk
sizes. The market follows a log-Euler scheme: positivity is structural and
constant-coefficient segments have exact lognormal marginals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grids import TimeGrid
from .rng import normal_increments, rademacher_increments


@dataclass(frozen=True)
class BrownianBatch:
    """Increments dW[p, i] over [t_i, t_{i+1}] plus their running sum.

    mode "gaussian" draws N(0, dt); "rademacher" draws +-sqrt(dt) coin flips
    whose paths live exactly on the recombining-tree state space.
    """

    grid: TimeGrid
    increments: np.ndarray
    levels: np.ndarray  # (paths, M+1), levels[:, 0] = 0
    seed: int
    mode: str

    @property
    def paths(self) -> int:
        return self.increments.shape[0]


def simulate_brownian(grid: TimeGrid, paths: int, seed: int,
                      mode: str = "gaussian") -> BrownianBatch:
    if paths < 1:
        raise ValueError(f"paths must be >= 1, got {paths}")
    if mode == "gaussian":
        dw = normal_increments(seed, paths, grid.M, grid.dt)
    elif mode == "rademacher":
        dw = rademacher_increments(seed, paths, grid.M, grid.dt)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    levels = np.zeros((paths, grid.M + 1))
    np.cumsum(dw, axis=1, out=levels[:, 1:])
    return BrownianBatch(grid=grid, increments=dw, levels=levels,
                         seed=seed, mode=mode)


def dump_increments_csv(batch: BrownianBatch, path: str) -> None:
    """Debug dump with header path,step,dW."""
    paths, M = batch.increments.shape
    rows = np.column_stack([
        np.repeat(np.arange(paths), M),
        np.tile(np.arange(M), paths),
        batch.increments.ravel(),
    ])
    np.savetxt(path, rows, delimiter=",", header="path,step,dW",
               comments="", fmt=("%d", "%d", "%.17g"))


def _as_coeff(c) -> Callable[[np.ndarray], np.ndarray]:
    if callable(c):
        return c
    return lambda theta, _c=float(c): np.full_like(np.asarray(theta, float), _c)


@dataclass(frozen=True)
class SingleJumpMarket:
    """Coefficients of the two-asset market around one shock.

    Before the shock the coefficients are the plain floats; from the shock
    time on they are functions of the shock time theta (floats accepted and
    treated as constants). beta is the relative jump of S1, required > -1 so
    prices stay positive.
    """

    r0: float
    b0: float
    bbar0: float
    sigma0: float
    sigmabar0: float
    r1: Callable | float
    b1: Callable | float
    bbar1: Callable | float
    sigma1: Callable | float
    sigmabar1: Callable | float
    beta: float
    s1_0: float = 1.0
    s2_0: float = 1.0

    def __post_init__(self):
        if self.beta <= -1.0:
            raise ValueError(f"beta must exceed -1, got {self.beta}")
        if self.sigma0 <= 0.0 or self.sigmabar0 <= 0.0:
            raise ValueError("volatilities must be positive")
        if self.s1_0 <= 0.0 or self.s2_0 <= 0.0:
            raise ValueError("initial prices must be positive")

    def post(self, name: str, theta) -> np.ndarray:
        fn = _as_coeff(getattr(self, name))
        return np.asarray(fn(np.asarray(theta, dtype=float)), dtype=float)


@dataclass(frozen=True)
class MarketPath:
    """Simulated asset paths and the regime index (0 before the shock,
    1 from the first node at or after it)."""

    grid: TimeGrid
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    regime: np.ndarray
    jump_times: np.ndarray
    jump_node: np.ndarray  # first node index >= tau; M+1 when tau > T

    @property
    def paths(self) -> int:
        return self.s1.shape[0]


def simulate_market_single_jump(market: SingleJumpMarket, jump_times,
                                brownian: BrownianBatch) -> MarketPath:
    """Log-Euler paths of (S0, S1, S2) with the regime switch and the
    (1 + beta) factor applied to S1 at the first node at or after the shock.

    jump_times: one shock time per path (+inf for no shock); must broadcast
    against the Brownian batch.
    """
    grid = brownian.grid
    paths, M = brownian.increments.shape
    tau = np.broadcast_to(np.asarray(jump_times, dtype=float), (paths,)).copy()
    if np.any(tau < 0.0):
        raise ValueError("jump times must be nonnegative")
    dt = grid.dt
    dw = brownian.increments

    # first node index at or after tau, M+1 when the shock misses [0, T]
    tau_safe = np.where(np.isfinite(tau), np.clip(tau, 0.0, grid.T), 0.0)
    jump_node = np.where(
        np.isfinite(tau) & (tau <= grid.T + 1e-12),
        np.ceil(tau_safe / dt - 1e-9).astype(int), M + 1)
    regime = (np.arange(M + 1)[None, :] >= jump_node[:, None]).astype(np.int8)

    theta = np.where(np.isfinite(tau), tau, 0.0)
    post = {name: market.post(name, theta)
            for name in ("r1", "b1", "bbar1", "sigma1", "sigmabar1")}

    # per-cell coefficients from the left node's regime
    def cell(pre: float, post_vals: np.ndarray) -> np.ndarray:
        return np.where(regime[:, :-1] == 1, post_vals[:, None], pre)

    r = cell(market.r0, post["r1"])
    b = cell(market.b0, post["b1"])
    bbar = cell(market.bbar0, post["bbar1"])
    sig = cell(market.sigma0, post["sigma1"])
    sigbar = cell(market.sigmabar0, post["sigmabar1"])
    if np.any(sig <= 0.0) or np.any(sigbar <= 0.0):
        raise ValueError("post-shock volatilities must stay positive")

    s0 = np.empty((paths, M + 1))
    s0[:, 0] = 1.0
    np.cumsum(r * dt, axis=1, out=s0[:, 1:])
    s0[:, 1:] = np.exp(s0[:, 1:])

    log_s1 = np.empty((paths, M + 1))
    log_s1[:, 0] = np.log(market.s1_0)
    np.cumsum((b - 0.5 * sig ** 2) * dt + sig * dw, axis=1, out=log_s1[:, 1:])
    log_s1[:, 1:] += log_s1[:, 0:1]
    s1 = np.exp(log_s1)
    hit = jump_node <= M
    s1[hit, :] *= np.where(np.arange(M + 1)[None, :] >= jump_node[hit, None],
                           1.0 + market.beta, 1.0)

    log_s2 = np.empty((paths, M + 1))
    log_s2[:, 0] = np.log(market.s2_0)
    np.cumsum((bbar - 0.5 * sigbar ** 2) * dt + sigbar * dw, axis=1,
              out=log_s2[:, 1:])
    log_s2[:, 1:] += log_s2[:, 0:1]
    s2 = np.exp(log_s2)

    return MarketPath(grid=grid, s0=s0, s1=s1, s2=s2, regime=regime,
                      jump_times=tau, jump_node=jump_node)


def simulate_wealth(pi: np.ndarray, drift, vol, brownian: BrownianBatch,
                    jump_times=None, jump_marks=None,
                    beta: Callable | None = None, x: float = 0.0) -> np.ndarray:
    """Wealth of a strategy holding the amount pi[p, i] of the risky asset
    over [t_i, t_{i+1}).

    X gains pi * (drift dt + vol dW) per cell plus pi_tau * beta(mark) at the
    first node at or after each jump (pi_tau is the cell value, the strategy
    being predictable). drift and vol broadcast to (paths, M). Returns the
    (paths, M+1) wealth array.
    """
    grid = brownian.grid
    paths, M = brownian.increments.shape
    pi = np.broadcast_to(np.asarray(pi, dtype=float), (paths, M))
    drift = np.broadcast_to(np.asarray(drift, dtype=float), (paths, M))
    vol = np.broadcast_to(np.asarray(vol, dtype=float), (paths, M))
    gains = pi * (drift * grid.dt + vol * brownian.increments)

    X = np.empty((paths, M + 1))
    X[:, 0] = x
    np.cumsum(gains, axis=1, out=X[:, 1:])
    X[:, 1:] += x

    if jump_times is not None:
        tau = np.asarray(jump_times, dtype=float).reshape(paths, -1)
        zeta = np.zeros_like(tau) if jump_marks is None else \
            np.asarray(jump_marks, dtype=float).reshape(paths, -1)
        if beta is None:
            raise ValueError("jump times given without a beta map")
        for j in range(tau.shape[1]):
            t_j = tau[:, j]
            hit = np.isfinite(t_j) & (t_j <= grid.T + 1e-12)
            if not np.any(hit):
                continue
            node = np.ceil(np.clip(t_j[hit], 0.0, None) / grid.dt - 1e-9).astype(int)
            node = np.maximum(node, 1)
            kick = pi[hit, node - 1] * beta(zeta[hit, j])
            delta = np.zeros((paths, M + 1))
            np.add.at(delta, (np.flatnonzero(hit), node), kick)
            X += np.cumsum(delta, axis=1)
    return X
