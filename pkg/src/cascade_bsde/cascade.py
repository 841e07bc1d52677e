"""Peel the jump filtration into Brownian levels, then glue back.

A backward equation driven by a Brownian motion plus n marked jumps is
solved as a ladder of purely Brownian problems. Level k carries the value
process between the k-th and (k+1)-th jump, parameterized by the realized
jump prefix (theta_(k), e_(k)); its driver reads the next level through the
jump-delta argument

    u(e') = Y^{k+1}(theta_(k), t, e_(k), e') - y,

evaluated at the current node t. Jump times live on the same grid as the
time discretization and all levels share one global lattice (or one path
batch), so that evaluation is an array read, never an interpolation.

Levels are solved from k = n (no further jumps, u = 0) down to k = 0.
Gluing stitches the level solutions along simulated jump scenarios with the
progressive convention for Y (the post-jump family takes over at the jump
node) and the predictable convention for Z and the jump deltas (the
pre-jump family still rules at the jump node). The glued triple satisfies
the discrete backward equation pathwise, which verify_bsde_residual checks.
"""

from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bsde import (AffineState, BrownianBsdeSpec, BsdeSolution,
                   lattice_states, solve_lsmc, solve_tree, truncate_quadratic)
from .grids import TimeGrid
from .jump_model import DensityModel, MarkedJumpSample, sample_jump_batch
from .scenario import BrownianBatch, simulate_brownian

# levels store one Brownian solve per ordered jump-prefix tuple; the count
# grows like (M |E|)^k, so the uncompressed ladder stays desk-scale only
# for a handful of jumps
N_MAX = 3


@dataclass(frozen=True)
class DecomposedTerminal:
    """Terminal data, one component per number of jumps already seen.

    maps[k](x, theta, marks) -> array, vectorized in the terminal state x;
    theta and marks are the realized prefix values (length-k arrays, empty
    at k = 0). cap bounds every |component|; a finite cap arms the
    per-solve a-priori assertions.
    """

    n: int
    maps: tuple
    cap: float = math.inf

    def __post_init__(self):
        if len(self.maps) != self.n + 1:
            raise ValueError(
                f"need {self.n + 1} terminal components, got {len(self.maps)}")


@dataclass(frozen=True)
class DecomposedDriver:
    """Driver data, one component per regime.

    maps[k](t, x, y, z, u, theta, marks) -> array; u has one column per
    mark-grid point and holds the jump deltas described in the module
    docstring (all zeros at k = n). A None entry means that regime has a
    zero driver.

    The declared constants are shared across regimes. lipschitz_u is the
    sensitivity to the u columns in the sup norm; it is folded into the
    effective y-constant of each level solve because the plugged-in u moves
    one-for-one with y. quadratic_z components are truncated per level with
    the declared quadratic_growth envelope and z_range clip radius.
    """

    n: int
    maps: tuple
    driver_class: str = "lipschitz"
    lipschitz_y: float = 0.0
    lipschitz_z: float = 0.0
    lipschitz_u: float = 0.0
    driver_bound0: float | None = None
    quadratic_growth: float | None = None
    z_range: float | None = None

    def __post_init__(self):
        if len(self.maps) != self.n + 1:
            raise ValueError(
                f"need {self.n + 1} driver components, got {len(self.maps)}")
        if self.driver_class == "quadratic_z" and (
                self.quadratic_growth is None or self.z_range is None):
            raise ValueError(
                "quadratic_z cascades must declare quadratic_growth and z_range")


def _prefix_values(grid: TimeGrid, mark_grid, theta_idx, mark_idx):
    theta = grid.nodes[np.asarray(theta_idx, dtype=int)]
    marks = mark_grid.points[np.asarray(mark_idx, dtype=int)]
    return theta, marks


def _level_keys(M: int, n_marks: int, k: int, compress: bool):
    """Ordered jump-prefix index tuples solved at level k."""
    if k == 0:
        yield ((), ())
        return
    if compress:
        for i in range(M + 1):
            for j in range(n_marks):
                yield ((i,), (j,))
        return
    for ti in itertools.combinations_with_replacement(range(M + 1), k):
        for mi in itertools.product(range(n_marks), repeat=k):
            yield (ti, mi)


@dataclass
class CascadeSolution:
    """All level solves, addressable by (level, jump-prefix indices).

    levels[k] maps a normalized prefix key to the BsdeSolution living on
    [theta_k, T]. With compress=True the key keeps only the last jump pair,
    which is sound exactly when every terminal and driver component reads
    only (theta_k, e_k); the component callables then receive length-1
    prefixes whatever the level.
    """

    model: DensityModel
    terminal: DecomposedTerminal
    driver: DecomposedDriver
    backend: str
    state: AffineState
    compress: bool
    levels: list
    batch: BrownianBatch | None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def grid(self) -> TimeGrid:
        return self.model.time_grid

    @property
    def n_marks(self) -> int:
        return len(self.model.mark_grid.points)

    @property
    def y0(self) -> float:
        return self.levels[0][((), ())].y0

    def _key(self, k: int, theta_idx, mark_idx):
        theta_idx = tuple(int(v) for v in theta_idx)
        mark_idx = tuple(int(v) for v in mark_idx)
        if len(theta_idx) != k or len(mark_idx) != k:
            raise ValueError(f"level {k} expects prefixes of length {k}")
        if k == 0:
            return ((), ())
        if self.compress:
            return ((theta_idx[-1],), (mark_idx[-1],))
        return (theta_idx, mark_idx)

    def solution(self, k: int, theta_idx=(), mark_idx=()) -> BsdeSolution:
        return self.levels[k][self._key(k, theta_idx, mark_idx)]

    def y_at(self, k: int, i: int, w, theta_idx=(), mark_idx=()) -> np.ndarray:
        return self.solution(k, theta_idx, mark_idx).y_at(i, w)

    def z_at(self, k: int, i: int, w, theta_idx=(), mark_idx=()) -> np.ndarray:
        return self.solution(k, theta_idx, mark_idx).z_at(i, w)

    def next_values(self, k: int, i: int, w, theta_idx=(), mark_idx=()) -> np.ndarray:
        """Level-(k+1) values at node i for a jump at t_i, one mark per column."""
        if k >= self.n:
            raise ValueError("no level above the last one")
        theta_idx = tuple(int(v) for v in theta_idx)
        mark_idx = tuple(int(v) for v in mark_idx)
        cols = [self.y_at(k + 1, i, w, theta_idx + (i,), mark_idx + (j,))
                for j in range(self.n_marks)]
        return np.stack(cols, axis=-1)

    def u_at(self, k: int, i: int, w, theta_idx=(), mark_idx=()) -> np.ndarray:
        """Jump deltas at node i: next-level values minus the level-k value."""
        w = np.asarray(w, dtype=float)
        if k == self.n:
            return np.zeros((w.size, self.n_marks))
        own = self.y_at(k, i, w, theta_idx, mark_idx)
        return self.next_values(k, i, w, theta_idx, mark_idx) - own[:, None]

    def y_sup(self, k: int | None = None) -> float:
        ks = range(self.n + 1) if k is None else (k,)
        return max(sol.diagnostics["y_sup"]
                   for kk in ks for sol in self.levels[kk].values())


def _diag_provider(level_above: dict, key, compress: bool, n_marks: int,
                   backend: str, batch: BrownianBatch | None) -> Callable:
    """Per-node reader of the next level's starting slice.

    Returns diag(i) -> (states_at_i, n_marks). Tree solutions expose the
    slice directly (shared lattice); lsmc ones are evaluated on the batch
    states. Only the most recent node is cached: the Picard loop hits one
    node many times, the backward sweep never returns to it.
    """
    theta_idx, mark_idx = key
    cache: dict[int, np.ndarray] = {}

    def diag(i: int) -> np.ndarray:
        hit = cache.get(i)
        if hit is not None:
            return hit
        cols = []
        for j in range(n_marks):
            if compress:
                up_key = ((i,), (j,))
            else:
                up_key = (theta_idx + (i,), mark_idx + (j,))
            sol = level_above[up_key]
            if backend == "tree":
                cols.append(sol.y_nodes[i])
            else:
                cols.append(sol.y_at(i, batch.levels[:, i]))
        cache.clear()
        cache[i] = np.stack(cols, axis=1)
        return cache[i]

    return diag


def _level_spec(terminal: DecomposedTerminal, driver: DecomposedDriver,
                model: DensityModel, k: int, key, state: AffineState,
                diag: Callable | None) -> BrownianBsdeSpec:
    grid = model.time_grid
    theta_idx, mark_idx = key
    theta, marks = _prefix_values(grid, model.mark_grid, theta_idx, mark_idx)
    start = theta_idx[-1] if theta_idx else 0
    n_marks = len(model.mark_grid.points)
    xi_map = terminal.maps[k]
    f_map = driver.maps[k]

    def xi(x):
        return xi_map(x, theta, marks)

    if f_map is None:
        f = None
    elif diag is None:
        def f(t, x, y, z):
            u = np.zeros((np.size(y), n_marks))
            return f_map(t, x, y, z, u, theta, marks)
    else:
        dt = grid.dt

        def f(t, x, y, z):
            i = int(round(t / dt))
            u = diag(i) - np.asarray(y, dtype=float)[:, None]
            return f_map(t, x, y, z, u, theta, marks)

    spec = BrownianBsdeSpec(
        grid=grid, terminal=xi, driver=f,
        driver_class="zero" if f is None else driver.driver_class,
        start_index=start, state=state, terminal_cap=terminal.cap,
        lipschitz_y=driver.lipschitz_y + driver.lipschitz_u,
        lipschitz_z=driver.lipschitz_z,
        driver_bound0=driver.driver_bound0,
        quadratic_growth=driver.quadratic_growth)
    if f is not None and driver.driver_class == "quadratic_z":
        spec = truncate_quadratic(spec, C=driver.quadratic_growth,
                                  z_range=driver.z_range)
    return spec


def solve_cascade(terminal: DecomposedTerminal, driver: DecomposedDriver,
                  model: DensityModel, backend: str = "tree", *,
                  state: AffineState | None = None,
                  batch: BrownianBatch | None = None, degree: int = 3,
                  compress: bool = False, threads: int = 1) -> CascadeSolution:
    """Solve every level of the jump ladder, top down.

    backend "tree" uses the shared recombining lattice, "lsmc" regresses on
    the supplied path batch (required, same grid). Within a level the
    prefix solves are independent; threads > 1 runs them on a thread pool
    with a deterministic reduction order. Levels are a hard barrier.

    Raises RuntimeError listing every prefix whose solution violated its
    declared a-priori bound; nothing downstream of a violated level runs.
    """
    if terminal.n != model.n or driver.n != model.n:
        raise ValueError("terminal, driver and model disagree on the jump count")
    if model.n > N_MAX:
        raise ValueError(f"cascade supports at most {N_MAX} jumps, got {model.n}")
    if backend not in ("tree", "lsmc"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "lsmc":
        if batch is None:
            raise ValueError("lsmc backend needs a path batch")
        if batch.grid != model.time_grid:
            raise ValueError("batch and model must share one time grid")
    if state is None:
        state = AffineState()

    grid = model.time_grid
    n_marks = len(model.mark_grid.points)
    levels: list[dict] = [dict() for _ in range(model.n + 1)]
    diagnostics: dict = {
        "solves": 0, "picard_max_iters": 0, "z_sup": 0.0,
        "y_sup_per_level": [0.0] * (model.n + 1),
    }
    started = time.perf_counter()

    for k in range(model.n, -1, -1):
        keys = list(_level_keys(grid.M, n_marks, k, compress))

        def solve_one(key, _k=k):
            diag = None
            if _k < model.n:
                diag = _diag_provider(levels[_k + 1], key, compress, n_marks,
                                      backend, batch)
            spec = _level_spec(terminal, driver, model, _k, key, state, diag)
            try:
                if backend == "tree":
                    return solve_tree(spec)
                return solve_lsmc(spec, batch, degree=degree)
            except RuntimeError as err:
                return err

        if threads > 1 and len(keys) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                sols = list(pool.map(solve_one, keys))
        else:
            sols = [solve_one(key) for key in keys]

        failures = []
        for key, sol in zip(keys, sols):
            if isinstance(sol, RuntimeError):
                failures.append((key, str(sol)))
                continue
            levels[k][key] = sol
            diagnostics["solves"] += 1
            diagnostics["picard_max_iters"] = max(
                diagnostics["picard_max_iters"],
                sol.diagnostics.get("picard_max_iters", 0))
            diagnostics["z_sup"] = max(diagnostics["z_sup"],
                                       sol.diagnostics.get("z_sup", 0.0))
            diagnostics["y_sup_per_level"][k] = max(
                diagnostics["y_sup_per_level"][k], sol.diagnostics["y_sup"])
        if failures:
            shown = "; ".join(f"prefix {key}: {msg}" for key, msg in failures[:5])
            raise RuntimeError(
                f"level {k}: {len(failures)} solve(s) broke the a-priori bound "
                f"or failed ({shown})")

    diagnostics["wall_seconds"] = time.perf_counter() - started
    return CascadeSolution(model=model, terminal=terminal, driver=driver,
                           backend=backend, state=state, compress=compress,
                           levels=levels, batch=batch, diagnostics=diagnostics)


@dataclass
class GluedPath:
    """Level solutions stitched along simulated jump scenarios.

    Y[p, i] follows the progressive convention (the post-jump family rules
    at the jump node); Z[p, i] is the gain coefficient on the cell
    (t_i, t_{i+1}], which makes the cell ending at a jump node pre-jump and
    the cell starting there post-jump, i.e. the predictable convention.
    U_jump[p, j] is the realized jump delta Y^{j+1} - Y^j read at the
    snapped jump node; u_nodes (optional) holds the full delta map per cell
    and is zero once all n jumps have happened.
    """

    grid: TimeGrid
    brownian: BrownianBatch
    jump_nodes: np.ndarray
    jump_marks: np.ndarray
    regime: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    U_jump: np.ndarray
    y0: float
    u_nodes: np.ndarray | None = None
    groups: list = field(default_factory=list, repr=False)

    @property
    def paths(self) -> int:
        return self.Y.shape[0]


def _snap_jumps(grid: TimeGrid, jumps: MarkedJumpSample):
    """Jump times onto their first grid node >= tau; M+1 marks a miss."""
    times = np.asarray(jumps.times, dtype=float)
    snap = np.full(times.shape, grid.M + 1, dtype=int)
    finite = np.isfinite(times)
    idx = np.ceil(times[finite] / grid.dt - 1e-9).astype(int)
    snap[finite] = np.clip(idx, 0, grid.M + 1)
    marks = np.where(snap <= grid.M, jumps.mark_idx, -1)
    return snap, marks


def glue(cascade: CascadeSolution, jumps: MarkedJumpSample,
         brownian: BrownianBatch, *, with_u: bool = False) -> GluedPath:
    """Assemble the jump-filtration solution along scenario paths.

    The tree backend requires lattice-valued paths (Rademacher mode); off
    lattice states raise. with_u materializes u_nodes, (paths, M+1, marks),
    which the residual check needs.
    """
    grid = cascade.grid
    M, n, n_marks = grid.M, cascade.n, cascade.n_marks
    W = brownian.levels
    paths = brownian.paths
    if jumps.times.shape[0] != paths:
        raise ValueError("jump sample and Brownian batch disagree on paths")

    snap, marks = _snap_jumps(grid, jumps)
    regime = (snap[:, :, None] <= np.arange(M + 1)[None, None, :]).sum(
        axis=1).astype(np.int8)

    Y = np.empty((paths, M + 1))
    Z = np.empty((paths, M))
    U_jump = np.zeros((paths, n))
    u_nodes = np.zeros((paths, M + 1, n_marks)) if with_u else None

    sig = np.column_stack([snap, marks])
    uniq, inverse = np.unique(sig, axis=0, return_inverse=True)
    groups = []
    for g in range(uniq.shape[0]):
        rows = np.where(inverse == g)[0]
        s_row, m_row = uniq[g, :n], uniq[g, n:]
        realized = int(np.sum(s_row <= M))
        groups.append((rows, tuple(int(v) for v in s_row[:realized]),
                       tuple(int(v) for v in m_row[:realized])))
        bounds = [0] + [int(v) for v in s_row[:realized]] + [M + 1]
        for k in range(realized + 1):
            lo, hi = bounds[k], bounds[k + 1]
            tpre, mpre = tuple(s_row[:k]), tuple(m_row[:k])
            if lo >= hi:
                continue
            sol = cascade.solution(k, tpre, mpre)
            for i in range(lo, hi):
                wv = W[rows, i]
                Y[rows, i] = sol.y_at(i, wv)
                if i < M:
                    Z[rows, i] = sol.z_at(i, wv)
                if with_u:
                    if k < n:
                        u_nodes[rows, i, :] = (
                            cascade.next_values(k, i, wv, tpre, mpre)
                            - Y[rows, i][:, None])
        for j in range(realized):
            sj = int(s_row[j])
            wv = W[rows, sj]
            post = cascade.y_at(j + 1, sj, wv, tuple(s_row[:j + 1]),
                                tuple(m_row[:j + 1]))
            pre = cascade.y_at(j, sj, wv, tuple(s_row[:j]), tuple(m_row[:j]))
            U_jump[rows, j] = post - pre

    return GluedPath(grid=grid, brownian=brownian, jump_nodes=snap,
                     jump_marks=marks, regime=regime, Y=Y, Z=Z,
                     U_jump=U_jump, y0=cascade.y0, u_nodes=u_nodes,
                     groups=groups)


@dataclass(frozen=True)
class ResidualStats:
    """Pathwise defect of the glued triple in the discrete backward equation."""

    paths: int
    max_abs: float
    mean_abs: float
    mean: float
    stderr: float

    def within(self, tol: float) -> bool:
        return self.mean_abs <= tol


def verify_bsde_residual(cascade: CascadeSolution, glued: GluedPath,
                         xi: np.ndarray | None = None) -> ResidualStats:
    """Check R = xi + sum f dt - sum Z dW - sum U_jump - Y_0 per scenario.

    The driver is evaluated with the same snapped prefixes and jump deltas
    the glue used, so on the tree backend with Rademacher paths the
    residual collapses to accumulated Picard tolerance. xi defaults to the
    terminal decomposition applied at the snapped prefixes; pass it
    explicitly to measure the defect against some other payoff.
    """
    if glued.u_nodes is None:
        raise ValueError("glue(..., with_u=True) is required for the residual")
    grid, n = glued.grid, cascade.n
    dt, M = grid.dt, grid.M
    W = glued.brownian.levels
    state = cascade.state
    F = np.zeros(glued.paths)
    xi_vec = np.empty(glued.paths) if xi is None else np.asarray(xi, float)

    for rows, tpre_all, mpre_all in glued.groups:
        realized = len(tpre_all)
        bounds = [0] + list(tpre_all) + [M + 1]
        for k in range(realized + 1):
            lo, hi = bounds[k], min(bounds[k + 1], M)
            f_map = cascade.driver.maps[k]
            if f_map is None or lo >= hi:
                continue
            theta, marks = _prefix_values(grid, cascade.model.mark_grid,
                                          tpre_all[:k], mpre_all[:k])
            for i in range(lo, hi):
                x = state.value(grid.nodes[i], W[rows, i])
                F[rows] += f_map(grid.nodes[i], x, glued.Y[rows, i],
                                 glued.Z[rows, i], glued.u_nodes[rows, i],
                                 theta, marks)
        if xi is None:
            theta, marks = _prefix_values(grid, cascade.model.mark_grid,
                                          tpre_all, mpre_all)
            x_T = state.value(grid.T, W[rows, M])
            xi_vec[rows] = cascade.terminal.maps[realized](x_T, theta, marks)

    gains = np.sum(glued.Z * glued.brownian.increments, axis=1)
    # a jump snapped to node 0 has no pre-jump cell; Y_0 is already post-jump
    jump_sum = np.sum(np.where(glued.jump_nodes[:, :n] >= 1,
                               np.where(glued.jump_nodes[:, :n] <= M,
                                        glued.U_jump, 0.0), 0.0), axis=1)
    R = xi_vec + dt * F - gains - jump_sum - glued.Y[:, 0]
    stderr = float(np.std(R) / math.sqrt(glued.paths)) if glued.paths > 1 else 0.0
    return ResidualStats(paths=glued.paths, max_abs=float(np.max(np.abs(R))),
                         mean_abs=float(np.mean(np.abs(R))),
                         mean=float(np.mean(R)), stderr=stderr)


@dataclass(frozen=True)
class ComparisonReport:
    """Outcome of an ordering check between two cascades.

    hypothesis_ok says the sampled data were actually ordered (terminal and
    plugged drivers, each within hyp_tol); ordered says the glued value
    processes came out ordered within order_tol. max_violation is the worst
    (low - high) excess over the tolerance, violation_at its (path, node).
    """

    hypothesis_ok: bool
    terminal_gap_min: float
    driver_gap_min: float
    ordered: bool
    max_violation: float
    violation_at: tuple | None
    y0_low: float
    y0_high: float

    @property
    def passed(self) -> bool:
        return self.hypothesis_ok and self.ordered


def comparison_harness(data_low, data_high, model: DensityModel, *,
                       backend: str = "tree", state: AffineState | None = None,
                       batch: BrownianBatch | None = None, degree: int = 3,
                       compress: bool = False, threads: int = 1,
                       scenario_paths: int = 512, seed: int = 421,
                       node_stride: int | None = None, hyp_tol: float = 1e-9,
                       order_tol: float | None = None) -> ComparisonReport:
    """Solve two cascades and assert the smaller data yield the smaller Y.

    data_low / data_high are (DecomposedTerminal, DecomposedDriver) pairs.
    The ordering hypothesis is sampled numerically along the solved low
    cascade (the plugged drivers embed each cascade's own next level, so a
    symbolic check is not available); the verdict compares the glued values
    on a common batch of scenarios. Tree backends compare exactly (default
    order_tol 1e-6 covers Picard slack), lsmc within Monte Carlo noise
    (default 1e-2).
    """
    term_lo, drv_lo = data_low
    term_hi, drv_hi = data_high
    low = solve_cascade(term_lo, drv_lo, model, backend, state=state,
                        batch=batch, degree=degree, compress=compress,
                        threads=threads)
    high = solve_cascade(term_hi, drv_hi, model, backend, state=state,
                         batch=batch, degree=degree, compress=compress,
                         threads=threads)
    grid, M = model.time_grid, model.time_grid.M

    term_gap = math.inf
    drv_gap = math.inf
    for k in range(model.n + 1):
        for key in low.levels[k]:
            theta_idx, mark_idx = key
            theta, marks = _prefix_values(grid, model.mark_grid,
                                          theta_idx, mark_idx)
            start = theta_idx[-1] if theta_idx else 0
            stride = node_stride or max(1, (M - start) // 16 or 1)
            for i in list(range(start, M, stride)) + [M]:
                if backend == "tree":
                    w = lattice_states(grid, i)
                else:
                    w = batch.levels[:min(128, batch.paths), i]
                x = low.state.value(grid.nodes[i], w)
                if i == M:
                    gap = np.min(term_hi.maps[k](x, theta, marks)
                                 - term_lo.maps[k](x, theta, marks))
                    term_gap = min(term_gap, float(gap))
                    continue
                y = low.y_at(k, i, w, theta_idx, mark_idx)
                z = low.z_at(k, i, w, theta_idx, mark_idx)
                u_lo = low.u_at(k, i, w, theta_idx, mark_idx)
                if k == model.n:
                    u_hi = u_lo
                else:
                    u_hi = high.next_values(k, i, w, theta_idx, mark_idx) \
                        - y[:, None]
                f_lo = 0.0 if drv_lo.maps[k] is None else \
                    drv_lo.maps[k](grid.nodes[i], x, y, z, u_lo, theta, marks)
                f_hi = 0.0 if drv_hi.maps[k] is None else \
                    drv_hi.maps[k](grid.nodes[i], x, y, z, u_hi, theta, marks)
                drv_gap = min(drv_gap, float(np.min(f_hi - f_lo)))
    hypothesis_ok = term_gap >= -hyp_tol and drv_gap >= -hyp_tol

    jumps = sample_jump_batch(model, scenario_paths, seed)
    mode = "rademacher" if backend == "tree" else "gaussian"
    brownian = simulate_brownian(grid, scenario_paths, seed + 1, mode=mode)
    glued_lo = glue(low, jumps, brownian)
    glued_hi = glue(high, jumps, brownian)
    if order_tol is None:
        order_tol = 1e-6 if backend == "tree" else 1e-2
    diff = glued_hi.Y - glued_lo.Y
    worst = float(np.min(diff))
    ordered = worst >= -order_tol
    violation_at = None
    if not ordered:
        p, i = np.unravel_index(int(np.argmin(diff)), diff.shape)
        violation_at = (int(p), int(i))
    return ComparisonReport(hypothesis_ok=hypothesis_ok,
                            terminal_gap_min=term_gap, driver_gap_min=drv_gap,
                            ordered=ordered,
                            max_violation=max(0.0, -worst - order_tol),
                            violation_at=violation_at,
                            y0_low=low.y0, y0_high=high.y0)


def write_cascade_csv(cascade: CascadeSolution, path: str,
                      max_rows: int = 2_000_000) -> int:
    """Dump every level solve on the canonical lattice states.

    Schema: k,theta_indices,mark_indices,time_index,state_index,Y,Z with
    '|'-joined prefix indices and an empty Z at the terminal node. lsmc
    solutions are evaluated on the lattice states, which keeps golden files
    backend-comparable. Returns the number of data rows written.
    """
    grid = cascade.grid
    total = 0
    for k in range(cascade.n + 1):
        for (theta_idx, _m), sol in cascade.levels[k].items():
            start = theta_idx[-1] if theta_idx else 0
            total += sum(i + 1 for i in range(start, grid.M + 1))
    if total > max_rows:
        raise ValueError(f"{total} rows exceed max_rows={max_rows}; "
                         f"shrink the grid or raise the cap")
    rows = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("k,theta_indices,mark_indices,time_index,state_index,Y,Z\n")
        for k in range(cascade.n + 1):
            for key in sorted(cascade.levels[k]):
                theta_idx, mark_idx = key
                sol = cascade.levels[k][key]
                tlab = "|".join(str(v) for v in theta_idx)
                mlab = "|".join(str(v) for v in mark_idx)
                for i in range(sol.start_index, grid.M + 1):
                    w = lattice_states(grid, i)
                    yv = sol.y_at(i, w)
                    zv = sol.z_at(i, w) if i < grid.M else None
                    for j in range(i + 1):
                        z_s = "" if zv is None else f"{zv[j]:.17g}"
                        fh.write(f"{k},{tlab},{mlab},{i},{j},"
                                 f"{yv[j]:.17g},{z_s}\n")
                        rows += 1
    return rows
