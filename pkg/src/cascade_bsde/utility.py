"""Exponential-utility portfolio choice with regime-switching jumps.

One risky asset whose drift, volatility and relative jump sizes switch with
the number of past jumps; the investor holds amounts confined to a compact
interval containing zero and owes a bounded claim at the horizon. The
certainty equivalent solves a z-quadratic backward equation per regime
whose driver is a pointwise Hamiltonian minimum over the constraint set,
and the minimizer is the optimal strategy. An exponential change of
variable turns the same problem into a plain Lipschitz ladder, solved as an
independent second route; a scenario simulation of the wealth checks the
martingale characterization of optimality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cascade import (CascadeSolution, DecomposedDriver, DecomposedTerminal,
                      GluedPath, glue, solve_cascade)
from .grids import MarkGrid, TimeGrid
from .jump_model import DensityModel, IntensityTable, sample_jump_batch
from .rng import TAG_PERTURB, uniform_matrix
from .scenario import BrownianBatch, simulate_brownian

# golden-section tolerance on the strategy; ~40 shrink steps per unit
# bracket, no derivatives involved
PI_TOL = 1e-8

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0

# exponents inside the jump penalty are capped here before exp; with sane
# problem data the cap is never reached (|alpha (u - pi beta)| stays small)
_EXP_CAP = 60.0


@dataclass(frozen=True)
class UtilityProblem:
    """Entropic hedging problem on a jump ladder.

    claim maps follow the terminal-decomposition convention: claim[k] takes
    (x, theta, marks) with the realized k-prefix and returns the owed amount
    when exactly k jumps happened. drift/vol are per-regime scalars, beta
    holds the relative wealth kick of the (k+1)-th jump per mark point.
    quad_growth and z_clip override the declared truncation envelope of the
    quadratic solve; the defaults are derived from the problem bounds.
    """

    model: DensityModel
    alpha: float
    c_lo: float
    c_hi: float
    drift: np.ndarray
    vol: np.ndarray
    beta: np.ndarray
    claim: tuple
    claim_cap: float
    quad_growth: float | None = None
    z_clip: float | None = None

    def __post_init__(self):
        n, n_marks = self.model.n, self.model.mark_grid.size
        object.__setattr__(self, "drift", np.asarray(self.drift, float))
        object.__setattr__(self, "vol", np.asarray(self.vol, float))
        object.__setattr__(self, "beta",
                           np.asarray(self.beta, float).reshape(n, n_marks))
        if self.alpha <= 0.0:
            raise ValueError(f"risk aversion must be positive, got {self.alpha}")
        if not (self.c_lo <= 0.0 <= self.c_hi):
            raise ValueError(
                f"the constraint interval [{self.c_lo}, {self.c_hi}] must contain 0")
        if self.drift.shape != (n + 1,) or self.vol.shape != (n + 1,):
            raise ValueError(f"drift and vol need one entry per regime, 0..{n}")
        if np.any(self.vol <= 0.0):
            raise ValueError("volatilities must be strictly positive")
        if np.any(self.beta <= -1.0):
            raise ValueError("relative jump sizes must stay above -1")
        if len(self.claim) != n + 1:
            raise ValueError(f"need {n + 1} claim components, got {len(self.claim)}")
        if not math.isfinite(self.claim_cap) or self.claim_cap < 0.0:
            raise ValueError("claim_cap must be finite and nonnegative")

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def price_of_risk(self) -> np.ndarray:
        return self.drift / self.vol

    @property
    def c_abs(self) -> float:
        return max(abs(self.c_lo), abs(self.c_hi))

    def intensity_sup(self) -> float:
        if self.model.intensity_bound is not None:
            return float(self.model.intensity_bound)
        return IntensityTable(self.model).total_sup(1)

    def growth_envelope(self) -> float:
        """Declared |f| <= C (1 + |y| + z^2) envelope of the quadratic driver."""
        if self.quad_growth is not None:
            return self.quad_growth
        a = self.alpha
        th = float(np.max(np.abs(self.price_of_risk)))
        u_bd = 2.0 * self.claim_cap + 1.0
        lam = self.intensity_sup()
        return (a + th + 1.5 * th * th / a
                + lam * (math.exp(a * u_bd) + 1.0) * max(1.0, 1.0 / a))

    def z_envelope(self) -> float:
        """Declared clip radius on the gain argument of the quadratic driver."""
        if self.z_clip is not None:
            return self.z_clip
        return 2.0 * (self.claim_cap + 1.0)


def _hamiltonian(pi, z, u, sigma, vth, alpha, lamw, beta_row):
    """F(pi) = (alpha/2)|pi sigma - (z + vth/alpha)|^2 + jump penalty."""
    quad = 0.5 * alpha * (pi * sigma - (z + vth / alpha)) ** 2
    if lamw is None:
        return quad
    expo = alpha * (u - pi[..., None] * beta_row)
    pen = (np.exp(np.minimum(expo, _EXP_CAP)) - 1.0) @ lamw / alpha
    return quad + pen


def _golden(f, lo: float, hi: float, size: int, tol: float):
    """Vectorized golden-section minimum of f over [lo, hi].

    f maps a (size,) candidate array to values; the bracket is the same
    interval for every component. Returns the midpoint of the final bracket.
    """
    steps = max(1, math.ceil(math.log(max(tol, 1e-15) / max(hi - lo, tol))
                             / math.log(_INVPHI)))
    a = np.full(size, lo)
    b = np.full(size, hi)
    x1 = b - _INVPHI * (b - a)
    x2 = a + _INVPHI * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(steps):
        move = f1 > f2
        a = np.where(move, x1, a)
        b = np.where(move, b, x2)
        width = b - a
        x1 = b - _INVPHI * width
        x2 = a + _INVPHI * width
        # recompute both probes; reusing the survivor would save one eval
        # per step but the vectorized bookkeeping costs more than it saves
        f1, f2 = f(x1), f(x2)
    return 0.5 * (a + b)


def minimize_hamiltonian(z, u, *, sigma: float, price_of_risk: float,
                         alpha: float, c_lo: float, c_hi: float,
                         lam=None, weights=None, beta=None,
                         tol: float = PI_TOL):
    """Pointwise minimum of the strategy Hamiltonian over [c_lo, c_hi].

    z is (m,), u is (m, marks) of jump deltas (ignored when lam is None).
    lam/weights/beta are the mark rows of the next jump's intensity, the
    quadrature weights and the relative kick sizes. F is strictly convex in
    pi (a positive quadratic plus convex exponentials), so golden section
    cannot stall; when there is no jump risk the quadratic vertex is exact
    and the search is skipped. Returns (pi, F(pi)).
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    lamw = None
    if lam is not None:
        lamw = np.asarray(lam, float) * np.asarray(weights, float)
        if not np.any(lamw > 0.0):
            lamw = None
        else:
            u = np.atleast_2d(np.asarray(u, dtype=float))
            beta = np.asarray(beta, dtype=float)
    if c_lo == c_hi:
        pi = np.full(z.shape, c_lo)
        return pi, _hamiltonian(pi, z, u, sigma, price_of_risk, alpha,
                                lamw, beta)
    if lamw is None:
        pi = np.clip((z + price_of_risk / alpha) / sigma, c_lo, c_hi)
        return pi, _hamiltonian(pi, z, None, sigma, price_of_risk, alpha,
                                None, None)
    pi = _golden(lambda p: _hamiltonian(p, z, u, sigma, price_of_risk,
                                        alpha, lamw, beta),
                 c_lo, c_hi, z.size, tol)
    return pi, _hamiltonian(pi, z, u, sigma, price_of_risk, alpha, lamw, beta)


def _theta_indices(grid: TimeGrid, theta) -> tuple:
    return tuple(int(round(t / grid.dt)) for t in np.atleast_1d(theta))


def _mark_indices(mark_grid: MarkGrid, marks) -> tuple:
    pts = mark_grid.points
    return tuple(int(np.argmin(np.abs(pts - m))) for m in np.atleast_1d(marks))


def utility_cascade_data(problem: UtilityProblem):
    """Decomposed (terminal, driver) of the certainty-equivalent equation.

    Level k < n reads the next jump's intensity row at the current node and
    minimizes the Hamiltonian inside the driver; the top level has no jump
    term and uses the exact quadratic vertex. The driver is z-quadratic and
    is declared as such, so each level solve runs through the truncation
    envelope (growth_envelope, z_envelope).
    """
    model = problem.model
    grid = model.time_grid
    itab = IntensityTable(model)
    a = problem.alpha
    n = problem.n

    def make_map(k):
        sigma = float(problem.vol[k])
        vth = float(problem.price_of_risk[k])
        if k == n:
            def f_top(t, x, y, z, u, theta, marks):
                _, fmin = minimize_hamiltonian(
                    z, None, sigma=sigma, price_of_risk=vth, alpha=a,
                    c_lo=problem.c_lo, c_hi=problem.c_hi)
                return fmin - vth * z - vth * vth / (2.0 * a)
            return f_top
        beta_row = problem.beta[k]

        def f(t, x, y, z, u, theta, marks):
            ti = _theta_indices(grid, theta)
            mi = _mark_indices(model.mark_grid, marks)
            lam = itab.curve(k + 1, ti, mi)[int(round(t / grid.dt))]
            _, fmin = minimize_hamiltonian(
                z, u, sigma=sigma, price_of_risk=vth, alpha=a,
                c_lo=problem.c_lo, c_hi=problem.c_hi,
                lam=lam, weights=model.mark_grid.weights, beta=beta_row)
            return fmin - vth * z - vth * vth / (2.0 * a)
        return f

    terminal = DecomposedTerminal(n=n, maps=problem.claim, cap=problem.claim_cap)
    driver = DecomposedDriver(
        n=n, maps=tuple(make_map(k) for k in range(n + 1)),
        driver_class="quadratic_z",
        quadratic_growth=problem.growth_envelope(),
        z_range=problem.z_envelope())
    return terminal, driver


def transformed_cascade_data(problem: UtilityProblem):
    """Decomposed data of the exponential change of variable g = e^{alpha Y}.

    The quadratic and price-of-risk terms cancel exactly in the transform;
    what is left is Lipschitz on the compact constraint set:

        g-driver = inf_pi [ (alpha sigma pi)^2/2 g - alpha pi sigma (zg + vth g)
                            + sum_j ((ug_j + g) e^{-alpha pi beta_j} - g) lam_j w_j ]

    with (g, zg, ug) the transformed value, gain and jump deltas. Terminal
    components are e^{alpha B^k}.
    """
    model = problem.model
    grid = model.time_grid
    itab = IntensityTable(model)
    a = problem.alpha
    n = problem.n
    cap = math.exp(a * problem.claim_cap)

    def integrand(pi, g, zg, ug, sigma, vth, lamw, beta_row):
        g_col = g if np.ndim(g) else np.full(np.shape(pi), float(g))
        out = (0.5 * (a * sigma * pi) ** 2 * g_col
               - a * pi * sigma * (zg + vth * g_col))
        if lamw is not None:
            expo = np.exp(np.minimum(-a * pi[..., None] * beta_row, _EXP_CAP))
            out = out + ((ug + g_col[..., None]) * expo
                         - g_col[..., None]) @ lamw
        return out

    def minimize(g, zg, ug, sigma, vth, lamw, beta_row):
        if problem.c_lo == problem.c_hi:
            pi = np.full(np.shape(zg), problem.c_lo)
            return pi, integrand(pi, g, zg, ug, sigma, vth, lamw, beta_row)
        if lamw is None:
            # positive quadratic in pi when g > 0; degenerate g rows are
            # transient Picard states, settled by comparing the candidates
            g_safe = np.maximum(np.asarray(g, float), 1e-12)
            cands = [np.clip((zg + vth * g) / (a * sigma * g_safe),
                             problem.c_lo, problem.c_hi),
                     np.full(np.shape(zg), problem.c_lo),
                     np.full(np.shape(zg), problem.c_hi)]
            vals = [integrand(p, g, zg, ug, sigma, vth, None, None)
                    for p in cands]
            stack_p = np.stack(cands)
            stack_v = np.stack(vals)
            pick = np.argmin(stack_v, axis=0)
            take = np.arange(pick.size)
            return stack_p[pick, take], stack_v[pick, take]
        pi = _golden(lambda p: integrand(p, g, zg, ug, sigma, vth, lamw,
                                         beta_row),
                     problem.c_lo, problem.c_hi, np.size(zg), PI_TOL)
        return pi, integrand(pi, g, zg, ug, sigma, vth, lamw, beta_row)

    def make_map(k):
        sigma = float(problem.vol[k])
        vth = float(problem.price_of_risk[k])
        if k == n:
            def f_top(t, x, y, z, u, theta, marks):
                _, val = minimize(np.asarray(y, float), z, None, sigma, vth,
                                  None, None)
                return val
            return f_top
        beta_row = problem.beta[k]

        def f(t, x, y, z, u, theta, marks):
            ti = _theta_indices(grid, theta)
            mi = _mark_indices(model.mark_grid, marks)
            lam = itab.curve(k + 1, ti, mi)[int(round(t / grid.dt))]
            lamw = lam * model.mark_grid.weights
            if not np.any(lamw > 0.0):
                lamw = None
            _, val = minimize(np.asarray(y, float), z, u, sigma, vth,
                              lamw, beta_row)
            return val
        return f

    def make_terminal(k):
        base = problem.claim[k]

        def xi(x, theta, marks):
            return np.exp(a * np.clip(base(x, theta, marks),
                                      -problem.claim_cap, problem.claim_cap))
        return xi

    cabs = problem.c_abs
    babs = float(np.max(np.abs(problem.beta))) if n else 0.0
    lam_sup = problem.intensity_sup()
    exp_cap = math.exp(a * cabs * babs)
    smax = float(np.max(problem.vol))
    thmax = float(np.max(np.abs(problem.price_of_risk)))
    lip_y = (0.5 * (a * smax * cabs) ** 2 + a * smax * cabs * thmax
             + lam_sup * (exp_cap + 1.0))
    terminal = DecomposedTerminal(n=n, maps=tuple(make_terminal(k)
                                                  for k in range(n + 1)),
                                  cap=cap)
    driver = DecomposedDriver(
        n=n, maps=tuple(make_map(k) for k in range(n + 1)),
        driver_class="lipschitz",
        lipschitz_y=lip_y, lipschitz_z=a * smax * cabs,
        lipschitz_u=lam_sup * exp_cap, driver_bound0=0.0)
    return terminal, driver


@dataclass
class UtilitySolution:
    """Both cascade solves plus the derived optimum."""

    problem: UtilityProblem
    cascade: CascadeSolution
    transformed: CascadeSolution

    @property
    def y0(self) -> float:
        return self.cascade.y0

    @property
    def y0_transformed(self) -> float:
        g0 = max(self.transformed.y0, 1e-300)
        return math.log(g0) / self.problem.alpha

    @property
    def transform_gap(self) -> float:
        return abs(self.y0 - self.y0_transformed)

    def consistent(self, tol: float = 2e-2) -> bool:
        return self.transform_gap <= tol

    def value(self, x: float = 0.0) -> float:
        return -math.exp(-self.problem.alpha * (x - self.y0))

    def strategy_at(self, k: int, i: int, w, theta_idx=(), mark_idx=()):
        """Optimal holdings over cell i at level k for Brownian states w."""
        problem = self.problem
        z = self.cascade.z_at(k, i, w, theta_idx, mark_idx)
        if k == problem.n:
            pi, _ = minimize_hamiltonian(
                z, None, sigma=float(problem.vol[k]),
                price_of_risk=float(problem.price_of_risk[k]),
                alpha=problem.alpha, c_lo=problem.c_lo, c_hi=problem.c_hi)
            return pi
        u = self.cascade.u_at(k, i, w, theta_idx, mark_idx)
        itab = IntensityTable(self.cascade.model)
        lam = itab.curve(k + 1, theta_idx, mark_idx)[i]
        pi, _ = minimize_hamiltonian(
            z, u, sigma=float(problem.vol[k]),
            price_of_risk=float(problem.price_of_risk[k]),
            alpha=problem.alpha, c_lo=problem.c_lo, c_hi=problem.c_hi,
            lam=lam, weights=self.cascade.model.mark_grid.weights,
            beta=problem.beta[k])
        return pi


def solve_utility(problem: UtilityProblem, backend: str = "tree", *,
                  batch: BrownianBatch | None = None,
                  threads: int = 1) -> UtilitySolution:
    """Solve the hedging problem twice: direct quadratic and transformed.

    The direct route gives the certainty equivalent Y and the strategy; the
    transformed route re-derives Y_0 through a Lipschitz ladder as a
    uniqueness check. The two agree up to discretization, which
    UtilitySolution.consistent verifies.
    """
    term, drv = utility_cascade_data(problem)
    cascade = solve_cascade(term, drv, problem.model, backend=backend,
                            batch=batch, threads=threads)
    term_t, drv_t = transformed_cascade_data(problem)
    transformed = solve_cascade(term_t, drv_t, problem.model, backend=backend,
                                batch=batch, threads=threads)
    return UtilitySolution(problem=problem, cascade=cascade,
                           transformed=transformed)


def _prefix_groups(jump_nodes: np.ndarray, jump_marks: np.ndarray, M: int):
    """Rows grouped by snapped jump signature, with realized prefix tuples."""
    n = jump_nodes.shape[1]
    sig = np.column_stack([jump_nodes, jump_marks])
    uniq, inverse = np.unique(sig, axis=0, return_inverse=True)
    for g in range(uniq.shape[0]):
        rows = np.where(inverse == g)[0]
        s_row, m_row = uniq[g, :n], uniq[g, n:]
        realized = int(np.sum(s_row <= M))
        yield (rows, tuple(int(v) for v in s_row[:realized]),
               tuple(int(v) for v in m_row[:realized]))


def optimal_on_scenarios(solution: UtilitySolution,
                         glued: GluedPath) -> np.ndarray:
    """Optimal holdings per (path, cell) along glued scenarios.

    Cells are attributed predictably: the cell containing a jump still
    belongs to the pre-jump regime, matching the wealth simulation's kick
    convention (the kick multiplies the holding of the cell the jump lands
    in). Uses the glued Z and jump deltas, so no extra solves happen here.
    """
    problem = solution.problem
    grid = glued.grid
    M, n = grid.M, problem.n
    itab = IntensityTable(solution.cascade.model)
    weights = solution.cascade.model.mark_grid.weights
    pi = np.zeros((glued.Z.shape[0], M))
    for rows, tpre, mpre in _prefix_groups(glued.jump_nodes,
                                           glued.jump_marks, M):
        bounds = [0] + list(tpre) + [M]
        for k in range(len(tpre) + 1):
            lo, hi = bounds[k], bounds[k + 1]
            if lo >= hi:
                continue
            sigma = float(problem.vol[k])
            vth = float(problem.price_of_risk[k])
            if k == n:
                for i in range(lo, hi):
                    p, _ = minimize_hamiltonian(
                        glued.Z[rows, i], None, sigma=sigma,
                        price_of_risk=vth, alpha=problem.alpha,
                        c_lo=problem.c_lo, c_hi=problem.c_hi)
                    pi[rows, i] = p
                continue
            lam_tab = itab.curve(k + 1, tpre[:k], mpre[:k])
            beta_row = problem.beta[k]
            for i in range(lo, hi):
                p, _ = minimize_hamiltonian(
                    glued.Z[rows, i], glued.u_nodes[rows, i, :], sigma=sigma,
                    price_of_risk=vth, alpha=problem.alpha,
                    c_lo=problem.c_lo, c_hi=problem.c_hi,
                    lam=lam_tab[i], weights=weights, beta=beta_row)
                pi[rows, i] = p
    return pi


def _claim_on_scenarios(problem: UtilityProblem, glued: GluedPath) -> np.ndarray:
    grid = glued.grid
    M = grid.M
    pts = problem.model.mark_grid.points
    B = np.empty(glued.Y.shape[0])
    for rows, tpre, mpre in _prefix_groups(glued.jump_nodes,
                                           glued.jump_marks, M):
        theta = grid.nodes[np.asarray(tpre, dtype=int)]
        marks = pts[np.asarray(mpre, dtype=int)]
        B[rows] = problem.claim[len(tpre)](
            glued.brownian.levels[rows, M], theta, marks)
    return np.clip(B, -problem.claim_cap, problem.claim_cap)


def _wealth_on_scenarios(problem: UtilityProblem, glued: GluedPath,
                         pi: np.ndarray, x: float) -> np.ndarray:
    """Terminal wealth of holding amounts pi through the glued scenarios.

    Per cell the gain is pi (b dt + sigma dW) with the pre-jump regime's
    coefficients; a jump snapped to node s kicks by pi[s-1] beta_k(mark).
    """
    grid = glued.grid
    M = grid.M
    regime_cell = glued.regime[:, :M]
    drift = problem.drift[regime_cell]
    vol = problem.vol[regime_cell]
    gains = pi * (drift * grid.dt + vol * glued.brownian.increments)
    X_T = x + gains.sum(axis=1)
    nodes = glued.jump_nodes
    for j in range(problem.n):
        hit = nodes[:, j] <= M
        if not np.any(hit):
            continue
        s = np.maximum(nodes[hit, j], 1)
        kick = pi[np.flatnonzero(hit), s - 1] * \
            problem.beta[j, glued.jump_marks[hit, j]]
        X_T[hit] += kick
    return X_T


@dataclass(frozen=True)
class MartingaleReport:
    """Moments of R_T = -exp(-alpha (X_T - B)) against R_0 = -exp(-alpha (x - Y_0))."""

    r0: float
    e_rt: float
    stderr: float
    dt: float
    paths: int
    label: str = "strategy"

    @property
    def gap(self) -> float:
        return abs(self.e_rt - self.r0)

    @property
    def equality_tol(self) -> float:
        return 3.0 * self.stderr + 0.5 * self.dt * abs(self.r0)

    @property
    def is_martingale(self) -> bool:
        return self.gap <= self.equality_tol

    @property
    def is_supermartingale(self) -> bool:
        return self.e_rt <= self.r0 + 3.0 * self.stderr


def _report(problem: UtilityProblem, glued: GluedPath, y0: float,
            pi: np.ndarray, x: float, label: str) -> MartingaleReport:
    X_T = _wealth_on_scenarios(problem, glued, pi, x)
    B = _claim_on_scenarios(problem, glued)
    R_T = -np.exp(-problem.alpha * (X_T - B))
    r0 = -math.exp(-problem.alpha * (x - y0))
    return MartingaleReport(
        r0=r0, e_rt=float(R_T.mean()),
        stderr=float(R_T.std(ddof=1) / math.sqrt(R_T.size)),
        dt=glued.grid.dt, paths=R_T.size, label=label)


def _scenarios(solution: UtilitySolution, paths: int, seed: int) -> GluedPath:
    model = solution.problem.model
    mode = "rademacher" if solution.cascade.backend == "tree" else "gaussian"
    jumps = sample_jump_batch(model, paths, seed)
    brownian = simulate_brownian(model.time_grid, paths, seed, mode=mode)
    return glue(solution.cascade, jumps, brownian, with_u=True)


def verify_martingale_optimality(solution: UtilitySolution, pi, paths: int,
                                 seed: int, *, x: float = 0.0,
                                 label: str = "strategy") -> MartingaleReport:
    """Estimate E[R_T] for one admissible strategy on fresh scenarios.

    pi is None for the optimal strategy, a scalar for a constant holding, or
    a (paths, M) array. The optimal strategy must make R a martingale up to
    discretization; any other admissible one only a supermartingale.
    """
    glued = _scenarios(solution, paths, seed)
    if pi is None:
        pi_arr = optimal_on_scenarios(solution, glued)
        label = "optimal"
    else:
        pi_arr = np.broadcast_to(np.asarray(pi, dtype=float),
                                 (paths, glued.grid.M))
    return _report(solution.problem, glued, solution.y0, pi_arr, x, label)


def martingale_suite(solution: UtilitySolution, paths: int, seed: int, *,
                     count: int = 5, x: float = 0.0):
    """Optimality check plus randomized perturbations on shared scenarios.

    Returns (optimal report, perturbed reports, zero-strategy report). Each
    perturbation adds a uniform kick of growing size (fractions of the
    constraint half-width) and clips back into the admissible interval, so
    every comparison strategy is admissible by construction.
    """
    problem = solution.problem
    glued = _scenarios(solution, paths, seed)
    M = glued.grid.M
    pi_hat = optimal_on_scenarios(solution, glued)
    best = _report(problem, glued, solution.y0, pi_hat, x, "optimal")

    half = 0.5 * (problem.c_hi - problem.c_lo)
    fracs = (0.05, 0.1, 0.2, 0.35, 0.5)[:count]
    noise = uniform_matrix(seed, paths, M * len(fracs), tag=TAG_PERTURB)
    perturbed = []
    for j, frac in enumerate(fracs):
        eps = frac * half
        shift = eps * (2.0 * noise[:, j * M:(j + 1) * M] - 1.0)
        pi_j = np.clip(pi_hat + shift, problem.c_lo, problem.c_hi)
        perturbed.append(_report(problem, glued, solution.y0, pi_j, x,
                                 f"perturbed eps={eps:g}"))
    zero = _report(problem, glued, solution.y0, np.zeros_like(pi_hat), x,
                   "zero")
    return best, perturbed, zero
