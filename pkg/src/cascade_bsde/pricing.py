"""Option pricing and hedging in the single-shock two-asset market.

Before the shock the claim value solves a linear Brownian equation whose
source term reads the value just after an immediate shock; after the shock
it is a plain conditional expectation under the post-shock coefficients.
Both reduce to exponential-adjoint closed forms (lognormal integrals),
evaluated here; the same claim also feeds the generic ladder solver as an
independent cross-check. The replicating portfolio in (bank account,
shocked asset, unshocked asset) follows from (Y, Z, U) by inverting the
exposure system.

Volatilities must not move at the shock (drifts and rates may): the claim
value is then a function of (t, W_t, shock time), which is the state both
the closed forms and the ladder work in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .cascade import DecomposedDriver, DecomposedTerminal, glue
from .grids import TimeGrid
from .jump_model import DensityModel, sample_jump_batch
from .scenario import (MarketPath, SingleJumpMarket, simulate_brownian,
                       simulate_market_single_jump)

PAYOFF_KINDS = ("digital", "call", "custom")


@dataclass(frozen=True)
class EuropeanPayoff:
    """Terminal claim on the asset pair (S1_T, S2_T).

    digital pays 1{S_T >= strike} and call pays (S_T - strike)^+ on the
    asset named by `asset`; both get exact lognormal valuation formulas.
    custom evaluates fn(s1, s2), is valued by quadrature, and needs an
    explicit `bound` if the ladder's a-priori checks are to bite.
    """

    kind: str
    asset: str = "s2"
    strike: float = 1.0
    fn: Callable | None = None
    bound: float | None = None

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise ValueError(f"payoff kind must be one of {PAYOFF_KINDS}, got {self.kind!r}")
        if self.asset not in ("s1", "s2"):
            raise ValueError(f"payoff asset must be 's1' or 's2', got {self.asset!r}")
        if self.kind == "custom" and self.fn is None:
            raise ValueError("custom payoff needs fn(s1, s2)")
        if self.kind != "custom" and self.strike <= 0.0:
            raise ValueError(f"strike must be positive, got {self.strike}")

    def value(self, s1, s2) -> np.ndarray:
        s1 = np.asarray(s1, dtype=float)
        s2 = np.asarray(s2, dtype=float)
        s = s1 if self.asset == "s1" else s2
        if self.kind == "digital":
            return (s >= self.strike).astype(float)
        if self.kind == "call":
            return np.maximum(s - self.strike, 0.0)
        return np.asarray(self.fn(s1, s2), dtype=float)

    @property
    def cap(self) -> float:
        if self.kind == "digital":
            return 1.0
        return math.inf if self.bound is None else float(self.bound)


@dataclass(frozen=True)
class PricingProblem:
    """A European claim on the single-shock market plus the shock-time law.

    beta = 0 is rejected outright: the shocked asset then carries no jump
    exposure, the market cannot span the jump risk, and the hedge formula
    divides by beta. Volatilities are probed across shock times and must
    stay at their pre-shock values.
    """

    market: SingleJumpMarket
    model: DensityModel
    payoff: EuropeanPayoff

    def __post_init__(self):
        if self.model.n != 1:
            raise ValueError(f"pricing needs a one-jump model, got n = {self.model.n}")
        mk = self.market
        if mk.beta == 0.0:
            raise ValueError(
                "beta = 0: the shocked asset carries no jump exposure and the "
                "hedge formula divides by beta")
        probe = self.model.time_grid.nodes
        for name, pre in (("sigma1", mk.sigma0), ("sigmabar1", mk.sigmabar0)):
            post = mk.post(name, probe)
            if np.max(np.abs(post - pre)) > 1e-12:
                raise ValueError(
                    f"{name} must equal its pre-shock value for every shock time; "
                    "a volatility shift would make the claim depend on the "
                    "Brownian level at the shock, not just the current one")

    @property
    def kappa0(self) -> float:
        """dt-weight of the shock response in the pre-shock equation."""
        mk = self.market
        return ((mk.r0 - mk.b0) / mk.beta
                - mk.sigma0 * (mk.r0 - mk.bbar0) / (mk.beta * mk.sigmabar0))

    @property
    def tilt0(self) -> float:
        """Pre-shock adjoint tilt (r0 - bbar0) / sigmabar0."""
        mk = self.market
        return (mk.r0 - mk.bbar0) / mk.sigmabar0


def _assets_no_shock(mk: SingleJumpMarket, t: float, w) -> tuple:
    w = np.asarray(w, dtype=float)
    s1 = mk.s1_0 * np.exp((mk.b0 - 0.5 * mk.sigma0 ** 2) * t + mk.sigma0 * w)
    s2 = mk.s2_0 * np.exp((mk.bbar0 - 0.5 * mk.sigmabar0 ** 2) * t + mk.sigmabar0 * w)
    return s1, s2


def _assets_post_shock(mk: SingleJumpMarket, t: float, w, theta) -> tuple:
    """Prices at time t given a shock at theta <= t, as functions of W_t.

    Constant volatility makes the Brownian level at theta drop out; only the
    drift integrals remember the switch.
    """
    w, theta = np.broadcast_arrays(np.asarray(w, float), np.asarray(theta, float))
    b1 = mk.post("b1", theta)
    bbar1 = mk.post("bbar1", theta)
    s1 = mk.s1_0 * (1.0 + mk.beta) * np.exp(
        mk.b0 * theta + b1 * (t - theta) - 0.5 * mk.sigma0 ** 2 * t + mk.sigma0 * w)
    s2 = mk.s2_0 * np.exp(
        mk.bbar0 * theta + bbar1 * (t - theta) - 0.5 * mk.sigmabar0 ** 2 * t
        + mk.sigmabar0 * w)
    return s1, s2


def _lognormal_value(payoff: EuropeanPayoff, s, mu: np.ndarray, vol: float,
                     rate: np.ndarray, span: float) -> np.ndarray:
    """Discounted digital/call value when ln S_T ~ N(ln s + (mu - vol^2/2) span, vol^2 span)."""
    s = np.asarray(s, dtype=float)
    if span <= 0.0:
        if payoff.kind == "digital":
            return (s >= payoff.strike).astype(float)
        return np.maximum(s - payoff.strike, 0.0)
    disc = np.exp(-rate * span)
    sd = vol * math.sqrt(span)
    d2 = (np.log(s / payoff.strike) + (mu - 0.5 * vol ** 2) * span) / sd
    if payoff.kind == "digital":
        return disc * ndtr(d2)
    return disc * (s * np.exp(mu * span) * ndtr(d2 + sd) - payoff.strike * ndtr(d2))


def _post_value(problem: PricingProblem, T: float, t: float, w, theta,
                gh_nodes: int) -> np.ndarray:
    """Post-shock claim value at (t, W_t = w) given the shock at theta <= t.

    The adjoint tilt d1 = (r1 - bbar1)/sigmabar turns the unshocked asset's
    drift into r1; the other asset picks up b1 + sigma*d1 instead, so the
    general lognormal formula is used for both.
    """
    mk = problem.market
    w, theta = np.broadcast_arrays(np.asarray(w, float), np.asarray(theta, float))
    s1, s2 = _assets_post_shock(mk, t, w, theta)
    r1 = mk.post("r1", theta)
    bbar1 = mk.post("bbar1", theta)
    d1 = (r1 - bbar1) / mk.sigmabar0
    span = T - t
    pay = problem.payoff
    if pay.kind in ("digital", "call"):
        if pay.asset == "s1":
            s, vol, drift = s1, mk.sigma0, mk.post("b1", theta)
        else:
            s, vol, drift = s2, mk.sigmabar0, bbar1
        return _lognormal_value(pay, s, drift + vol * d1, vol, r1, span)
    if span <= 0.0:
        return pay.value(s1, s2)
    gx, gw = np.polynomial.hermite.hermgauss(gh_nodes)
    dw = math.sqrt(2.0 * span) * gx
    b1 = mk.post("b1", theta)
    tilt = np.exp(d1[..., None] * dw - 0.5 * d1[..., None] ** 2 * span)
    s1_T = s1[..., None] * np.exp((b1[..., None] - 0.5 * mk.sigma0 ** 2) * span
                                  + mk.sigma0 * dw)
    s2_T = s2[..., None] * np.exp((bbar1[..., None] - 0.5 * mk.sigmabar0 ** 2) * span
                                  + mk.sigmabar0 * dw)
    vals = pay.value(s1_T, s2_T) * tilt
    return np.exp(-r1 * span) * (vals @ gw) / math.sqrt(math.pi)


def _pre_terminal_part(problem: PricingProblem, grid: TimeGrid, t: float, w,
                       gh_nodes: int) -> np.ndarray:
    """E[xi0(W_T) Gamma_{t,T} | W_t = w] for the pre-shock adjoint Gamma.

    Exact for digital and call payoffs: the tilt tilt0 shifts the asset
    drift by vol * tilt0 and the adjoint's a-part contributes a plain
    discount at r0 + kappa0. Custom payoffs fall back to quadrature, which
    is only as good as the payoff is smooth.
    """
    mk = problem.market
    pay = problem.payoff
    span = grid.T - t
    rate = mk.r0 + problem.kappa0
    w = np.asarray(w, dtype=float)
    s1, s2 = _assets_no_shock(mk, t, w)
    if pay.kind in ("digital", "call"):
        if pay.asset == "s1":
            s, vol, drift = s1, mk.sigma0, mk.b0
        else:
            s, vol, drift = s2, mk.sigmabar0, mk.bbar0
        return _lognormal_value(pay, s, drift + vol * problem.tilt0, vol,
                                rate, span)
    if span <= 0.0:
        return pay.value(s1, s2)
    gx, gw = np.polynomial.hermite.hermgauss(gh_nodes)
    dw = math.sqrt(2.0 * span) * gx
    d0 = problem.tilt0
    tilt = np.exp(d0 * dw - 0.5 * d0 * d0 * span)
    s1_T = s1[..., None] * np.exp((mk.b0 - 0.5 * mk.sigma0 ** 2) * span
                                  + mk.sigma0 * dw)
    s2_T = s2[..., None] * np.exp((mk.bbar0 - 0.5 * mk.sigmabar0 ** 2) * span
                                  + mk.sigmabar0 * dw)
    vals = pay.value(s1_T, s2_T) * tilt
    return math.exp(-rate * span) * (vals @ gw) / math.sqrt(math.pi)


def _pre_value(problem: PricingProblem, grid: TimeGrid, i: int, w,
               gh_nodes: int) -> np.ndarray:
    """Pre-shock claim value at node i: exact terminal part plus the
    kappa0-weighted source integral of the sectioned post-shock value.

    The source expectation smooths the payoff through y1 before any
    quadrature sees it, so Gauss-Hermite converges fast even for digitals;
    the time integral uses the trapezoid rule on the grid.
    """
    t = grid.nodes[i]
    w = np.asarray(w, dtype=float)
    out = _pre_terminal_part(problem, grid, t, w, gh_nodes)
    kappa0 = problem.kappa0
    if kappa0 == 0.0 or i == grid.M:
        return out
    rate = problem.market.r0 + kappa0
    d0 = problem.tilt0
    gx, gw = np.polynomial.hermite.hermgauss(gh_nodes)
    acc = 0.5 * grid.dt * kappa0 * _post_value(problem, grid.T, t, w, t, gh_nodes)
    for j in range(i + 1, grid.M + 1):
        s = grid.nodes[j]
        span = s - t
        weight = grid.dt if j < grid.M else 0.5 * grid.dt
        dw = math.sqrt(2.0 * span) * gx
        tilt = np.exp(d0 * dw - 0.5 * d0 * d0 * span)
        inner = _post_value(problem, grid.T, s, w[..., None] + dw, s, gh_nodes)
        acc = acc + (weight * kappa0 * math.exp(-rate * span)
                     * ((inner * tilt) @ gw) / math.sqrt(math.pi))
    return out + acc


@dataclass(frozen=True)
class ClosedFormPrice:
    """Claim value evaluators on both sides of the shock.

    y1 is exact for digital and call payoffs (lognormal formulas) and
    quadrature-valued for custom ones; the pre-shock y0 combines the exact
    terminal part with the time-integrated sectioned value y1(t, t).
    """

    problem: PricingProblem
    grid: TimeGrid
    gh_nodes: int = 160

    @property
    def y0(self) -> float:
        return float(self.y0_at(0, np.zeros(1))[0])

    def y0_at(self, i: int, w) -> np.ndarray:
        return _pre_value(self.problem, self.grid, i, w, self.gh_nodes)

    def z0_at(self, i: int, w) -> np.ndarray:
        h = 1e-5 * max(1.0, math.sqrt(self.grid.dt))
        up = self.y0_at(i, np.asarray(w, float) + h)
        dn = self.y0_at(i, np.asarray(w, float) - h)
        return (up - dn) / (2.0 * h)

    def y1(self, t: float, w, theta) -> np.ndarray:
        return _post_value(self.problem, self.grid.T, t, w, theta, self.gh_nodes)

    def z1(self, t: float, w, theta) -> np.ndarray:
        h = 1e-5 * max(1.0, math.sqrt(self.grid.dt))
        up = self.y1(t, np.asarray(w, float) + h, theta)
        dn = self.y1(t, np.asarray(w, float) - h, theta)
        return (up - dn) / (2.0 * h)

    def u0_at(self, i: int, w) -> np.ndarray:
        """Shock response at node i: value after an immediate shock minus before."""
        t = self.grid.nodes[i]
        return self.y1(t, w, t) - self.y0_at(i, w)


def price_option_closed_form(problem: PricingProblem, grid: TimeGrid,
                             gh_nodes: int = 160) -> ClosedFormPrice:
    """Value the claim by the two exponential-adjoint representations.

    The post-shock value is a one-regime conditional expectation; the
    pre-shock one adds the kappa0-weighted running value of an immediate
    shock. Both are wrapped as node evaluators; nothing is solved eagerly.
    """
    return ClosedFormPrice(problem=problem, grid=grid, gh_nodes=gh_nodes)


def pricing_cascade_data(problem: PricingProblem) -> tuple:
    """(terminal, driver) pair handing the same claim to the generic ladder.

    Level 1 is the plain post-shock discounting equation; level 0 adds the
    kappa0-weighted shock response. Both are affine, so Lipschitz constants
    are read off the coefficients.
    """
    mk = problem.market
    pay = problem.payoff
    T = problem.model.time_grid.T
    probe = problem.model.time_grid.nodes
    r1_sup = float(np.max(np.abs(mk.post("r1", probe))))
    d1_sup = float(np.max(np.abs((mk.post("r1", probe) - mk.post("bbar1", probe))
                                 / mk.sigmabar0)))
    kappa0 = problem.kappa0
    tilt0 = problem.tilt0

    def xi0(x, theta, marks):
        s1, s2 = _assets_no_shock(mk, T, x)
        return pay.value(s1, s2)

    def xi1(x, theta, marks):
        s1, s2 = _assets_post_shock(mk, T, x, theta[0])
        return pay.value(s1, s2)

    def f0(t, x, y, z, u, theta, marks):
        return tilt0 * z + kappa0 * u[:, 0] - mk.r0 * y

    def f1(t, x, y, z, u, theta, marks):
        th = theta[0]
        d1 = float((mk.post("r1", th) - mk.post("bbar1", th)) / mk.sigmabar0)
        r1 = float(mk.post("r1", th))
        return d1 * z - r1 * y

    terminal = DecomposedTerminal(n=1, maps=(xi0, xi1), cap=pay.cap)
    driver = DecomposedDriver(
        n=1, maps=(f0, f1),
        lipschitz_y=max(abs(mk.r0), r1_sup),
        lipschitz_z=max(abs(tilt0), d1_sup),
        lipschitz_u=abs(kappa0),
        driver_bound0=0.0)
    return terminal, driver


def _invert_exposure(mk: SingleJumpMarket, y, z, u, s0, s1, s2) -> tuple:
    if np.any(s1 <= 0.0) or np.any(s2 <= 0.0):
        raise ValueError("asset prices must stay positive to invert the exposure system")
    pi1 = u / (mk.beta * s1)
    pi2 = (z - pi1 * mk.sigma0 * s1) / (mk.sigmabar0 * s2)
    pi0 = (y - pi1 * s1 - pi2 * s2) / s0
    return pi0, pi1, pi2


@dataclass(frozen=True)
class HedgePaths:
    """Per-cell holdings (units of each asset) along simulated scenarios."""

    pi0: np.ndarray
    pi1: np.ndarray
    pi2: np.ndarray


def extract_hedge(problem: PricingProblem, Y, Z, U,
                  market: MarketPath) -> HedgePaths:
    """Holdings at each cell's left node from the value and its exposures.

    pi1 carries the shock exposure U through beta * S1, pi2 tops the
    Brownian exposure up to Z, and pi0 parks the remainder of the value in
    the bank account. Y, Z, U are (paths, M) at cell-left nodes, U being
    the shock response there (zero once the shock has happened, which is
    also what keeps pi1 well defined at post-shock nodes).
    """
    M = market.grid.M
    Y = np.asarray(Y, dtype=float)[:, :M]
    Z = np.asarray(Z, dtype=float)[:, :M]
    U = np.asarray(U, dtype=float)[:, :M]
    pi0, pi1, pi2 = _invert_exposure(
        problem.market, Y, Z, U,
        market.s0[:, :M], market.s1[:, :M], market.s2[:, :M])
    return HedgePaths(pi0=pi0, pi1=pi1, pi2=pi2)


def closed_form_on_paths(cf: ClosedFormPrice, market: MarketPath,
                         brownian, w_samples: int = 801) -> tuple:
    """(Y, Z, U) along simulated scenarios from the closed forms.

    Switches to the post-shock formulas at the same node where the
    simulation switches regimes, with the shock time snapped to that node.
    The pre-shock solve carries a time-quadrature per evaluation, so its
    values are sampled on a per-node Brownian grid and interpolated onto
    the paths; they are smooth in w away from T, where the exact terminal
    takes over anyway.
    """
    grid = cf.grid
    M = grid.M
    W = brownian.levels
    paths = W.shape[0]
    jn = market.jump_node
    theta_node = grid.nodes[np.minimum(jn, M)]
    Y = np.empty((paths, M + 1))
    Z = np.empty((paths, M))
    U = np.zeros((paths, M))
    for i in range(M + 1):
        t = grid.nodes[i]
        pre = jn > i
        post = ~pre
        if np.any(pre):
            w = W[pre, i]
            if i == M:
                Y[pre, i] = cf.y0_at(i, w)
            else:
                wg = np.linspace(w.min() - 0.5, w.max() + 0.5, w_samples)
                Y[pre, i] = np.interp(w, wg, cf.y0_at(i, wg))
                Z[pre, i] = np.interp(w, wg, cf.z0_at(i, wg))
                U[pre, i] = cf.y1(t, w, t) - Y[pre, i]
        if np.any(post):
            w = W[post, i]
            th = theta_node[post]
            Y[post, i] = cf.y1(t, w, th)
            if i < M:
                Z[post, i] = cf.z1(t, w, th)
    return Y, Z, U


@dataclass(frozen=True)
class ReplicationReport:
    """How well the extracted hedge reproduces the claim from Y_0 capital."""

    y0: float
    paths: int
    terminal_mean_abs: float
    terminal_max_abs: float
    no_shock_mean_abs: float
    shock_mean_abs: float
    track_mean_abs: float  # worst node of mean |X_t - Y_t|

    def within(self, tol: float) -> bool:
        return self.terminal_mean_abs <= tol


def replicate(problem: PricingProblem, grid: TimeGrid, paths: int, seed: int,
              *, cf: ClosedFormPrice | None = None, cascade=None,
              gh_nodes: int = 160) -> ReplicationReport:
    """Fund with Y_0, hold the extracted hedge, mark against the simulated claim.

    Uses the closed-form (Y, Z, U) on Gaussian scenarios unless a solved
    ladder is supplied, in which case the scenarios match its backend
    (Rademacher steps for the tree, whose values live on the lattice).
    """
    model = problem.model
    jumps = sample_jump_batch(model, paths, seed)
    tau = jumps.times[:, 0]
    if cascade is not None:
        mode = "rademacher" if cascade.backend == "tree" else "gaussian"
    else:
        mode = "gaussian"
    brownian = simulate_brownian(grid, paths, seed, mode=mode)
    market = simulate_market_single_jump(problem.market, tau, brownian)

    if cascade is not None:
        glued = glue(cascade, jumps, brownian, with_u=True)
        Y = glued.Y
        Z = glued.Z
        U = glued.u_nodes[:, :grid.M, 0]
        y0 = cascade.y0
    else:
        if cf is None:
            cf = price_option_closed_form(problem, grid, gh_nodes=gh_nodes)
        Y, Z, U = closed_form_on_paths(cf, market, brownian)
        y0 = cf.y0

    hedge = extract_hedge(problem, Y, Z, U, market)
    gains = (hedge.pi0 * np.diff(market.s0, axis=1)
             + hedge.pi1 * np.diff(market.s1, axis=1)
             + hedge.pi2 * np.diff(market.s2, axis=1))
    X = np.empty((paths, grid.M + 1))
    X[:, 0] = y0
    np.cumsum(gains, axis=1, out=X[:, 1:])
    X[:, 1:] += y0

    xi = problem.payoff.value(market.s1[:, grid.M], market.s2[:, grid.M])
    gap = X[:, grid.M] - xi
    hit = market.jump_node <= grid.M
    no_shock = float(np.mean(np.abs(gap[~hit]))) if np.any(~hit) else math.nan
    shock = float(np.mean(np.abs(gap[hit]))) if np.any(hit) else math.nan
    return ReplicationReport(
        y0=y0, paths=paths,
        terminal_mean_abs=float(np.mean(np.abs(gap))),
        terminal_max_abs=float(np.max(np.abs(gap))),
        no_shock_mean_abs=no_shock,
        shock_mean_abs=shock,
        track_mean_abs=float(np.max(np.mean(np.abs(X - Y), axis=0))))
