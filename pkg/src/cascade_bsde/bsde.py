"""Brownian backward SDE solvers on a sub-interval [a, T].

Three interchangeable backends share one solution interface:

  * solve_linear: exponential-adjoint closed form for drivers a(t)y + b z + c,
    Gaussian integrals by Gauss-Hermite quadrature;
  * solve_tree:   recombining binomial lattice, the desk-scale oracle;
  * solve_lsmc:   backward Euler with least-squares conditional expectations.

The lattice is global: states at absolute node i are W = (2j - i) sqrt(dt),
j = 0..i, whatever the starting node of the solve. Solves that start at a
later node therefore line up state-by-state with solves that start earlier,
which is what lets the jump cascade read one level's initial slice as the
next level's jump reset without interpolation.

The Markov state is affine in the Brownian value, X_t = x0 + drift t +
scale W_t; that covers the Brownian motion itself and log-prices with
constant coefficients, which is all the applications need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .grids import TimeGrid
from .scenario import BrownianBatch

DRIVER_CLASSES = ("zero", "affine", "lipschitz", "quadratic_z")

PICARD_TOL = 1e-8
PICARD_CAP = 50


@dataclass(frozen=True)
class AffineState:
    """X_t = x0 + drift * t + scale * W_t."""

    x0: float = 0.0
    drift: float = 0.0
    scale: float = 1.0

    def value(self, t, w):
        return self.x0 + self.drift * np.asarray(t, float) + self.scale * np.asarray(w, float)


@dataclass(frozen=True)
class BrownianBsdeSpec:
    """One Brownian backward SDE on [nodes[start_index], T].

    terminal: vectorized map X_T -> value, clipped into [-terminal_cap,
    terminal_cap] before solving when the cap is finite.
    driver: vectorized map (t, X_t, y, z) -> value; None means zero.
    The Lipschitz constants and driver_bound0 (sup of |f(t,x,0,0)|) are
    declared, not measured; they feed the tree monotonicity guard and the
    a-priori bound assertion.
    """

    grid: TimeGrid
    terminal: Callable
    driver: Callable | None = None
    driver_class: str = "lipschitz"
    start_index: int = 0
    state: AffineState = field(default_factory=AffineState)
    terminal_cap: float = math.inf
    lipschitz_y: float = 0.0
    lipschitz_z: float = 0.0
    driver_bound0: float | None = None
    quadratic_growth: float | None = None

    def __post_init__(self):
        if self.driver_class not in DRIVER_CLASSES:
            raise ValueError(f"driver_class must be one of {DRIVER_CLASSES}")
        if not 0 <= self.start_index <= self.grid.M:
            raise ValueError(
                f"start_index must lie in 0..{self.grid.M}, got {self.start_index}")
        if self.driver is None and self.driver_class != "zero":
            object.__setattr__(self, "driver_class", "zero")
        if self.driver_class == "quadratic_z" and self.quadratic_growth is None:
            raise ValueError("quadratic_z drivers must declare quadratic_growth")

    @property
    def span(self) -> float:
        return self.grid.T - self.grid.nodes[self.start_index]

    def terminal_values(self, x):
        v = np.asarray(self.terminal(np.asarray(x, float)), dtype=float)
        if math.isfinite(self.terminal_cap):
            v = np.clip(v, -self.terminal_cap, self.terminal_cap)
        return v

    def f(self, t, x, y, z):
        if self.driver is None:
            return np.zeros_like(np.asarray(y, float))
        return np.asarray(self.driver(t, x, y, z), dtype=float)

    def apriori_bound(self) -> float:
        """Exponential bound on sup |Y| implied by the declared caps."""
        if not math.isfinite(self.terminal_cap) or self.driver_bound0 is None:
            return math.inf
        return (self.terminal_cap + self.driver_bound0 * self.span) * \
            math.exp(self.lipschitz_y * self.span)


def lattice_states(grid: TimeGrid, i: int) -> np.ndarray:
    """Brownian values reachable at node i on the binomial lattice."""
    return (2.0 * np.arange(i + 1) - i) * math.sqrt(grid.dt)


def lattice_index(grid: TimeGrid, i: int, w) -> np.ndarray:
    """Index of each Brownian value among the node-i lattice states."""
    j = np.rint((np.asarray(w, float) / math.sqrt(grid.dt) + i) / 2.0).astype(int)
    if np.any((j < 0) | (j > i)):
        raise ValueError(f"state off the node-{i} lattice")
    return j


@dataclass
class BsdeSolution:
    """Per-node value and gain maps produced by one backend.

    tree:   y_nodes[i] / z_nodes[i] are arrays over the node-i lattice.
    lsmc:   y_poly[i] / z_poly[i] are (shift, scale, coeffs) tuples defining
            a polynomial in the standardized state; degenerate nodes store a
            constant.
    linear: y_fn / z_fn are callables (t, x) evaluated on demand.

    y_at / z_at evaluate at Brownian values w (not transformed states).
    """

    backend: str
    grid: TimeGrid
    start_index: int
    state: AffineState
    y_nodes: dict | None = None
    z_nodes: dict | None = None
    y_poly: dict | None = None
    z_poly: dict | None = None
    y_fn: Callable | None = None
    z_fn: Callable | None = None
    value_bound: float = math.inf
    diagnostics: dict = field(default_factory=dict)

    @property
    def y0(self) -> float:
        """Value at the starting node; scalar only when the solve starts at
        the root of the lattice (start_index = 0)."""
        if self.start_index != 0:
            raise ValueError("y0 is only scalar for solves starting at node 0")
        return float(self.y_at(0, np.zeros(1))[0])

    def y_at(self, i: int, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if self.backend == "tree":
            return self.y_nodes[i][lattice_index(self.grid, i, w)]
        if self.backend == "lsmc":
            vals = _poly_eval(self.y_poly[i], self.state.value(self.grid.nodes[i], w))
            if math.isfinite(self.value_bound):
                # polynomials stray outside the a-priori bound off the bulk of
                # the regression cloud; the true value never does
                vals = np.clip(vals, -self.value_bound, self.value_bound)
            return vals
        return np.asarray(self.y_fn(self.grid.nodes[i],
                                    self.state.value(self.grid.nodes[i], w)), float)

    def z_at(self, i: int, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if self.backend == "tree":
            return self.z_nodes[i][lattice_index(self.grid, i, w)]
        if self.backend == "lsmc":
            return _poly_eval(self.z_poly[i], self.state.value(self.grid.nodes[i], w))
        return np.asarray(self.z_fn(self.grid.nodes[i],
                                    self.state.value(self.grid.nodes[i], w)), float)


def _poly_eval(entry, x):
    shift, scale, coeffs = entry
    return np.polynomial.polynomial.polyval((np.asarray(x, float) - shift) / scale,
                                            coeffs)


def _check_apriori(spec: BrownianBsdeSpec, y_sup: float, diagnostics: dict):
    bound = spec.apriori_bound()
    diagnostics["y_sup"] = y_sup
    diagnostics["apriori_bound"] = bound
    if math.isfinite(bound) and y_sup > bound * (1.0 + 1e-9) + 1e-12:
        raise RuntimeError(
            f"solution sup {y_sup:.6g} exceeds the a-priori bound {bound:.6g}; "
            f"declared caps are inconsistent with the data")


def _picard(spec: BrownianBsdeSpec, t: float, x, e, z, diagnostics: dict):
    """Resolve y = e + f(t, x, y, z) dt, explicit first, then fixed point."""
    dt = spec.grid.dt
    y = e + spec.f(t, x, e, z) * dt
    if spec.driver_class == "zero":
        return e
    its = 1
    while its < PICARD_CAP:
        y_new = e + spec.f(t, x, y, z) * dt
        gap = float(np.max(np.abs(y_new - y))) if np.size(y_new) else 0.0
        y = y_new
        its += 1
        if gap <= PICARD_TOL:
            break
    diagnostics["picard_max_iters"] = max(diagnostics.get("picard_max_iters", 0), its)
    return y


def solve_tree(spec: BrownianBsdeSpec) -> BsdeSolution:
    """Binomial-lattice backward recursion; deterministic oracle backend.

    The y-update is implicit through the Picard loop, so values along
    +-sqrt(dt) paths satisfy the discrete backward equation to PICARD_TOL
    per step rather than O(dt); residual checks lean on that.
    """
    grid = spec.grid
    L = max(spec.lipschitz_y, spec.lipschitz_z)
    if spec.driver_class not in ("zero",) and L > 0.0 and grid.dt > 1.0 / (2.0 * L):
        raise ValueError(
            f"dt = {grid.dt:.6g} violates the monotone-step guard "
            f"1/(2L) = {1.0 / (2 * L):.6g}; refine the grid")
    sq = math.sqrt(grid.dt)
    diagnostics: dict = {}
    y_nodes: dict = {}
    z_nodes: dict = {}
    y = spec.terminal_values(spec.state.value(grid.T, lattice_states(grid, grid.M)))
    y_nodes[grid.M] = y
    y_sup = float(np.max(np.abs(y))) if y.size else 0.0
    for i in range(grid.M - 1, spec.start_index - 1, -1):
        up, dn = y[1:], y[:-1]
        e = 0.5 * (up + dn)
        z = (up - dn) / (2.0 * sq)
        x = spec.state.value(grid.nodes[i], lattice_states(grid, i))
        y = _picard(spec, grid.nodes[i], x, e, z, diagnostics)
        y_nodes[i] = y
        z_nodes[i] = z
        y_sup = max(y_sup, float(np.max(np.abs(y))))
    diagnostics["z_sup"] = max(
        (float(np.max(np.abs(v))) for v in z_nodes.values()), default=0.0)
    _check_apriori(spec, y_sup, diagnostics)
    return BsdeSolution(backend="tree", grid=grid, start_index=spec.start_index,
                        state=spec.state, y_nodes=y_nodes, z_nodes=z_nodes,
                        diagnostics=diagnostics)


def solve_lsmc(spec: BrownianBsdeSpec, batch: BrownianBatch,
               degree: int = 3) -> BsdeSolution:
    """Backward Euler with polynomial least-squares projections.

    Conditional expectations are projections of the next-step value on
    polynomials in the state up to `degree`; the gain Z comes from the
    dW-weighted projection divided by dt. Nodes where the state is
    degenerate across paths (the root) use the plain mean.

    Fitted values are clipped at the spec's a-priori bound: the exact
    conditional expectation of bounded data respects it, so anything
    outside is projection error (polynomial tails under a discontinuous
    terminal, say). The clip is what makes the bound assertion meaningful
    away from the tree; the clipped fraction lands in the diagnostics.
    """
    grid = spec.grid
    if batch.grid != grid:
        raise ValueError("batch and spec must share one time grid")
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    dt = grid.dt
    bound = spec.apriori_bound()
    clip_at = bound if math.isfinite(bound) else None
    clipped = 0
    total = 0
    diagnostics: dict = {"condition_numbers": []}
    y_poly: dict = {}
    z_poly: dict = {}

    x_T = spec.state.value(grid.T, batch.levels[:, grid.M])
    y = spec.terminal_values(x_T)
    y_sup = float(np.max(np.abs(y)))
    shift_T, scale_T = float(np.mean(x_T)), float(np.std(x_T))
    if scale_T < 1e-12:
        y_poly[grid.M] = (shift_T, 1.0, np.array([float(np.mean(y))]))
    else:
        xs_T = (x_T - shift_T) / scale_T
        design_T = np.polynomial.polynomial.polyvander(xs_T, degree)
        y_poly[grid.M] = (shift_T, scale_T,
                          np.linalg.lstsq(design_T, y, rcond=None)[0])
    for i in range(grid.M - 1, spec.start_index - 1, -1):
        w_i = batch.levels[:, i]
        x_i = spec.state.value(grid.nodes[i], w_i)
        dw = batch.increments[:, i]
        shift = float(np.mean(x_i))
        scale = float(np.std(x_i))
        if scale < 1e-12:
            e = np.full_like(y, np.mean(y))
            z = np.full_like(y, np.mean(y * dw) / dt)
            y_new = _picard(spec, grid.nodes[i], x_i, e, z, diagnostics)
            if clip_at is not None:
                np.clip(y_new, -clip_at, clip_at, out=y_new)
            y_poly[i] = (shift, 1.0, np.array([float(np.mean(y_new))]))
            z_poly[i] = (shift, 1.0, np.array([float(z[0])]))
        else:
            xs = (x_i - shift) / scale
            design = np.polynomial.polynomial.polyvander(xs, degree)
            coeff_y, _, rank, sv = np.linalg.lstsq(design, y, rcond=None)
            coeff_z, _, _, _ = np.linalg.lstsq(design, y * dw / dt, rcond=None)
            cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
            diagnostics["condition_numbers"].append(cond)
            if rank < degree + 1:
                raise RuntimeError(
                    f"rank-deficient regression at node {i}: rank {rank} of "
                    f"{degree + 1}, condition number {cond:.3g}")
            e = design @ coeff_y
            z = design @ coeff_z
            if clip_at is not None:
                clipped += int(np.count_nonzero(np.abs(e) > clip_at))
                total += e.size
                np.clip(e, -clip_at, clip_at, out=e)
            y_new = _picard(spec, grid.nodes[i], x_i, e, z, diagnostics)
            if clip_at is not None:
                np.clip(y_new, -clip_at, clip_at, out=y_new)
            # store the value map as the projection of the post-driver value
            y_poly[i] = (shift, scale,
                         np.linalg.lstsq(design, y_new, rcond=None)[0])
            z_poly[i] = (shift, scale, coeff_z)
        y = y_new
        y_sup = max(y_sup, float(np.max(np.abs(y))))
    diagnostics["max_condition_number"] = max(
        diagnostics["condition_numbers"], default=1.0)
    diagnostics["clip_fraction"] = clipped / total if total else 0.0
    _check_apriori(spec, y_sup, diagnostics)
    return BsdeSolution(backend="lsmc", grid=grid, start_index=spec.start_index,
                        state=spec.state, y_poly=y_poly, z_poly=z_poly,
                        value_bound=bound,
                        diagnostics=diagnostics)


def solve_linear(spec: BrownianBsdeSpec, a=0.0, b: float = 0.0, c=None,
                 gh_nodes: int = 128) -> BsdeSolution:
    """Closed form for the affine driver f = a(t) y + b z + c(t, X_t).

    Y_t = E[xi Gamma_{t,T} + integral of c_s Gamma_{t,s} ds | F_t] with the
    exponential adjoint Gamma built from (a, b). a may depend on time; b must
    be a constant (time-dependent b would need the joint law of (W, int b dW)
    and nothing here requires it); c may depend on (t, X_t). Gaussian
    integrals use Gauss-Hermite quadrature with gh_nodes points; the time
    integral of the c-term uses the trapezoid rule on the grid.

    Z is scale * dY/dx by central difference.
    """
    if callable(b):
        raise ValueError("b must be a constant; route time-varying b to solve_lsmc")
    if spec.driver_class == "quadratic_z":
        raise ValueError("linear backend cannot take a quadratic driver")
    grid = spec.grid
    nodes = grid.nodes
    a_fn = a if callable(a) else (lambda t, _a=float(a): np.full_like(np.asarray(t, float), _a))
    a_vals = np.asarray(a_fn(nodes), dtype=float)
    # A[i] = integral of a over [0, t_i], trapezoid
    A = np.concatenate([[0.0], np.cumsum(0.5 * grid.dt * (a_vals[1:] + a_vals[:-1]))])
    gh_x, gh_w = np.polynomial.hermite.hermgauss(gh_nodes)
    b = float(b)
    state = spec.state

    def expect(i: int, j: int, w, fn) -> np.ndarray:
        """E[fn(X_{t_j}) Gamma_{t_i, t_j} | W_{t_i} = w], vectorized in w."""
        w = np.asarray(w, dtype=float)
        span = nodes[j] - nodes[i]
        if span <= 0.0:
            return fn(state.value(nodes[i], w)) * math.exp(A[j] - A[i])
        sd = math.sqrt(span)
        dw = math.sqrt(2.0) * sd * gh_x
        gamma = np.exp(A[j] - A[i] + b * dw - 0.5 * b * b * span)
        x = state.value(nodes[j], w[:, None] + dw[None, :])
        vals = fn(x) * gamma[None, :]
        return (vals @ gh_w) / math.sqrt(math.pi)

    def y_of_node(i: int, w) -> np.ndarray:
        out = expect(i, grid.M, w, spec.terminal_values)
        if c is not None:
            c_fn = c if callable(c) else (lambda t, x, _c=float(c): np.full_like(x, _c))
            vals = np.stack([expect(i, j, w, lambda x, _j=j: c_fn(nodes[_j], x))
                             for j in range(i, grid.M + 1)], axis=-1)
            wts = np.full(grid.M + 1 - i, grid.dt)
            wts[0] = wts[-1] = 0.5 * grid.dt
            if len(wts) == 1:
                wts[0] = 0.0
            out = out + vals @ wts
        return out

    def y_fn(t, x):
        i = grid.index_at_or_after(t)
        w = (np.asarray(x, float) - state.x0 - state.drift * t) / state.scale
        return y_of_node(i, w)

    def z_fn(t, x):
        i = grid.index_at_or_after(t)
        w = (np.asarray(x, float) - state.x0 - state.drift * t) / state.scale
        h = 1e-5 * max(1.0, math.sqrt(grid.dt))
        return state.scale * (y_of_node(i, w + h) - y_of_node(i, w - h)) / (2.0 * h)

    diagnostics = {"gh_nodes": gh_nodes}
    sol = BsdeSolution(backend="linear", grid=grid, start_index=spec.start_index,
                       state=state, y_fn=lambda t, x: y_fn(t, x),
                       z_fn=lambda t, x: z_fn(t, x), diagnostics=diagnostics)
    return sol


def truncate_quadratic(spec: BrownianBsdeSpec, C: float,
                       z_range: float) -> BrownianBsdeSpec:
    """Lipschitz surrogate for a z-quadratic driver.

    The gain argument is clamped into [-z_range, z_range] and the output into
    the growth envelope +-C(1 + |y| + z^2). Inside the region the solution
    actually visits the surrogate coincides with the original driver; whether
    it stayed inside is a post-hoc check against the solve's z_sup
    diagnostic.
    """
    if spec.driver_class != "quadratic_z":
        raise ValueError("only quadratic_z drivers are truncated")
    if C <= 0.0 or z_range <= 0.0:
        raise ValueError("C and z_range must be positive")
    inner = spec.driver

    def clamped(t, x, y, z):
        zc = np.clip(z, -z_range, z_range)
        env = C * (1.0 + np.abs(y) + zc * zc)
        return np.clip(inner(t, x, y, zc), -env, env)

    return replace(
        spec, driver=clamped, driver_class="lipschitz",
        lipschitz_y=C, lipschitz_z=2.0 * C * z_range,
        driver_bound0=C if spec.driver_bound0 is None else spec.driver_bound0)
