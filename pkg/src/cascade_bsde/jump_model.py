"""Joint law of the marked jump times: marginals, intensities, sampling.

A `DensityModel` holds the joint density of the ordered jump times
(tau_1 <= ... <= tau_n) and their marks, with respect to Lebesgue measure in
time and the mark grid's quadrature measure. Everything else is derived from
it by quadrature on the shared time grid:

  * joint marginals of the first k pairs,
  * survival marginals gamma^k_t (first k pairs realized, next jump after t),
  * the next-jump intensity as a ratio of consecutive survival marginals,
  * sequential inverse-CDF sampling of full jump scenarios,
  * a Monte Carlo balance check of the jump measure against its compensator.

Densities are deterministic (they do not look at the Brownian path), so the
conditional density at time t is constant in t and every quantity here is a
plain deterministic function of its arguments. Mass beyond the grid horizon
is carried analytically by an optional tail hook and stands for "the next
jump never happens before the horizon"; sampled times in that event are +inf.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .grids import MarkGrid, TimeGrid
from .rng import uniform_matrix

# floor under the denominator of the intensity ratio: below this the state is
# outside the effective support and the intensity is reported as 0 (flagged)
EPS_GAMMA = 1e-12

# entries in the full (time x mark)^n tensor above this are refused: the
# cascade is meant for a small number of jumps at desk scale
_MAX_TENSOR_ENTRIES = 50_000_000


@dataclass(frozen=True)
class MarkedJumpSample:
    """Realized jump scenarios; arrays are (n,) for one draw, (paths, n)
    for a batch.

    times[..., k] is +inf when the (k+1)-th jump does not happen before the
    horizon; the matching mark entry is NaN (index -1).
    """

    times: np.ndarray
    marks: np.ndarray
    mark_idx: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if np.any(np.diff(t) < 0.0):
            raise ValueError("jump times must be nondecreasing")

    def count_before(self, t: float) -> int:
        return int(np.sum(self.times <= t))


class DensityModel:
    """Joint density of n marked jump times on the shared grids.

    Parameters
    ==========
    n: int
        number of jumps.
    time_grid: TimeGrid
        quadrature grid for the time coordinates; its horizon T is also the
        support horizon beyond which mass is handled by `tail_fn`.
    mark_grid: MarkGrid
        quadrature rule on the mark space.
    density_fn: callable (theta: (B, n), mark_idx: (B, n) int) -> (B,)
        joint density, vectorized, zero off the ordered support.
    tail_fn: callable (k, theta: (B, k), mark_idx: (B, k) int) -> (B,) or None
        joint marginal of the first k pairs integrated over the (k+1)-th
        time beyond the horizon (marks of the (k+1)-th jump summed out).
        None means all mass lives on the grid (tabulated models).
    intensity_bound: float or None
        declared bound on the total intensity over marks; checked by the
        invariant suite. None skips the declaration.
    """

    def __init__(self, n: int, time_grid: TimeGrid, mark_grid: MarkGrid,
                 density_fn: Callable, tail_fn: Callable | None = None,
                 intensity_bound: float | None = None, name: str = "custom"):
        if n < 1:
            raise ValueError(f"need at least one jump, got n={n}")
        entries = ((time_grid.M + 1) * mark_grid.size) ** n
        if entries > _MAX_TENSOR_ENTRIES:
            raise ValueError(
                f"grid tensor would hold {entries} entries; reduce M, the "
                f"mark count, or n")
        self.n = n
        self.time_grid = time_grid
        self.mark_grid = mark_grid
        self.density_fn = density_fn
        self.tail_fn = tail_fn
        self.intensity_bound = intensity_bound
        self.name = name
        self._cache: dict = {}

    @property
    def support_horizon(self) -> float:
        return self.time_grid.T

    def density(self, theta, marks, *, marks_are_indices: bool = False) -> np.ndarray:
        """Joint density at (theta, marks); marks snap to the grid."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if marks_are_indices:
            idx = np.atleast_2d(np.asarray(marks, dtype=int))
        else:
            marks = np.atleast_2d(np.asarray(marks, dtype=float))
            idx = np.argmin(
                np.abs(marks[..., None] - self.mark_grid.points), axis=-1)
        if theta.shape[1] != self.n or idx.shape != theta.shape:
            raise ValueError("theta and marks must have n columns each")
        return np.asarray(self.density_fn(theta, idx), dtype=float)

    def tail(self, k: int, theta, mark_idx) -> np.ndarray:
        theta = _as_batch(theta, k)
        mark_idx = _as_batch(mark_idx, k, dtype=int)
        if self.tail_fn is None:
            return np.zeros(theta.shape[0])
        return np.asarray(self.tail_fn(k, theta, mark_idx), dtype=float)


# ---------------------------------------------------------------------------
# grid tables
# ---------------------------------------------------------------------------

def _as_batch(arr, k: int, dtype=float) -> np.ndarray:
    """Coerce a prefix argument to shape (B, k); k = 0 keeps the row count."""
    a = np.asarray(arr, dtype=dtype)
    if a.ndim == 2:
        if a.shape[1] != k:
            raise ValueError(f"prefix batch must have {k} columns, got {a.shape}")
        return a
    if k == 0:
        return a.reshape(1, 0)
    return a.reshape(-1, k)


def _reverse_cumtrapz(values: np.ndarray, dt: float) -> np.ndarray:
    """out[..., i] = trapezoid integral of values[..., i:] on a uniform grid."""
    cells = 0.5 * dt * (values[..., 1:] + values[..., :-1])
    out = np.zeros_like(values)
    out[..., :-1] = np.flip(np.cumsum(np.flip(cells, -1), -1), -1)
    return out


def _tables(model: DensityModel) -> dict:
    """Lazily built grid tensors.

    J[k]: joint marginal of the first k pairs on the grid, axes
          (theta_1..theta_k, e_1..e_k); J[0] is the total mass (a scalar,
          1 up to quadrature error).
    S[k]: survival marginal gamma^k at every node, axes (prefix..., t);
          defined for k < n.
    """
    if "J" in model._cache:
        return model._cache
    G = model.time_grid.M + 1
    nE = model.mark_grid.size
    n = model.n
    nodes = model.time_grid.nodes
    w = model.mark_grid.weights

    # full-tuple density tensor
    mesh = np.meshgrid(*([nodes] * n), *([np.arange(nE)] * n), indexing="ij")
    theta_pts = np.stack([m.ravel() for m in mesh[:n]], axis=1)
    mark_pts = np.stack([m.ravel() for m in mesh[n:]], axis=1).astype(int)
    J = {n: model.density_fn(theta_pts, mark_pts).reshape((G,) * n + (nE,) * n)}
    S = {}

    for k in range(n - 1, -1, -1):
        # contract the (k+1)-th mark, move the (k+1)-th time axis last
        integrand = np.moveaxis(J[k + 1] @ w, k, -1)
        rc = _reverse_cumtrapz(integrand, model.time_grid.dt)
        if model.tail_fn is None:
            tail = np.zeros(integrand.shape[:-1])
        elif k == 0:
            tail = model.tail_fn(0, np.empty((1, 0)), np.empty((1, 0), int))[0]
        else:
            pmesh = np.meshgrid(*([nodes] * k), *([np.arange(nE)] * k),
                                indexing="ij")
            tp = np.stack([m.ravel() for m in pmesh[:k]], axis=1)
            mp = np.stack([m.ravel() for m in pmesh[k:]], axis=1).astype(int)
            tail = model.tail_fn(k, tp, mp).reshape(integrand.shape[:-1])
            if k >= 2:
                # the analytic tail need not vanish on unordered prefixes
                tail = tail * _ordered_mask(G, nE, k)
        S[k] = rc + np.asarray(tail)[..., None]
        if k == 0:
            J[0] = float(S[0][0])
        else:
            # gamma^k at t = theta_k is the plain joint marginal
            ik = np.arange(G).reshape((1,) * (k - 1) + (G,) + (1,) * k + (1,))
            idx = np.broadcast_to(ik, S[k].shape[:-1] + (1,))
            J[k] = np.take_along_axis(S[k], idx, axis=-1)[..., 0]
            if k >= 2:
                J[k] = J[k] * _ordered_mask(G, nE, k)
                S[k] = S[k] * _ordered_mask(G, nE, k)[..., None]
            # below the diagonal (t < theta_k) the survival marginal
            # saturates at the joint marginal; overwriting removes the
            # half-cell trapezoid artifact at the ordering kink
            below = np.arange(G).reshape((1,) * (2 * k) + (G,)) < idx
            S[k] = np.where(below, J[k][..., None], S[k])

    model._cache["J"] = J
    model._cache["S"] = S
    return model._cache


def _ordered_mask(G: int, nE: int, k: int) -> np.ndarray:
    """Boolean tensor over (time, mark)^k prefixes, true when times ordered."""
    shape = (G,) * k + (nE,) * k
    mask = np.ones(shape, dtype=bool)
    for a in range(k - 1):
        ia = np.arange(G).reshape((1,) * a + (G,) + (1,) * (2 * k - a - 1))
        ib = np.arange(G).reshape((1,) * (a + 1) + (G,) + (1,) * (2 * k - a - 2))
        mask &= np.broadcast_to(ia <= ib, shape)
    return mask


def _joint_interpolator(model: DensityModel, k: int, mark_idx_combo: tuple):
    """Multilinear interpolator of J[k] in the time coordinates, one per
    mark combination. Off-grid prefixes (realized jump times) go through
    this; the error is the same O(dtheta^2) as the quadrature itself."""
    key = ("interp", k, mark_idx_combo)
    if key not in model._cache:
        tabs = _tables(model)
        nodes = model.time_grid.nodes
        block = tabs["J"][k][(...,) + mark_idx_combo]
        model._cache[key] = RegularGridInterpolator(
            (nodes,) * k, block, bounds_error=False, fill_value=0.0)
    return model._cache[key]


def joint_marginal(model: DensityModel, k: int, theta, mark_idx) -> np.ndarray:
    """Joint marginal density of the first k pairs at arbitrary points."""
    theta = _as_batch(theta, k)
    mark_idx = _as_batch(mark_idx, k, dtype=int)
    if k == model.n:
        return model.density_fn(theta, mark_idx)
    if k == 0:
        return np.full(theta.shape[0], _tables(model)["J"][0])
    out = np.empty(theta.shape[0])
    combos, inverse = np.unique(mark_idx, axis=0, return_inverse=True)
    for c, combo in enumerate(combos):
        sel = inverse == c
        out[sel] = _joint_interpolator(model, k, tuple(combo))(theta[sel])
    return out


def survival_curve(model: DensityModel, k: int, theta, mark_idx) -> np.ndarray:
    """gamma^k at every time node, for a batch of (possibly off-grid)
    prefixes: out[b, i] = gamma^k_{t_i}(theta[b], marks[b]).

    For t below theta_k the value saturates at the joint marginal.
    """
    theta = _as_batch(theta, k)
    mark_idx = _as_batch(mark_idx, k, dtype=int)
    B = theta.shape[0]
    G = model.time_grid.M + 1
    nodes = model.time_grid.nodes
    if k == model.n:
        raise ValueError("gamma^n is the density itself; no curve to build")
    if k == 0:
        return np.broadcast_to(_tables(model)["S"][0], (B, G)).copy()
    nE = model.mark_grid.size
    # integrand h[b, u] = sum_e w_e * J_{k+1}(prefix_b + (u, e))
    tt = np.concatenate(
        [np.repeat(theta, G * nE, axis=0),
         np.tile(np.repeat(nodes, nE), B)[:, None]], axis=1)
    mm = np.concatenate(
        [np.repeat(mark_idx, G * nE, axis=0),
         np.tile(np.arange(nE), B * G)[:, None]], axis=1)
    h = joint_marginal(model, k + 1, tt, mm).reshape(B, G, nE)
    h = h @ model.mark_grid.weights
    # ordering kills u < theta_k in the exact density; enforce it here so
    # interpolation noise below the diagonal cannot leak into the integral
    h[nodes[None, :] < theta[:, -1:] - 1e-12] = 0.0
    return _reverse_cumtrapz(h, model.time_grid.dt) + model.tail(k, theta, mark_idx)[:, None]


def _survival_at(model: DensityModel, k: int, t, theta, mark_idx) -> np.ndarray:
    """gamma^k_t for a batch, t per row (linear interpolation between nodes)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    curve = survival_curve(model, k, theta, mark_idx)
    pos = np.clip(t / model.time_grid.dt, 0.0, model.time_grid.M)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, model.time_grid.M)
    frac = pos - lo
    rows = np.arange(curve.shape[0])
    return (1.0 - frac) * curve[rows, lo] + frac * curve[rows, hi]


# ---------------------------------------------------------------------------
# marginals and intensity
# ---------------------------------------------------------------------------

def _validate_prefix(model: DensityModel, k: int, theta, marks) -> tuple:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    marks = np.asarray(marks, dtype=float).reshape(-1)
    if theta.shape != (k,) or marks.shape != (k,):
        raise ValueError(f"prefix must hold exactly {k} times and {k} marks")
    if np.any(np.diff(theta) < 0.0):
        raise ValueError("prefix times must be nondecreasing")
    idx = np.array([model.mark_grid.index_of(e) for e in marks], dtype=int)
    return theta, idx


def marginal_gamma(model: DensityModel, k: int, t: float,
                   theta=(), marks=()) -> float:
    """Survival marginal gamma^k_t: density of the first k realized pairs
    joint with {the (k+1)-th jump happens after t}. k = n returns the joint
    density itself."""
    if not 0 <= k <= model.n:
        raise ValueError(f"k must lie in 0..{model.n}, got {k}")
    if t < 0.0:
        raise ValueError(f"t must be nonnegative, got {t}")
    theta, idx = _validate_prefix(model, k, theta, marks)
    if k == model.n:
        return float(model.density_fn(theta[None, :], idx[None, :])[0])
    return float(_survival_at(model, k, [t], theta[None, :], idx[None, :])[0])


def intensity(model: DensityModel, k: int, t: float, e: float,
              theta=(), marks=(), with_flag: bool = False):
    """Next-jump intensity: the rate at which the k-th jump arrives with
    mark e at time t, given the first k-1 realized pairs. Ratio of the
    k-pair survival marginal on its diagonal to the (k-1)-pair one; when the
    denominator is below EPS_GAMMA the state has left the effective support
    and the intensity is reported as 0 (flagged)."""
    if not 1 <= k <= model.n:
        raise ValueError(f"k must lie in 1..{model.n}, got {k}")
    theta, idx = _validate_prefix(model, k - 1, theta, marks)
    if k >= 2 and t < theta[-1]:
        raise ValueError("t must not precede the last realized jump")
    e_idx = model.mark_grid.index_of(e)
    num_theta = np.append(theta, t)[None, :]
    num_idx = np.append(idx, e_idx)[None, :]
    if k == model.n:
        num = float(model.density_fn(num_theta, num_idx)[0])
    else:
        num = float(_survival_at(model, k, [t], num_theta, num_idx)[0])
    den = float(_survival_at(model, k - 1, [t], theta[None, :], idx[None, :])[0])
    flagged = den < EPS_GAMMA
    lam = 0.0 if flagged else max(num, 0.0) / den
    return (lam, flagged) if with_flag else lam


def intensity_curve(model: DensityModel, k: int, theta=(), marks=()) -> np.ndarray:
    """(time node, mark) table of the k-th jump intensity for one prefix.

    Entries where the denominator is floored are 0. Prefix times may be
    off-grid (realized jump times)."""
    theta, idx = _validate_prefix(model, k - 1, theta, marks)
    G = model.time_grid.M + 1
    nE = model.mark_grid.size
    nodes = model.time_grid.nodes
    if k == 1:
        den = _tables(model)["S"][0]
    else:
        den = survival_curve(model, k - 1, theta[None, :], idx[None, :])[0]
    tt = np.concatenate(
        [np.tile(theta, (G * nE, 1)), np.repeat(nodes, nE)[:, None]], axis=1)
    mm = np.concatenate(
        [np.tile(idx, (G * nE, 1)), np.tile(np.arange(nE), G)[:, None]], axis=1)
    if k == model.n:
        num = model.density_fn(tt, mm).reshape(G, nE)
    else:
        num = np.empty((G, nE))
        for j in range(nE):
            sel = slice(j, None, nE)
            num[:, j] = np.diagonal(
                survival_curve(model, k, tt[sel], mm[sel]))
    lam = np.zeros((G, nE))
    ok = den >= EPS_GAMMA
    lam[ok] = np.maximum(num[ok], 0.0) / den[ok, None]
    if k >= 2:
        lam[nodes < theta[-1] - 1e-12] = 0.0
    return lam


class IntensityTable:
    """Per-level intensity curves for grid prefixes, built lazily.

    curve(k, theta_idx, mark_idx) returns the (time node, mark) intensity
    table of the k-th jump for the prefix at the given grid indices. Used by
    drivers that integrate the compensator over marks.
    """

    def __init__(self, model: DensityModel):
        self.model = model
        self._curves: dict = {}

    def curve(self, k: int, theta_idx: tuple = (), mark_idx: tuple = ()) -> np.ndarray:
        key = (k, tuple(theta_idx), tuple(mark_idx))
        if key not in self._curves:
            nodes = self.model.time_grid.nodes
            pts = self.model.mark_grid.points
            self._curves[key] = intensity_curve(
                self.model, k,
                theta=[nodes[i] for i in theta_idx],
                marks=[pts[j] for j in mark_idx])
        return self._curves[key]

    def total_sup(self, k: int, theta_idx: tuple = (), mark_idx: tuple = ()) -> float:
        """Largest total intensity (integrated over marks) on the grid."""
        lam = self.curve(k, theta_idx, mark_idx)
        return float(np.max(lam @ self.model.mark_grid.weights))


def normalization_defect(model: DensityModel) -> float:
    """|total quadrature mass - 1|; the normalization check."""
    return abs(_tables(model)["J"][0] - 1.0)


def tower_defect(model: DensityModel, k: int, t_idx: int) -> float:
    """Largest violation of the marginal consistency identity at node t_idx:
    integrating gamma^k over its k-th time beyond t must give gamma^{k-1}."""
    if not 1 <= k <= model.n:
        raise ValueError(f"k must lie in 1..{model.n}")
    tabs = _tables(model)
    G = model.time_grid.M + 1
    nE = model.mark_grid.size
    dt = model.time_grid.dt
    w = model.mark_grid.weights
    if k == model.n:
        gam_k = tabs["J"][model.n]
    else:
        gam_k = tabs["S"][k][..., t_idx]
    # contract last mark, move the k-th time axis to the end, integrate it
    # over (t, horizon] and add the beyond-horizon remainder
    integ = np.moveaxis(gam_k @ w, k - 1, -1)
    integ = np.where(np.arange(G) >= t_idx, integ, 0.0)
    grid_part = _reverse_cumtrapz(integ, dt)[..., t_idx]
    if k == 1:
        tail = model.tail(0, np.empty((1, 0)), np.empty((1, 0), int))[0]
        rhs = grid_part + tail
        lhs = tabs["S"][0][t_idx]
        return float(abs(rhs - lhs))
    pm = np.meshgrid(*([model.time_grid.nodes] * (k - 1)),
                     *([np.arange(nE)] * (k - 1)), indexing="ij")
    tp = np.stack([m.ravel() for m in pm[:k - 1]], axis=1)
    mp = np.stack([m.ravel() for m in pm[k - 1:]], axis=1).astype(int)
    tail = model.tail(k - 1, tp, mp).reshape(grid_part.shape)
    tail = tail * _ordered_mask(G, nE, k - 1) if k - 1 >= 2 else tail
    rhs = grid_part + tail
    lhs = tabs["S"][k - 1][..., t_idx]
    # only prefixes fully realized by t take part in the identity
    valid = _prefix_before(G, nE, k - 1, t_idx)
    return float(np.max(np.abs(rhs - lhs)[valid]))


def _prefix_before(G: int, nE: int, k: int, t_idx: int) -> np.ndarray:
    shape = (G,) * k + (nE,) * k
    mask = _ordered_mask(G, nE, k)
    for a in range(k):
        ia = np.arange(G).reshape((1,) * a + (G,) + (1,) * (2 * k - a - 1))
        mask &= np.broadcast_to(ia <= t_idx, shape)
    return mask


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _conditional_step(model: DensityModel, k: int, theta, mark_idx,
                      u_time: np.ndarray, u_mark: np.ndarray):
    """Inverse-CDF draw of the (k+1)-th pair given the first k, vectorized
    over a batch. Returns (times, mark indices); +inf / -1 past the horizon."""
    theta = _as_batch(theta, k)
    mark_idx = _as_batch(mark_idx, k, dtype=int)
    B = theta.shape[0]
    G = model.time_grid.M + 1
    nE = model.mark_grid.size
    nodes = model.time_grid.nodes
    dt = model.time_grid.dt
    w = model.mark_grid.weights

    # joint marginal of prefix + (u, e) on the time grid, per mark. With an
    # empty prefix every path shares one table; keep it single-row then.
    Bh = 1 if k == 0 else B
    tt = np.concatenate(
        [np.repeat(theta[:Bh], G * nE, axis=0),
         np.tile(np.repeat(nodes, nE), Bh)[:, None]], axis=1)
    mm = np.concatenate(
        [np.repeat(mark_idx[:Bh], G * nE, axis=0),
         np.tile(np.arange(nE), Bh * G)[:, None]], axis=1)
    h = joint_marginal(model, k + 1, tt, mm).reshape(Bh, G, nE)
    h = np.maximum(h, 0.0)
    if k > 0:
        h[nodes[None, :] < theta[:, -1:] - 1e-12, :] = 0.0
    h_time = h @ w
    cells = 0.5 * dt * (h_time[:, 1:] + h_time[:, :-1])
    cdf = np.cumsum(cells, axis=1)
    grid_mass = np.broadcast_to(cdf[:, -1], (B,)) if Bh == 1 else cdf[:, -1]
    tail = model.tail(k, theta, mark_idx)
    total = grid_mass + tail
    if np.any(total <= 0.0):
        bad = int(np.argmax(total <= 0.0))
        raise RuntimeError(
            f"no conditional mass left at prefix {theta[bad]}: the scenario "
            f"walked out of the model support")

    target = u_time * total
    beyond = target > grid_mass
    cell = np.sum(cdf < target[:, None], axis=1)
    cell = np.minimum(cell, G - 2)
    row = np.zeros(B, dtype=int) if Bh == 1 else np.arange(B)
    prev = np.where(cell > 0, cdf[row, np.maximum(cell - 1, 0)], 0.0)
    resid = np.maximum(target - prev, 0.0)
    a = h_time[row, cell]
    b = (h_time[row, cell + 1] - a) / dt
    # the in-cell density is a + b*x; x = 2r / (a + sqrt(a^2 + 2br)) inverts
    # its quadratic CDF without cancellation, for any sign of b
    disc = np.sqrt(np.maximum(a * a + 2.0 * b * resid, 0.0))
    denom = a + disc
    x = np.where(denom > 0.0, 2.0 * resid / np.where(denom > 0, denom, 1.0), 0.0)
    x = np.clip(x, 0.0, dt)
    times = nodes[cell] + x
    if k > 0:
        # inversion in the cell straddling theta_k can land just before it
        times = np.maximum(times, theta[:, -1])
    times[beyond] = np.inf

    # mark, conditional on the drawn time: linear interpolation of the
    # per-mark joint marginal between the bracketing nodes
    frac = (x / dt)[:, None]
    pmark = ((1.0 - frac) * h[row, cell, :] + frac * h[row, cell + 1, :]) * w[None, :]
    psum = np.sum(pmark, axis=1, keepdims=True)
    flat = psum[:, 0] <= 0.0
    pmark[flat] = w[None, :]
    psum[flat, 0] = np.sum(w)
    pcdf = np.cumsum(pmark, axis=1)
    marks = np.sum(pcdf < (u_mark * psum[:, 0])[:, None], axis=1)
    marks = np.minimum(marks, nE - 1)
    marks[beyond] = -1
    return times, marks


def sample_jump_batch(model: DensityModel, paths: int, seed: int,
                      chunk: int = 8192):
    """Sequential inverse-CDF sampling of full scenarios.

    Returns a MarkedJumpSample holding (paths, n) arrays; +inf and
    NaN / -1 sentinel entries mark jumps that never happen before the
    horizon. Uniform draws come from counter-based per-path streams, so the
    output is independent of chunking and thread count.
    """
    n = model.n
    u = uniform_matrix(seed, paths, 2 * n)
    times = np.full((paths, n), np.inf)
    mark_idx = np.full((paths, n), -1, dtype=int)
    for k in range(n):
        alive = np.flatnonzero(np.isfinite(times[:, k - 1])) if k else np.arange(paths)
        for lo in range(0, len(alive), chunk):
            sel = alive[lo:lo + chunk]
            t_k, m_k = _conditional_step(
                model, k, times[sel, :k], mark_idx[sel, :k],
                u[sel, 2 * k], u[sel, 2 * k + 1])
            times[sel, k] = t_k
            mark_idx[sel, k] = m_k
    marks = np.where(mark_idx >= 0,
                     model.mark_grid.points[np.maximum(mark_idx, 0)], np.nan)
    return MarkedJumpSample(times=times, marks=marks, mark_idx=mark_idx)


def sample_jumps(model: DensityModel, rng: np.random.Generator) -> MarkedJumpSample:
    """One scenario from an explicit generator (single-draw counterpart of
    sample_jump_batch)."""
    u = rng.random(2 * model.n)
    times = np.full(model.n, np.inf)
    mark_idx = np.full(model.n, -1, dtype=int)
    for k in range(model.n):
        if k and not np.isfinite(times[k - 1]):
            break
        t_k, m_k = _conditional_step(
            model, k, times[None, :k], mark_idx[None, :k],
            u[2 * k:2 * k + 1], u[2 * k + 1:2 * k + 2])
        times[k] = t_k[0]
        mark_idx[k] = m_k[0]
    marks = np.where(mark_idx >= 0,
                     model.mark_grid.points[np.maximum(mark_idx, 0)], np.nan)
    return MarkedJumpSample(times=times, marks=marks, mark_idx=mark_idx)


# ---------------------------------------------------------------------------
# compensator balance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompensatorReport:
    """Two Monte Carlo estimates of the same expected jump functional:
    summed over realized jumps (lhs) and integrated against the intensity
    (rhs). They must agree within 3 combined standard errors."""

    lhs: float
    rhs: float
    stderr_lhs: float
    stderr_rhs: float
    paths: int

    @property
    def stderr(self) -> float:
        return float(np.hypot(self.stderr_lhs, self.stderr_rhs))

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)

    def passed(self, sigmas: float = 3.0) -> bool:
        return self.gap <= sigmas * self.stderr + 1e-12


def compensator_check(model: DensityModel, U: Callable, T: float,
                      paths: int, seed: int) -> CompensatorReport:
    """Balance E[sum of U over jumps before T] against
    E[integral of U(t, e) * intensity * mark weight dt].

    U is a vectorized test function of (t, e). The two sides use independent
    scenario batches (seed and seed + 1).
    """
    grid = model.time_grid
    if T > grid.T + 1e-12:
        raise ValueError("T must not exceed the model horizon")
    i_T = grid.index_at_or_after(T)

    # realized-jump side
    batch = sample_jump_batch(model, paths, seed)
    times, marks = batch.times, batch.marks
    hit = np.isfinite(times) & (times <= T)
    vals = np.zeros_like(times)
    if np.any(hit):
        vals[hit] = U(times[hit], marks[hit])
    lhs_per_path = np.sum(vals, axis=1)

    # compensated side on an independent batch. Each grid cell contributes
    # its exact overlap with the active window (tau_k, tau_{k+1}] times the
    # midpoint rate; the cell a jump lands in gets nicked by O(dt), which the
    # stated tolerance absorbs.
    batch2 = sample_jump_batch(model, paths, seed + 1)
    times2, marks2 = batch2.times, batch2.marks
    cell_nodes = grid.nodes[:i_T + 1]
    pts = model.mark_grid.points
    w = model.mark_grid.weights
    u_tab = np.empty((i_T + 1, model.mark_grid.size))
    for j, e in enumerate(pts):
        u_tab[:, j] = U(cell_nodes, np.full_like(cell_nodes, e))
    rhs_per_path = np.zeros(paths)
    lower = cell_nodes[:-1]
    upper = np.minimum(cell_nodes[1:], T)
    for k in range(model.n):
        start = times2[:, k - 1] if k else np.zeros(paths)
        stop = np.minimum(times2[:, k], T)
        active = np.flatnonzero(np.isfinite(start) & (start < T))
        if len(active) == 0:
            continue
        if k == 0:
            g = (u_tab * intensity_curve(model, 1)[:i_T + 1]) @ w
            g_mid = 0.5 * (g[:-1] + g[1:])
            for lo in range(0, len(active), 1 << 16):
                sel = active[lo:lo + (1 << 16)]
                overlap = np.clip(
                    np.minimum(stop[sel, None], upper[None, :]) - lower[None, :],
                    0.0, None)
                rhs_per_path[sel] += overlap @ g_mid
        else:
            for p in active:
                lam = intensity_curve(model, k + 1, theta=times2[p, :k],
                                      marks=marks2[p, :k])[:i_T + 1]
                g = (u_tab * lam) @ w
                g_mid = 0.5 * (g[:-1] + g[1:])
                overlap = np.clip(
                    np.minimum(stop[p], upper) - np.maximum(start[p], lower),
                    0.0, None)
                rhs_per_path[p] += overlap @ g_mid
    lhs = float(np.mean(lhs_per_path))
    rhs = float(np.mean(rhs_per_path))
    se_l = float(np.std(lhs_per_path, ddof=1) / np.sqrt(paths))
    se_r = float(np.std(rhs_per_path, ddof=1) / np.sqrt(paths))
    return CompensatorReport(lhs=lhs, rhs=rhs, stderr_lhs=se_l,
                             stderr_rhs=se_r, paths=paths)


# ---------------------------------------------------------------------------
# built-in models
# ---------------------------------------------------------------------------

def _mark_density(mark_grid: MarkGrid, mark_probs) -> np.ndarray:
    """Per-point density rho with sum_j w_j rho_j = 1."""
    if mark_probs is None:
        p = np.full(mark_grid.size, 1.0 / mark_grid.size)
    else:
        p = np.asarray(mark_probs, dtype=float)
        if p.shape != (mark_grid.size,) or np.any(p < 0.0):
            raise ValueError("mark_probs must be nonnegative, one per point")
        p = p / np.sum(p)
    return p / mark_grid.weights


def exponential_model(time_grid: TimeGrid, mark_grid: MarkGrid, rate: float,
                      mark_probs=None) -> DensityModel:
    """Single jump with an exponential(rate) time and independent mark."""
    if rate <= 0.0:
        raise ValueError(f"rate must be positive, got {rate}")
    rho = _mark_density(mark_grid, mark_probs)
    H = time_grid.T

    def density_fn(theta, idx):
        t1 = theta[:, 0]
        ok = t1 >= 0.0
        return np.where(ok, rate * np.exp(-rate * t1) * rho[idx[:, 0]], 0.0)

    def tail_fn(k, theta, idx):
        if k == 0:
            return np.full(theta.shape[0], np.exp(-rate * H))
        raise ValueError("single-jump model has no deeper tails")

    return DensityModel(1, time_grid, mark_grid, density_fn, tail_fn,
                        intensity_bound=rate * (1.0 + 1e-6),
                        name="exponential")


def product_exponential_model(time_grid: TimeGrid, mark_grid: MarkGrid,
                              rate: float, n: int, mark_probs=None) -> DensityModel:
    """n ordered jumps with exponential(rate) spacings (the first n arrivals
    of a constant-rate stream) and independent marks."""
    if rate <= 0.0:
        raise ValueError(f"rate must be positive, got {rate}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rho = _mark_density(mark_grid, mark_probs)
    H = time_grid.T

    def density_fn(theta, idx):
        ordered = np.all(np.diff(theta, axis=1) >= 0.0, axis=1) & (theta[:, 0] >= 0.0)
        val = rate ** n * np.exp(-rate * theta[:, -1])
        val = val * np.prod(rho[idx], axis=1)
        return np.where(ordered, val, 0.0)

    def tail_fn(k, theta, idx):
        # marginal of the first k pairs, next arrival after the horizon
        if k == 0:
            return np.full(theta.shape[0], np.exp(-rate * H))
        ordered = np.all(np.diff(theta, axis=1) >= 0.0, axis=1) & \
            (theta[:, 0] >= 0.0) & (theta[:, -1] <= H)
        val = rate ** k * np.exp(-rate * H) * np.prod(rho[idx], axis=1)
        return np.where(ordered, val, 0.0)

    return DensityModel(n, time_grid, mark_grid, density_fn, tail_fn,
                        intensity_bound=rate * (1.0 + 1e-6),
                        name="product_exponential")


def tabulated_model(time_grid: TimeGrid, mark_grid: MarkGrid,
                    values: np.ndarray, intensity_bound=None) -> DensityModel:
    """Density given by a tensor over (time node, ...)^n x (mark, ...)^n.

    All mass must live on the grid: there is no analytic tail, so the
    quadrature of `values` has to be 1 up to tolerance (checked by the
    normalization invariant, not here).
    """
    n = values.ndim // 2
    G = time_grid.M + 1
    expect = (G,) * n + (mark_grid.size,) * n
    if values.shape != expect:
        raise ValueError(f"values must have shape {expect}, got {values.shape}")
    if np.any(values < 0.0):
        raise ValueError("density values must be nonnegative")
    values = values * _ordered_mask(G, mark_grid.size, n)
    nodes = time_grid.nodes
    interps = {}
    for combo in np.ndindex(*(mark_grid.size,) * n):
        interps[combo] = RegularGridInterpolator(
            (nodes,) * n, values[(...,) + combo],
            bounds_error=False, fill_value=0.0)

    def density_fn(theta, idx):
        out = np.zeros(theta.shape[0])
        combos, inverse = np.unique(idx, axis=0, return_inverse=True)
        for c, combo in enumerate(combos):
            sel = inverse == c
            out[sel] = interps[tuple(combo)](theta[sel])
        ordered = np.all(np.diff(theta, axis=1) >= 0.0, axis=1) if n > 1 else True
        return np.where(ordered, np.maximum(out, 0.0), 0.0)

    return DensityModel(n, time_grid, mark_grid, density_fn, None,
                        intensity_bound=intensity_bound, name="tabulated")


def load_tabulated_csv(path: str, time_grid: TimeGrid, mark_grid: MarkGrid,
                       n: int, intensity_bound=None) -> DensityModel:
    """Read a tabulated density from CSV with header
    theta_1,...,theta_n,e_1,...,e_n,density and rows in lexicographic grid
    order."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    expect = [f"theta_{i}" for i in range(1, n + 1)] + \
             [f"e_{i}" for i in range(1, n + 1)] + ["density"]
    if header != expect:
        raise ValueError(f"bad header {header}, expected {expect}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    G = time_grid.M + 1
    nE = mark_grid.size
    rows = (G ** n) * (nE ** n)
    if data.shape != (rows, 2 * n + 1):
        raise ValueError(
            f"expected {rows} rows of {2 * n + 1} columns, got {data.shape}")
    values = data[:, -1].reshape((G,) * n + (nE,) * n)
    return tabulated_model(time_grid, mark_grid, values, intensity_bound)
