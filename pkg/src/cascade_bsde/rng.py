"""Counter-based random streams.

Every path gets its own Philox stream keyed by (seed ^ purpose, path index),
so draws depend only on the key, never on how work is scheduled: serial and
parallel runs, or runs that consume paths in a different order, produce
bit-identical output.
"""

from __future__ import annotations

import numpy as np

# purpose tags keep the Brownian draws, the jump draws and ad-hoc perturbation
# draws on provably disjoint streams even for equal (seed, path)
TAG_BROWNIAN = 0x1B
TAG_JUMPS = 0x2A
TAG_PERTURB = 0x3C


def path_stream(seed: int, path: int, tag: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, path, purpose) triple."""
    key = [np.uint64(seed) ^ (np.uint64(tag) << np.uint64(56)), np.uint64(path)]
    return np.random.Generator(np.random.Philox(key=key))


def normal_increments(seed: int, paths: int, steps: int, dt: float,
                      tag: int = TAG_BROWNIAN) -> np.ndarray:
    """(paths, steps) array of N(0, dt) draws, one Philox stream per path."""
    scale = np.sqrt(dt)
    out = np.empty((paths, steps))
    for p in range(paths):
        out[p] = path_stream(seed, p, tag).standard_normal(steps)
    out *= scale
    return out


def uniform_matrix(seed: int, paths: int, cols: int,
                   tag: int = TAG_JUMPS) -> np.ndarray:
    """(paths, cols) array of U(0,1) draws, one Philox stream per path."""
    out = np.empty((paths, cols))
    for p in range(paths):
        out[p] = path_stream(seed, p, tag).random(cols)
    return out


def rademacher_increments(seed: int, paths: int, steps: int, dt: float,
                          tag: int = TAG_BROWNIAN) -> np.ndarray:
    """(paths, steps) array of +-sqrt(dt) coin flips, one stream per path.

    Matched to the binomial-tree state space, so a backward solve evaluated
    along these paths reproduces the tree values without interpolation.
    """
    scale = np.sqrt(dt)
    out = np.empty((paths, steps))
    for p in range(paths):
        out[p] = path_stream(seed, p, tag).random(steps)
    return np.where(out < 0.5, scale, -scale)
