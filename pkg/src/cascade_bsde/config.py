"""Experiment configuration: one flat `key = value` text file per run.

Grammar, bit for bit: lines are split on the first '='; keys are
lowercase_with_underscores; '#' starts a comment (whole line or trailing);
blank lines are skipped. Values parse as int, then float, then a
comma-separated float list, then fall back to the raw string. There is no
nesting and no quoting. The only environment hook is CASCADE_BSDE_SEED,
which overrides the seed from anywhere.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

EXPERIMENTS = ("intro_example", "pricing", "utility", "cascade",
               "compensator_check", "comparison")

BACKENDS = ("tree", "lsmc")

SEED_ENV = "CASCADE_BSDE_SEED"


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps this onto exit code 2."""


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    if "," in raw:
        try:
            return tuple(float(p) for p in raw.split(","))
        except ValueError:
            pass
    return raw


def parse_file(path: str) -> dict:
    """Read a flat key = value file into a dict, later keys winning."""
    out: dict = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(
                f"{path}:{lineno}: expected 'key = value', got {body!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        if not key or not all(c.islower() or c.isdigit() or c == "_"
                              for c in key) or key[0].isdigit():
            raise ConfigError(
                f"{path}:{lineno}: bad key {key!r} (lowercase_with_underscores)")
        out[key] = _parse_value(raw)
    return out


@dataclass
class ExperimentConfig:
    """Validated run description; params carries experiment-specific keys."""

    experiment: str
    T: float = 1.0
    M: int = 50
    paths: int = 10_000
    basis_degree: int = 3
    seed: int = 0
    threads: int = 1
    backend: str = "tree"
    output_dir: str = "."
    model: str = "exponential"
    rate: float = 0.5
    n_jumps: int = 1
    marks: tuple = (0.0,)
    mark_weights: tuple | None = None
    mark_probs: tuple | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"experiment must be one of {', '.join(EXPERIMENTS)}; "
                f"got {self.experiment!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be tree or lsmc, got {self.backend!r}")
        for name in ("T", "rate"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or v <= 0:
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        for name in ("M", "paths", "basis_degree", "threads", "n_jumps"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if isinstance(self.marks, (int, float)):
            self.marks = (float(self.marks),)
        for name in ("mark_weights", "mark_probs"):
            v = getattr(self, name)
            if isinstance(v, (int, float)):
                setattr(self, name, (float(v),))

    def param(self, key: str, default=None, required: bool = False):
        if key in self.params:
            return self.params[key]
        if required:
            raise ConfigError(
                f"experiment {self.experiment!r} requires the key {key!r}")
        return default

    def float_param(self, key: str, default=None, required: bool = False) -> float:
        v = self.param(key, default, required)
        if v is None:
            return None
        if not isinstance(v, (int, float)):
            raise ConfigError(f"{key} must be a number, got {v!r}")
        return float(v)


_KNOWN = ("experiment", "T", "M", "paths", "basis_degree", "seed", "threads",
          "backend", "output_dir", "model", "rate", "n_jumps", "marks",
          "mark_weights", "mark_probs")

# keys are lowercase in files; the grid horizon is spelled t there
_ALIASES = {"t": "T"}


def load_config(path: str, *, seed: int | None = None,
                threads: int | None = None,
                output_dir: str | None = None) -> ExperimentConfig:
    """Parse, apply CLI overrides, then the env seed, then validate."""
    raw = parse_file(path)
    if "experiment" not in raw:
        raise ConfigError(f"{path}: missing required key 'experiment'")
    known = {}
    params = {}
    for key, val in raw.items():
        key = _ALIASES.get(key, key)
        if key in _KNOWN:
            known[key] = val
        else:
            params[key] = val
    if seed is not None:
        known["seed"] = seed
    if threads is not None:
        known["threads"] = threads
    if output_dir is not None:
        known["output_dir"] = output_dir
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            known["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(
                f"{SEED_ENV} must be an integer, got {env_seed!r}") from None
    if isinstance(known.get("T"), int):
        known["T"] = float(known["T"])
    if isinstance(known.get("rate"), int):
        known["rate"] = float(known["rate"])
    return ExperimentConfig(params=params, **known)
