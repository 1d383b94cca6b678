"""Experiment configuration.

A single dataclass holds every tunable of the lab: particle count,
horizon, step size, noise scale, the weight exponent of the boundary
measure, replica counts and seeding.  Configurations can be read from a
flat ``key = value`` text file (``#`` starts a comment); command line
flags override file values.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace, fields
from pathlib import Path

__all__ = ["ExperimentConfig", "parse_config_file", "SEED_ENV_VAR"]

SEED_ENV_VAR = "MASSFLOW_SEED"

_CONVENTIONS = ("paper", "midpoint")


@dataclass(frozen=True)
class ExperimentConfig:
    """Tunables of a simulation experiment.

    ``n``       number of particles (grid resolution of [0,1])
    ``T``       time horizon
    ``dt``      step size; the last step is truncated when T/dt is not integral
    ``epsilon`` noise scale multiplying the diffusion (1 = plain flow)
    ``beta``    exponent of the boundary weight u^beta, (1-u)^beta; must be > 1
    ``replicas``  ensemble size for statistical runs
    ``master_seed``  64-bit seed; replica r uses the stream (master_seed, r)
    ``initial_convention``  'paper' puts particle k at k/n, 'midpoint' at (2k-1)/(2n)
    ``out_dir`` directory for CSV/JSON artifacts
    """

    n: int = 64
    T: float = 1.0
    dt: float = 1e-3
    epsilon: float = 1.0
    beta: float = 2.0
    replicas: int = 100
    master_seed: int = 0
    initial_convention: str = "paper"
    out_dir: str = "."

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"T must be positive and finite, got {self.T}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            # dt > T is allowed: the grid then has a single truncated step
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.beta > 1:
            raise ValueError(f"beta must be > 1, got {self.beta}")
        if self.replicas < 1:
            raise ValueError(f"replicas must be >= 1, got {self.replicas}")
        if self.initial_convention not in _CONVENTIONS:
            raise ValueError(
                f"initial_convention must be one of {_CONVENTIONS}, "
                f"got {self.initial_convention!r}"
            )

    @property
    def num_steps(self) -> int:
        """Number of grid steps K = ceil(T / dt)."""
        return max(1, math.ceil(self.T / self.dt - 1e-12))

    def grid_times(self):
        """The time grid 0 = t_0 < ... < t_K = T (last step truncated)."""
        import numpy as np

        k = self.num_steps
        times = self.dt * np.arange(k + 1, dtype=float)
        times[-1] = self.T
        return times

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs) if kwargs else self


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    if name in ("n", "replicas", "master_seed"):
        return int(raw)
    if name in ("T", "dt", "epsilon", "beta"):
        return float(raw)
    return raw


def parse_config_file(path: str | Path) -> dict:
    """Parse a flat ``key = value`` config file into a keyword dict.

    Unknown keys are rejected so typos fail loudly.
    """
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, raw.strip())
    return out


def resolve_master_seed(explicit: int | None) -> int:
    """Use the explicit seed when given, else the MASSFLOW_SEED env var, else 0."""
    if explicit is not None:
        return explicit
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else 0
