"""Replica-loop helpers over the jitted kernel.

These avoid materializing full trajectories when a Monte Carlo run only
needs final states, sparse snapshots, or running accumulators.  Each
replica draws from its own counter-based stream, so ensembles are
deterministic regardless of evaluation order and safe to fan out across
processes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .config import ExperimentConfig
from .flow import init_uniform

__all__ = [
    "ReplicaResult",
    "SnapshotResult",
    "run_replica",
    "run_snapshots",
    "run_interval",
]


def run_interval(
    rng,
    n: int,
    eps: float,
    dts: np.ndarray,
    pos: np.ndarray,
    cnt: np.ndarray,
    nblocks: int,
    *,
    drift_row: np.ndarray | None = None,
    f_row: np.ndarray | None = None,
    stop_when_single: bool = False,
):
    """Advance length-n state buffers in place over the given steps.

    Lowest-level building block: callers own the buffers (first
    ``nblocks`` entries valid) and can chain intervals, changing the
    integrand or drift between them.  Returns (nblocks, qv, int_n,
    int_msq).
    """
    drift = None
    if drift_row is not None:
        drift = np.ascontiguousarray(drift_row, dtype=float).reshape(1, n)
    return engine.run_steps(
        rng,
        pos,
        cnt,
        nblocks,
        n,
        dts,
        eps,
        drift=drift,
        drift_mode=engine.DRIFT_STATIC,
        f_cells=np.ascontiguousarray(f_row, dtype=float) if f_row is not None else None,
        stop_when_single=stop_when_single,
    )


@dataclass
class ReplicaResult:
    positions: np.ndarray  # (B,) block positions at the horizon
    counts: np.ndarray  # (B,) block counts
    qv: float  # sum_j dt_j ||pr_{y_j} f||^2 when an f row was given
    int_n: float  # left-point integral of the cluster count
    int_msq: float  # left-point integral of <x^2, mu_s>

    @property
    def com(self) -> float:
        return float(self.positions @ self.counts) / self.counts.sum()


def _initial_buffers(config: ExperimentConfig):
    state0 = init_uniform(config.n, config.initial_convention)
    pos = np.empty(config.n)
    cnt = np.empty(config.n, np.int64)
    pos[: config.n] = state0.positions
    cnt[: config.n] = state0.counts
    return pos, cnt


def run_replica(
    config: ExperimentConfig,
    rng,
    *,
    eps: float | None = None,
    dts: np.ndarray | None = None,
    drift_row: np.ndarray | None = None,
    f_row: np.ndarray | None = None,
    stop_when_single: bool = False,
) -> ReplicaResult:
    """Simulate one replica to the horizon without storing the path.

    ``drift_row`` is a per-cell drift rate constant in time; ``f_row``
    switches on the projected-norm accumulator.  ``stop_when_single``
    allows an early exit once fully coalesced (then only the cluster
    count integral is meaningful).
    """
    n = config.n
    if dts is None:
        dts = np.diff(config.grid_times())
    pos, cnt = _initial_buffers(config)
    b, qv, int_n, int_msq = run_interval(
        rng,
        n,
        config.epsilon if eps is None else float(eps),
        dts,
        pos,
        cnt,
        n,
        drift_row=drift_row,
        f_row=f_row,
        stop_when_single=stop_when_single,
    )
    return ReplicaResult(pos[:b].copy(), cnt[:b].copy(), qv, int_n, int_msq)


@dataclass
class SnapshotResult:
    indices: np.ndarray  # grid indices of the snapshots
    cell_positions: np.ndarray  # (S, n) step function per snapshot
    block_counts: np.ndarray  # (S,)
    int_n: float
    int_msq: float


def run_snapshots(
    config: ExperimentConfig,
    rng,
    snap_indices,
    *,
    eps: float | None = None,
    dts: np.ndarray | None = None,
    drift_row: np.ndarray | None = None,
) -> SnapshotResult:
    """Simulate one replica recording the state at selected grid indices
    (1-based step indices, strictly increasing)."""
    n = config.n
    if dts is None:
        dts = np.diff(config.grid_times())
    snap_idx = np.ascontiguousarray(snap_indices, dtype=np.int64)
    if snap_idx.size and (snap_idx[0] < 1 or np.any(np.diff(snap_idx) <= 0)):
        raise ValueError("snapshot indices must be >= 1 and strictly increasing")
    if snap_idx.size and snap_idx[-1] > dts.size:
        raise ValueError("snapshot index beyond the grid")
    pos, cnt = _initial_buffers(config)
    snap_y = np.empty((snap_idx.size, n))
    snap_cnt = np.empty(snap_idx.size, np.int64)
    drift = None
    if drift_row is not None:
        drift = np.ascontiguousarray(drift_row, dtype=float).reshape(1, n)
    _, _, int_n, int_msq = engine.run_steps(
        rng,
        pos,
        cnt,
        n,
        n,
        dts,
        config.epsilon if eps is None else float(eps),
        drift=drift,
        drift_mode=engine.DRIFT_STATIC,
        snap_idx=snap_idx,
        snap_y=snap_y,
        snap_cnt=snap_cnt,
    )
    return SnapshotResult(snap_idx, snap_y, snap_cnt, int_n, int_msq)
