"""Finite system of coalescing heavy diffusion particles.

``n`` particles start on a uniform grid of (0, 1], each carrying mass
1/n.  Particles diffuse independently with variance rate inverse to
their mass and merge on contact, adding their masses; a merged cluster
("block") moves as one particle from then on.  The state at any time is
the nondecreasing step function  u -> y(u, t)  on [0,1], stored as an
ordered list of blocks: contiguous runs of the initial labels
{1, ..., n} together with one position and one integer count each.

Discretization: Euler proposals per block followed by a weighted
isotonic (pool-adjacent-violators) projection, which enforces
monotonicity exactly and preserves the mass-weighted mean of each step
exactly.  Coalescence times are resolved at grid resolution only; no
bridge refinement is attempted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import engine
from .config import ExperimentConfig
from .rng import make_rng

__all__ = [
    "Block",
    "FlowState",
    "FlowPath",
    "MergeRecord",
    "init_uniform",
    "step",
    "simulate_path",
    "eval_at",
    "mass_at",
]


@dataclass(frozen=True)
class Block:
    """A coalesced cluster: the 1-based label run [first, last], its
    common position and its count (mass = count / n)."""

    first: int
    last: int
    position: float
    count: int

    def __post_init__(self):
        if not (1 <= self.first <= self.last):
            raise ValueError(f"bad block index range [{self.first}, {self.last}]")
        if self.count != self.last - self.first + 1:
            raise ValueError("block count must equal last - first + 1")


class FlowState:
    """Immutable snapshot of the block partition at one time.

    ``positions`` and ``counts`` are parallel arrays over blocks, in
    increasing position order; counts are integers summing to ``n``.
    """

    __slots__ = ("n", "time", "positions", "counts")

    def __init__(self, n: int, time: float, positions, counts):
        positions = np.ascontiguousarray(positions, dtype=float)
        counts = np.ascontiguousarray(counts, dtype=np.int64)
        if positions.ndim != 1 or positions.shape != counts.shape:
            raise ValueError("positions and counts must be parallel 1-d arrays")
        if counts.sum() != n:
            raise ValueError(f"block counts must sum to n={n}, got {counts.sum()}")
        if np.any(counts < 1):
            raise ValueError("block counts must be >= 1")
        if positions.size > 1 and np.any(np.diff(positions) <= 0):
            raise ValueError("block positions must be strictly increasing")
        if not np.all(np.isfinite(positions)):
            raise ValueError("block positions must be finite")
        positions.flags.writeable = False
        counts.flags.writeable = False
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "time", float(time))
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "counts", counts)

    def __setattr__(self, *a):  # pragma: no cover - guard
        raise AttributeError("FlowState is immutable")

    @property
    def block_count(self) -> int:
        return self.positions.size

    @property
    def blocks(self) -> list[Block]:
        firsts = np.concatenate(([0], np.cumsum(self.counts)[:-1])) + 1
        return [
            Block(int(f), int(f + c - 1), float(p), int(c))
            for f, p, c in zip(firsts, self.positions, self.counts)
        ]

    def cell_positions(self) -> np.ndarray:
        """The step function on the particle grid: y at cell k, k = 1..n."""
        return np.repeat(self.positions, self.counts)

    def block_index_of_cell(self, cell: int) -> int:
        """Block containing the 1-based particle label ``cell``."""
        if not 1 <= cell <= self.n:
            raise ValueError(f"cell must be in 1..{self.n}, got {cell}")
        return int(np.searchsorted(np.cumsum(self.counts), cell))

    def __eq__(self, other):
        return (
            isinstance(other, FlowState)
            and self.n == other.n
            and self.time == other.time
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.counts, other.counts)
        )

    def __repr__(self):
        return (
            f"FlowState(n={self.n}, time={self.time:g}, "
            f"blocks={self.block_count})"
        )


def _cell_of(u: float, n: int) -> int:
    """1-based particle label whose cell contains u: floor(u n)+1, capped at n."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u must lie in [0, 1], got {u}")
    return min(int(math.floor(u * n)) + 1, n)


def init_uniform(n: int, convention: str = "paper") -> FlowState:
    """Initial state: n singleton blocks on the uniform grid.

    'paper' places particle k at k/n; 'midpoint' at (2k-1)/(2n), which
    halves the L2 distance to the identity at time zero.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    k = np.arange(1, n + 1, dtype=float)
    if convention == "paper":
        positions = k / n
    elif convention == "midpoint":
        positions = (2.0 * k - 1.0) / (2.0 * n)
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return FlowState(n, 0.0, positions, np.ones(n, np.int64))


def step(state: FlowState, dt: float, noise) -> FlowState:
    """Advance one Euler step with the given per-block standard normals.

    Each block proposes position + sqrt(dt * n / count) * xi, then the
    proposals are projected onto the strictly increasing cone by
    weighted pool-adjacent-violators (ties merge).  The count-weighted
    mean of the proposals is preserved exactly.
    """
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (state.block_count,):
        raise ValueError(
            f"noise length {noise.shape} does not match block count "
            f"{state.block_count}"
        )
    if not np.all(np.isfinite(noise)):
        raise ValueError("noise must be finite")
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    out_pos = np.empty(state.block_count)
    out_cnt = np.empty(state.block_count, np.int64)
    b = engine._step_with_noise(
        state.positions,
        state.counts,
        state.block_count,
        state.n,
        dt,
        1.0,
        noise,
        out_pos,
        out_cnt,
    )
    return FlowState(state.n, state.time + dt, out_pos[:b], out_cnt[:b])


@dataclass(frozen=True)
class MergeRecord:
    """One coalescence event: at grid index ``time_index`` the block that
    was [absorbed_first, absorbed_last] joined the (leftmost) surviving
    block [survivor_first, survivor_last]; ranges refer to the partition
    right before the merge."""

    time_index: int
    absorbed_first: int
    absorbed_last: int
    survivor_first: int
    survivor_last: int


class FlowPath:
    """A simulated trajectory on a time grid.

    Stores the full step function per grid time as an array of cell
    positions (row k = y(., t_k) on the n-grid), the block count per
    time, and the coalescence records.  Individual ``FlowState`` views
    are derived on demand.
    """

    __slots__ = ("times", "cell_positions", "block_counts", "n", "_merges")

    def __init__(self, times, cell_positions, block_counts):
        times = np.ascontiguousarray(times, dtype=float)
        cell_positions = np.ascontiguousarray(cell_positions, dtype=float)
        block_counts = np.ascontiguousarray(block_counts, dtype=np.int64)
        if cell_positions.shape[0] != times.size or block_counts.size != times.size:
            raise ValueError("grid/states/counts shapes disagree")
        if np.any(np.diff(block_counts) > 0):
            raise ValueError("block count must be non-increasing along the path")
        self.times = times
        self.cell_positions = cell_positions
        self.block_counts = block_counts
        self.n = cell_positions.shape[1]
        self._merges = None

    @property
    def num_steps(self) -> int:
        return self.times.size - 1

    def state(self, k: int) -> FlowState:
        row = self.cell_positions[k]
        starts = np.flatnonzero(np.diff(row)) + 1
        firsts = np.concatenate(([0], starts))
        lasts = np.concatenate((starts, [self.n]))
        return FlowState(self.n, float(self.times[k]), row[firsts], lasts - firsts)

    @property
    def states(self) -> list[FlowState]:
        return [self.state(k) for k in range(self.times.size)]

    @property
    def merges(self) -> list[MergeRecord]:
        """Coalescence records, derived lazily from the stored rows."""
        if self._merges is None:
            self._merges = self._derive_merges()
        return self._merges

    def _derive_merges(self) -> list[MergeRecord]:
        records = []
        prev_bounds = self._block_bounds(0)
        for k in range(1, self.times.size):
            if self.block_counts[k] == self.block_counts[k - 1]:
                continue
            bounds = self._block_bounds(k)
            # each new block is a union of consecutive old blocks; the
            # leftmost constituent survives, the others are absorbed
            j = 0
            for lo, hi in bounds:
                group = []
                while j < len(prev_bounds) and prev_bounds[j][1] <= hi:
                    group.append(prev_bounds[j])
                    j += 1
                surv = group[0]
                for ab in group[1:]:
                    records.append(
                        MergeRecord(k, ab[0] + 1, ab[1], surv[0] + 1, surv[1])
                    )
            prev_bounds = bounds
        return records

    def _block_bounds(self, k: int):
        row = self.cell_positions[k]
        starts = np.flatnonzero(np.diff(row)) + 1
        firsts = np.concatenate(([0], starts))
        lasts = np.concatenate((starts, [self.n]))
        return list(zip(firsts.tolist(), lasts.tolist()))

    def eval_grid(self, u: float) -> np.ndarray:
        """The trajectory t_k -> y(u, t_k) as a vector over the grid."""
        return self.cell_positions[:, _cell_of(u, self.n) - 1]

    def meeting_index(self, u: float, v: float) -> int | None:
        """First grid index at which the particles from u and v share a
        position (the discrete coalescence time), or None."""
        cu, cv = _cell_of(u, self.n) - 1, _cell_of(v, self.n) - 1
        hits = np.flatnonzero(
            self.cell_positions[:, cu] == self.cell_positions[:, cv]
        )
        return int(hits[0]) if hits.size else None

    def mass_grid(self, u: float) -> np.ndarray:
        """t_k -> m(u, t_k), the mass of the cluster containing u."""
        cu = _cell_of(u, self.n) - 1
        same = self.cell_positions == self.cell_positions[:, cu][:, None]
        return same.sum(axis=1) / self.n

    def __eq__(self, other):
        return (
            isinstance(other, FlowPath)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.cell_positions, other.cell_positions)
            and np.array_equal(self.block_counts, other.block_counts)
        )

    def to_csv(self, path) -> None:
        """One record per (time, block): t, first, last, position, count."""
        import csv as _csv

        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            writer = _csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "first", "last", "position", "count"])
            for k in range(self.times.size):
                t = format(self.times[k], ".17g")
                for lo, hi in self._block_bounds(k):
                    writer.writerow(
                        [t, lo + 1, hi, format(self.cell_positions[k, lo], ".17g"), hi - lo]
                    )

    def to_json(self) -> str:
        """JSON mirror of the CSV schema."""
        import json as _json

        records = []
        for k in range(self.times.size):
            blocks = [
                {
                    "first": lo + 1,
                    "last": hi,
                    "position": self.cell_positions[k, lo],
                    "count": hi - lo,
                }
                for lo, hi in self._block_bounds(k)
            ]
            records.append({"t": self.times[k], "blocks": blocks})
        return _json.dumps({"n": self.n, "states": records})


def grid_dts(config: ExperimentConfig) -> np.ndarray:
    """Per-step sizes of the config's grid (uniform, truncated last step)."""
    return np.diff(config.grid_times())


def simulate_path(
    config: ExperimentConfig, seed: int, *, eps: float | None = None, drift=None
) -> FlowPath:
    """Simulate one full trajectory; deterministic given (config, seed).

    ``eps`` overrides config.epsilon; ``drift`` is an optional (K, n)
    array of per-cell drift rates used by the Girsanov layer.
    """
    rng = make_rng(seed)
    return _simulate_recorded(config, rng, eps=eps, drift=drift)


def _simulate_recorded(
    config: ExperimentConfig, rng, *, eps: float | None = None, drift=None
) -> FlowPath:
    n = config.n
    times = config.grid_times()
    dts = np.diff(times)
    k_steps = dts.size
    state0 = init_uniform(n, config.initial_convention)
    pos = np.empty(n)
    cnt = np.empty(n, np.int64)
    pos[:n] = state0.positions
    cnt[:n] = state0.counts
    rec_y = np.empty((k_steps + 1, n))
    rec_cnt = np.empty(k_steps + 1, np.int64)
    rec_y[0] = state0.cell_positions()
    rec_cnt[0] = n
    drift_arr = None
    drift_mode = engine.DRIFT_NONE
    if drift is not None:
        drift_arr = np.ascontiguousarray(drift, dtype=float)
        if drift_arr.shape != (k_steps, n):
            raise ValueError(
                f"drift must have shape (K, n) = {(k_steps, n)}, got {drift_arr.shape}"
            )
        drift_mode = engine.DRIFT_PER_STEP
    engine.run_steps(
        rng,
        pos,
        cnt,
        n,
        n,
        dts,
        config.epsilon if eps is None else float(eps),
        drift=drift_arr,
        drift_mode=drift_mode,
        rec_y=rec_y,
        rec_cnt=rec_cnt,
    )
    return FlowPath(times, rec_y, rec_cnt)


def eval_at(state: FlowState, u: float) -> float:
    """y(u, t): the position of the block containing particle floor(un)+1
    (the last block for u = 1); right-continuous in u."""
    cell = _cell_of(u, state.n)
    return float(state.positions[state.block_index_of_cell(cell)])


def mass_at(state: FlowState, u: float) -> float:
    """m(u, t): the mass (count / n) of the cluster containing u."""
    cell = _cell_of(u, state.n)
    return state.counts[state.block_index_of_cell(cell)] / state.n
