"""Discrete stochastic calculus against the flow.

The projection pr_g averages a grid function over the level sets of a
monotone g; stochastic integrals of simple (piecewise constant in time)
integrands are plain sums of L2 pairings with path increments.  All
pairings are exact weighted sums over the n-grid: both the flow and the
integrands are step functions, so nothing is ever quadrature.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .flow import FlowPath, FlowState, _cell_of

__all__ = [
    "SimpleProcess",
    "IntegralPath",
    "project",
    "project_by_levels",
    "integrate_simple",
    "self_representation_check",
    "integration_by_parts_check",
    "projection_continuity_probe",
]


def _level_starts(g: np.ndarray) -> np.ndarray:
    """Start indices of the runs of equal adjacent values of a
    nondecreasing grid function (its level partition)."""
    return np.concatenate(([0], np.flatnonzero(np.diff(g)) + 1))


def project_by_levels(g: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Average f over the level sets of the nondecreasing grid function g."""
    g = np.asarray(g, dtype=float)
    f = np.asarray(f, dtype=float)
    if g.shape != f.shape or g.ndim != 1:
        raise ValueError("g and f must be 1-d arrays on the same grid")
    starts = _level_starts(g)
    counts = np.diff(np.concatenate((starts, [g.size])))
    means = np.add.reduceat(f, starts) / counts
    return np.repeat(means, counts)


def project(state: FlowState, f) -> np.ndarray:
    """Block-wise average of a grid function: (pr_y f)(u) is the mean of
    f over the cluster of u.  f must be given per particle cell."""
    f = np.asarray(f, dtype=float)
    if f.shape != (state.n,):
        raise ValueError(f"f must be given on the n-grid ({state.n} cells), got {f.shape}")
    means = np.add.reduceat(f, np.concatenate(([0], np.cumsum(state.counts)[:-1])))
    return np.repeat(means / state.counts, state.counts)


@dataclass(frozen=True)
class SimpleProcess:
    """Piecewise-constant-in-time integrand: the grid function values[k]
    applies on the interval (switch_times[k], switch_times[k+1]].

    Built from path data up to each switch time, such a process is
    adapted by construction.
    """

    switch_times: np.ndarray
    values: np.ndarray  # (m, n)

    def __post_init__(self):
        st = np.ascontiguousarray(self.switch_times, dtype=float)
        vals = np.ascontiguousarray(self.values, dtype=float)
        if st.ndim != 1 or st.size < 2 or np.any(np.diff(st) <= 0):
            raise ValueError("switch times must be strictly increasing, length >= 2")
        if st[0] != 0.0:
            raise ValueError("first switch time must be 0")
        if vals.ndim != 2 or vals.shape[0] != st.size - 1:
            raise ValueError("values must have one row per switch interval")
        if not np.all(np.isfinite(vals)):
            raise ValueError("integrand values must be finite")
        object.__setattr__(self, "switch_times", st)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value, n: int, horizon: float) -> "SimpleProcess":
        row = np.full(n, float(value)) if np.isscalar(value) else np.asarray(value, float)
        return cls(np.array([0.0, horizon]), row[None, :])


@dataclass(frozen=True)
class IntegralPath:
    """Running stochastic integral I_t and its accumulated theoretical
    quadratic variation  sum_j dt_j ||pr_{y(t_j)} f(t_j)||^2."""

    times: np.ndarray
    values: np.ndarray
    qv: np.ndarray

    def __post_init__(self):
        if not (self.values[0] == 0.0 and self.qv[0] == 0.0):
            raise ValueError("integral and QV must start at 0")
        if np.any(np.diff(self.qv) < 0):
            raise ValueError("accumulated QV must be nondecreasing")

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "I", "qv"])
            for t, v, q in zip(self.times, self.values, self.qv):
                writer.writerow([format(t, ".17g"), format(v, ".17g"), format(q, ".17g")])


def _interval_index(switch_times: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Index k of the interval (switch_times[k], switch_times[k+1]]
    containing each left endpoint t (t = switch_times[k] included)."""
    return np.clip(np.searchsorted(switch_times, t, side="right") - 1, 0, None)


def integrate_simple(path: FlowPath, f: SimpleProcess) -> IntegralPath:
    """Integrate a simple process against the flow.

    I_t = sum_k (phi_k, y(t_{k+1} ^ t) - y(t_k ^ t))  with exact grid
    pairings; the theoretical QV accumulates dt * ||pr_{y(t_j)} phi||^2
    per grid step with the projection in the pre-step partition.
    """
    times = path.times
    on_grid = np.isclose(
        times[np.searchsorted(times, f.switch_times).clip(max=times.size - 1)],
        f.switch_times,
        rtol=0.0,
        atol=1e-12,
    )
    if not np.all(on_grid) or f.switch_times[-1] > times[-1] + 1e-12:
        raise ValueError("integrand switch times must lie on the path grid")
    if f.values.shape[1] != path.n:
        raise ValueError("integrand grid incompatible with the path's n")
    k_steps = path.num_steps
    which = _interval_index(f.switch_times, times[:-1])
    rows = f.values[which]  # (K, n) integrand per step
    dy = np.diff(path.cell_positions, axis=0)
    increments = np.einsum("ki,ki->k", rows, dy) / path.n
    values = np.concatenate(([0.0], np.cumsum(increments)))
    dts = np.diff(times)
    qv_inc = np.empty(k_steps)
    for j in range(k_steps):
        row = path.cell_positions[j]
        starts = _level_starts(row)
        counts = np.diff(np.concatenate((starts, [path.n])))
        means = np.add.reduceat(rows[j], starts) / counts
        qv_inc[j] = dts[j] * np.sum(counts * means * means) / path.n
    qv = np.concatenate(([0.0], np.cumsum(qv_inc)))
    return IntegralPath(times, values, qv)


def self_representation_check(path: FlowPath, u: float) -> float:
    """Defect of the self-representation identity along one path.

    Integrating the kernel 1_{cluster(u, s-)} / m(u, s-) against the
    flow reproduces the trajectory of u exactly, step by step, because
    increments are constant on blocks.  Returns

        max_t | y(u, 0) + I_t - y(u, t) |,

    the anchor being the initial grid position of u (the discrete stand-in
    for the continuum initial condition y(u, 0) = u).
    """
    cu = _cell_of(u, path.n) - 1
    y = path.cell_positions
    same = y == y[:, cu][:, None]  # cluster of u per grid time
    cluster_cells = same.sum(axis=1)
    dy = np.diff(y, axis=0)
    # pairing of the normalized indicator with the increment, left limits
    increments = np.einsum("ki,ki->k", same[:-1], dy) / cluster_cells[:-1]
    traj = np.concatenate(([y[0, cu]], y[0, cu] + np.cumsum(increments)))
    return float(np.max(np.abs(traj - y[:, cu])))


def _values_and_times(f):
    """Accept a DriftPath-like object (times, values) or a plain array."""
    if hasattr(f, "values") and hasattr(f, "times"):
        return np.asarray(f.times, float), np.asarray(f.values, float)
    return None, np.asarray(f, dtype=float)


def integration_by_parts_check(path: FlowPath, f) -> float:
    """|int (f, dy)  -  [(f(T), y(T)) - (f(0), y(0)) - int (df/dt, y) ds]|
    with left-point sums on the path grid and forward-difference time
    derivatives.  Exactly zero (up to roundoff) for time-constant f;
    O(dt) otherwise.
    """
    f_times, f_vals = _values_and_times(f)
    y = path.cell_positions
    if f_vals.shape != y.shape:
        raise ValueError(f"f must be sampled on the path grid, expected {y.shape}")
    if f_times is not None and not np.allclose(f_times, path.times, rtol=0.0, atol=1e-12):
        raise ValueError("f grid does not match the path grid")
    n = path.n
    dy = np.diff(y, axis=0)
    df = np.diff(f_vals, axis=0)
    lhs = np.einsum("ki,ki->", f_vals[:-1], dy) / n
    boundary = (f_vals[-1] @ y[-1] - f_vals[0] @ y[0]) / n
    ibp = np.einsum("ki,ki->", df, y[:-1]) / n
    return float(abs(lhs - (boundary - ibp)))


def projection_continuity_probe(g, perturbations, f) -> np.ndarray:
    """L2(lambda) distances ||pr_{g_k} f - f|| for a family g_k -> g.

    g must be strictly increasing on the grid (its level partition is
    trivial, so pr_g f = f); as the perturbations approach g the
    distances should shrink to zero.
    """
    g = np.asarray(g, dtype=float)
    f = np.asarray(f, dtype=float)
    if np.any(np.diff(g) <= 0):
        raise ValueError("g must be strictly increasing on the grid")
    out = np.empty(len(perturbations))
    for k, gk in enumerate(perturbations):
        gk = np.asarray(gk, dtype=float)
        if gk.shape != g.shape:
            raise ValueError("perturbations must live on g's grid")
        diff = project_by_levels(gk, f) - f
        out[k] = np.sqrt(np.mean(diff * diff))
    return out
