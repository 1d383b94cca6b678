"""Measure-valued view of the flow.

The state at time t pushes Lebesgue measure on [0,1] forward through
u -> y(u, t), giving an atomic probability measure on the line (one atom
per block, weight = mass).  Because y(., t) is nondecreasing, it *is*
the quantile function of that measure, and the map measure <-> quantile
is a bijection under which the quadratic Wasserstein distance becomes
the plain L2[0,1] distance of quantile functions.  All distances here
are computed exactly, piece by piece, from merged breakpoint sets; no
quadrature anywhere.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flow import FlowState

__all__ = [
    "AtomicMeasure",
    "QuantileFunction",
    "pushforward",
    "quantile",
    "wasserstein2",
    "wasserstein2_to_uniform",
    "cluster_count",
    "l2_lambda_distance",
    "l2_mu_distance",
    "kappa_cell_masses",
]

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class AtomicMeasure:
    """A finitely supported probability measure on the real line.

    positions: strictly increasing atom locations
    weights:   positive masses summing to one (within 1e-12)
    """

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        positions = np.ascontiguousarray(self.positions, dtype=float)
        weights = np.ascontiguousarray(self.weights, dtype=float)
        if positions.ndim != 1 or positions.shape != weights.shape or positions.size == 0:
            raise ValueError("positions and weights must be parallel non-empty 1-d arrays")
        if positions.size > 1 and np.any(np.diff(positions) <= 0):
            raise ValueError("atom positions must be strictly increasing")
        if np.any(weights <= 0):
            raise ValueError("atom weights must be positive")
        if abs(weights.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")
        positions.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_points(cls, positions, weights) -> "AtomicMeasure":
        """Build a measure from unsorted points, consolidating exact
        duplicates (equal positions add their weights)."""
        positions = np.asarray(positions, dtype=float)
        weights = np.asarray(weights, dtype=float)
        order = np.argsort(positions, kind="stable")
        positions, weights = positions[order], weights[order]
        if positions.size > 1:
            new_group = np.concatenate(([True], positions[1:] != positions[:-1]))
            idx = np.flatnonzero(new_group)
            positions = positions[idx]
            weights = np.add.reduceat(weights, idx)
        return cls(positions, weights)

    @classmethod
    def dirac(cls, x: float) -> "AtomicMeasure":
        return cls(np.array([float(x)]), np.array([1.0]))

    @property
    def num_atoms(self) -> int:
        return self.positions.size

    # --- serialization: CSV rows (position, weight) and a JSON mirror ---

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["position", "weight"])
            for p, w in zip(self.positions, self.weights):
                writer.writerow([format(p, ".17g"), format(w, ".17g")])

    @classmethod
    def from_csv(cls, path) -> "AtomicMeasure":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        pos = np.array([float(r["position"]) for r in rows])
        wts = np.array([float(r["weight"]) for r in rows])
        return cls.from_points(pos, wts)

    def to_json(self) -> str:
        return json.dumps(
            {"positions": self.positions.tolist(), "weights": self.weights.tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "AtomicMeasure":
        data = json.loads(text)
        return cls.from_points(data["positions"], data["weights"])


@dataclass(frozen=True)
class QuantileFunction:
    """A nondecreasing right-continuous step function on [0, 1].

    The function equals values[i] on the interval (thresholds[i-1],
    thresholds[i]] (and values[0] at 0); thresholds strictly increase
    and end at 1.
    """

    thresholds: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        thr = np.ascontiguousarray(self.thresholds, dtype=float)
        val = np.ascontiguousarray(self.values, dtype=float)
        if thr.ndim != 1 or thr.shape != val.shape or thr.size == 0:
            raise ValueError("thresholds and values must be parallel 1-d arrays")
        if thr[-1] != 1.0:
            raise ValueError(f"last threshold must be 1, got {thr[-1]!r}")
        if thr.size > 1 and (np.any(np.diff(thr) <= 0) or np.any(np.diff(val) < 0)):
            raise ValueError("thresholds must strictly increase, values be nondecreasing")
        if thr[0] <= 0:
            raise ValueError("thresholds must be positive")
        thr.flags.writeable = False
        val.flags.writeable = False
        object.__setattr__(self, "thresholds", thr)
        object.__setattr__(self, "values", val)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if np.any((u < 0) | (u > 1)):
            raise ValueError("quantile argument must lie in [0, 1]")
        idx = np.searchsorted(self.thresholds, u, side="left")
        idx = np.minimum(idx, self.thresholds.size - 1)
        out = self.values[idx]
        return float(out) if out.ndim == 0 else out


def pushforward(state: FlowState) -> AtomicMeasure:
    """The image of Lebesgue measure under u -> y(u, t): one atom per
    block at its position, weighted by its mass count/n."""
    return AtomicMeasure(state.positions, state.counts / state.n)


def quantile(measure: AtomicMeasure) -> QuantileFunction:
    """The inverse CDF of an atomic measure as a step function.

    Round trip: quantile(pushforward(state)) has exactly the state's
    breakpoints (cumulative counts / n) and block positions.
    """
    thr = np.cumsum(measure.weights)
    thr[-1] = 1.0
    return QuantileFunction(thr, measure.positions)


def cluster_count(state: FlowState) -> int:
    """Number of distinct positions; equals the integral of 1/m(u, t) du."""
    return state.block_count


# --- exact piecewise integration over merged breakpoints ---


def _merged_pieces(f: QuantileFunction, g: QuantileFunction):
    """Common refinement of two step functions: piece bounds (lo, hi]
    plus the two values on each piece."""
    edges = np.union1d(f.thresholds, g.thresholds)
    lo = np.concatenate(([0.0], edges[:-1]))
    fi = np.searchsorted(f.thresholds, lo, side="right")
    gi = np.searchsorted(g.thresholds, lo, side="right")
    return lo, edges, f.values[fi], g.values[gi]


def l2_lambda_distance(f: QuantileFunction, g: QuantileFunction) -> float:
    """Exact L2([0,1], du) distance of two step functions."""
    lo, hi, fv, gv = _merged_pieces(f, g)
    d = fv - gv
    return float(np.sqrt(np.sum((hi - lo) * d * d)))


def _kappa_antiderivative(u: np.ndarray, beta: float) -> np.ndarray:
    """F(u) = integral of the boundary weight kappa from 0 to u, where
    kappa(v) = v^beta on [0, 1/2] and (1-v)^beta on (1/2, 1]."""
    u = np.asarray(u, dtype=float)
    left = np.minimum(u, 0.5) ** (beta + 1.0)
    right = np.where(u > 0.5, 0.5 ** (beta + 1.0) - (1.0 - u) ** (beta + 1.0), 0.0)
    return (left + right) / (beta + 1.0)


def l2_mu_distance(f: QuantileFunction, g: QuantileFunction, beta: float = 2.0) -> float:
    """Exact L2(mu) distance, mu(du) = kappa(u) du with the boundary
    weight of exponent beta > 1; closed-form antiderivatives per piece."""
    if not beta > 1:
        raise ValueError(f"beta must be > 1, got {beta}")
    lo, hi, fv, gv = _merged_pieces(f, g)
    mass = _kappa_antiderivative(hi, beta) - _kappa_antiderivative(lo, beta)
    d = fv - gv
    return float(np.sqrt(np.sum(mass * d * d)))


def kappa_cell_masses(n: int, beta: float = 2.0) -> np.ndarray:
    """mu-mass of each particle cell ((k-1)/n, k/n], k = 1..n."""
    edges = np.arange(n + 1, dtype=float) / n
    anti = _kappa_antiderivative(edges, beta)
    return np.diff(anti)


def wasserstein2(a: AtomicMeasure, b: AtomicMeasure) -> float:
    """Exact quadratic Wasserstein distance of two atomic measures.

    Computed through the quantile parametrization: d_W equals the
    L2([0,1]) distance of the two inverse CDFs, integrated in closed
    form over the merged breakpoint set.
    """
    return l2_lambda_distance(quantile(a), quantile(b))


def wasserstein2_to_uniform(measure: AtomicMeasure) -> float:
    """Exact d_W between an atomic measure and the uniform law on [0,1].

    The quantile of the uniform law is the identity, so the squared
    distance is the sum over pieces of the exact integral of
    (value - u)^2 du.
    """
    q = quantile(measure)
    lo = np.concatenate(([0.0], q.thresholds[:-1]))
    hi = q.thresholds
    a, b = lo - q.values, hi - q.values
    return float(np.sqrt(np.sum((b**3 - a**3) / 3.0)))
