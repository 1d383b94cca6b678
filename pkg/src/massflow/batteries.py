"""Statistical test batteries for the flow's defining properties.

Every battery returns machine-readable reports: a named statistic, the
acceptance band it must fall into, and the verdict.  Thresholds are
two-sided 3-sigma unless a test states otherwise; all randomness comes
from per-replica streams of the configured master seed, so reruns are
bit-identical.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .ensemble import run_replica, run_snapshots
from .flow import _cell_of, _simulate_recorded, init_uniform
from .girsanov import DriftPath, simulate_drifted
from .rng import replica_rng

__all__ = [
    "TestReport",
    "martingale_battery",
    "scaling_battery",
    "coalescence_battery",
    "generator_battery",
    "two_particle_cluster_count",
]


@dataclass(frozen=True)
class TestReport:
    name: str
    statistic: float
    band_lo: float
    band_hi: float
    passed: bool
    replicas: int
    runtime: float
    notes: str = ""

    @classmethod
    def make(cls, name, statistic, band, replicas, started, notes=""):
        lo, hi = band
        return cls(
            name=name,
            statistic=float(statistic),
            band_lo=float(lo),
            band_hi=float(hi),
            passed=bool(lo <= statistic <= hi),
            replicas=int(replicas),
            runtime=time.perf_counter() - started,
            notes=notes,
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "statistic": self.statistic,
            "band_lo": self.band_lo,
            "band_hi": self.band_hi,
            "passed": self.passed,
            "replicas": self.replicas,
            "runtime": self.runtime,
            "notes": self.notes,
        }

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"[{verdict}] {self.name}: statistic={self.statistic:.6g} "
            f"band=[{self.band_lo:.6g}, {self.band_hi:.6g}] "
            f"replicas={self.replicas} ({self.runtime:.2f}s)"
        )


def _regression_max_z(x: np.ndarray, y: np.ndarray) -> float:
    """Largest |z| of the OLS slope and intercept of y on x, both of
    which vanish when the increments y are martingale differences."""
    r = x.size
    xbar, ybar = x.mean(), y.mean()
    sxx = np.sum((x - xbar) ** 2)
    slope = np.sum((x - xbar) * (y - ybar)) / sxx
    intercept = ybar - slope * xbar
    resid = y - intercept - slope * x
    sigma2 = np.sum(resid**2) / (r - 2)
    se_slope = math.sqrt(sigma2 / sxx)
    se_inter = math.sqrt(sigma2 * (1.0 / r + xbar**2 / sxx))
    return max(abs(slope) / se_slope, abs(intercept) / se_inter)


def martingale_battery(config: ExperimentConfig) -> list[TestReport]:
    """Tests of the martingale structure of the flow.

    The center of mass is an exact discrete martingale with variance t,
    so its ensemble mean and variance are pinned; trajectories of fixed
    labels must show no regression of increments on current values; a
    zero-noise flow must not move at all.
    """
    reports = []
    reps = config.replicas
    dts = np.diff(config.grid_times())
    k_steps = dts.size

    start = time.perf_counter()
    com0 = init_uniform(config.n, config.initial_convention).positions.mean()
    half_idx = max(1, k_steps // 2)
    coms = np.empty(reps)
    cells = [_cell_of(u, config.n) - 1 for u in (0.25, 0.5, 0.75)]
    half_vals = np.empty((reps, len(cells) + 1))
    end_vals = np.empty((reps, len(cells) + 1))
    for r in range(reps):
        snap = run_snapshots(
            config, replica_rng(config.master_seed, r), [half_idx, k_steps], dts=dts
        )
        coms[r] = snap.cell_positions[1].mean()
        for j, c in enumerate(cells):
            half_vals[r, j] = snap.cell_positions[0, c]
            end_vals[r, j] = snap.cell_positions[1, c]
        half_vals[r, -1] = snap.cell_positions[0].mean()
        end_vals[r, -1] = snap.cell_positions[1].mean()
    sim_done = time.perf_counter()

    scale = config.epsilon * config.T
    var = coms.var(ddof=1)
    band = (scale * (1 - 3 * math.sqrt(2.0 / (reps - 1))),
            scale * (1 + 3 * math.sqrt(2.0 / (reps - 1))))
    reports.append(TestReport.make("com-variance", var, band, reps, start,
                                   notes=f"expected Var(COM_T) = eps*T = {scale:g}"))

    t0 = sim_done
    se = math.sqrt(scale / reps)
    reports.append(TestReport.make(
        "com-mean", coms.mean(), (com0 - 3 * se, com0 + 3 * se), reps, t0,
        notes=f"expected E COM_T = COM_0 = {com0:g}"))

    labels = ["y(0.25)", "y(0.5)", "y(0.75)", "com"]
    for j, lab in enumerate(labels):
        t0 = time.perf_counter()
        z = _regression_max_z(half_vals[:, j], end_vals[:, j] - half_vals[:, j])
        reports.append(TestReport.make(
            f"increment-regression-{lab}", z, (0.0, 3.0), reps, t0,
            notes="max |z| of OLS slope/intercept of increments on values"))

    t0 = time.perf_counter()
    zero = DriftPath.constant_integrand(0.0, config.n, config.grid_times())
    frozen = simulate_drifted(config, zero, 0.0, config.master_seed)
    move = float(np.max(np.abs(frozen.cell_positions - frozen.cell_positions[0])))
    reports.append(TestReport.make("frozen-eps0", move, (0.0, 0.0), 1, t0,
                                   notes="zero-noise zero-drift flow must not move"))

    t0 = time.perf_counter()
    cfg1 = ExperimentConfig(n=1, T=config.T, dt=config.dt, epsilon=config.epsilon,
                            replicas=reps, master_seed=config.master_seed)
    ends = np.empty(reps)
    for r in range(reps):
        ends[r] = run_replica(cfg1, replica_rng(cfg1.master_seed, r)).positions[0]
    var1 = ends.var(ddof=1)
    band1 = (scale * (1 - 3 * math.sqrt(2.0 / (reps - 1))),
             scale * (1 + 3 * math.sqrt(2.0 / (reps - 1))))
    reports.append(TestReport.make("n1-brownian-variance", var1, band1, reps, t0,
                                   notes="single particle of unit mass is Brownian"))
    return reports


def two_particle_cluster_count(
    replicas: int, dt: float, seed: int, t: float = 1.0
) -> tuple[float, float]:
    """Mean and standard error of the cluster count N(t) for n = 2.

    The continuous-time law is explicit: the gap performs a Brownian
    motion of variance rate 4 from 1/2, absorbed at 0, so
    E N(t) = 2 - 2 Phi(-1 / (4 sqrt(t))).  The grid scheme detects the
    absorption late by O(sqrt(dt)), so dt must be small against the
    Monte Carlo band.
    """
    cfg = ExperimentConfig(n=2, T=t, dt=dt, replicas=replicas, master_seed=seed)
    dts = np.diff(cfg.grid_times())
    counts = np.empty(replicas)
    for r in range(replicas):
        res = run_replica(cfg, replica_rng(seed, r), dts=dts, stop_when_single=True)
        counts[r] = res.positions.size
    return float(counts.mean()), float(counts.std(ddof=1) / math.sqrt(replicas))


def std_normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def scaling_battery(
    config: ExperimentConfig,
    t_min: float = 1e-4,
    t_max: float = 1e-1,
    points: int = 13,
) -> list[TestReport]:
    """Small-time scaling laws of the flow.

    Over a few decades of t the squared displacement E (y(u,t) - u)^2
    grows like sqrt(t) and the cluster count E N(t) decays like
    1/sqrt(t); the battery fits both log-log slopes.  Also includes the
    two-particle cluster-count oracle and the no-time-to-coalesce limit.
    """
    reports = []
    reps = config.replicas
    dts = np.diff(config.grid_times())
    if config.dt > t_min * (1 + 1e-9):
        raise ValueError(f"config.dt={config.dt} too coarse to resolve t_min={t_min}")
    t_hi = min(t_max, config.T)
    snap_t = np.geomspace(t_min, t_hi, points)
    snap_idx = np.unique(np.clip(np.round(snap_t / config.dt), 1, dts.size).astype(int))
    times = config.grid_times()[snap_idx]

    start = time.perf_counter()
    cell = _cell_of(0.5, config.n) - 1
    u0 = init_uniform(config.n, config.initial_convention).cell_positions()[cell]
    sq = np.zeros(snap_idx.size)
    nn = np.zeros(snap_idx.size)
    for r in range(reps):
        snap = run_snapshots(config, replica_rng(config.master_seed, r), snap_idx, dts=dts)
        sq += (snap.cell_positions[:, cell] - u0) ** 2
        nn += snap.block_counts
    sq /= reps
    nn /= reps
    lt = np.log(times)
    slope_sq = np.polynomial.polynomial.polyfit(lt, np.log(sq), 1)[1]
    reports.append(TestReport.make(
        "displacement-scaling-slope", slope_sq, (0.4, 0.6), reps, start,
        notes=f"log E(y(0.5,t)-u)^2 vs log t over [{t_min:g},{t_hi:g}]"))

    t0 = time.perf_counter()
    slope_n = np.polynomial.polynomial.polyfit(lt, np.log(nn), 1)[1]
    reports.append(TestReport.make(
        "cluster-count-scaling-slope", slope_n, (-0.65, -0.35), reps, t0,
        notes="log E N(t) vs log t"))

    t0 = time.perf_counter()
    mean_n, se_n = two_particle_cluster_count(
        min(reps * 10, 20000), 1e-5, config.master_seed + 1
    )
    oracle = 2.0 - 2.0 * std_normal_cdf(-0.25)
    reports.append(TestReport.make(
        "two-particle-cluster-count", mean_n,
        (oracle - 3 * se_n, oracle + 3 * se_n), min(reps * 10, 20000), t0,
        notes=f"reflection-principle oracle E N(1) = {oracle:.6f}"))

    t0 = time.perf_counter()
    tiny = ExperimentConfig(n=config.n, T=1e-10, dt=1e-10, replicas=min(reps, 100),
                            master_seed=config.master_seed + 2)
    min_count = min(
        run_replica(tiny, replica_rng(tiny.master_seed, r)).positions.size
        for r in range(tiny.replicas)
    )
    reports.append(TestReport.make(
        "no-time-no-coalescence", min_count, (config.n, config.n), tiny.replicas, t0,
        notes="N(t) -> n as t -> 0"))
    return reports


def coalescence_battery(config: ExperimentConfig, u: float, v: float) -> list[TestReport]:
    """Joint structure of two labels: increments are uncorrelated before
    the meeting time and the trajectories are identical afterwards."""
    if not 0 <= u <= 1 and 0 <= v <= 1:
        raise ValueError("u, v must lie in [0,1]")
    reports = []
    reps = config.replicas
    start = time.perf_counter()
    cross_sum = 0.0
    cross_sq = 0.0
    post_defect = 0.0
    met = 0
    for r in range(reps):
        path = _simulate_recorded(config, replica_rng(config.master_seed, r))
        yu = path.eval_grid(u)
        yv = path.eval_grid(v)
        k_star = path.meeting_index(u, v)
        stop = path.times.size if k_star is None else k_star
        du = np.diff(yu[: stop + 1] if k_star is not None else yu)
        dv = np.diff(yv[: stop + 1] if k_star is not None else yv)
        # products of pre-meeting increments: mean-zero under (C4)
        prod = du[: max(0, stop - 1)] * dv[: max(0, stop - 1)]
        cross_sum += prod.sum()
        cross_sq += (prod * prod).sum()
        if k_star is not None:
            met += 1
            post_defect = max(post_defect, float(np.max(np.abs(yu[k_star:] - yv[k_star:]))))
    if u == v:
        z = 0.0
    else:
        z = abs(cross_sum) / math.sqrt(cross_sq) if cross_sq > 0 else 0.0
    reports.append(TestReport.make(
        "pre-meeting-cross-variation", z, (0.0, 3.0), reps, start,
        notes=f"pooled z of increment products before tau; {met}/{reps} paths met"))
    t0 = time.perf_counter()
    reports.append(TestReport.make(
        "post-meeting-identity", post_defect, (0.0, 0.0), reps, t0,
        notes="trajectories coincide exactly from the meeting index on"))
    return reports


def generator_battery(
    config: ExperimentConfig, replicas: int | None = None
) -> list[TestReport]:
    """Replicated probe of the generator constant with f(x) = x^2.

    The compensator of <x^2, mu_t> accumulates N(t) dt (half the naive
    sum of f'' over the support), so the defect with c = 1/2 is
    mean-zero while c = 1 overshoots; the defect's second moment matches
    the accumulated <(f')^2, mu> integral.
    """
    reps = config.replicas if replicas is None else replicas
    dts = np.diff(config.grid_times())
    m0 = float(np.mean(init_uniform(config.n, config.initial_convention).cell_positions() ** 2))
    start = time.perf_counter()
    d_half = np.empty(reps)
    d_full = np.empty(reps)
    qv_exp = np.empty(reps)
    for r in range(reps):
        res = run_replica(config, replica_rng(config.master_seed, r), dts=dts)
        m_t = float((res.positions**2 * res.counts).sum() / config.n)
        gen = 2.0 * res.int_n  # integral of sum of f'' over the support
        d_half[r] = m_t - m0 - 0.5 * gen
        d_full[r] = m_t - m0 - gen
        qv_exp[r] = 4.0 * res.int_msq  # integral of <(f')^2, mu>
    reports = []
    z_half = abs(d_half.mean()) / (d_half.std(ddof=1) / math.sqrt(reps))
    reports.append(TestReport.make(
        "generator-half-constant", z_half, (0.0, 3.0), reps, start,
        notes="defect with c = 1/2 is mean zero"))
    t0 = time.perf_counter()
    z_full = abs(d_full.mean()) / (d_full.std(ddof=1) / math.sqrt(reps))
    reports.append(TestReport.make(
        "generator-full-constant-rejected", z_full, (3.0, math.inf), reps, t0,
        notes="defect with c = 1 is decisively biased"))
    t0 = time.perf_counter()
    diff = d_half**2 - qv_exp
    z_qv = abs(diff.mean()) / (diff.std(ddof=1) / math.sqrt(reps))
    reports.append(TestReport.make(
        "generator-qv-identity", z_qv, (0.0, 3.0), reps, t0,
        notes="E D_T^2 matches E int <(f')^2, mu_s> ds"))
    return reports
