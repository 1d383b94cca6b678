"""Change of measure: drifted flows, likelihood ratios, tilted sampling."""

import math
import warnings

import numpy as np
import pytest

from massflow import (
    DriftPath,
    ExperimentConfig,
    drift_convergence_diagnostic,
    log_likelihood_ratio,
    simulate_drifted,
    simulate_path,
    tilted_probability,
)
from massflow.girsanov import identity_grid
from massflow.rng import replica_rng
from massflow.flow import _simulate_recorded

from _oracles import std_normal_cdf


def _grid(T=1.0, K=100):
    return np.linspace(0.0, T, K + 1)


class TestDriftPath:
    def test_forward_differences(self):
        times = _grid(1.0, 4)
        vals = np.outer(times, np.ones(3))
        d = DriftPath.from_values(times, vals)
        assert np.allclose(d.derivs, 1.0)

    def test_straight_line_starts_at_identity(self):
        g = identity_grid(8) + 0.3
        d = DriftPath.straight_line(g, _grid())
        assert np.allclose(d.values[0], identity_grid(8))
        assert np.allclose(d.values[-1], g)
        assert np.allclose(d.derivs, 0.3)

    def test_class_r_flag(self):
        inc = DriftPath.straight_line(identity_grid(8) + 0.2, _grid())
        assert inc.in_class_r
        flat = DriftPath.constant_integrand(1.0, 8, _grid())
        assert not flat.in_class_r  # constant rows are not strictly increasing


class TestSimulateDrifted:
    def test_reduction_to_plain_flow(self):
        cfg = ExperimentConfig(n=12, T=0.5, dt=5e-3, master_seed=31)
        zero = DriftPath.constant_integrand(0.0, 12, cfg.grid_times())
        a = simulate_path(cfg, 31)
        b = simulate_drifted(cfg, zero, 1.0, 31)
        assert np.array_equal(a.cell_positions, b.cell_positions)

    def test_zero_noise_zero_drift_is_frozen(self):
        cfg = ExperimentConfig(n=6, T=0.5, dt=5e-3)
        zero = DriftPath.constant_integrand(0.0, 6, cfg.grid_times())
        path = simulate_drifted(cfg, zero, 0.0, 1)
        assert np.all(path.cell_positions == path.cell_positions[0])

    def test_constant_drift_moves_mean(self):
        cfg = ExperimentConfig(n=8, T=1.0, dt=1e-2)
        phi = DriftPath.from_function(
            lambda u, t: u + 0.5 * t, 8, cfg.grid_times(), fn_dot=lambda u, t: 0.5
        )
        ends = [
            simulate_drifted(cfg, phi, 0.02, seed).cell_positions[-1].mean()
            for seed in range(50)
        ]
        expect = np.mean(identity_grid(8)) + 0.5
        assert abs(np.mean(ends) - expect) < 4 * math.sqrt(0.02 / 50)

    def test_zero_noise_pure_transport(self):
        cfg = ExperimentConfig(n=8, T=1.0, dt=1e-2)
        phi = DriftPath.from_function(
            lambda u, t: u + 0.25 * t, 8, cfg.grid_times(), fn_dot=lambda u, t: 0.25
        )
        path = simulate_drifted(cfg, phi, 0.0, 3)
        assert np.allclose(
            path.cell_positions[-1], identity_grid(8) + 0.25, atol=1e-12
        )

    def test_monotone_and_mass_conserving(self):
        cfg = ExperimentConfig(n=16, T=0.5, dt=2e-3)
        phi = DriftPath.from_function(
            lambda u, t: u + 0.3 * t, 16, cfg.grid_times(), fn_dot=lambda u, t: 0.3
        )
        path = simulate_drifted(cfg, phi, 0.3, 7)
        for k in (0, path.num_steps // 2, path.num_steps):
            s = path.state(k)
            assert np.all(np.diff(s.positions) > 0)
            assert s.counts.sum() == 16

    def test_rejects_bad_eps_and_grids(self):
        cfg = ExperimentConfig(n=8, T=0.5, dt=5e-3)
        phi = DriftPath.constant_integrand(0.0, 8, cfg.grid_times())
        with pytest.raises(ValueError):
            simulate_drifted(cfg, phi, -1.0, 0)
        wrong = DriftPath.constant_integrand(0.0, 8, np.linspace(0, 0.4, 11))
        with pytest.raises(ValueError):
            simulate_drifted(cfg, wrong, 1.0, 0)


class TestLogLikelihoodRatio:
    def test_zero_integrand(self):
        cfg = ExperimentConfig(n=8, T=0.5, dt=5e-3)
        path = simulate_path(cfg, 5)
        h = DriftPath.constant_integrand(0.0, 8, cfg.grid_times())
        assert log_likelihood_ratio(path, h, 0.3) == 0.0

    def test_constant_closed_form(self):
        cfg = ExperimentConfig(n=8, T=0.75, dt=5e-3)
        path = simulate_path(cfg, 6)
        c, eps = 0.8, 0.2
        h = DriftPath.constant_integrand(c, 8, cfg.grid_times())
        com = path.cell_positions.mean(axis=1)
        closed = (c * (com[-1] - com[0]) - 0.5 * c * c * 0.75) / eps
        assert log_likelihood_ratio(path, h, eps) == pytest.approx(closed, abs=1e-12)

    def test_eps_scaling(self):
        cfg = ExperimentConfig(n=4, T=0.5, dt=5e-3)
        path = simulate_path(cfg, 7)
        h = DriftPath.constant_integrand(0.4, 4, cfg.grid_times())
        assert log_likelihood_ratio(path, h, 0.2) == pytest.approx(
            2.0 * log_likelihood_ratio(path, h, 0.4), abs=1e-12
        )
        with pytest.raises(ValueError):
            log_likelihood_ratio(path, h, 0.0)

    def test_unit_mean_small(self):
        # E exp(log M) = 1: exact for constant h because the center of
        # mass is exactly Gaussian in the discrete scheme
        cfg = ExperimentConfig(n=8, T=0.5, dt=2e-3, master_seed=41)
        h = DriftPath.constant_integrand(0.5, 8, cfg.grid_times())
        eps = 0.25
        vals = []
        for r in range(800):
            path = _simulate_recorded(cfg, replica_rng(41, r), eps=eps)
            vals.append(math.exp(log_likelihood_ratio(path, h, eps)))
        vals = np.array(vals)
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - 1.0) <= 3 * se


class TestTiltedProbability:
    def test_zero_drift_is_plain_frequency(self):
        grid = _grid(0.5, 50)
        h0 = DriftPath.constant_integrand(0.0, 4, grid)
        est = tilted_probability(
            lambda p: p.cell_positions[-1].mean() > 0.625, h0, 1.0, 300, 17
        )
        assert est.hits / est.replicas == pytest.approx(est.estimate, abs=1e-12)

    def test_always_true_event_estimates_one(self):
        grid = _grid(0.5, 50)
        h = DriftPath.constant_integrand(0.4, 4, grid)
        est = tilted_probability(lambda p: True, h, 0.5, 600, 19)
        assert abs(est.estimate - 1.0) <= 3 * est.std_error
        assert not est.degenerate

    def test_gaussian_tail_single_particle(self):
        # n = 1: the particle is Brownian, the tail is exactly Gaussian
        T, eps, a = 1.0, 0.1, 1.4
        grid = _grid(T, 100)
        h = DriftPath.constant_integrand(a - 1.0, 1, grid)
        est = tilted_probability(
            lambda p: p.cell_positions[-1, 0] > a, h, eps, 2000, 23
        )
        oracle = 1.0 - std_normal_cdf((a - 1.0) / math.sqrt(eps * T))
        assert abs(est.estimate - oracle) <= 3 * est.std_error

    def test_degenerate_flagged(self):
        grid = _grid(0.25, 25)
        h0 = DriftPath.constant_integrand(0.0, 2, grid)
        with warnings.catch_warnings(record=True) as captured:
            warnings.simplefilter("always")
            est = tilted_probability(lambda p: False, h0, 1.0, 10, 3)
        assert est.degenerate and est.estimate == 0.0
        assert any("zero" in str(w.message) for w in captured)

    def test_replica_validation(self):
        h0 = DriftPath.constant_integrand(0.0, 2, _grid(0.25, 25))
        with pytest.raises(ValueError):
            tilted_probability(lambda p: True, h0, 1.0, 1, 3)


class TestDriftConvergence:
    def test_distances_decrease_in_eps(self):
        cfg = ExperimentConfig(n=32, T=1.0, dt=1e-2, replicas=16, master_seed=29)
        phi = DriftPath.from_function(
            lambda u, t: u + 0.3 * t, 32, cfg.grid_times(), fn_dot=lambda u, t: 0.3
        )
        diag = drift_convergence_diagnostic(phi, [0.2, 0.1, 0.05], cfg)
        means = [row[1] for row in diag.rows]
        assert means[0] > means[1] > means[2]
        assert not diag.class_r_warning

    def test_not_class_r_warns(self):
        cfg = ExperimentConfig(n=8, T=0.5, dt=1e-2, replicas=4, master_seed=1)
        flat_row = np.repeat(identity_grid(8)[::2], 2)  # plateaus
        phi = DriftPath.from_values(
            cfg.grid_times(), np.tile(flat_row, (cfg.grid_times().size, 1))
        )
        with warnings.catch_warnings(record=True) as captured:
            warnings.simplefilter("always")
            diag = drift_convergence_diagnostic(phi, [0.1], cfg)
        assert diag.class_r_warning
        assert any("strictly increasing" in str(w.message) for w in captured)

    def test_csv_export(self, tmp_path):
        cfg = ExperimentConfig(n=8, T=0.5, dt=1e-2, replicas=4, master_seed=2)
        phi = DriftPath.from_function(
            lambda u, t: u + 0.1 * t, 8, cfg.grid_times(), fn_dot=lambda u, t: 0.1
        )
        diag = drift_convergence_diagnostic(phi, [0.1, 0.05], cfg)
        out = tmp_path / "d.csv"
        diag.to_csv(out)
        lines = out.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "epsilon,mean_sup_distance,std_error"
        assert len(lines) == 3
