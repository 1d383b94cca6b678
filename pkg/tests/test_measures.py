"""Pushforward measures, quantiles, and exact Wasserstein geometry."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from massflow import (
    AtomicMeasure,
    QuantileFunction,
    cluster_count,
    init_uniform,
    l2_lambda_distance,
    l2_mu_distance,
    pushforward,
    quantile,
    wasserstein2,
    wasserstein2_to_uniform,
)
from massflow.flow import FlowState
from massflow.measures import kappa_cell_masses

from _oracles import l2_grid_distance, random_flow_state, transport_cost_monotone


def _random_measure(rng, max_atoms=6):
    k = int(rng.integers(1, max_atoms + 1))
    pos = np.sort(rng.normal(0, 1, k))
    while k > 1 and np.any(np.diff(pos) < 1e-9):
        pos = np.sort(rng.normal(0, 1, k))
    w = rng.dirichlet(np.ones(k))
    w = w / w.sum()
    return AtomicMeasure.from_points(pos, w)


class TestPushforward:
    def test_initial_state(self):
        mu = pushforward(init_uniform(2))
        assert np.allclose(mu.positions, [0.5, 1.0])
        assert np.allclose(mu.weights, [0.5, 0.5])

    def test_fully_coalesced_is_dirac(self):
        mu = pushforward(FlowState(4, 1.0, [0.37], [4]))
        assert mu.num_atoms == 1 and mu.positions[0] == 0.37 and mu.weights[0] == 1.0

    def test_weights_from_counts(self):
        mu = pushforward(FlowState(4, 0.0, [0.2, 0.7], [1, 3]))
        assert np.allclose(mu.weights, [0.25, 0.75])


class TestQuantile:
    def test_dirac_constant(self):
        q = quantile(AtomicMeasure.dirac(0.5))
        assert q(0.0) == q(0.3) == q(1.0) == 0.5

    def test_two_atoms(self):
        q = quantile(AtomicMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.5])))
        assert q(0.2) == 0.0 and q(0.5) == 0.0 and q(0.51) == 1.0 and q(1.0) == 1.0

    def test_round_trip_equals_state_step_function(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            s = random_flow_state(rng, 12)
            q = quantile(pushforward(s))
            assert np.array_equal(q.values, s.positions)
            # thresholds agree up to float accumulation of the weights
            assert np.allclose(q.thresholds, np.cumsum(s.counts) / 12, rtol=0, atol=1e-12)
            u = rng.uniform(0, 1, 50)
            cells = np.minimum((u * 12).astype(int), 11)
            assert np.array_equal(q(u), s.cell_positions()[cells])


class TestWasserstein:
    def test_point_masses(self):
        assert wasserstein2(AtomicMeasure.dirac(0.0), AtomicMeasure.dirac(1.0)) == 1.0

    def test_identity_of_indiscernibles(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            a = _random_measure(rng)
            assert wasserstein2(a, a) == 0.0

    def test_discretized_uniform_vs_dirac_converges(self):
        # exact n-atom value approaches sqrt(1/12)
        prev_err = None
        for n in (8, 64, 512):
            d = wasserstein2(pushforward(init_uniform(n)), AtomicMeasure.dirac(0.5))
            err = abs(d - np.sqrt(1.0 / 12.0))
            if prev_err is not None:
                assert err < prev_err
            prev_err = err
        assert prev_err < 1e-3

    def test_matches_monotone_coupling_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            a, b = _random_measure(rng), _random_measure(rng)
            assert wasserstein2(a, b) == pytest.approx(
                transport_cost_monotone(a.positions, a.weights, b.positions, b.weights),
                abs=1e-9,
            )

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_metric_axioms(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (_random_measure(rng) for _ in range(3))
        dab, dba = wasserstein2(a, b), wasserstein2(b, a)
        assert dab == pytest.approx(dba, abs=1e-12)
        assert dab >= 0
        assert wasserstein2(a, c) <= dab + wasserstein2(b, c) + 1e-12

    def test_isometry_with_grid_l2(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            s1, s2 = random_flow_state(rng, 16), random_flow_state(rng, 16)
            d_w = wasserstein2(pushforward(s1), pushforward(s2))
            d_l2 = l2_grid_distance(s1.cell_positions(), s2.cell_positions())
            assert abs(d_w - d_l2) < 1e-12


class TestClusterCount:
    def test_examples(self):
        assert cluster_count(init_uniform(5)) == 5
        assert cluster_count(FlowState(5, 1.0, [0.5], [5])) == 1

    def test_equals_mass_integral(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            s = random_flow_state(rng, 10)
            integral = np.sum((s.counts / s.n) / (s.counts / s.n))
            assert cluster_count(s) == int(round(integral))


class TestWeightedDistances:
    def test_identical_functions(self):
        f = QuantileFunction(np.array([0.5, 1.0]), np.array([0.0, 2.0]))
        assert l2_lambda_distance(f, f) == 0.0
        assert l2_mu_distance(f, f, 2.0) == 0.0

    def test_unit_gap_lambda(self):
        f = QuantileFunction(np.array([1.0]), np.array([0.0]))
        g = QuantileFunction(np.array([1.0]), np.array([1.0]))
        assert l2_lambda_distance(f, g) == 1.0

    def test_unit_gap_mu_beta2(self):
        f = QuantileFunction(np.array([1.0]), np.array([0.0]))
        g = QuantileFunction(np.array([1.0]), np.array([1.0]))
        assert l2_mu_distance(f, g, 2.0) == pytest.approx(np.sqrt(1.0 / 12.0), abs=1e-15)

    def test_mu_beta_validation(self):
        f = QuantileFunction(np.array([1.0]), np.array([0.0]))
        with pytest.raises(ValueError):
            l2_mu_distance(f, f, 1.0)

    def test_kappa_cell_masses_sum(self):
        masses = kappa_cell_masses(64, 2.0)
        assert masses.sum() == pytest.approx(1.0 / 12.0, abs=1e-15)
        assert np.all(masses > 0)

    def test_uniform_gap_formula(self):
        for n in (2, 17, 128):
            d = wasserstein2_to_uniform(pushforward(init_uniform(n)))
            assert d == pytest.approx(1.0 / (np.sqrt(3.0) * n), abs=1e-15)
        for n in (2, 17, 128):
            d = wasserstein2_to_uniform(pushforward(init_uniform(n, "midpoint")))
            assert d == pytest.approx(1.0 / (2.0 * np.sqrt(3.0) * n), abs=1e-15)


class TestSerialization:
    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        m = _random_measure(rng)
        path = tmp_path / "m.csv"
        m.to_csv(path)
        back = AtomicMeasure.from_csv(path)
        assert np.array_equal(back.positions, m.positions)
        assert np.array_equal(back.weights, m.weights)
        text = path.read_text(encoding="utf-8")
        assert text.startswith("position,weight\n")
        assert "\r" not in text

    def test_json_round_trip(self):
        m = AtomicMeasure(np.array([-1.0, 2.5]), np.array([0.25, 0.75]))
        back = AtomicMeasure.from_json(m.to_json())
        assert np.array_equal(back.positions, m.positions)
        data = json.loads(m.to_json())
        assert data["weights"] == [0.25, 0.75]

    def test_consolidation(self):
        m = AtomicMeasure.from_points([1.0, 0.0, 1.0], [0.25, 0.5, 0.25])
        assert m.num_atoms == 2
        assert np.allclose(m.positions, [0.0, 1.0])
        assert np.allclose(m.weights, [0.5, 0.5])

    def test_validation(self):
        with pytest.raises(ValueError):
            AtomicMeasure(np.array([0.0, 1.0]), np.array([0.7, 0.7]))
        with pytest.raises(ValueError):
            AtomicMeasure(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            QuantileFunction(np.array([0.5]), np.array([1.0]))
