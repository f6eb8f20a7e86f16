import math

import pytest

from fttn.anneal import (
    AnnealConfig,
    AnnealError,
    accuracy_objective,
    anneal_beta,
)
from fttn.training import TrainConfig


def synthetic(beta):
    return -((beta - 0.4) ** 2)


class TestAnnealBeta:
    def test_finds_synthetic_optimum(self):
        for seed in (0, 1, 2):
            cfg = AnnealConfig(beta_init=1.0, iterations=200, seed=seed)
            beta_star, trace = anneal_beta(synthetic, cfg)
            assert abs(beta_star - 0.4) <= 0.05
            assert len(trace) == 200

    def test_degenerate_step_width_stays_put(self):
        cfg = AnnealConfig(beta_init=0.7, step_width=0.0, iterations=50, seed=3)
        beta_star, trace = anneal_beta(synthetic, cfg)
        assert beta_star == 0.7
        assert all(p.beta == 0.7 for p in trace)

    def test_deterministic_per_seed(self):
        cfg = AnnealConfig(beta_init=0.9, iterations=80, seed=4)
        a = anneal_beta(synthetic, cfg)
        b = anneal_beta(synthetic, cfg)
        assert a[0] == b[0]
        assert [(p.beta, p.score, p.accepted) for p in a[1]] == [
            (p.beta, p.score, p.accepted) for p in b[1]
        ]

    def test_non_finite_objective_aborts_with_trace(self):
        calls = []

        def bad(beta):
            calls.append(beta)
            return float("nan") if len(calls) > 3 else synthetic(beta)

        cfg = AnnealConfig(beta_init=0.5, iterations=50, seed=5)
        with pytest.raises(AnnealError) as err:
            anneal_beta(bad, cfg)
        assert len(err.value.trace) == 2  # two completed proposals

    def test_beta_never_negative(self):
        cfg = AnnealConfig(beta_init=0.01, step_width=0.5, iterations=100, seed=6)
        _, trace = anneal_beta(synthetic, cfg)
        assert all(p.beta >= 0.0 for p in trace)

    def test_best_ever_is_trace_maximum(self):
        cfg = AnnealConfig(beta_init=1.5, iterations=150, seed=7)
        beta_star, trace = anneal_beta(synthetic, cfg)
        assert synthetic(beta_star) >= max(p.score for p in trace)

    def test_anneal_temperature_cools_monotonically(self):
        cfg = AnnealConfig(beta_init=0.5, iterations=60, seed=8,
                           cooling_rate=0.9)
        _, trace = anneal_beta(synthetic, cfg)
        temps = [p.anneal_temp for p in trace]
        assert all(b < a for a, b in zip(temps, temps[1:]))
        # at fixed negative delta the acceptance probability shrinks
        probs = [math.exp(-0.01 / t) for t in temps]
        assert all(b < a for a, b in zip(probs, probs[1:]))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AnnealConfig(beta_init=-1.0)
        with pytest.raises(ValueError):
            AnnealConfig(cooling_rate=1.5)
        with pytest.raises(ValueError):
            AnnealConfig(iterations=0)


class TestAccuracyObjective:
    def make(self, toy_dataset, beta, **kw):
        tc = TrainConfig(learning_rate=1e-3, batch_size=10, epochs=1, seed=9)
        template = {"chi": 2, "seed": 10}
        return accuracy_objective(toy_dataset, template, tc, beta,
                                  proxy_epochs=kw.get("proxy_epochs", 3),
                                  proxy_subset=kw.get("proxy_subset", 80))

    def test_toy_score_in_range(self, toy_dataset):
        score = self.make(toy_dataset, 0.1)
        assert 0.5 < score <= 1.0

    def test_deterministic(self, toy_dataset):
        a = self.make(toy_dataset, 0.3)
        b = self.make(toy_dataset, 0.3)
        assert a == b

    def test_extreme_beta_not_better_than_zero(self, toy_dataset):
        flat = self.make(toy_dataset, 100.0)
        base = self.make(toy_dataset, 0.0)
        assert flat <= base

    def test_empty_dataset_rejected(self, toy_dataset):
        with pytest.raises(ValueError):
            self.make(toy_dataset.take([]), 0.1)
