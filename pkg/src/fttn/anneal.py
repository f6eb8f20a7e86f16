"""Simulated-annealing search over the temperature-like parameter beta.

A Metropolis chain on the half-line beta >= 0: improvements are always
taken, worse moves with probability ``exp(delta / anneal_temp)``, and
the annealer's own temperature cools geometrically each iteration. The
annealer temperature is a search control, distinct from beta itself.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .model import init_model
from .seeding import derive_seed

__all__ = [
    "AnnealConfig",
    "AnnealError",
    "TracePoint",
    "anneal_beta",
    "accuracy_objective",
]


@dataclass
class AnnealConfig:
    beta_init: float = 0.5
    step_width: float = 0.05
    anneal_temp_init: float = 1.0
    cooling_rate: float = 0.95
    iterations: int = 100
    seed: int = 0
    proxy_epochs: int = 2
    proxy_subset: int = 400

    def __post_init__(self):
        if self.beta_init < 0:
            raise ValueError("beta_init must be non-negative")
        if self.step_width < 0:
            raise ValueError("step_width must be non-negative")
        if self.anneal_temp_init <= 0:
            raise ValueError("anneal_temp_init must be positive")
        if not 0.0 < self.cooling_rate < 1.0:
            raise ValueError("cooling_rate must lie in (0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.proxy_epochs < 1 or self.proxy_subset < 1:
            raise ValueError("proxy budget must be positive")


@dataclass
class TracePoint:
    iteration: int
    beta: float
    score: float
    accepted: bool
    anneal_temp: float


class AnnealError(RuntimeError):
    """Objective returned a non-finite score; ``trace`` holds progress."""

    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = trace


def anneal_beta(objective, config: AnnealConfig):
    """Maximize ``objective(beta)``; returns (best beta, full trace).

    Deterministic per seed. Score ties break toward the smaller beta.
    """
    rng = np.random.default_rng(config.seed)
    trace: list[TracePoint] = []

    def checked(beta: float) -> float:
        score = float(objective(beta))
        if not math.isfinite(score):
            raise AnnealError(
                f"objective returned non-finite score {score} at beta={beta}",
                trace,
            )
        return score

    beta = config.beta_init
    score = checked(beta)
    best_beta, best_score = beta, score
    temp = config.anneal_temp_init
    for it in range(config.iterations):
        proposal = max(0.0, beta + rng.uniform(-config.step_width,
                                               config.step_width))
        prop_score = checked(proposal)
        delta = prop_score - score
        accepted = delta >= 0 or rng.uniform() < math.exp(delta / temp)
        if accepted:
            beta, score = proposal, prop_score
        if prop_score > best_score or (
            prop_score == best_score and proposal < best_beta
        ):
            best_beta, best_score = proposal, prop_score
        trace.append(TracePoint(it, proposal, prop_score, accepted, temp))
        temp *= config.cooling_rate
    return best_beta, trace


def accuracy_objective(dataset: Dataset, model_template: dict, train_config,
                       beta: float, proxy_epochs: int = 2,
                       proxy_subset: int = 400,
                       holdout_fraction: float = 0.25) -> float:
    """Proxy score: short training run at ``beta``, held-out accuracy.

    A fresh model is initialized from the template seed, trained for
    ``proxy_epochs`` on ``proxy_subset`` samples, and scored on a slice
    held out before training. Deterministic for identical arguments.
    """
    from .training import evaluate, train

    if len(dataset) == 0:
        raise ValueError("empty dataset")
    n = min(proxy_subset, len(dataset))
    if n < 2:
        raise ValueError("proxy subset needs at least two samples")
    rng = np.random.default_rng(derive_seed(train_config.seed, "anneal-subset"))
    subset = dataset.take(rng.permutation(len(dataset))[:n])
    n_val = min(max(1, int(round(n * holdout_fraction))), n - 1)
    val = subset.take(np.arange(n_val))
    fit = subset.take(np.arange(n_val, n))
    model = init_model(
        n_sites=fit.images.shape[1],
        chi=model_template["chi"],
        num_classes=fit.num_classes,
        seed=model_template.get("seed", train_config.seed),
        noise_scale=model_template.get("noise_scale", 1e-2),
        label_site=model_template.get("label_site"),
    )
    cfg = replace(train_config, beta=beta, epochs=proxy_epochs)
    model, _ = train(model, fit, cfg)
    return evaluate(model, val, beta, feature_map=cfg.feature_map,
                    baseline=cfg.baseline, temper_label=cfg.temper_label)
