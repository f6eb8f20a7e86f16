"""Loss, exact backpropagation through the temperature layer, Adam.

The loss is the multi-class cross-entropy of the softmax over the raw
class scores. Scores arrive as (mantissa, power-of-two exponent) pairs
and are recombined exactly with ``ldexp``; the exponent is clamped to
the representable window (|k| <= 1000 binary orders), beyond which the
softmax is fully saturated anyway. Gradients flow through the same
clamped recombination, so analytic and finite-difference derivatives
agree everywhere the window is not hit.

Backpropagation is explicit: the gradient with respect to each fused
site tensor comes from cached left/right partial products of the chain,
and the chain rule back to the raw weights is the elementwise
coefficient ``(1 - beta*A) * exp(-beta*A)``, the exact derivative of
``A * exp(-beta*A)``. At ``beta = 0`` the coefficient is identically 1
and the whole path reduces bit-for-bit to plain MPS backprop.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .data import Dataset, batches
from .features import embed_images
from .model import MpsClassifier, effective_sites
from .seeding import derive_seed
from .tensor import exp_scale

__all__ = [
    "TrainConfig",
    "EpochMetrics",
    "AdamState",
    "softmax_cross_entropy",
    "grad_coefficient",
    "backward",
    "adam_step",
    "train",
    "evaluate",
    "forward_values",
    "logits_single",
]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 50
    epochs: int = 10
    beta: float = 0.0
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    feature_map: str = "linear"
    grad_mode: str = "mean"  # or "sum"
    clip_grad: float | None = None
    baseline: bool = False  # skip the temperature code path entirely
    temper_label: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.grad_mode not in ("mean", "sum"):
            raise ValueError("grad_mode must be 'mean' or 'sum'")


@dataclass
class EpochMetrics:
    epoch: int
    step: int
    train_loss: float
    train_acc: float
    test_acc: float
    beta: float
    wall_time_s: float


# Clamp for the binary exponent of recombined scores: ldexp stays finite
# and softmax is numerically saturated long before the clamp bites.
_EXP2_CLAMP = 1000


def _true_logits(values: np.ndarray, kout: np.ndarray) -> np.ndarray:
    """Exact ``values * 2**kout`` with the exponent clamped."""
    k = np.clip(kout, -_EXP2_CLAMP, _EXP2_CLAMP).astype(np.int32)
    if values.ndim == 2 and k.ndim == 1:
        k = k[:, None]
    return np.ldexp(values, k)


def softmax_cross_entropy(logits, label: int):
    """Cross-entropy of the softmax over the class scores.

    ``logits`` may be a ``ScaledVector`` or a plain vector; a scaled
    vector is recombined to raw scores first (the gain shifts every
    class equally in log magnitude, so the prediction itself never
    depends on it). Returns ``(loss, grad)`` with the classic softmax
    gradient ``softmax(logits) - onehot(label)``, computed with
    log-sum-exp stabilization.
    """
    if isinstance(logits, engine.ScaledVector):
        gain = math.exp(min(max(logits.log_scale, -700.0), 700.0))
        values = np.asarray(logits.values, dtype=np.float64) * gain
    else:
        values = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < values.shape[-1]:
        raise ValueError(f"label {label} out of range for {values.shape[-1]} classes")
    losses, probs = _softmax_ce_batch(values[None, :], np.array([label]))
    grad = probs[0]
    grad[label] -= 1.0
    return float(losses[0]), grad


def _softmax_ce_batch(values: np.ndarray, labels: np.ndarray):
    """Log-sum-exp stabilized losses and probabilities, batched."""
    shifted = values - values.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    norm = expv.sum(axis=1)
    probs = expv / norm[:, None]
    rows = np.arange(values.shape[0])
    losses = np.log(norm) - shifted[rows, labels]
    return losses, probs


def grad_coefficient(site, beta: float) -> np.ndarray:
    """Elementwise ``(1 - beta*a) * exp(-beta*a)``.

    This is the derivative of the fused tensor ``a * exp(-beta*a)`` with
    respect to ``a``; it reduces to all-ones at ``beta = 0`` and crosses
    zero exactly at ``a = 1/beta``.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    site = np.asarray(site, dtype=np.float64)
    return (1.0 - beta * site) * exp_scale(site, beta)


def _packed_for(model: MpsClassifier, beta: float, baseline: bool, temper_label: bool):
    if baseline:
        return engine.pack_model(model)
    eff = effective_sites(model, beta, temper_label)
    shell = MpsClassifier(
        eff, model.bond_dim, model.num_classes, model.label_site, model.local_dim
    )
    return engine.pack_model(shell)


def _batch_loss_grads(model, packed, psi, labels, beta, config):
    """Forward + backward over one batch; returns loss, grads, predictions."""
    kernels = engine.get_kernels()
    cores, label_core = packed
    values, kout, lvec, kl, rvec, kr = kernels.seq_forward(
        cores, label_core, model.label_site, psi, True
    )
    losses, probs = _softmax_ce_batch(_true_logits(values, kout), labels)
    gvals = probs.copy()
    gvals[np.arange(len(labels)), labels] -= 1.0
    # chain rule through the recombination: d loss / d values = g * 2**kout
    gvals = _true_logits(gvals, kout)
    B = len(labels)
    weights = np.full(B, 1.0 / B if config.grad_mode == "mean" else 1.0)
    grad_cores, grad_label = kernels.seq_backward(
        cores, label_core, model.label_site, psi,
        lvec, kl, rvec, kr, gvals, kout, weights,
    )
    grads = engine.unpack_site_grads(grad_cores, grad_label, model)
    if not config.baseline:
        for i, site in enumerate(model.sites):
            if i == model.label_site and not config.temper_label:
                continue
            grads[i] *= grad_coefficient(site, beta)
    preds = np.argmax(values, axis=1)
    return float(np.mean(losses)), grads, preds


def backward(model: MpsClassifier, image, label: int, beta: float,
             temper_label: bool = True, baseline: bool = False):
    """Loss and per-site gradients for a single embedded image."""
    psi = np.asarray(image, dtype=np.float64)[None, :, :]
    config = TrainConfig(beta=beta, temper_label=temper_label, baseline=baseline,
                         grad_mode="sum", epochs=1)
    packed = _packed_for(model, beta, baseline, temper_label)
    loss, grads, _ = _batch_loss_grads(
        model, packed, psi, np.array([label]), beta, config
    )
    return loss, grads


@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def zeros(cls, model: MpsClassifier) -> "AdamState":
        return cls(
            t=0,
            m=[np.zeros_like(s) for s in model.sites],
            v=[np.zeros_like(s) for s in model.sites],
        )


def adam_step(model: MpsClassifier, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update, applied in place."""
    if not state.m:
        state.m = [np.zeros_like(s) for s in model.sites]
        state.v = [np.zeros_like(s) for s in model.sites]
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for site, g, m, v in zip(model.sites, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        site -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    return model, state


def _epoch_eval(model, dataset, config, threads=1):
    values, kout = forward_values(
        model, dataset.images, config.beta,
        feature_map=config.feature_map, baseline=config.baseline,
        temper_label=config.temper_label, threads=threads,
    )
    losses, _ = _softmax_ce_batch(_true_logits(values, kout), dataset.labels)
    acc = float(np.mean(np.argmax(values, axis=1) == dataset.labels))
    return float(np.mean(losses)), acc


def train(model: MpsClassifier, dataset: Dataset, config: TrainConfig,
          test_dataset: Dataset | None = None, threads: int = 1):
    """Mini-batch Adam training; deterministic for a fixed config seed.

    Returns the trained model and one metrics row per epoch (or a single
    initial-evaluation row when ``epochs == 0``).
    """
    if len(dataset.labels) == 0:
        raise ValueError("empty dataset")
    state = AdamState.zeros(model)
    metrics: list[EpochMetrics] = []
    step = 0
    if config.epochs == 0:
        start = time.perf_counter()
        loss, acc = _epoch_eval(model, dataset, config, threads)
        test_acc = (
            evaluate(model, test_dataset, config.beta,
                     feature_map=config.feature_map, baseline=config.baseline,
                     temper_label=config.temper_label, threads=threads)
            if test_dataset is not None else float("nan")
        )
        metrics.append(EpochMetrics(0, 0, loss, acc, test_acc, config.beta,
                                    time.perf_counter() - start))
        return model, metrics
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        epoch_seed = derive_seed(config.seed, f"shuffle-epoch-{epoch}")
        for images, labels in batches(dataset, config.batch_size, epoch_seed):
            psi = embed_images(images, config.feature_map)
            packed = _packed_for(
                model, config.beta, config.baseline, config.temper_label
            )
            loss, grads, _ = _batch_loss_grads(
                model, packed, psi, labels, config.beta, config
            )
            if config.clip_grad is not None:
                grads = [np.clip(g, -config.clip_grad, config.clip_grad)
                         for g in grads]
            adam_step(model, grads, state, config)
            step += 1
        # end-of-epoch metrics, so a later eval of the checkpoint on the
        # training set reproduces the reported train accuracy exactly
        train_loss, train_acc = _epoch_eval(model, dataset, config, threads)
        test_acc = (
            evaluate(model, test_dataset, config.beta,
                     feature_map=config.feature_map, baseline=config.baseline,
                     temper_label=config.temper_label, threads=threads)
            if test_dataset is not None else float("nan")
        )
        metrics.append(EpochMetrics(
            epoch, step, train_loss, train_acc, test_acc,
            config.beta, time.perf_counter() - start,
        ))
    return model, metrics


def forward_values(model: MpsClassifier, images, beta: float,
                   feature_map: str = "linear", baseline: bool = False,
                   temper_label: bool = True, order: str = "sequential",
                   threads: int = 1, chunk_size: int = 512):
    """Score values and exponents for a stack of images, chunked.

    Per-sample results are independent, so slicing the batch across
    worker threads reproduces the single-threaded output exactly.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 1:
        images = images[None, :]
    kernels = engine.get_kernels()
    packed = _packed_for(model, beta, baseline, temper_label)
    cores, label_core = packed

    def run(chunk):
        psi = embed_images(chunk, feature_map)
        if order == "sequential":
            out = kernels.seq_forward(cores, label_core, model.label_site, psi)
            return out[0], out[1]
        if order == "parallel_tree":
            return kernels.tree_forward(cores, label_core, model.label_site, psi)
        raise ValueError(f"unknown contraction order {order!r}")

    chunks = [images[i : i + chunk_size] for i in range(0, len(images), chunk_size)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    values = np.concatenate([p[0] for p in parts], axis=0)
    kout = np.concatenate([p[1] for p in parts], axis=0)
    return values, kout


def evaluate(model: MpsClassifier, dataset: Dataset, beta: float,
             feature_map: str = "linear", baseline: bool = False,
             temper_label: bool = True, order: str = "sequential",
             threads: int = 1) -> float:
    """Fraction of samples whose top score matches the label.

    Ties break toward the lowest class index (argmax convention).
    """
    if len(dataset.labels) == 0:
        raise ValueError("empty dataset")
    values, _ = forward_values(
        model, dataset.images, beta, feature_map=feature_map,
        baseline=baseline, temper_label=temper_label, order=order,
        threads=threads,
    )
    return float(np.mean(np.argmax(values, axis=1) == dataset.labels))


def logits_single(model: MpsClassifier, image, beta: float,
                  order: str = "sequential", baseline: bool = False,
                  temper_label: bool = True) -> engine.ScaledVector:
    """Reference per-image forward pass through the shaped engine ops."""
    sites = model.sites if baseline else effective_sites(model, beta, temper_label)
    mats = engine.absorb_features(sites, image)
    if order == "sequential":
        return engine.contract_sequential(mats, model.label_site)
    if order == "parallel_tree":
        return engine.contract_parallel(mats, model.label_site)
    raise ValueError(f"unknown contraction order {order!r}")
