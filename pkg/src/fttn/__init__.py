"""fttn: a finite-temperature tensor network image classifier.

An MPS classifier whose weights pass through an elementwise temperature
layer ``A * exp(-beta * A)`` before contraction, trained by Adam with
the matching elementwise gradient coefficient, with a simulated
annealing search over beta.
"""

from .anneal import AnnealConfig, anneal_beta, accuracy_objective
from .data import Dataset, load_dataset, load_idx_images, load_idx_labels
from .engine import (
    ScaledVector,
    absorb_features,
    contract_parallel,
    contract_sequential,
    count_flops,
)
from .features import embed_image, embed_images, embed_pixel
from .model import (
    MpsClassifier,
    effective_sites,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    AdamState,
    TrainConfig,
    adam_step,
    backward,
    evaluate,
    grad_coefficient,
    softmax_cross_entropy,
    train,
)

__version__ = "0.1.0"
