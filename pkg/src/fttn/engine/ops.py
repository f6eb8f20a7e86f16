"""Reference contraction of an effective-site chain with one image.

Two orders are provided: the plain left-to-right accumulation and the
pairwise tree reduction whose levels are data-independent (each level's
pair results can be computed in any order, concurrently included).

Raw class scores over hundreds of sites under- or overflow float64, so
every intermediate is kept as ``values * 2**exponent`` with the mantissa
block renormalized into [0.5, 2] whenever its max magnitude leaves that
band. Rescaling multiplies by an exact power of two, so it never changes
the argmax and recombines exactly.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..tensor import DimensionMismatchError

__all__ = [
    "ScaledVector",
    "absorb_features",
    "contract_sequential",
    "contract_parallel",
    "count_flops",
    "count_flops_stages",
]

BAND_LO = 0.5
BAND_HI = 2.0


@dataclass
class ScaledVector:
    """Class scores as ``values * exp(log_scale)``.

    ``log_scale`` is a common positive gain applied to every class
    equally; it never changes the argmax.
    """

    values: np.ndarray
    log_scale: float

    def true_values(self) -> np.ndarray:
        """Recombine to raw scores (gain clipped to the float64 range)."""
        return self.values * math.exp(min(max(self.log_scale, -700.0), 700.0))

    def argmax(self) -> int:
        return int(np.argmax(self.values))


def _rescale(arr: np.ndarray, exponent: int):
    """Renormalize so max |arr| lands in [1, 2); exact power-of-two shift."""
    m = np.max(np.abs(arr))
    if m == 0.0 or BAND_LO <= m <= BAND_HI:
        return arr, exponent
    _, e = np.frexp(m)
    shift = 1 - int(e)
    return np.ldexp(arr, shift), exponent - shift


def _physical_axis(n_sites: int, index: int) -> int:
    if n_sites == 1 or index == 0:
        return 0
    return 1


def absorb_features(eff_sites, image) -> list:
    """Contract each effective site with its pixel feature vector.

    Returns per-site results: chi-vectors at the boundaries, chi x chi
    matrices in the bulk, and a trailing class axis on the label site.
    """
    image = np.asarray(image, dtype=np.float64)
    n = len(eff_sites)
    if image.shape[0] != n:
        raise DimensionMismatchError(
            f"chain has {n} sites but image has {image.shape[0]}"
        )
    out = []
    for s, site in enumerate(eff_sites):
        axis = _physical_axis(n, s)
        out.append(np.tensordot(site, image[s], axes=([axis], [0])))
    return out


def _labelled(node: np.ndarray, has_label: bool) -> np.ndarray:
    """Normalize an absorbed node to (left, right, classes) axes."""
    if has_label:
        body, L = node.shape[:-1], node.shape[-1]
    else:
        body, L = node.shape, 1
    if len(body) == 0:
        return node.reshape(1, 1, L)
    if len(body) == 1:
        return node.reshape(body[0], 1, L)  # caller fixes the boundary side
    return node.reshape(body[0], body[1], L)


def contract_sequential(mats, label_site: int | None = None) -> ScaledVector:
    """Left-to-right accumulation of absorbed nodes into class scores."""
    n = len(mats)
    if n == 0:
        raise ValueError("empty chain")
    if label_site is None:
        label_site = next(
            i for i, m in enumerate(mats) if m.ndim == _node_rank(n, i) + 1
        )
    carry = np.asarray(mats[0], dtype=np.float64)
    if n == 1:
        values, k = _rescale(carry, 0)
        return ScaledVector(values, k * math.log(2.0))
    # carry is (chi,) before the label site, (chi, L) from it onward
    carry, k = _rescale(carry, 0)
    for s in range(1, n):
        node = np.asarray(mats[s], dtype=np.float64)
        if carry.ndim == 1:
            # bond-vector carry absorbs any node shape over the shared bond
            carry = np.tensordot(carry, node, axes=([0], [0]))
        elif node.ndim == 2:  # (chi, L) carry against an interior matrix
            carry = np.einsum("al,ab->bl", carry, node)
        else:  # (chi, L) carry against the final boundary vector
            carry = np.einsum("al,a->l", carry, node)
        carry, k = _rescale(carry, k)
    if carry.ndim != 1:
        raise ValueError("chain did not reduce to a class-score vector")
    return ScaledVector(carry, k * math.log(2.0))


def _node_rank(n_sites: int, index: int) -> int:
    if n_sites == 1:
        return 0
    return 1 if index in (0, n_sites - 1) else 2


def contract_parallel(mats, label_site: int | None = None) -> ScaledVector:
    """Pairwise tree reduction; odd tensors carry to the next level."""
    n = len(mats)
    if n == 0:
        raise ValueError("empty chain")
    if label_site is None:
        label_site = next(
            i for i, m in enumerate(mats) if m.ndim == _node_rank(n, i) + 1
        )
    nodes = []
    exps = []
    for i, m in enumerate(mats):
        m = np.asarray(m, dtype=np.float64)
        has_label = i == label_site
        node = _labelled(m, has_label)
        if i == 0 and _node_rank(n, 0) == 1:
            node = node.reshape(1, -1, node.shape[-1])  # left boundary is a row
        node, k = _rescale(node, 0)
        nodes.append(node)
        exps.append(k)
    while len(nodes) > 1:
        next_nodes = []
        next_exps = []
        for i in range(0, len(nodes) - 1, 2):
            merged = _combine(nodes[i], nodes[i + 1])
            merged, k = _rescale(merged, exps[i] + exps[i + 1])
            next_nodes.append(merged)
            next_exps.append(k)
        if len(nodes) % 2:
            next_nodes.append(nodes[-1])
            next_exps.append(exps[-1])
        nodes, exps = next_nodes, next_exps
    final = nodes[0].reshape(-1)
    values, k = _rescale(final, exps[0])
    return ScaledVector(values, k * math.log(2.0))


def _combine(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Contract two (left, right, classes) nodes over the shared bond."""
    if x.shape[2] > 1 and y.shape[2] > 1:
        raise ValueError("two label axes cannot meet")
    if x.shape[2] > 1:
        return np.einsum("akc,kb->abc", x, y[:, :, 0])
    if y.shape[2] > 1:
        return np.einsum("ak,kbc->abc", x[:, :, 0], y)
    return (x[:, :, 0] @ y[:, :, 0])[:, :, None]


def count_flops_stages(
    n_sites: int, chi: int, local_dim: int, num_classes: int, order: str
):
    """Multiply-add counts (absorb stage, reduction stage) for one image.

    Canonical cost model, with the label site at ``n_sites // 2``:

    * absorb: every site is charged the interior rate ``d * chi**2``,
      so the stage is exactly linear in the site count.
    * sequential reduction: one ``chi**2`` vector-matrix product per
      step, times ``num_classes`` once the label axis has been picked up.
    * parallel reduction: ``ceil(log2 N)`` levels, each charged the
      generic label-pair cost ``num_classes * chi**3`` (end-of-chain
      pairs are cheaper but occupy the same parallel step).
    """
    if min(n_sites, chi, local_dim, num_classes) < 1:
        raise ValueError("all size arguments must be positive")
    absorb = n_sites * local_dim * chi * chi
    label_site = n_sites // 2
    if order == "sequential":
        pre = sum(1 for s in range(1, n_sites) if s < label_site)
        post = (n_sites - 1) - pre
        reduce_cost = chi * chi * (pre + post * num_classes)
    elif order == "parallel_tree":
        levels = math.ceil(math.log2(n_sites)) if n_sites > 1 else 0
        reduce_cost = levels * num_classes * chi**3
    else:
        raise ValueError(f"unknown contraction order {order!r}")
    return absorb, reduce_cost


def count_flops(
    n_sites: int, chi: int, local_dim: int, num_classes: int, order: str
) -> int:
    absorb, reduce_cost = count_flops_stages(
        n_sites, chi, local_dim, num_classes, order
    )
    return absorb + reduce_cost
