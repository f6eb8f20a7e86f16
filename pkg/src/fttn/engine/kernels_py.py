"""Numpy fallback for the hot chain-contraction kernels.

Mirrors the compiled extension's API exactly; selected at import time by
``fttn.engine`` when the extension is unavailable (or forced via the
FTTN_BACKEND environment variable). All routines are vectorized over the
batch axis and track one power-of-two exponent per running block so that
784-site products never leave the float64 range.
"""

import numpy as np

from .ops import BAND_HI, BAND_LO

__all__ = ["seq_forward", "seq_backward", "tree_forward"]


def _rescale_rows(block: np.ndarray, exps: np.ndarray):
    """Renormalize each batch row of ``block`` into the band, in place."""
    flat = block.reshape(block.shape[0], -1)
    m = np.max(np.abs(flat), axis=1)
    _, e = np.frexp(m)
    shift = np.where((m > 0) & ((m < BAND_LO) | (m > BAND_HI)), 1 - e, 0)
    if np.any(shift):
        np.ldexp(flat, shift[:, None].astype(np.int32), out=flat)
        exps -= shift.astype(np.int64)


def _pow2_weights(weights: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """``weights * 2**shift`` with the exponent clamped to finite range."""
    return np.where(
        shift < -1074,
        0.0,
        np.ldexp(weights, np.minimum(shift, 1000).astype(np.int32)),
    )


def _site_matrix(cores, psi, s):
    return np.einsum("ipj,bp->bij", cores[s], psi[:, s])


def _check_shapes(cores, label_core, label_site, psi):
    n, chi, d = cores.shape[0], cores.shape[1], cores.shape[2]
    if psi.shape[1] != n or psi.shape[2] != d:
        raise ValueError(
            f"feature block {psi.shape[1:]} does not match the packed "
            f"chain ({n} sites, local dim {d})"
        )
    if label_core.shape[:3] != (chi, d, chi):
        raise ValueError("label core shape does not match the chain")
    if not 0 <= label_site < n:
        raise ValueError(f"label site {label_site} outside [0, {n})")


def seq_forward(cores, label_core, label_site, psi, want_caches=False):
    """Meet-at-the-label sweep producing class scores.

    Returns ``(values, kout)`` plus, when ``want_caches`` is set, the
    left/right partial bond vectors and their exponents needed by
    ``seq_backward``: ``lvec[:, s]`` is the product of sites < s and
    ``rvec[:, s]`` the product of sites > s (stored on the label's side
    of the chain only).
    """
    _check_shapes(cores, label_core, label_site, psi)
    B, n, d = psi.shape
    chi = cores.shape[1]
    L = label_core.shape[3]
    lvec = np.zeros((B, n, chi))
    kl = np.zeros((B, n), dtype=np.int64)
    rvec = np.zeros((B, n, chi))
    kr = np.zeros((B, n), dtype=np.int64)

    left = np.zeros((B, chi))
    left[:, 0] = 1.0
    kleft = np.zeros(B, dtype=np.int64)
    for s in range(label_site):
        lvec[:, s] = left
        kl[:, s] = kleft
        left = np.einsum("bi,bij->bj", left, _site_matrix(cores, psi, s))
        _rescale_rows(left, kleft)
    lvec[:, label_site] = left
    kl[:, label_site] = kleft

    right = np.zeros((B, chi))
    right[:, 0] = 1.0
    kright = np.zeros(B, dtype=np.int64)
    for s in range(n - 1, label_site, -1):
        rvec[:, s] = right
        kr[:, s] = kright
        right = np.einsum("bij,bj->bi", _site_matrix(cores, psi, s), right)
        _rescale_rows(right, kright)
    rvec[:, label_site] = right
    kr[:, label_site] = kright

    values = np.einsum(
        "bi,ipjc,bp,bj->bc", left, label_core, psi[:, label_site], right
    )
    kout = kleft + kright
    _rescale_rows(values, kout)
    if want_caches:
        return values, kout, lvec, kl, rvec, kr
    return values, kout


def seq_backward(
    cores, label_core, label_site, psi, lvec, kl, rvec, kr, gvals, kout, weights
):
    """Gradients of the (gain-dropped) scores against every site entry.

    ``gvals`` is the loss gradient with respect to the normalized score
    values; per-site factors ``2**(kl + kr - kout)`` undo the forward
    rescaling so the returned gradients are plain unscaled numbers.
    """
    _check_shapes(cores, label_core, label_site, psi)
    B, n, d = psi.shape
    chi = cores.shape[1]
    grad_cores = np.zeros_like(cores)
    grad_label = np.zeros_like(label_core)
    lab = label_site
    psi_lab = psi[:, lab]

    f_lab = _pow2_weights(weights, kl[:, lab] + kr[:, lab] - kout)
    grad_label += np.einsum(
        "b,bi,bp,bj,bc->ipjc", f_lab, lvec[:, lab], psi_lab, rvec[:, lab], gvals
    )

    # fold the class axis once: cap[b] = sum_c gvals[b, c] * M_label[b, :, :, c]
    cap = np.einsum("ipjc,bp,bc->bij", label_core, psi_lab, gvals)

    rhat = np.einsum("bij,bj->bi", cap, rvec[:, lab])
    krhat = kr[:, lab].copy()
    _rescale_rows(rhat, krhat)
    for s in range(lab - 1, -1, -1):
        f = _pow2_weights(weights, kl[:, s] + krhat - kout)
        grad_cores[s] += np.einsum("b,bi,bp,bj->ipj", f, lvec[:, s], psi[:, s], rhat)
        if s > 0:
            rhat = np.einsum("bij,bj->bi", _site_matrix(cores, psi, s), rhat)
            _rescale_rows(rhat, krhat)

    lhat = np.einsum("bi,bij->bj", lvec[:, lab], cap)
    klhat = kl[:, lab].copy()
    _rescale_rows(lhat, klhat)
    for s in range(lab + 1, n):
        f = _pow2_weights(weights, klhat + kr[:, s] - kout)
        grad_cores[s] += np.einsum("b,bi,bp,bj->ipj", f, lhat, psi[:, s], rvec[:, s])
        if s < n - 1:
            lhat = np.einsum("bi,bij->bj", lhat, _site_matrix(cores, psi, s))
            _rescale_rows(lhat, klhat)

    return grad_cores, grad_label


def tree_forward(cores, label_core, label_site, psi):
    """Pairwise tree reduction over the padded uniform chain."""
    _check_shapes(cores, label_core, label_site, psi)
    B, n, d = psi.shape
    nodes = []
    exps = []
    for s in range(n):
        if s == label_site:
            node = np.einsum("ipjc,bp->bijc", label_core, psi[:, s])
        else:
            node = _site_matrix(cores, psi, s)
        k = np.zeros(B, dtype=np.int64)
        _rescale_rows(node, k)
        nodes.append(node)
        exps.append(k)
    while len(nodes) > 1:
        out_nodes = []
        out_exps = []
        for i in range(0, len(nodes) - 1, 2):
            x, y = nodes[i], nodes[i + 1]
            if x.ndim == 4:
                merged = np.einsum("bikc,bkj->bijc", x, y)
            elif y.ndim == 4:
                merged = np.einsum("bik,bkjc->bijc", x, y)
            else:
                merged = np.matmul(x, y)
            k = exps[i] + exps[i + 1]
            _rescale_rows(merged, k)
            out_nodes.append(merged)
            out_exps.append(k)
        if len(nodes) % 2:
            out_nodes.append(nodes[-1])
            out_exps.append(exps[-1])
        nodes, exps = out_nodes, out_exps
    final = nodes[0]  # (B, chi, chi, L); boundaries live in row/col 0
    values = final[:, 0, 0, :].copy()
    kout = exps[0].copy()
    _rescale_rows(values, kout)
    return values, kout
