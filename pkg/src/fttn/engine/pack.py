"""Packed model layout shared by the numpy and compiled kernels.

Every non-label site is embedded into one (N, chi, d, chi) array;
boundary tensors occupy bond row/column 0 with the rest zero-padded, so
the chain product with unit start/end vectors reproduces the shaped
contraction exactly. The label site lives in its own (chi, d, chi, L)
array with the same boundary convention.
"""

import numpy as np

__all__ = ["pack_model", "unpack_site_grads"]


def pack_model(model):
    n, chi, d, L = model.n_sites, model.bond_dim, model.local_dim, model.num_classes
    if n < 2:
        raise ValueError("packed kernels need at least two sites")
    lab = model.label_site
    cores = np.zeros((n, chi, d, chi))
    label_core = np.zeros((chi, d, chi, L))
    for s, site in enumerate(model.sites):
        if s == lab:
            if s == 0:
                label_core[0] = site
            elif s == n - 1:
                label_core[:, :, 0, :] = site
            else:
                label_core[:] = site
        elif s == 0:
            cores[0, 0] = site
        elif s == n - 1:
            cores[n - 1, :, :, 0] = site
        else:
            cores[s] = site
    return cores, label_core


def unpack_site_grads(grad_cores, grad_label, model):
    """Slice padded gradients back to the shaped per-site list."""
    n = model.n_sites
    lab = model.label_site
    grads = []
    for s in range(n):
        if s == lab:
            if s == 0:
                grads.append(grad_label[0].copy())
            elif s == n - 1:
                grads.append(grad_label[:, :, 0, :].copy())
            else:
                grads.append(grad_label.copy())
        elif s == 0:
            grads.append(grad_cores[0, 0].copy())
        elif s == n - 1:
            grads.append(grad_cores[n - 1, :, :, 0].copy())
        else:
            grads.append(grad_cores[s].copy())
    return grads
