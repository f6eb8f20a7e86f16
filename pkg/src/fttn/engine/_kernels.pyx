# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled chain-contraction kernels.

Same API and same power-of-two rescaling policy as ``kernels_py``; the
inner loops run without the GIL so batch chunks can execute on real
threads. See the numpy fallback for the reference semantics.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, frexp, ldexp

cnp.import_array()

ctypedef cnp.int64_t i64


cdef inline int _band_shift(double m) noexcept nogil:
    cdef int e
    if m == 0.0 or (0.5 <= m <= 2.0):
        return 0
    frexp(m, &e)
    return 1 - e


cdef inline i64 _rescale(double* v, Py_ssize_t n, i64 k) noexcept nogil:
    cdef double m = 0.0
    cdef double a
    cdef Py_ssize_t i
    cdef int shift
    for i in range(n):
        a = fabs(v[i])
        if a > m:
            m = a
    shift = _band_shift(m)
    if shift != 0:
        # ldexp per element: safe even for denormal inputs, where the
        # shift exceeds the largest representable power of two
        for i in range(n):
            v[i] = ldexp(v[i], shift)
        k -= shift
    return k


cdef inline double _pow2_weight(double w, i64 shift) noexcept nogil:
    """w * 2**shift with the exponent clamped to the finite range."""
    if shift > 1000:
        shift = 1000
    elif shift < -1074:
        return 0.0
    return ldexp(w, <int>shift)


cdef inline void _step_right(const double* core, const double* phi,
                             const double* cur, double* nxt,
                             Py_ssize_t chi, Py_ssize_t d) noexcept nogil:
    """nxt[j] = sum_i sum_p cur[i] * core[i, p, j] * phi[p]"""
    cdef Py_ssize_t i, p, j
    cdef double w
    for j in range(chi):
        nxt[j] = 0.0
    for i in range(chi):
        if cur[i] == 0.0:
            continue
        for p in range(d):
            w = cur[i] * phi[p]
            for j in range(chi):
                nxt[j] += w * core[(i * d + p) * chi + j]


cdef inline void _step_left(const double* core, const double* phi,
                            const double* cur, double* nxt,
                            Py_ssize_t chi, Py_ssize_t d) noexcept nogil:
    """nxt[i] = sum_p sum_j core[i, p, j] * phi[p] * cur[j]"""
    cdef Py_ssize_t i, p, j
    cdef double acc
    for i in range(chi):
        acc = 0.0
        for p in range(d):
            for j in range(chi):
                acc += core[(i * d + p) * chi + j] * phi[p] * cur[j]
        nxt[i] = acc



def _check_shapes(cores, label_core, label_site, psi):
    n, chi, d = cores.shape[0], cores.shape[1], cores.shape[2]
    if psi.shape[1] != n or psi.shape[2] != d:
        raise ValueError(
            f"feature block {psi.shape[1:]} does not match the packed "
            f"chain ({n} sites, local dim {d})"
        )
    if label_core.shape[0] != chi or label_core.shape[1] != d or label_core.shape[2] != chi:
        raise ValueError("label core shape does not match the chain")
    if not 0 <= label_site < n:
        raise ValueError(f"label site {label_site} outside [0, {n})")

def seq_forward(double[:, :, :, ::1] cores, double[:, :, :, ::1] label_core,
                Py_ssize_t label_site, double[:, :, ::1] psi,
                bint want_caches=False):
    _check_shapes(cores, label_core, label_site, psi)
    cdef Py_ssize_t B = psi.shape[0]
    cdef Py_ssize_t n = psi.shape[1]
    cdef Py_ssize_t d = psi.shape[2]
    cdef Py_ssize_t chi = cores.shape[1]
    cdef Py_ssize_t L = label_core.shape[3]

    values_arr = np.zeros((B, L))
    kout_arr = np.zeros(B, dtype=np.int64)
    if want_caches:
        cache_shape = (B, n, chi)
        kshape = (B, n)
    else:
        cache_shape = (1, 1, 1)
        kshape = (1, 1)
    lvec_arr = np.zeros(cache_shape)
    kl_arr = np.zeros(kshape, dtype=np.int64)
    rvec_arr = np.zeros(cache_shape)
    kr_arr = np.zeros(kshape, dtype=np.int64)
    scratch_arr = np.zeros((4, chi))

    cdef double[:, ::1] values = values_arr
    cdef i64[::1] kout = kout_arr
    cdef double[:, :, ::1] lvec = lvec_arr
    cdef i64[:, ::1] kl = kl_arr
    cdef double[:, :, ::1] rvec = rvec_arr
    cdef i64[:, ::1] kr = kr_arr
    cdef double[:, ::1] scratch = scratch_arr

    cdef Py_ssize_t b, s, i, p, j, c
    cdef i64 kleft, kright
    cdef double acc, w
    cdef double* cur
    cdef double* nxt
    cdef double* rcur
    cdef double* rnxt
    cdef double* tmp

    with nogil:
        cur = &scratch[0, 0]
        nxt = &scratch[1, 0]
        rcur = &scratch[2, 0]
        rnxt = &scratch[3, 0]
        for b in range(B):
            for i in range(chi):
                cur[i] = 0.0
            cur[0] = 1.0
            kleft = 0
            for s in range(label_site):
                if want_caches:
                    for i in range(chi):
                        lvec[b, s, i] = cur[i]
                    kl[b, s] = kleft
                _step_right(&cores[s, 0, 0, 0], &psi[b, s, 0], cur, nxt, chi, d)
                tmp = cur; cur = nxt; nxt = tmp
                kleft = _rescale(cur, chi, kleft)
            if want_caches:
                for i in range(chi):
                    lvec[b, label_site, i] = cur[i]
                kl[b, label_site] = kleft

            for i in range(chi):
                rcur[i] = 0.0
            rcur[0] = 1.0
            kright = 0
            for s in range(n - 1, label_site, -1):
                if want_caches:
                    for i in range(chi):
                        rvec[b, s, i] = rcur[i]
                    kr[b, s] = kright
                _step_left(&cores[s, 0, 0, 0], &psi[b, s, 0], rcur, rnxt, chi, d)
                tmp = rcur; rcur = rnxt; rnxt = tmp
                kright = _rescale(rcur, chi, kright)
            if want_caches:
                for i in range(chi):
                    rvec[b, label_site, i] = rcur[i]
                kr[b, label_site] = kright

            for c in range(L):
                acc = 0.0
                for i in range(chi):
                    if cur[i] == 0.0:
                        continue
                    for p in range(d):
                        w = cur[i] * psi[b, label_site, p]
                        for j in range(chi):
                            acc += w * label_core[i, p, j, c] * rcur[j]
                values[b, c] = acc
            kout[b] = _rescale(&values[b, 0], L, kleft + kright)

    if want_caches:
        return values_arr, kout_arr, lvec_arr, kl_arr, rvec_arr, kr_arr
    return values_arr, kout_arr


def seq_backward(double[:, :, :, ::1] cores, double[:, :, :, ::1] label_core,
                 Py_ssize_t label_site, double[:, :, ::1] psi,
                 double[:, :, ::1] lvec, i64[:, ::1] kl,
                 double[:, :, ::1] rvec, i64[:, ::1] kr,
                 double[:, ::1] gvals, i64[::1] kout, double[::1] weights):
    _check_shapes(cores, label_core, label_site, psi)
    cdef Py_ssize_t B = psi.shape[0]
    cdef Py_ssize_t n = psi.shape[1]
    cdef Py_ssize_t d = psi.shape[2]
    cdef Py_ssize_t chi = cores.shape[1]
    cdef Py_ssize_t L = label_core.shape[3]

    grad_cores_arr = np.zeros((n, chi, d, chi))
    grad_label_arr = np.zeros((chi, d, chi, L))
    scratch_arr = np.zeros((2, chi))
    cap_arr = np.zeros((chi, chi))

    cdef double[:, :, :, ::1] grad_cores = grad_cores_arr
    cdef double[:, :, :, ::1] grad_label = grad_label_arr
    cdef double[:, ::1] scratch = scratch_arr
    cdef double[:, ::1] cap = cap_arr

    cdef Py_ssize_t b, s, i, p, j, c
    cdef i64 khat
    cdef double f, w, acc, gpw
    cdef double* hat
    cdef double* nxt
    cdef double* tmp

    with nogil:
        hat = &scratch[0, 0]
        nxt = &scratch[1, 0]
        for b in range(B):
            f = _pow2_weight(
                weights[b], kl[b, label_site] + kr[b, label_site] - kout[b]
            )
            for i in range(chi):
                if lvec[b, label_site, i] == 0.0:
                    continue
                for p in range(d):
                    w = f * lvec[b, label_site, i] * psi[b, label_site, p]
                    for j in range(chi):
                        gpw = w * rvec[b, label_site, j]
                        if gpw == 0.0:
                            continue
                        for c in range(L):
                            grad_label[i, p, j, c] += gpw * gvals[b, c]

            # cap[i, j] = sum_p sum_c label_core[i, p, j, c] psi[p] g[c]
            for i in range(chi):
                for j in range(chi):
                    acc = 0.0
                    for p in range(d):
                        for c in range(L):
                            acc += (label_core[i, p, j, c]
                                    * psi[b, label_site, p] * gvals[b, c])
                    cap[i, j] = acc

            # sites left of the label: rhat = (chain s+1..lab-1) cap r_lab
            for i in range(chi):
                acc = 0.0
                for j in range(chi):
                    acc += cap[i, j] * rvec[b, label_site, j]
                hat[i] = acc
            khat = _rescale(hat, chi, kr[b, label_site])
            for s in range(label_site - 1, -1, -1):
                f = _pow2_weight(weights[b], kl[b, s] + khat - kout[b])
                for i in range(chi):
                    if lvec[b, s, i] == 0.0:
                        continue
                    for p in range(d):
                        w = f * lvec[b, s, i] * psi[b, s, p]
                        for j in range(chi):
                            grad_cores[s, i, p, j] += w * hat[j]
                if s > 0:
                    _step_left(&cores[s, 0, 0, 0], &psi[b, s, 0], hat, nxt,
                               chi, d)
                    tmp = hat; hat = nxt; nxt = tmp
                    khat = _rescale(hat, chi, khat)

            # sites right of the label: lhat = l_lab cap (chain lab+1..s-1)
            for j in range(chi):
                acc = 0.0
                for i in range(chi):
                    acc += lvec[b, label_site, i] * cap[i, j]
                hat[j] = acc
            khat = _rescale(hat, chi, kl[b, label_site])
            for s in range(label_site + 1, n):
                f = _pow2_weight(weights[b], khat + kr[b, s] - kout[b])
                for i in range(chi):
                    if hat[i] == 0.0:
                        continue
                    for p in range(d):
                        w = f * hat[i] * psi[b, s, p]
                        for j in range(chi):
                            grad_cores[s, i, p, j] += w * rvec[b, s, j]
                if s < n - 1:
                    _step_right(&cores[s, 0, 0, 0], &psi[b, s, 0], hat, nxt,
                                chi, d)
                    tmp = hat; hat = nxt; nxt = tmp
                    khat = _rescale(hat, chi, khat)

    return grad_cores_arr, grad_label_arr


def tree_forward(double[:, :, :, ::1] cores, double[:, :, :, ::1] label_core,
                 Py_ssize_t label_site, double[:, :, ::1] psi):
    _check_shapes(cores, label_core, label_site, psi)
    cdef Py_ssize_t B = psi.shape[0]
    cdef Py_ssize_t n = psi.shape[1]
    cdef Py_ssize_t d = psi.shape[2]
    cdef Py_ssize_t chi = cores.shape[1]
    cdef Py_ssize_t L = label_core.shape[3]

    values_arr = np.zeros((B, L))
    kout_arr = np.zeros(B, dtype=np.int64)
    mats_arr = np.zeros((n, chi, chi))
    lab_arr = np.zeros((2, chi, chi, L))
    tmp_arr = np.zeros((chi, chi))
    exps_arr = np.zeros(n, dtype=np.int64)

    cdef double[:, ::1] values = values_arr
    cdef i64[::1] kout = kout_arr
    cdef double[:, :, ::1] mats = mats_arr
    cdef double[:, :, :, ::1] lab = lab_arr
    cdef double[:, ::1] tmp = tmp_arr
    cdef i64[::1] exps = exps_arr

    cdef Py_ssize_t b, s, i, p, j, c, k, m, q, o, li, a2, b2, cur_lab, new_lab
    cdef double acc

    with nogil:
        for b in range(B):
            # absorb every site; boundaries already padded into row/col 0
            for s in range(n):
                if s == label_site:
                    for i in range(chi):
                        for j in range(chi):
                            for c in range(L):
                                acc = 0.0
                                for p in range(d):
                                    acc += label_core[i, p, j, c] * psi[b, s, p]
                                lab[0, i, j, c] = acc
                    exps[s] = _rescale(&lab[0, 0, 0, 0], chi * chi * L, 0)
                else:
                    for i in range(chi):
                        for j in range(chi):
                            acc = 0.0
                            for p in range(d):
                                acc += cores[s, i, p, j] * psi[b, s, p]
                            mats[s, i, j] = acc
                    exps[s] = _rescale(&mats[s, 0, 0], chi * chi, 0)

            m = n
            li = label_site
            cur_lab = 0
            while m > 1:
                o = 0
                new_lab = -1
                for q in range(m // 2):
                    a2 = 2 * q
                    b2 = a2 + 1
                    if li == a2:
                        # label x matrix -> label at slot o
                        for c in range(L):
                            for i in range(chi):
                                for j in range(chi):
                                    acc = 0.0
                                    for k in range(chi):
                                        acc += (lab[cur_lab, i, k, c]
                                                * mats[b2, k, j])
                                    lab[1 - cur_lab, i, j, c] = acc
                        cur_lab = 1 - cur_lab
                        exps[o] = _rescale(&lab[cur_lab, 0, 0, 0],
                                           chi * chi * L,
                                           exps[a2] + exps[b2])
                        new_lab = o
                    elif li == b2:
                        for c in range(L):
                            for i in range(chi):
                                for j in range(chi):
                                    acc = 0.0
                                    for k in range(chi):
                                        acc += (mats[a2, i, k]
                                                * lab[cur_lab, k, j, c])
                                    lab[1 - cur_lab, i, j, c] = acc
                        cur_lab = 1 - cur_lab
                        exps[o] = _rescale(&lab[cur_lab, 0, 0, 0],
                                           chi * chi * L,
                                           exps[a2] + exps[b2])
                        new_lab = o
                    else:
                        for i in range(chi):
                            for j in range(chi):
                                acc = 0.0
                                for k in range(chi):
                                    acc += mats[a2, i, k] * mats[b2, k, j]
                                tmp[i, j] = acc
                        for i in range(chi):
                            for j in range(chi):
                                mats[o, i, j] = tmp[i, j]
                        exps[o] = _rescale(&mats[o, 0, 0], chi * chi,
                                           exps[a2] + exps[b2])
                    o += 1
                if m % 2:
                    s = m - 1
                    if li == s:
                        new_lab = o
                    else:
                        for i in range(chi):
                            for j in range(chi):
                                mats[o, i, j] = mats[s, i, j]
                    exps[o] = exps[s]
                    o += 1
                m = o
                li = new_lab

            for c in range(L):
                values[b, c] = lab[cur_lab, 0, 0, c]
            kout[b] = _rescale(&values[b, 0], L, exps[0])

    return values_arr, kout_arr
