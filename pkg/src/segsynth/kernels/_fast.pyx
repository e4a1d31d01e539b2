# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the loops in ``_pure``; identical signatures and results."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()

NAME = "cython"

ctypedef cnp.uint8_t u8
ctypedef cnp.int64_t i64


cdef inline double _score(i64 im, i64 um, i64 ic, i64 uc) nogil:
    cdef double m = 0.0, c = 0.0
    if um != 0:
        m = <double>im / <double>um
    if uc != 0:
        c = <double>ic / <double>uc
    return m + c


cdef inline bint _worse(double sa, i64 ida, double sb, i64 idb) nogil:
    # True when (sa, ida) ranks at or after (sb, idb): higher score first, then lower id.
    if sa != sb:
        return sa < sb
    return ida >= idb


def scan_topk(const u8[:, ::1] q_mask, const i64[::1] q_box, i64 q_area,
              const u8[:, ::1] q_ctx, const i64[::1] q_cbox, i64 q_ccount,
              const u8[::1] mflat, const i64[::1] moff, const i64[:, ::1] mbox, const i64[::1] marea,
              const u8[::1] cflat, const i64[::1] coff, const i64[:, ::1] cbox, const i64[::1] ccount,
              const i64[::1] ids, const i64[::1] order, const double[::1] ub, Py_ssize_t k):
    cdef Py_ssize_t n = order.shape[0]
    cdef cnp.ndarray[i64, ndim=1] best_pos = np.empty(k, dtype=np.int64)
    cdef cnp.ndarray[i64, ndim=2] best_cnt = np.empty((k, 4), dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] best_score = np.empty(k, dtype=np.float64)
    cdef cnp.ndarray[i64, ndim=1] best_id = np.empty(k, dtype=np.int64)
    cdef Py_ssize_t filled = 0, t, j, pos
    cdef i64 x0, y0, x1, y1, x, y, bw, bh, off, im, um, ic, uc, qv
    cdef i64 qx0 = q_box[0], qy0 = q_box[1], qx1 = q_box[0] + q_box[2], qy1 = q_box[1] + q_box[3]
    cdef i64 cx0 = q_cbox[0], cy0 = q_cbox[1], cx1 = q_cbox[0] + q_cbox[2], cy1 = q_cbox[1] + q_cbox[3]
    cdef double s
    with nogil:
        for t in range(n):
            pos = order[t]
            if filled == k and ub[pos] < best_score[k - 1]:
                break
            # mask intersection over the bbox overlap
            im = 0
            bw = mbox[pos, 2]
            bh = mbox[pos, 3]
            x0 = max(qx0, mbox[pos, 0]); y0 = max(qy0, mbox[pos, 1])
            x1 = min(qx1, mbox[pos, 0] + bw); y1 = min(qy1, mbox[pos, 1] + bh)
            off = moff[pos]
            if x1 > x0 and y1 > y0:
                for y in range(y0, y1):
                    for x in range(x0, x1):
                        if q_mask[y - qy0, x - qx0] and mflat[off + (y - mbox[pos, 1]) * bw + (x - mbox[pos, 0])]:
                            im += 1
            um = q_area + marea[pos] - im
            # context intersection over the context-box overlap
            ic = 0
            bw = cbox[pos, 2]
            bh = cbox[pos, 3]
            x0 = max(cx0, cbox[pos, 0]); y0 = max(cy0, cbox[pos, 1])
            x1 = min(cx1, cbox[pos, 0] + bw); y1 = min(cy1, cbox[pos, 1] + bh)
            off = coff[pos]
            if x1 > x0 and y1 > y0:
                for y in range(y0, y1):
                    for x in range(x0, x1):
                        qv = q_ctx[y - cy0, x - cx0]
                        if qv != 255 and qv == cflat[off + (y - cbox[pos, 1]) * bw + (x - cbox[pos, 0])]:
                            ic += 1
            uc = q_ccount + ccount[pos] - ic
            s = _score(im, um, ic, uc)
            if filled == k and _worse(s, ids[pos], best_score[k - 1], best_id[k - 1]):
                continue
            # insertion into the sorted best list
            if filled < k:
                j = filled
                filled += 1
            else:
                j = k - 1
            while j > 0 and not _worse(s, ids[pos], best_score[j - 1], best_id[j - 1]):
                best_score[j] = best_score[j - 1]
                best_id[j] = best_id[j - 1]
                best_pos[j] = best_pos[j - 1]
                best_cnt[j, 0] = best_cnt[j - 1, 0]
                best_cnt[j, 1] = best_cnt[j - 1, 1]
                best_cnt[j, 2] = best_cnt[j - 1, 2]
                best_cnt[j, 3] = best_cnt[j - 1, 3]
                j -= 1
            best_score[j] = s
            best_id[j] = ids[pos]
            best_pos[j] = pos
            best_cnt[j, 0] = im
            best_cnt[j, 1] = um
            best_cnt[j, 2] = ic
            best_cnt[j, 3] = uc
    return best_pos[:filled].copy(), best_cnt[:filled].copy()


def bilinear_sample(const double[:, :, ::1] color, const double[:, ::1] mask,
                    const double[:, ::1] xs, const double[:, ::1] ys):
    cdef Py_ssize_t H = xs.shape[0], W = xs.shape[1], h = mask.shape[0], w = mask.shape[1]
    cdef cnp.ndarray[double, ndim=3] out_c = np.zeros((H, W, 3))
    cdef cnp.ndarray[double, ndim=2] out_m = np.zeros((H, W))
    cdef double[:, :, ::1] oc = out_c
    cdef double[:, ::1] om = out_m
    cdef Py_ssize_t i, j, dy, dx, yy, xx, ch
    cdef double fx, fy, wgt, x, y
    cdef i64 x0, y0
    with nogil:
        for i in range(H):
            for j in range(W):
                x = xs[i, j]
                y = ys[i, j]
                x0 = <i64>floor(x)
                y0 = <i64>floor(y)
                fx = x - x0
                fy = y - y0
                for dy in range(2):
                    yy = y0 + dy
                    if yy < 0 or yy >= h:
                        continue
                    for dx in range(2):
                        xx = x0 + dx
                        if xx < 0 or xx >= w:
                            continue
                        wgt = (fy if dy else 1.0 - fy) * (fx if dx else 1.0 - fx)
                        om[i, j] += wgt * mask[yy, xx]
                        for ch in range(3):
                            oc[i, j, ch] += wgt * color[yy, xx, ch]
    return out_c, out_m


def jacobi(double[:, ::1] values, const i64[::1] unknown, const i64[:, ::1] nbr,
           double tol, Py_ssize_t max_iters):
    cdef Py_ssize_t n = unknown.shape[0], it = 0, i, j, ch
    cdef double change = 0.0, d, acc, cnt
    cdef i64 q
    if n == 0:
        return 0, 0.0
    cdef cnp.ndarray[double, ndim=2] new_arr = np.empty((n, 3))
    cdef double[:, ::1] new = new_arr
    with nogil:
        while it < max_iters:
            it += 1
            change = 0.0
            for i in range(n):
                for ch in range(3):
                    acc = 0.0
                    cnt = 0.0
                    for j in range(4):
                        q = nbr[i, j]
                        if q >= 0:
                            acc = acc + values[q, ch]
                            cnt = cnt + 1.0
                    new[i, ch] = acc / cnt
            for i in range(n):
                for ch in range(3):
                    d = fabs(new[i, ch] - values[unknown[i], ch])
                    if d > change:
                        change = d
                    values[unknown[i], ch] = new[i, ch]
            if change < tol:
                break
    return it, change
