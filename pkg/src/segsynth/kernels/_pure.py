"""Numpy implementations of the hot loops; the reference for ``_fast``."""

import bisect

import numpy as np

NAME = "python"
UNLABELED = 255


def _overlap(a, b):
    x0, y0 = max(a[0], b[0]), max(a[1], b[1])
    x1, y1 = min(a[0] + a[2], b[0] + b[2]), min(a[1] + a[3], b[1] + b[3])
    if x1 <= x0 or y1 <= y0:
        return None
    return x0, y0, x1, y1


def _score(im, um, ic, uc):
    m = im / um if um else 0.0
    c = ic / uc if uc else 0.0
    return m + c


def mask_intersection(qm, qb, cm, cb):
    ov = _overlap(qb, cb)
    if ov is None:
        return 0
    x0, y0, x1, y1 = ov
    a = qm[y0 - qb[1]:y1 - qb[1], x0 - qb[0]:x1 - qb[0]]
    b = cm[y0 - cb[1]:y1 - cb[1], x0 - cb[0]:x1 - cb[0]]
    return int(np.count_nonzero(a & b))


def context_intersection(qc, qb, cc, cb):
    ov = _overlap(qb, cb)
    if ov is None:
        return 0
    x0, y0, x1, y1 = ov
    a = qc[y0 - qb[1]:y1 - qb[1], x0 - qb[0]:x1 - qb[0]]
    b = cc[y0 - cb[1]:y1 - cb[1], x0 - cb[0]:x1 - cb[0]]
    return int(np.count_nonzero((a == b) & (a != UNLABELED)))


def scan_topk(q_mask, q_box, q_area, q_ctx, q_cbox, q_ccount,
              mflat, moff, mbox, marea, cflat, coff, cbox, ccount,
              ids, order, ub, k):
    """Exact top-k by score over ``order`` (descending upper bounds), with early exit.

    Returns ``(positions, counts)`` where counts rows are
    ``(mask_inter, mask_union, ctx_inter, ctx_union)``, best first.
    """
    q_mask = q_mask.astype(bool)
    q_box = tuple(int(v) for v in q_box)
    q_cbox = tuple(int(v) for v in q_cbox)
    keys = []      # (-score, id) ascending
    rows = []
    for pos in order:
        pos = int(pos)
        if len(keys) == k and ub[pos] < -keys[-1][0]:
            break
        bw, bh = int(mbox[pos, 2]), int(mbox[pos, 3])
        cm = mflat[moff[pos]:moff[pos] + bw * bh].reshape(bh, bw).astype(bool)
        im = mask_intersection(q_mask, q_box, cm, tuple(int(v) for v in mbox[pos]))
        um = int(q_area) + int(marea[pos]) - im
        cw, ch = int(cbox[pos, 2]), int(cbox[pos, 3])
        cc = cflat[coff[pos]:coff[pos] + cw * ch].reshape(ch, cw)
        ic = context_intersection(q_ctx, q_cbox, cc, tuple(int(v) for v in cbox[pos]))
        uc = int(q_ccount) + int(ccount[pos]) - ic
        key = (-_score(im, um, ic, uc), int(ids[pos]))
        if len(keys) == k and key >= keys[-1]:
            continue
        i = bisect.bisect_left(keys, key)
        keys.insert(i, key)
        rows.insert(i, (pos, im, um, ic, uc))
        if len(keys) > k:
            keys.pop()
            rows.pop()
    pos = np.array([r[0] for r in rows], dtype=np.int64)
    counts = np.array([r[1:] for r in rows], dtype=np.int64).reshape(-1, 4)
    return pos, counts


def bilinear_sample(color, mask, xs, ys):
    """Sample a zero-padded patch at fractional (x, y) patch coordinates."""
    h, w = mask.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out_c = np.zeros(xs.shape + (3,))
    out_m = np.zeros(xs.shape)
    for dy, dx, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                        (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yy, xx = y0 + dy, x0 + dx
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        yc, xc = np.where(ok, yy, 0), np.where(ok, xx, 0)
        wv = np.where(ok, wgt, 0.0)
        out_m += wv * mask[yc, xc]
        out_c += wv[..., None] * color[yc, xc]
    return out_c, out_m


def jacobi(values, unknown, nbr, tol, max_iters):
    """In-place Jacobi sweeps of 4-neighbour averaging over ``unknown`` rows.

    Returns ``(sweeps, last_max_change)``.
    """
    if unknown.size == 0:
        return 0, 0.0
    valid = nbr >= 0
    cnt = valid.sum(axis=1).astype(np.float64)[:, None]
    idx = np.where(valid, nbr, 0)
    w = valid.astype(np.float64)[..., None]
    change = 0.0
    it = 0
    while it < max_iters:
        it += 1
        new = (values[idx] * w).sum(axis=1) / cnt
        change = float(np.abs(new - values[unknown]).max())
        values[unknown] = new
        if change < tol:
            break
    return it, change
