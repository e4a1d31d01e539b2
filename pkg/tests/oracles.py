"""Independent reference implementations used as test oracles.

These deliberately avoid the package's own helpers: plain loops, BFS flood
fill, brute-force nearest neighbours and dense linear solves.
"""

from collections import deque

import numpy as np
from scipy.spatial import cKDTree

UNLABELED = 255


def flood_fill_components(labels, connectivity=4):
    """List of (class, set of (y, x)) per component, in first-pixel raster order."""
    h, w = labels.shape
    seen = np.zeros((h, w), bool)
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    out = []
    for y in range(h):
        for x in range(w):
            c = labels[y, x]
            if seen[y, x] or c == UNLABELED:
                continue
            comp = set()
            queue = deque([(y, x)])
            seen[y, x] = True
            while queue:
                cy, cx = queue.popleft()
                comp.add((cy, cx))
                for dy, dx in steps:
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and not seen[ny, nx] and labels[ny, nx] == c:
                        seen[ny, nx] = True
                        queue.append((ny, nx))
            out.append((int(c), comp))
    return out


def to_frame(grid, box, frame, fill=0):
    """Paste a box-placed grid (x0, y0, w, h) into a full frame."""
    out = np.full(frame, fill, dtype=np.asarray(grid).dtype)
    x0, y0, w, h = box
    out[y0:y0 + h, x0:x0 + w] = grid
    return out


def nn_rescale_frame(full, dst_frame):
    """Nearest-neighbour resample of a full-frame grid: row y reads floor(y*Hs/Hd)."""
    hs, ws = full.shape
    hd, wd = dst_frame
    out = np.empty(dst_frame, dtype=full.dtype)
    for y in range(hd):
        for x in range(wd):
            out[y, x] = full[(y * hs) // hd, (x * ws) // wd]
    return out


def enum_mask_iou(a_full, b_full):
    """(intersection, union) by visiting every pixel."""
    inter = union = 0
    h, w = a_full.shape
    for y in range(h):
        for x in range(w):
            pa, pb = bool(a_full[y, x]), bool(b_full[y, x])
            inter += pa and pb
            union += pa or pb
    return inter, union


def enum_context_iou(a_full, b_full):
    """(intersection, union) over (pixel, class) pairs; UNLABELED marks no entry."""
    inter = union = 0
    h, w = a_full.shape
    for y in range(h):
        for x in range(w):
            ca, cb = int(a_full[y, x]), int(b_full[y, x])
            sa = set() if ca == UNLABELED else {ca}
            sb = set() if cb == UNLABELED else {cb}
            inter += len(sa & sb)
            union += len(sa | sb)
    return inter, union


def ratio(inter, union):
    return inter / union if union else 0.0


def brute_distances(mask):
    """Per-pixel Euclidean distance to the nearest pixel of the other kind (in-frame only)."""
    ys, xs = np.nonzero(mask)
    oys, oxs = np.nonzero(~mask)
    inside = np.full(mask.shape, np.inf)
    outside = np.full(mask.shape, np.inf)
    if oys.size and ys.size:
        d, _ = cKDTree(np.c_[oys, oxs]).query(np.c_[ys, xs])
        inside[ys, xs] = d
        d, _ = cKDTree(np.c_[ys, xs]).query(np.c_[oys, oxs])
        outside[oys, oxs] = d
    return inside, outside


def dirichlet_solve(values, unknown):
    """Solve the 4-neighbour discrete Laplace equation on ``unknown`` exactly.

    Neighbours outside the frame are dropped (Neumann edge); known pixels act as
    Dirichlet data. ``values`` is (h, w) float.
    """
    h, w = unknown.shape
    idx = -np.ones((h, w), int)
    pts = list(zip(*np.nonzero(unknown)))
    for i, (y, x) in enumerate(pts):
        idx[y, x] = i
    n = len(pts)
    A = np.zeros((n, n))
    b = np.zeros(n)
    for i, (y, x) in enumerate(pts):
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            ny, nx = y + dy, x + dx
            if not (0 <= ny < h and 0 <= nx < w):
                continue
            A[i, i] += 1
            if unknown[ny, nx]:
                A[i, idx[ny, nx]] -= 1
            else:
                b[i] += values[ny, nx]
    sol = np.linalg.solve(A, b)
    out = values.astype(float).copy()
    for i, (y, x) in enumerate(pts):
        out[y, x] = sol[i]
    return out
