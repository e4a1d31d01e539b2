"""Segment retrieval by mask IoU plus context IoU.

Candidates are restricted to the query's class. The index orders them by
an upper bound on the score and scans with early exit, so the result is
always the exact argmax (ties go to the lowest segment id).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import _pure
from .segment_bank import (UNLABELED, BoundingBox, MemoryBank, SegmentRecord,
                           SemanticLayout, context_box, label_components)

DEFAULT_TOPK = 5


@dataclass(frozen=True)
class Query:
    class_index: int
    bbox: BoundingBox
    mask: np.ndarray
    context_box: BoundingBox
    context: np.ndarray
    frame_size: tuple[int, int]
    region_id: int = -1

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def from_record(cls, rec: SegmentRecord, region_id: int = -1) -> "Query":
        return cls(rec.class_index, rec.bbox, rec.mask, rec.context_box, rec.context,
                   tuple(rec.frame_size), region_id)


@dataclass(frozen=True)
class ScoredMatch:
    segment_id: int
    mask_iou: float
    context_iou: float

    @property
    def score(self) -> float:
        return self.mask_iou + self.context_iou


def layout_queries(layout: SemanticLayout, connectivity: int = 4, min_area: int = 0) -> list[Query]:
    """One query per connected component of ``layout``, in scan order."""
    out = []
    for rid, (cls, box, m) in enumerate(label_components(layout.labels, connectivity, min_area)):
        cbox = context_box(box, layout.shape)
        out.append(Query(cls, box, m, cbox, layout.labels[cbox.slices].copy(), layout.shape, rid))
    return out


# -- geometry helpers --------------------------------------------------------

def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def rescale_grid(grid: np.ndarray, box: BoundingBox, src_frame, dst_frame):
    """Nearest-neighbour rescale of a box-placed grid from one frame size to another.

    Destination pixel ``y`` samples source row ``floor(y * Hs / Hd)``. Returns
    ``(grid, (x0, y0, w, h))``; the box may be empty when downscaling.
    """
    (hs, ws), (hd, wd) = src_frame, dst_frame
    if (hs, ws) == (hd, wd):
        return grid, (box.x0, box.y0, box.w, box.h)
    ya, yb = _ceil_div(box.y0 * hd, hs), _ceil_div(box.y1 * hd, hs)
    xa, xb = _ceil_div(box.x0 * wd, ws), _ceil_div(box.x1 * wd, ws)
    rows = (np.arange(ya, yb) * hs) // hd - box.y0
    cols = (np.arange(xa, xb) * ws) // wd - box.x0
    return grid[np.ix_(rows, cols)], (xa, ya, xb - xa, yb - ya)


def _placed(obj, kind: str, frame):
    if kind == "mask":
        grid, box = np.ascontiguousarray(obj.mask, dtype=bool), obj.bbox
    else:
        grid, box = np.ascontiguousarray(obj.context, dtype=np.uint8), obj.context_box
    return rescale_grid(grid, box, tuple(obj.frame_size), tuple(frame))


def mask_iou(a, b) -> float:
    """IoU of two placed masks; ``b`` is rescaled to ``a``'s frame if needed."""
    am, ab = _placed(a, "mask", a.frame_size)
    bm, bb = _placed(b, "mask", a.frame_size)
    inter = _pure.mask_intersection(am, ab, bm, bb)
    union = int(am.sum()) + int(bm.sum()) - inter
    return inter / union if union else 0.0


def context_iou(a, b) -> float:
    """IoU of the one-hot (pixel, class) sets of two placed context grids."""
    ac, ab = _placed(a, "context", a.frame_size)
    bc, bb = _placed(b, "context", a.frame_size)
    inter = _pure.context_intersection(ac, ab, bc, bb)
    union = int((ac != UNLABELED).sum()) + int((bc != UNLABELED).sum()) - inter
    return inter / union if union else 0.0


# -- index -------------------------------------------------------------------

class ClassIndex:
    """Packed geometry of one class's segments, rescaled to one query frame size."""

    def __init__(self, records: list[SegmentRecord], frame):
        n = len(records)
        self.n = n
        self.ids = np.array([r.id for r in records], dtype=np.int64)
        self.sources = np.array([r.source_id for r in records], dtype=object)
        self.mbox = np.zeros((n, 4), dtype=np.int64)
        self.cbox = np.zeros((n, 4), dtype=np.int64)
        self.marea = np.zeros(n, dtype=np.int64)
        self.ccount = np.zeros(n, dtype=np.int64)
        self.moff = np.zeros(n, dtype=np.int64)
        self.coff = np.zeros(n, dtype=np.int64)
        mparts, cparts = [], []
        mo = co = 0
        for i, r in enumerate(records):
            m, mb = _placed(r, "mask", frame)
            c, cb = _placed(r, "context", frame)
            m = np.ascontiguousarray(m, dtype=np.uint8)
            c = np.ascontiguousarray(c, dtype=np.uint8)
            self.mbox[i], self.cbox[i] = mb, cb
            self.marea[i] = int(m.sum())
            self.ccount[i] = int((c != UNLABELED).sum())
            self.moff[i], self.coff[i] = mo, co
            mo += m.size
            co += c.size
            mparts.append(m.ravel())
            cparts.append(c.ravel())
        self.mflat = np.concatenate(mparts) if mparts else np.zeros(0, np.uint8)
        self.cflat = np.concatenate(cparts) if cparts else np.zeros(0, np.uint8)

    def upper_bounds(self, q_box, q_area, q_cbox, q_ccount) -> np.ndarray:
        """Per-candidate bound on mask IoU + context IoU; never below the true score."""
        def overlap(boxes, qb):
            w = np.minimum(boxes[:, 0] + boxes[:, 2], qb[0] + qb[2]) - np.maximum(boxes[:, 0], qb[0])
            h = np.minimum(boxes[:, 1] + boxes[:, 3], qb[1] + qb[3]) - np.maximum(boxes[:, 1], qb[1])
            return np.clip(w, 0, None) * np.clip(h, 0, None)

        def ratio(ov, a, b):
            num = np.minimum(np.minimum(ov, a), b).astype(np.float64)
            den = np.maximum(a, b).astype(np.float64)
            out = np.zeros(len(den))
            np.divide(num, den, out=out, where=den > 0)
            return out

        return (ratio(overlap(self.mbox, q_box), q_area, self.marea)
                + ratio(overlap(self.cbox, q_cbox), q_ccount, self.ccount))


def class_index(bank: MemoryBank, cls: int, frame) -> ClassIndex:
    key = (int(cls), tuple(frame))
    idx = bank._index_cache.get(key)
    if idx is None:
        with bank._index_lock:
            idx = bank._index_cache.get(key)
            if idx is None:
                recs = [bank.segments[i] for i in bank.per_class.get(int(cls), [])]
                idx = ClassIndex(recs, frame)
                bank._index_cache[key] = idx
    return idx


def _rank(query: Query, bank: MemoryBank, k: int, exclude_source, backend=None) -> list[ScoredMatch]:
    idx = class_index(bank, query.class_index, query.frame_size)
    if idx.n == 0:
        return []
    qm = np.ascontiguousarray(query.mask, dtype=np.uint8)
    qc = np.ascontiguousarray(query.context, dtype=np.uint8)
    qb = np.array([query.bbox.x0, query.bbox.y0, query.bbox.w, query.bbox.h], dtype=np.int64)
    cb = query.context_box
    qcb = np.array([cb.x0, cb.y0, cb.w, cb.h], dtype=np.int64)
    q_area = int(qm.sum())
    q_cc = int((qc != UNLABELED).sum())
    ub = idx.upper_bounds(qb, q_area, qcb, q_cc)
    cand = np.arange(idx.n)
    if exclude_source is not None:
        cand = cand[idx.sources != str(exclude_source)]
        if cand.size == 0:
            return []
    # descending bound, then ascending id, so equal bounds are visited id-first
    order = cand[np.lexsort((idx.ids[cand], -ub[cand]))].astype(np.int64)
    scan = (backend or kernels).scan_topk
    pos, counts = scan(qm, qb, q_area, qc, qcb, q_cc, idx.mflat, idx.moff, idx.mbox, idx.marea,
                       idx.cflat, idx.coff, idx.cbox, idx.ccount, idx.ids, order, ub, int(k))
    out = []
    for p, (im, um, ic, uc) in zip(pos, counts):
        out.append(ScoredMatch(int(idx.ids[p]), im / um if um else 0.0, ic / uc if uc else 0.0))
    return out


def retrieve(query: Query, bank: MemoryBank, exclude_source=None, backend=None) -> ScoredMatch | None:
    """Best-scoring same-class segment, or ``None`` when there is no candidate."""
    ranked = _rank(query, bank, 1, exclude_source, backend)
    return ranked[0] if ranked else None


def rank_topk(query: Query, bank: MemoryBank, k: int, exclude_source=None, backend=None) -> list[ScoredMatch]:
    if k < 1:
        raise ValueError("k must be >= 1")
    return _rank(query, bank, k, exclude_source, backend)


def retrieve_topk(query: Query, bank: MemoryBank, k: int = DEFAULT_TOPK, rng_seed=0,
                  exclude_source=None, backend=None) -> ScoredMatch | None:
    """Uniform random pick among the ``k`` best candidates (fewer if the class is small)."""
    ranked = rank_topk(query, bank, k, exclude_source, backend)
    if not ranked:
        return None
    rng = np.random.default_rng(rng_seed)
    return ranked[int(rng.integers(len(ranked)))]


def brute_force_rank(query: Query, bank: MemoryBank, exclude_source=None) -> list[ScoredMatch]:
    """Score every same-class candidate with the public IoU functions; best first."""
    out = []
    for sid in bank.per_class.get(query.class_index, []):
        rec = bank.segments[sid]
        if exclude_source is not None and rec.source_id == str(exclude_source):
            continue
        out.append(ScoredMatch(sid, mask_iou(query, rec), context_iou(query, rec)))
    out.sort(key=lambda m: (-m.score, m.segment_id))
    return out
