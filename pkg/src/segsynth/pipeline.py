"""End-to-end synthesis of one layout: retrieve, align, compose, elide, finish."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import compositor, finisher
from .alignment import fit_alignment, warp_segment
from .compositor import Canvas, OrderingTable
from .config import PipelineConfig
from .retrieval import layout_queries, retrieve, retrieve_topk
from .segment_bank import UNLABELED, MemoryBank, SemanticLayout

log = logging.getLogger(__name__)


class CoarseLayoutError(ValueError):
    pass


def derive_seed(seed: int, *keys: int) -> int:
    """Stable 64-bit seed for a (seed, key...) tuple, independent of execution order."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *[int(k) for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class SynthResult:
    image: np.ndarray        # uint8 RGB
    canvas: Canvas           # after elision
    regions: list[dict]      # provenance, one entry per layout region
    timings: dict[str, float]


def synthesize(layout: SemanticLayout, bank: MemoryBank, ordering: OrderingTable, cfg: PipelineConfig,
               seed: int, backend=None, jobs: int = 1) -> SynthResult:
    """Synthesize one image for a dense layout.

    Region retrievals run on ``jobs`` threads; results do not depend on it.
    """
    if list(layout.classes) != list(bank.class_table):
        raise ValueError("layout class table differs from the bank's")
    unl = float((layout.labels == UNLABELED).mean())
    if unl > cfg.retrieval.max_unlabeled_fraction:
        raise CoarseLayoutError(
            f"layout is {unl:.0%} unlabeled; synthesis requires dense layouts "
            "(coarse-to-fine layout completion is not supported)")
    timings = {}
    t0 = time.perf_counter()
    min_area = bank.min_area if cfg.retrieval.query_min_area is None else cfg.retrieval.query_min_area
    regions_all = layout_queries(layout, bank.connectivity, 0)
    queries = [q for q in regions_all if q.area >= min_area]
    timings["decompose"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    k = cfg.retrieval.k
    exclude = cfg.retrieval.exclude_source

    def pick(q):
        if k > 1:
            return retrieve_topk(q, bank, k, derive_seed(seed, 1, q.region_id), exclude, backend)
        return retrieve(q, bank, exclude, backend)

    if jobs > 1 and len(queries) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            matches = list(pool.map(pick, queries))
    else:
        matches = [pick(q) for q in queries]
    timings["retrieve"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    a = cfg.alignment
    placements, regions = [], []
    found = dict(zip((q.region_id for q in queries), matches))
    for q in regions_all:
        if q.region_id not in found:
            regions.append({"region": q.region_id, "class": layout.classes[q.class_index],
                            "bbox": q.bbox.as_list(), "area": q.area, "segment_id": None,
                            "status": "below_min_area"})
            continue
        m = found[q.region_id]
        entry = {"region": q.region_id, "class": layout.classes[q.class_index],
                 "bbox": q.bbox.as_list(), "area": q.area, "k": k, "exclude_source": exclude}
        if k > 1:
            entry["retrieval_seed"] = derive_seed(seed, 1, q.region_id)
        if m is None:
            placements.append((q.region_id, None))
            entry.update(segment_id=None, status="no_match")
        else:
            rec = bank.segments[m.segment_id]
            t = fit_alignment(rec, q, a.allow_rotation, (a.scale_min, a.scale_max), a.anisotropy)
            seg = warp_segment(rec, t, layout.shape)
            placements.append((q.region_id, seg))
            entry.update(segment_id=m.segment_id, source_id=rec.source_id, mask_iou=m.mask_iou,
                         context_iou=m.context_iou, score=m.score, transform=t.to_list(),
                         status="empty_after_warp" if seg.empty else "placed")
        regions.append(entry)
    timings["align"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    canvas = compositor.compose(layout, placements, ordering)
    exclude_cls = [layout.classes.index(n) for n in cfg.compositor.exterior_exclude if n in layout.classes]
    canvas = compositor.elide_boundaries(canvas, cfg.compositor.band, cfg.compositor.interior_rate,
                                         derive_seed(seed, 2), exclude_cls)
    timings["compose"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    f = cfg.finisher
    inp = finisher.FinisherInput(canvas, layout)
    if not (~inp.missing).any():
        raise ValueError("canvas has no content pixels; the bank has no usable segments for this layout")
    if f.backend == "baseline":
        out = finisher.finish(inp, "baseline", tol=f.tol, max_iters=f.max_iters,
                              harmonize_regions=f.harmonize, blend=f.blend,
                              respect_layout=f.respect_layout)
    elif f.backend == "command":
        if not f.command:
            raise ValueError("finisher.command must be set for the command backend")
        out = finisher.finish(inp, finisher.CommandBackend(f.command))
    else:
        out = finisher.finish(inp, f.backend)
    timings["finish"] = time.perf_counter() - t0
    log.debug("synth timings: %s", {k: round(v, 4) for k, v in timings.items()})
    return SynthResult(finisher.to_uint8(out), canvas, regions, timings)
