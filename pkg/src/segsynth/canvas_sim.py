"""Simulated training canvases: stenciling, color transfer and boundary elision.

Each ground-truth segment of an (image, layout) pair is stenciled with the
aligned mask of a same-class segment retrieved from another image, a random
fraction of segments get their color statistics swapped for those of a
random same-class bank segment, and the result goes through the same
boundary elision used at synthesis time.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import compositor
from .alignment import fit_alignment, warp_segment
from .compositor import Canvas, OrderingTable
from .retrieval import Query, retrieve
from .segment_bank import (MemoryBank, PlacedSegment, SegmentRecord, SemanticLayout, extract_segments,
                           write_image, write_layout)

log = logging.getLogger(__name__)

# RGB -> LMS and the log-LMS -> l-alpha-beta rotation for color transfer.
RGB_TO_LMS = np.array([[0.3811, 0.5783, 0.0402],
                       [0.1967, 0.7244, 0.0782],
                       [0.0241, 0.1288, 0.8444]])
LMS_TO_RGB = np.linalg.inv(RGB_TO_LMS)
LOGLMS_TO_LAB = np.diag([1 / np.sqrt(3), 1 / np.sqrt(6), 1 / np.sqrt(2)]) @ np.array(
    [[1.0, 1.0, 1.0], [1.0, 1.0, -2.0], [1.0, -1.0, 0.0]])
LAB_TO_LOGLMS = np.linalg.inv(LOGLMS_TO_LAB)
LMS_FLOOR = 1e-8
STD_EPS = 1e-6


@dataclass
class SimConfig:
    color_transfer_fraction: float = 0.20
    band: float = compositor.DEFAULT_BAND
    interior_rate: float = compositor.DEFAULT_INTERIOR_RATE
    rng_seed: int = 0
    exclude_same_source: bool = True
    allow_rotation: bool = False

    def __post_init__(self):
        for name in ("color_transfer_fraction", "interior_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.band < 0:
            raise ValueError("band must be non-negative")


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """RGB values in [0, 255] (any leading shape) to l-alpha-beta."""
    lms = np.asarray(rgb, np.float64) @ RGB_TO_LMS.T
    return np.log10(np.maximum(lms, LMS_FLOOR)) @ LOGLMS_TO_LAB.T


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    return (10.0 ** (np.asarray(lab, np.float64) @ LAB_TO_LOGLMS.T)) @ LMS_TO_RGB.T


def transfer_lab(src_rgb: np.ndarray, ref_rgb: np.ndarray) -> np.ndarray:
    """Match per-channel mean and std of ``src_rgb`` (n, 3) to ``ref_rgb`` (m, 3) in lαβ.

    Returns the transferred pixels in lαβ, before conversion back to RGB.
    """
    src = rgb_to_lab(src_rgb)
    ref = rgb_to_lab(ref_rgb)
    s_mean, s_std = src.mean(axis=0), src.std(axis=0)
    r_mean, r_std = ref.mean(axis=0), ref.std(axis=0)
    gain = np.where(s_std < STD_EPS, 1.0, r_std / np.where(s_std < STD_EPS, 1.0, s_std))
    return (src - s_mean) * gain + r_mean


def reinhard_transfer(src: PlacedSegment, ref: SegmentRecord | PlacedSegment, clamp: bool = True) -> PlacedSegment:
    """Transfer ``ref``'s color statistics onto ``src`` over masked pixels only."""
    if src.empty or not np.asarray(ref.mask).any():
        raise ValueError("color transfer needs two non-empty segments")
    ref_px = np.asarray(ref.color, np.float64)[np.asarray(ref.mask, bool)]
    src_px = src.color[src.mask]
    if (src_px == src_px[0]).all() and (ref_px == ref_px[0]).all():
        # constant onto constant: the mean shift lands on the reference color
        out_px = np.broadcast_to(ref_px[0], src_px.shape)
    else:
        out_px = lab_to_rgb(transfer_lab(src_px, ref_px))
    if clamp:
        out_px = np.clip(out_px, 0.0, 255.0)
    color = np.zeros_like(src.color)
    color[src.mask] = out_px
    return PlacedSegment(src.frame_size, src.bbox, src.mask.copy(), color,
                         src.class_index, src.segment_id, src.source_id)


def stencil(segment: PlacedSegment, stencil_mask) -> PlacedSegment:
    """Keep only the pixels of ``segment`` that the (already aligned) stencil covers."""
    meta = dict(class_index=segment.class_index, segment_id=segment.segment_id, source_id=segment.source_id)
    if segment.empty or stencil_mask is None or stencil_mask.bbox is None:
        return PlacedSegment.make_empty(segment.frame_size, **meta)
    if tuple(stencil_mask.frame_size) != tuple(segment.frame_size):
        raise ValueError("stencil and segment must share a frame")
    b, sb = segment.bbox, stencil_mask.bbox
    keep = np.zeros_like(segment.mask)
    inter = b.intersect(sb)
    if inter is not None:
        keep[inter.y0 - b.y0:inter.y1 - b.y0, inter.x0 - b.x0:inter.x1 - b.x0] = \
            stencil_mask.mask[inter.y0 - sb.y0:inter.y1 - sb.y0, inter.x0 - sb.x0:inter.x1 - sb.x0]
    mask = segment.mask & keep
    color = segment.color.copy()
    color[~mask] = 0.0
    return PlacedSegment(segment.frame_size, segment.bbox, mask, color, **meta).trimmed()


class SimResult(NamedTuple):
    canvas: Canvas
    missing: np.ndarray
    transferred: list[int]       # indices of ground-truth segments that were color-transferred


def simulate_canvas(image: np.ndarray, layout: SemanticLayout, bank: MemoryBank, cfg: SimConfig,
                    source_id: str | None = None, min_area: int | None = None) -> SimResult:
    rng = np.random.default_rng(cfg.rng_seed)
    min_area = bank.min_area if min_area is None else min_area
    records = extract_segments(image, layout, source_id or "", min_area, bank.connectivity)
    exclude = source_id if cfg.exclude_same_source else None
    placements = []
    transferred = []
    for j, rec in enumerate(records):
        seg = PlacedSegment.from_record(rec)
        match = retrieve(Query.from_record(rec, j), bank, exclude_source=exclude)
        if match is None:
            log.warning("no %s segment from another image; segment %d left unstenciled",
                        layout.classes[rec.class_index], j)
        else:
            other = bank.segments[match.segment_id]
            t = fit_alignment(other, rec, allow_rotation=cfg.allow_rotation)
            seg = stencil(seg, warp_segment(other, t, layout.shape))
        # one draw per segment keeps the stream aligned regardless of outcomes
        do_transfer = rng.random() < cfg.color_transfer_fraction
        pick = rng.random()
        if do_transfer and not seg.empty:
            pool = [i for i in bank.per_class.get(rec.class_index, [])
                    if exclude is None or bank.segments[i].source_id != str(exclude)]
            if pool:
                seg = reinhard_transfer(seg, bank.segments[pool[int(pick * len(pool))]])
                transferred.append(j)
        placements.append((j, seg))
    # ground-truth segments are disjoint, so any ordering gives the same canvas
    order = OrderingTable(list(layout.classes), list(range(len(layout.classes))))
    canvas = compositor.compose(layout, placements, order)
    canvas = compositor.elide_boundaries(canvas, cfg.band, cfg.interior_rate,
                                         rng_seed=int(rng.integers(2**63)))
    return SimResult(canvas, canvas.state != compositor.CONTENT, transferred)


def sample_seed(base_seed: int, index: int) -> int:
    return int(base_seed) ^ int(index)


def export_training_pairs(dataset: Sequence[tuple[np.ndarray, SemanticLayout, str]], bank: MemoryBank,
                          cfg: SimConfig, out_dir, jobs: int = 1) -> list[dict]:
    """Write one simulated canvas per training pair plus a ``manifest.json``.

    Files per sample: ``<id>_canvas.png``, ``<id>_state.png`` (paletted),
    ``<id>_layout.png`` and ``<id>_image.png``. I/O failures are recorded in
    the manifest row and do not stop the run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def work(i):
        image, layout, sid = dataset[i]
        seed = sample_seed(cfg.rng_seed, i)
        stem = f"{i:06d}_{sid}"
        row = {"index": i, "source_id": str(sid), "seed": seed,
               "canvas": f"{stem}_canvas.png", "state": f"{stem}_state.png",
               "layout": f"{stem}_layout.png", "image": f"{stem}_image.png"}
        try:
            res = simulate_canvas(image, layout, bank, _with_seed(cfg, seed), source_id=str(sid))
            res.canvas.save(out / row["canvas"], out / row["state"])
            write_layout(out / row["layout"], layout)
            write_image(out / row["image"], image)
            row["transferred"] = res.transferred
            row["missing_fraction"] = float(res.missing.mean())
        except OSError as e:
            log.error("sample %d (%s) failed: %s", i, sid, e)
            row["error"] = str(e)
        return row

    if jobs > 1 and len(dataset) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(jobs) as pool:
            rows = list(pool.map(work, range(len(dataset))))
    else:
        rows = [work(i) for i in range(len(dataset))]
    manifest = {"version": 1, "config": asdict(cfg), "classes": list(bank.class_table), "samples": rows}
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1) + "\n")
    os.replace(tmp, out / "manifest.json")
    return rows


def _with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    d = asdict(cfg)
    d["rng_seed"] = seed
    return SimConfig(**d)
