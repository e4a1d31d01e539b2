"""Canvas composition: depth-derived class ordering, painting, boundary elision."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import networkx as nx
import numpy as np
from PIL import Image
from scipy import ndimage

from .segment_bank import PlacedSegment, SemanticLayout, label_components

CONTENT, INTERIOR_ELIDED, EXTERIOR_ELIDED, MISSING = 0, 1, 2, 3
STATE_NAMES = ("content", "interior_elided", "exterior_elided", "missing")
STATE_PALETTE = [(128, 128, 128), (255, 255, 255), (0, 0, 0), (255, 0, 255)]
NO_SEGMENT = -1

DEFAULT_BAND = 0.05
DEFAULT_INTERIOR_RATE = 0.8
ADJACENCY_PX = 2


@dataclass
class DepthMap:
    depth: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        ok = np.isfinite(self.depth) & (np.nan_to_num(self.depth, nan=-1.0) >= 0)
        self.valid = ok if self.valid is None else (np.asarray(self.valid, bool) & ok)


@dataclass
class OrderingTable:
    """Front/back relation between class pairs.

    ``votes[(p, q)]`` with ``p < q`` is ``[#p in front, #q in front]``;
    ``fallback`` lists every class index from back to front.
    """

    classes: list[str]
    fallback: list[int]
    votes: dict[tuple[int, int], list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if sorted(self.fallback) != list(range(len(self.classes))):
            raise ValueError("fallback must be a total order over all classes")
        self._rank = {c: i for i, c in enumerate(self.fallback)}

    def rank(self, cls: int) -> int:
        """Position in the fallback order; larger is further in front."""
        return self._rank[cls]

    def front(self, p: int, q: int) -> int:
        if p == q:
            return p
        a, b = min(p, q), max(p, q)
        va, vb = self.votes.get((a, b), (0, 0))
        if va != vb:
            return a if va > vb else b
        return p if self._rank[p] > self._rank[q] else q

    def confidence(self, p: int, q: int) -> int:
        return sum(self.votes.get((min(p, q), max(p, q)), (0, 0)))

    def to_dict(self) -> dict:
        pairs = []
        for (a, b), (va, vb) in sorted(self.votes.items()):
            pairs.append({"a": self.classes[a], "b": self.classes[b], "a_front": va, "b_front": vb,
                          "front": self.classes[self.front(a, b)]})
        return {"version": 1, "classes": self.classes,
                "fallback_back_to_front": [self.classes[c] for c in self.fallback], "pairs": pairs}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "OrderingTable":
        data = json.loads(Path(path).read_text())
        classes = list(data["classes"])
        pos = {n: i for i, n in enumerate(classes)}
        votes = {}
        for p in data.get("pairs", []):
            a, b = pos[p["a"]], pos[p["b"]]
            va, vb = int(p["a_front"]), int(p["b_front"])
            if a > b:
                a, b, va, vb = b, a, vb, va
            votes[(a, b)] = [va, vb]
        return cls(classes, [pos[n] for n in data["fallback_back_to_front"]], votes)


def resolve_fallback(classes: Sequence[str], names: Sequence[str] | None) -> list[int]:
    """Class indices back-to-front from a (possibly partial) name list.

    A partial list names the back-most classes; unlisted classes go in
    front of them, in class-table order.
    """
    pos = {n: i for i, n in enumerate(classes)}
    listed = []
    for n in names or []:
        if n not in pos:
            raise ValueError(f"unknown class {n!r} in fallback order")
        if pos[n] not in listed:
            listed.append(pos[n])
    return listed + [i for i in range(len(classes)) if i not in listed]


def derive_ordering(pairs: Sequence[tuple[SemanticLayout, DepthMap | None]], classes: Sequence[str],
                    fallback: Sequence[int] | None = None, adjacency: int = ADJACENCY_PX,
                    connectivity: int = 4, jobs: int = 1) -> OrderingTable:
    """Majority vote of relative mean depth between adjacent segments, per class pair."""
    classes = list(classes)
    have_depth = any(d is not None for _, d in pairs)
    if not have_depth and fallback is None:
        raise ValueError("no depth data available: a fallback class order (back to front) is required")

    def work(item):
        layout, depth = item
        if depth is None:
            return {}, {}
        return _pair_votes(layout, depth, adjacency, connectivity)

    if jobs > 1 and len(pairs) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(work, pairs))
    else:
        results = [work(p) for p in pairs]

    votes: dict[tuple[int, int], list[int]] = {}
    depth_sum = np.zeros(len(classes))
    depth_n = np.zeros(len(classes))
    for pv, cd in results:
        for key, (va, vb) in pv.items():
            acc = votes.setdefault(key, [0, 0])
            acc[0] += va
            acc[1] += vb
        for c, (s, n) in cd.items():
            depth_sum[c] += s
            depth_n[c] += n
    if fallback is None:
        # deepest classes first; classes never observed go to the back, by index
        mean = np.where(depth_n > 0, depth_sum / np.maximum(depth_n, 1), np.inf)
        fallback = sorted(range(len(classes)), key=lambda c: (-mean[c], c))
    return OrderingTable(classes, list(fallback), votes)


def _disk(r: int) -> np.ndarray:
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return x * x + y * y <= r * r


def _pair_votes(layout: SemanticLayout, depth: DepthMap, adjacency: int, connectivity: int):
    if depth.depth.shape != layout.shape:
        raise ValueError("depth map is not aligned with its layout")
    comps = label_components(layout.labels, connectivity)
    comp_map = np.full(layout.shape, -1, dtype=np.int64)
    for i, (_, box, m) in enumerate(comps):
        comp_map[box.slices][m] = i
    n = len(comps)
    flat = comp_map.ravel()
    ok = (flat >= 0) & depth.valid.ravel()
    dsum = np.bincount(flat[ok], weights=depth.depth.ravel()[ok], minlength=n)
    dcnt = np.bincount(flat[ok], minlength=n)
    class_depth = {}
    for i, (cls, _, _) in enumerate(comps):
        if dcnt[i]:
            s, c = class_depth.get(cls, (0.0, 0))
            class_depth[cls] = (s + dsum[i], c + int(dcnt[i]))
    disk = _disk(adjacency)
    h, w = layout.shape
    votes: dict[tuple[int, int], list[int]] = {}
    for i, (ci, box, m) in enumerate(comps):
        if not dcnt[i]:
            continue
        y0, x0 = max(box.y0 - adjacency, 0), max(box.x0 - adjacency, 0)
        y1, x1 = min(box.y1 + adjacency, h), min(box.x1 + adjacency, w)
        local = np.zeros((y1 - y0, x1 - x0), dtype=bool)
        local[box.y0 - y0:box.y1 - y0, box.x0 - x0:box.x1 - x0] = m
        grown = ndimage.binary_dilation(local, structure=disk)
        for j in np.unique(comp_map[y0:y1, x0:x1][grown]):
            if j <= i or not dcnt[j]:
                continue
            cj = comps[j][0]
            if cj == ci:
                continue
            di, dj = dsum[i] / dcnt[i], dsum[j] / dcnt[j]
            if di == dj:
                continue
            front = ci if di < dj else cj
            a, b = min(ci, cj), max(ci, cj)
            acc = votes.setdefault((a, b), [0, 0])
            acc[0 if front == a else 1] += 1
    return votes, class_depth


# -- canvas --------------------------------------------------------------------

@dataclass
class Canvas:
    rgb: np.ndarray                  # (h, w, 3) uint8
    state: np.ndarray                # (h, w) uint8, one of the state codes
    provenance: np.ndarray           # (h, w) int64 bank segment id, NO_SEGMENT where missing
    owner: np.ndarray                # (h, w) int64 paint-layer index, NO_SEGMENT where none
    layers: list[tuple[int, PlacedSegment]] = field(default_factory=list)  # paint order

    @classmethod
    def blank(cls, h: int, w: int) -> "Canvas":
        return cls(np.zeros((h, w, 3), np.uint8), np.full((h, w), MISSING, np.uint8),
                   np.full((h, w), NO_SEGMENT, np.int64), np.full((h, w), NO_SEGMENT, np.int64))

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    def copy(self) -> "Canvas":
        return Canvas(self.rgb.copy(), self.state.copy(), self.provenance.copy(),
                      self.owner.copy(), list(self.layers))

    def check(self) -> None:
        """Raise if the sentinel-color and provenance invariants are broken."""
        if not (self.rgb[self.state == INTERIOR_ELIDED] == 255).all():
            raise AssertionError("interior-elided pixels must be white")
        if not (self.rgb[self.state == EXTERIOR_ELIDED] == 0).all():
            raise AssertionError("exterior-elided pixels must be black")
        if not np.array_equal(self.provenance == NO_SEGMENT, self.state == MISSING):
            raise AssertionError("provenance must be empty exactly on missing pixels")

    def save(self, rgb_path, state_path) -> None:
        Image.fromarray(self.rgb, mode="RGB").save(rgb_path, format="PNG")
        write_state_image(state_path, self.state)


def write_state_image(path, state: np.ndarray) -> None:
    img = Image.fromarray(np.asarray(state, np.uint8), mode="P")
    img.putpalette([v for rgb in STATE_PALETTE for v in rgb])
    img.save(path, format="PNG")


def read_state_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im).astype(np.uint8)


def _overlaps(a: PlacedSegment, b: PlacedSegment) -> bool:
    inter = a.bbox.intersect(b.bbox)
    if inter is None:
        return False
    sa = a.mask[inter.y0 - a.bbox.y0:inter.y1 - a.bbox.y0, inter.x0 - a.bbox.x0:inter.x1 - a.bbox.x0]
    sb = b.mask[inter.y0 - b.bbox.y0:inter.y1 - b.bbox.y0, inter.x0 - b.bbox.x0:inter.x1 - b.bbox.x0]
    return bool((sa & sb).any())


def paint_order(items: Sequence[tuple[int, PlacedSegment]], ordering: OrderingTable) -> list[int]:
    """Indices into ``items`` from back to front.

    Overlapping pairs get an edge back->front from the ordering table; any
    cycle is collapsed and its members ordered by the fallback order. Ties
    are broken by fallback rank, then region id.
    """
    n = len(items)
    key = {i: (ordering.rank(items[i][1].class_index), items[i][0], i) for i in range(n)}
    g = nx.DiGraph()
    g.add_nodes_from(range(n))
    for i in range(n):
        for j in range(i + 1, n):
            si, sj = items[i][1], items[j][1]
            if si.class_index == sj.class_index or not _overlaps(si, sj):
                continue
            if ordering.front(si.class_index, sj.class_index) == sj.class_index:
                g.add_edge(i, j)
            else:
                g.add_edge(j, i)
    cond = nx.condensation(g)
    members = cond.graph["mapping"]
    groups: dict[int, list[int]] = {}
    for node, comp in members.items():
        groups.setdefault(comp, []).append(node)
    for comp in groups:
        groups[comp].sort(key=key.__getitem__)
    order = []
    for comp in nx.lexicographical_topological_sort(cond, key=lambda c: key[groups[c][0]]):
        order.extend(groups[comp])
    return order


def compose(layout: SemanticLayout | tuple[int, int],
            placements: Sequence[tuple[int, PlacedSegment | None]],
            ordering: OrderingTable) -> Canvas:
    """Paint placed segments back to front; uncovered pixels stay missing."""
    h, w = layout.shape if isinstance(layout, SemanticLayout) else layout
    canvas = Canvas.blank(h, w)
    seen = set()
    items = []
    for rid, seg in placements:
        if rid in seen:
            raise ValueError(f"region {rid} placed more than once")
        seen.add(rid)
        if seg is None or seg.empty:
            continue
        if tuple(seg.frame_size) != (h, w):
            raise ValueError(f"segment for region {rid} is placed in frame {seg.frame_size}, canvas is {(h, w)}")
        items.append((rid, seg))
    for layer, i in enumerate(paint_order(items, ordering)):
        rid, seg = items[i]
        sl = seg.bbox.slices
        m = seg.mask
        canvas.rgb[sl][m] = np.clip(np.rint(seg.color[m]), 0, 255).astype(np.uint8)
        canvas.state[sl][m] = CONTENT
        canvas.provenance[sl][m] = seg.segment_id
        canvas.owner[sl][m] = layer
        canvas.layers.append((rid, seg))
    return canvas


def band_width(band: float, height: int) -> int:
    """Elision distance in pixels: ``floor(band * height)``."""
    return int(math.floor(band * height + 1e-9))


def _local_distances(seg: PlacedSegment, r: int):
    """Distances inside (to the nearest off-mask pixel) and outside (to the mask)
    over the segment box grown by ``r + 1`` and clipped to the frame."""
    fh, fw = seg.frame_size
    b = seg.bbox
    y0, x0 = max(b.y0 - r - 1, 0), max(b.x0 - r - 1, 0)
    y1, x1 = min(b.y1 + r + 1, fh), min(b.x1 + r + 1, fw)
    local = np.zeros((y1 - y0, x1 - x0), dtype=bool)
    local[b.y0 - y0:b.y1 - y0, b.x0 - x0:b.x1 - x0] = seg.mask
    if local.all():
        inside = np.full(local.shape, np.inf)
    else:
        inside = ndimage.distance_transform_edt(local)
    outside = ndimage.distance_transform_edt(~local)
    return (slice(y0, y1), slice(x0, x1)), local, inside, outside


def elide_boundaries(canvas: Canvas, band: float = DEFAULT_BAND, interior_rate: float = DEFAULT_INTERIOR_RATE,
                     rng_seed=0, exterior_exclude: Sequence[int] = ()) -> Canvas:
    """Blank pixels near each painted segment's own mask boundary.

    Visible interior pixels within ``floor(band * h)`` of the boundary turn
    white with probability ``interior_rate``. Pixels outside the mask within
    the same distance turn black unless a segment painted in front owns them.
    Frame edges are not boundaries.
    """
    if not 0.0 <= interior_rate <= 1.0:
        raise ValueError("interior_rate must lie in [0, 1]")
    out = canvas.copy()
    r = band_width(band, canvas.height)
    if r <= 0 or not canvas.layers:
        return out
    rng = np.random.default_rng(rng_seed)
    geo = [_local_distances(seg, r) for _, seg in canvas.layers]

    for layer, (sl, local, inside, _) in enumerate(geo):
        own = out.owner[sl] == layer
        cand = local & own & (inside <= r)
        draws = rng.random(int(cand.sum()))
        hit = np.zeros_like(cand)
        hit[cand] = draws < interior_rate
        out.state[sl][hit] = INTERIOR_ELIDED
        out.rgb[sl][hit] = 255

    excluded = set(exterior_exclude)
    for layer, (sl, local, _, outside) in enumerate(geo):
        seg = canvas.layers[layer][1]
        if seg.class_index in excluded:
            continue
        owner = out.owner[sl]
        hit = ~local & (outside <= r) & (owner < layer)
        out.state[sl][hit] = EXTERIOR_ELIDED
        out.rgb[sl][hit] = 0
        was_missing = hit & (out.provenance[sl] == NO_SEGMENT)
        out.provenance[sl][was_missing] = seg.segment_id
        out.owner[sl][hit] = layer
    return out
