"""Segment extraction and the on-disk memory bank.

A segment is one connected component of a single class in a semantic
layout. Segments are stored bbox-cropped: the mask, color patch and
context grid only cover their boxes, and ``frame_size`` records the
source frame so full-frame geometry can always be reconstructed.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

UNLABELED = 255
BANK_VERSION = 1
DEFAULT_MIN_AREA = 16

_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


class BankError(Exception):
    """Base class for memory bank persistence failures."""


class CorruptManifestError(BankError):
    pass


class ChecksumMismatchError(BankError):
    pass


class VersionMismatchError(BankError):
    pass


class MissingAssetError(BankError):
    def __init__(self, segment_id: int, path: Path):
        super().__init__(f"segment {segment_id}: missing asset {path}")
        self.segment_id = segment_id
        self.path = path


@dataclass(frozen=True)
class BoundingBox:
    x0: int
    y0: int
    w: int
    h: int

    @property
    def x1(self) -> int:
        return self.x0 + self.w

    @property
    def y1(self) -> int:
        return self.y0 + self.h

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y1), slice(self.x0, self.x1)

    def contains(self, other: "BoundingBox") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and other.x1 <= self.x1 and other.y1 <= self.y1)

    def intersect(self, other: "BoundingBox") -> "BoundingBox | None":
        x0, y0 = max(self.x0, other.x0), max(self.y0, other.y0)
        x1, y1 = min(self.x1, other.x1), min(self.y1, other.y1)
        if x1 <= x0 or y1 <= y0:
            return None
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.w, self.h]


def tight_bbox(mask: np.ndarray) -> BoundingBox | None:
    """Tight box of the set pixels of a full-frame boolean mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return BoundingBox(int(cols[0]), int(rows[0]),
                       int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


@dataclass
class SemanticLayout:
    """Per-pixel class indices; unlabeled pixels hold ``UNLABELED``."""

    labels: np.ndarray
    classes: list[str]

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 2 or min(self.labels.shape) < 1:
            raise ValueError(f"layout must be a non-empty 2D grid, got shape {self.labels.shape}")
        if not 1 <= len(self.classes) < UNLABELED:
            raise ValueError(f"class table must hold 1..{UNLABELED - 1} classes")
        bad = (self.labels >= len(self.classes)) & (self.labels != UNLABELED)
        if bad.any():
            raise ValueError(f"layout has labels outside the class table: {np.unique(self.labels[bad])}")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def one_hot(self) -> np.ndarray:
        c = len(self.classes)
        out = np.zeros(self.labels.shape + (c,), dtype=bool)
        ys, xs = np.nonzero(self.labels != UNLABELED)
        out[ys, xs, self.labels[ys, xs]] = True
        return out

    @classmethod
    def from_one_hot(cls, onehot: np.ndarray, classes: list[str]) -> "SemanticLayout":
        labels = np.where(onehot.any(axis=2), onehot.argmax(axis=2), UNLABELED)
        return cls(labels.astype(np.uint8), list(classes))


@dataclass(frozen=True)
class SegmentRecord:
    id: int
    class_index: int
    source_id: str
    bbox: BoundingBox
    color: np.ndarray        # (h, w, 3) uint8, zero off-mask
    mask: np.ndarray         # (h, w) bool
    context_box: BoundingBox
    context: np.ndarray      # class indices over context_box
    frame_size: tuple[int, int]

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass
class PlacedSegment:
    """A (possibly warped) segment positioned in a particular frame.

    ``bbox`` is ``None`` for an empty result, which downstream stages treat
    as a missing region.
    """

    frame_size: tuple[int, int]
    bbox: BoundingBox | None
    mask: np.ndarray
    color: np.ndarray        # float64 (h, w, 3), values in [0, 255]
    class_index: int = -1
    segment_id: int = -1
    source_id: str | None = None

    @property
    def empty(self) -> bool:
        return self.bbox is None or not self.mask.any()

    @property
    def area(self) -> int:
        return 0 if self.bbox is None else int(self.mask.sum())

    @classmethod
    def make_empty(cls, frame_size, class_index=-1, segment_id=-1, source_id=None):
        return cls(tuple(frame_size), None, np.zeros((0, 0), bool), np.zeros((0, 0, 3)),
                   class_index, segment_id, source_id)

    @classmethod
    def from_record(cls, rec: SegmentRecord) -> "PlacedSegment":
        return cls(rec.frame_size, rec.bbox, rec.mask.copy(), rec.color.astype(np.float64),
                   rec.class_index, rec.id, rec.source_id)

    @classmethod
    def from_frame(cls, mask: np.ndarray, color: np.ndarray | None = None, **meta) -> "PlacedSegment":
        """Crop a full-frame mask (and optional full-frame color) to its tight box."""
        mask = np.asarray(mask, dtype=bool)
        box = tight_bbox(mask)
        if box is None:
            return cls.make_empty(mask.shape, **meta)
        m = mask[box.slices].copy()
        if color is None:
            c = np.zeros(m.shape + (3,))
        else:
            c = np.asarray(color, dtype=np.float64)[box.slices].copy()
            c[~m] = 0.0
        return cls(mask.shape, box, m, c, **meta)

    def frame_mask(self) -> np.ndarray:
        out = np.zeros(self.frame_size, dtype=bool)
        if self.bbox is not None:
            out[self.bbox.slices] = self.mask
        return out

    def trimmed(self) -> "PlacedSegment":
        """Shrink bbox to the tight extent of the mask."""
        if self.bbox is None:
            return self
        inner = tight_bbox(self.mask)
        meta = dict(class_index=self.class_index, segment_id=self.segment_id, source_id=self.source_id)
        if inner is None:
            return PlacedSegment.make_empty(self.frame_size, **meta)
        box = BoundingBox(self.bbox.x0 + inner.x0, self.bbox.y0 + inner.y0, inner.w, inner.h)
        m = self.mask[inner.slices].copy()
        c = self.color[inner.slices].copy()
        c[~m] = 0.0
        return PlacedSegment(self.frame_size, box, m, c, **meta)


def context_box(bbox: BoundingBox, frame: tuple[int, int]) -> BoundingBox:
    """Enlarge ``bbox`` by 25% per dimension about its center, kept inside ``frame``.

    Extents are rounded up and capped at the frame; the offset is floored
    and then shifted so the whole box lies inside the frame.
    """
    fh, fw = frame
    w = min(math.ceil(1.25 * bbox.w), fw)
    h = min(math.ceil(1.25 * bbox.h), fh)
    # 2*x0 + w - new_w is an integer, so floor division is exact.
    x0 = (2 * bbox.x0 + bbox.w - w) // 2
    y0 = (2 * bbox.y0 + bbox.h - h) // 2
    x0 = min(max(x0, 0), fw - w)
    y0 = min(max(y0, 0), fh - h)
    return BoundingBox(x0, y0, w, h)


def label_components(labels: np.ndarray, connectivity: int = 4, min_area: int = 0):
    """Yield ``(class_index, bbox, mask)`` per connected component in raster order.

    Components are ordered by their first pixel in row-major scan.
    """
    if connectivity not in _STRUCTURE:
        raise ValueError("connectivity must be 4 or 8")
    found = []
    for cls in np.unique(labels):
        if cls == UNLABELED:
            continue
        lab, _ = ndimage.label(labels == cls, structure=_STRUCTURE[connectivity])
        for i, sl in enumerate(ndimage.find_objects(lab)):
            m = lab[sl] == i + 1
            area = int(m.sum())
            if area < max(min_area, 1):
                continue
            box = BoundingBox(sl[1].start, sl[0].start, m.shape[1], m.shape[0])
            first = box.y0 * labels.shape[1] + box.x0 + int(np.argmax(m[0]))
            found.append((first, int(cls), box, m))
    found.sort(key=lambda t: t[0])
    return [(c, b, m) for _, c, b, m in found]


def extract_segments(image: np.ndarray, layout: SemanticLayout, source_id: str,
                     min_area: int = DEFAULT_MIN_AREA, connectivity: int = 4,
                     first_id: int = 0) -> list[SegmentRecord]:
    image = np.asarray(image)
    if image.shape[:2] != layout.shape or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image shape {image.shape} does not match layout {layout.shape}")
    image = image.astype(np.uint8, copy=False)
    frame = layout.shape
    records = []
    for cls, box, m in label_components(layout.labels, connectivity, min_area):
        color = image[box.slices].copy()
        color[~m] = 0
        cbox = context_box(box, frame)
        records.append(SegmentRecord(
            id=first_id + len(records), class_index=cls, source_id=str(source_id),
            bbox=box, color=color, mask=m, context_box=cbox,
            context=layout.labels[cbox.slices].copy(), frame_size=frame))
    return records


@dataclass
class MemoryBank:
    class_table: list[str]
    segments: dict[int, SegmentRecord] = field(default_factory=dict)
    per_class: dict[int, list[int]] = field(default_factory=dict)
    min_area: int = DEFAULT_MIN_AREA
    connectivity: int = 4

    def __post_init__(self):
        self._index_cache: dict = {}
        self._index_lock = threading.Lock()
        if not self.per_class:
            self.per_class = {c: [] for c in range(len(self.class_table))}
            for sid in sorted(self.segments):
                self.per_class[self.segments[sid].class_index].append(sid)

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def stats(self) -> dict[str, int]:
        return {self.class_table[c]: len(ids) for c, ids in self.per_class.items()}

    def sources(self) -> list[str]:
        return sorted({s.source_id for s in self.segments.values()})

    def __eq__(self, other) -> bool:
        if not isinstance(other, MemoryBank):
            return NotImplemented
        if (self.class_table != other.class_table or self.per_class != other.per_class
                or sorted(self.segments) != sorted(other.segments)):
            return False
        return all(_records_equal(self.segments[i], other.segments[i]) for i in self.segments)


def _records_equal(a: SegmentRecord, b: SegmentRecord) -> bool:
    return (a.id == b.id and a.class_index == b.class_index and a.source_id == b.source_id
            and a.bbox == b.bbox and a.context_box == b.context_box
            and tuple(a.frame_size) == tuple(b.frame_size)
            and np.array_equal(a.mask, b.mask) and np.array_equal(a.color, b.color)
            and a.color.dtype == b.color.dtype and np.array_equal(a.context, b.context))


def build_bank(dataset: Iterable[tuple[np.ndarray, SemanticLayout, str]],
               min_area: int = DEFAULT_MIN_AREA, connectivity: int = 4,
               class_table: Sequence[str] | None = None, jobs: int = 1) -> MemoryBank:
    """Extract every training pair and assign ids ordered by source id, then scan order."""
    items = list(dataset)
    table = list(class_table) if class_table is not None else None
    for _, layout, sid in items:
        if table is None:
            table = list(layout.classes)
        elif list(layout.classes) != table:
            raise ValueError(f"class table of {sid!r} differs from the bank's")
    if table is None:
        raise ValueError("cannot build a bank from an empty dataset without a class table")

    def work(item):
        image, layout, sid = item
        return extract_segments(image, layout, sid, min_area, connectivity)

    if jobs > 1 and len(items) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(jobs) as pool:
            extracted = list(pool.map(work, items))
    else:
        extracted = [work(it) for it in items]

    order = sorted(range(len(items)), key=lambda i: str(items[i][2]))
    segments: dict[int, SegmentRecord] = {}
    for i in order:
        for rec in extracted[i]:
            nid = len(segments)
            segments[nid] = _with_id(rec, nid)
    return MemoryBank(table, segments, min_area=min_area, connectivity=connectivity)


def _with_id(rec: SegmentRecord, new_id: int) -> SegmentRecord:
    return SegmentRecord(new_id, rec.class_index, rec.source_id, rec.bbox, rec.color,
                         rec.mask, rec.context_box, rec.context, rec.frame_size)


# -- persistence -------------------------------------------------------------

def _png_bytes(arr: np.ndarray, mode: str) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def save_bank(bank: MemoryBank, path: str | os.PathLike) -> Path:
    root = Path(path)
    seg_dir = root / "segments"
    seg_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for sid in sorted(bank.segments):
        rec = bank.segments[sid]
        files = {}
        for kind, data in (("color", _png_bytes(rec.color, "RGB")),
                           ("mask", _png_bytes(rec.mask.astype(np.uint8) * 255, "L")),
                           ("context", _png_bytes(rec.context.astype(np.uint8), "L"))):
            name = f"segments/{sid:07d}_{kind}.png"
            (root / name).write_bytes(data)
            files[kind] = {"file": name, "sha256": hashlib.sha256(data).hexdigest()}
        entries.append({
            "id": sid, "class": bank.class_table[rec.class_index], "class_index": rec.class_index,
            "source_id": rec.source_id, "bbox": rec.bbox.as_list(),
            "context_box": rec.context_box.as_list(), "frame_size": list(rec.frame_size),
            "files": files,
        })
    manifest = {
        "version": BANK_VERSION, "class_table": bank.class_table, "unlabeled": UNLABELED,
        "min_area": bank.min_area, "connectivity": bank.connectivity,
        "stats": bank.stats, "segments": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return root


def load_bank(path: str | os.PathLike, verify: bool = True) -> MemoryBank:
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise CorruptManifestError(f"no manifest at {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CorruptManifestError(f"unreadable manifest {mpath}: {e}") from e
    if not isinstance(manifest, dict) or "version" not in manifest:
        raise CorruptManifestError(f"manifest {mpath} lacks a version field")
    if manifest["version"] != BANK_VERSION:
        raise VersionMismatchError(
            f"bank version {manifest['version']} is not supported (expected {BANK_VERSION})")
    try:
        table = list(manifest["class_table"])
        entries = manifest["segments"]
        segments = {}
        for e in entries:
            sid = int(e["id"])
            arrays = {}
            for kind in ("color", "mask", "context"):
                fpath = root / e["files"][kind]["file"]
                if not fpath.is_file():
                    raise MissingAssetError(sid, fpath)
                data = fpath.read_bytes()
                if verify and hashlib.sha256(data).hexdigest() != e["files"][kind]["sha256"]:
                    raise ChecksumMismatchError(f"segment {sid}: checksum mismatch for {fpath}")
                arrays[kind] = np.asarray(Image.open(io.BytesIO(data)))
            if sid in segments:
                raise CorruptManifestError(f"duplicate segment id {sid}")
            segments[sid] = SegmentRecord(
                id=sid, class_index=int(e["class_index"]), source_id=str(e["source_id"]),
                bbox=BoundingBox(*map(int, e["bbox"])), color=arrays["color"].copy(),
                mask=arrays["mask"] > 0, context_box=BoundingBox(*map(int, e["context_box"])),
                context=arrays["context"].copy(), frame_size=tuple(int(v) for v in e["frame_size"]))
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptManifestError(f"malformed manifest entry in {mpath}: {e!r}") from e
    return MemoryBank(table, segments, min_area=int(manifest.get("min_area", DEFAULT_MIN_AREA)),
                      connectivity=int(manifest.get("connectivity", 4)))


# -- image and layout files --------------------------------------------------

def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB")).copy()


def write_image(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def read_class_table(path) -> tuple[list[str], int]:
    data = json.loads(Path(path).read_text())
    return list(data["classes"]), int(data.get("unlabeled", UNLABELED))


def write_class_table(path, classes: Sequence[str], unlabeled: int = UNLABELED) -> None:
    Path(path).write_text(json.dumps({"classes": list(classes), "unlabeled": unlabeled}, indent=1) + "\n")


def find_sidecar(layout_path) -> Path | None:
    p = Path(layout_path)
    for cand in (p.with_suffix(".json"), p.parent / "classes.json", p.parent.parent / "classes.json"):
        if cand.is_file():
            return cand
    return None


def read_layout(path, classes: Sequence[str] | None = None, unlabeled: int = UNLABELED) -> SemanticLayout:
    """Read an 8-bit indexed layout; the class table comes from a sidecar when not given."""
    if classes is None:
        side = find_sidecar(path)
        if side is None:
            raise FileNotFoundError(f"no class table sidecar found for {path}")
        classes, unlabeled = read_class_table(side)
    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            raise ValueError(f"{path}: layouts must be single-channel 8-bit, got mode {im.mode}")
        labels = np.asarray(im).astype(np.uint8)
    if unlabeled != UNLABELED:
        labels = np.where(labels == unlabeled, UNLABELED, labels).astype(np.uint8)
    return SemanticLayout(labels, list(classes))


def write_layout(path, layout: SemanticLayout) -> None:
    Image.fromarray(layout.labels, mode="L").save(path, format="PNG")
