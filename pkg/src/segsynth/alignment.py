"""Affine alignment of retrieved segments onto query masks.

Coordinates are frame pixel coordinates ``(x, y)`` with pixel centers on
integers. A transform maps source-frame coordinates to destination-frame
coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .segment_bank import BoundingBox, PlacedSegment, SegmentRecord

SCALE_BOUNDS = (0.25, 4.0)
ANISOTROPY_THRESHOLD = 1.5


@dataclass(frozen=True)
class AffineTransform2D:
    matrix: np.ndarray  # (2, 3)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64).reshape(2, 3)
        object.__setattr__(self, "matrix", m)
        if abs(np.linalg.det(m[:, :2])) < 1e-12:
            raise ValueError("affine transform is not invertible")

    @classmethod
    def identity(cls) -> "AffineTransform2D":
        return cls(np.array([[1.0, 0, 0], [0, 1.0, 0]]))

    @classmethod
    def from_parts(cls, linear, translation) -> "AffineTransform2D":
        return cls(np.hstack([np.asarray(linear, float), np.asarray(translation, float).reshape(2, 1)]))

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:, :2]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:, 2]

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.linear.T + self.translation

    def inverse(self) -> "AffineTransform2D":
        inv = np.linalg.inv(self.linear)
        return AffineTransform2D.from_parts(inv, -inv @ self.translation)

    def compose(self, first: "AffineTransform2D") -> "AffineTransform2D":
        """``self ∘ first``: apply ``first``, then ``self``."""
        lin = self.linear @ first.linear
        return AffineTransform2D.from_parts(lin, self.linear @ first.translation + self.translation)

    def to_list(self) -> list[list[float]]:
        return self.matrix.tolist()


@dataclass(frozen=True)
class PerturbationSpec:
    translation: tuple[float, float] = (0.0, 0.0)
    scale: tuple[float, float] = (1.0, 1.0)
    rotation: tuple[float, float] = (0.0, 0.0)   # degrees
    crop: tuple[float, float] = (0.0, 0.0)       # fraction of the bbox extent
    seed: int = 0

    def __post_init__(self):
        for name in ("translation", "scale", "rotation", "crop"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValueError(f"invalid {name} range {(lo, hi)}")
        if self.scale[0] <= 0:
            raise ValueError("scale range must be strictly positive")
        if not 0 <= self.crop[0] <= self.crop[1] < 1:
            raise ValueError("crop fractions must lie in [0, 1)")


def _moments(seg):
    m = np.asarray(seg.mask, dtype=bool)
    ys, xs = np.nonzero(m)
    if xs.size == 0:
        raise ValueError("cannot align an empty mask")
    xs = xs + seg.bbox.x0
    ys = ys + seg.bbox.y0
    cx, cy = xs.mean(), ys.mean()
    extent = (int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
    dx, dy = xs - cx, ys - cy
    cov = np.array([[np.mean(dx * dx), np.mean(dx * dy)], [np.mean(dx * dy), np.mean(dy * dy)]])
    return np.array([cx, cy]), extent, cov


def _principal(cov):
    evals, evecs = np.linalg.eigh(cov)           # ascending
    major = evecs[:, 1]
    angle = math.atan2(major[1], major[0])
    lo, hi = max(evals[0], 0.0), max(evals[1], 0.0)
    aniso = math.inf if lo <= 1e-12 else math.sqrt(hi / lo)
    return angle, hi, lo, aniso


def _rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def fit_alignment(src, dst, allow_rotation: bool = False,
                  scale_bounds=SCALE_BOUNDS, anisotropy_threshold: float = ANISOTROPY_THRESHOLD
                  ) -> AffineTransform2D:
    """Closed-form affine taking ``src``'s mask onto ``dst``'s.

    Per-axis scale is the ratio of tight-box extents, translation matches
    centroids. With ``allow_rotation`` and both masks clearly elongated, the
    principal axes are aligned as well.
    """
    c_src, e_src, cov_src = _moments(src)
    c_dst, e_dst, cov_dst = _moments(dst)
    lo, hi = scale_bounds

    rot = None
    if allow_rotation:
        a_s, maj_s, min_s, an_s = _principal(cov_src)
        a_d, maj_d, min_d, an_d = _principal(cov_dst)
        if an_s >= anisotropy_threshold and an_d >= anisotropy_threshold:
            delta = (a_d - a_s + math.pi / 2) % math.pi - math.pi / 2
            s_major = math.sqrt(maj_d / maj_s)
            s_minor = math.sqrt(min_d / min_s) if min_s > 1e-12 and min_d > 1e-12 else s_major
            s_major, s_minor = np.clip([s_major, s_minor], lo, hi)
            rot = _rot(a_s + delta) @ np.diag([s_major, s_minor]) @ _rot(-a_s)

    if rot is None:
        sx = e_dst[0] / e_src[0]
        sy = e_dst[1] / e_src[1]
        thin_x = e_src[0] == 1 or e_dst[0] == 1
        thin_y = e_src[1] == 1 or e_dst[1] == 1
        if thin_x and thin_y:
            sx = sy = 1.0
        elif thin_x:
            sx = sy
        elif thin_y:
            sy = sx
        linear = np.diag(np.clip([sx, sy], lo, hi))
    else:
        linear = rot
    return AffineTransform2D.from_parts(linear, c_dst - linear @ c_src)


def warp_segment(segment, t: AffineTransform2D, frame) -> PlacedSegment:
    """Resample a segment through ``t`` into a frame of size ``frame = (h, w)``.

    Color is mask-weighted bilinear, the mask is bilinear thresholded at 0.5,
    and the output is clipped to the frame and trimmed to its tight box.
    """
    if isinstance(segment, SegmentRecord):
        segment = PlacedSegment.from_record(segment)
    fh, fw = frame
    meta = dict(class_index=segment.class_index, segment_id=segment.segment_id, source_id=segment.source_id)
    if segment.empty:
        return PlacedSegment.make_empty(frame, **meta)
    b = segment.bbox
    corners = np.array([[b.x0 - 0.5, b.y0 - 0.5], [b.x1 - 0.5, b.y0 - 0.5],
                        [b.x0 - 0.5, b.y1 - 0.5], [b.x1 - 0.5, b.y1 - 0.5]])
    dc = t.apply(corners)
    x0 = max(int(math.floor(dc[:, 0].min() + 0.5)) - 1, 0)
    y0 = max(int(math.floor(dc[:, 1].min() + 0.5)) - 1, 0)
    x1 = min(int(math.ceil(dc[:, 0].max() - 0.5)) + 2, fw)
    y1 = min(int(math.ceil(dc[:, 1].max() - 0.5)) + 2, fh)
    if x1 <= x0 or y1 <= y0:
        return PlacedSegment.make_empty(frame, **meta)
    gy, gx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    inv = t.inverse()
    sx = inv.matrix[0, 0] * gx + inv.matrix[0, 1] * gy + inv.matrix[0, 2] - b.x0
    sy = inv.matrix[1, 0] * gx + inv.matrix[1, 1] * gy + inv.matrix[1, 2] - b.y0
    color = np.ascontiguousarray(segment.color, dtype=np.float64)
    mask = np.ascontiguousarray(segment.mask, dtype=np.float64)
    c, m = kernels.bilinear_sample(color, mask, np.ascontiguousarray(sx), np.ascontiguousarray(sy))
    # sampling error can leave lattice-point weights a hair below 1
    m = np.where(np.abs(m - np.rint(m)) < 1e-9, np.rint(m), m)
    out_mask = m >= 0.5
    out_color = np.zeros_like(c)
    out_color[out_mask] = c[out_mask] / m[out_mask, None]
    np.clip(out_color, 0.0, 255.0, out=out_color)
    placed = PlacedSegment(tuple(frame), BoundingBox(x0, y0, x1 - x0, y1 - y0), out_mask, out_color, **meta)
    return placed.trimmed()


def sample_perturbation(segment, spec: PerturbationSpec) -> tuple[AffineTransform2D, float, int]:
    """Draw the affine (about the centroid), crop fraction and crop side for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    tx, ty = rng.uniform(*spec.translation, size=2)
    sx, sy = rng.uniform(*spec.scale, size=2)
    theta = math.radians(rng.uniform(*spec.rotation))
    crop = float(rng.uniform(*spec.crop))
    side = int(rng.integers(4))
    center, _, _ = _moments(segment)
    linear = _rot(theta) @ np.diag([sx, sy])
    t = AffineTransform2D.from_parts(linear, center + np.array([tx, ty]) - linear @ center)
    return t, crop, side


def perturb_segment(segment, spec: PerturbationSpec) -> PlacedSegment:
    """Random affine followed by a random one-sided crop; output stays in the source frame."""
    if isinstance(segment, SegmentRecord):
        segment = PlacedSegment.from_record(segment)
    t, crop, side = sample_perturbation(segment, spec)
    out = warp_segment(segment, t, segment.frame_size)
    if crop <= 0 or out.empty:
        return out
    h, w = out.mask.shape
    n = int(crop * (h if side in (0, 1) else w))
    if n == 0:
        return out
    mask = out.mask.copy()
    if side == 0:
        mask[:n] = False
    elif side == 1:
        mask[h - n:] = False
    elif side == 2:
        mask[:, :n] = False
    else:
        mask[:, w - n:] = False
    color = out.color.copy()
    color[~mask] = 0.0
    return PlacedSegment(out.frame_size, out.bbox, mask, color, out.class_index,
                         out.segment_id, out.source_id).trimmed()
