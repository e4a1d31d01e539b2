"""Layout agreement metrics and mean power spectra."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .segment_bank import UNLABELED, SemanticLayout

LUMA = np.array([0.299, 0.587, 0.114])
POWER_FLOOR = 1e-12
DEFAULT_RESOLUTION = (256, 256)


@dataclass
class LayoutAgreement:
    per_class_iou: dict[str, float]
    mean_iou: float
    pixel_accuracy: float
    labeled_pixels: int = 0

    def to_dict(self) -> dict:
        return {"mean_iou": self.mean_iou, "pixel_accuracy": self.pixel_accuracy,
                "labeled_pixels": self.labeled_pixels, "per_class_iou": self.per_class_iou}


def confusion(reference: SemanticLayout, predicted: SemanticLayout) -> np.ndarray:
    if reference.shape != predicted.shape:
        raise ValueError(f"layout sizes differ: {reference.shape} vs {predicted.shape}")
    if list(reference.classes) != list(predicted.classes):
        raise ValueError("layouts use different class tables")
    c = len(reference.classes)
    r, p = reference.labels.ravel(), predicted.labels.ravel()
    ok = (r != UNLABELED) & (p != UNLABELED)
    return np.bincount(r[ok].astype(np.int64) * c + p[ok], minlength=c * c).reshape(c, c)


def agreement_from_confusion(conf: np.ndarray, classes: Sequence[str]) -> LayoutAgreement:
    total = int(conf.sum())
    if total == 0:
        raise ValueError("no pixel is labeled in both layouts")
    inter = np.diag(conf)
    union = conf.sum(axis=0) + conf.sum(axis=1) - inter
    per_class = {classes[i]: float(inter[i] / union[i]) for i in range(len(classes)) if union[i] > 0}
    mean_iou = float(np.mean(list(per_class.values())))
    return LayoutAgreement(per_class, mean_iou, float(inter.sum() / total), total)


def layout_agreement(reference: SemanticLayout, predicted: SemanticLayout) -> LayoutAgreement:
    """Per-class IoU, mean IoU over classes present in either layout, and pixel accuracy.

    Pixels unlabeled in either layout are ignored.
    """
    return agreement_from_confusion(confusion(reference, predicted), list(reference.classes))


def write_agreement_report(path, agreement: LayoutAgreement, extra: dict | None = None) -> None:
    data = agreement.to_dict()
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


# -- spectra ---------------------------------------------------------------------

@dataclass
class PowerSpectrum:
    log_power: np.ndarray        # log10 of mean power, DC at the center
    count: int
    mean_power: np.ndarray = field(repr=False, default=None)   # unshifted, before the floor

    @property
    def resolution(self) -> tuple[int, int]:
        return self.log_power.shape

    def save(self, npy_path, png_path=None) -> None:
        np.save(npy_path, self.log_power)
        if png_path is not None:
            lp = self.log_power
            lo, hi = float(lp.min()), float(lp.max())
            scaled = np.zeros_like(lp) if hi <= lo else (lp - lo) / (hi - lo)
            Image.fromarray(np.rint(scaled * 255).astype(np.uint8), mode="L").save(png_path)


def luminance(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb, np.float64)[..., :3] @ LUMA


def _resize(lum: np.ndarray, resolution) -> np.ndarray:
    H, W = resolution
    if lum.shape == (H, W):
        return lum
    img = Image.fromarray(lum.astype(np.float32), mode="F")
    return np.asarray(img.resize((W, H), Image.BILINEAR), dtype=np.float64)


def power_spectrum(rgb: np.ndarray, resolution=None) -> np.ndarray:
    """Squared magnitude of the unnormalized 2D DFT of the image's luminance (unshifted)."""
    lum = luminance(rgb)
    if resolution is not None:
        lum = _resize(lum, resolution)
    return np.abs(np.fft.fft2(lum)) ** 2


def mean_power_spectrum(images: Sequence[np.ndarray], resolution=DEFAULT_RESOLUTION) -> PowerSpectrum:
    images = list(images)
    if not images:
        raise ValueError("mean power spectrum needs at least one image")
    acc = np.zeros(tuple(resolution))
    for im in images:
        acc += power_spectrum(im, resolution)
    mean = acc / len(images)
    log_power = np.fft.fftshift(np.log10(np.maximum(mean, POWER_FLOOR)))
    return PowerSpectrum(log_power, len(images), mean)


def spectrum_distance(a: PowerSpectrum, b: PowerSpectrum) -> float:
    if a.resolution != b.resolution:
        raise ValueError(f"spectrum resolutions differ: {a.resolution} vs {b.resolution}")
    return float(np.mean(np.abs(a.log_power - b.log_power)))
