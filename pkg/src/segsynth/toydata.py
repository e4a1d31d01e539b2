"""Synthetic (image, layout, depth) pairs of colored geometric shapes."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .segment_bank import SemanticLayout, write_class_table, write_image, write_layout

TOY_CLASSES = ["background", "red_box", "green_disc", "blue_box", "yellow_disc"]
TOY_COLORS = np.array([[128, 128, 140], [200, 40, 40], [40, 170, 60], [50, 70, 210], [225, 200, 40]], float)
BACKGROUND_DEPTH = 100.0


def toy_sample(rng: np.random.Generator, size: int = 96, n_shapes=(2, 4), jitter: float = 12.0,
               noise: float = 5.0):
    """One image/layout/depth triple. Boxes are rectangles, discs are ellipses."""
    h = w = size
    labels = np.zeros((h, w), np.uint8)
    depth = np.full((h, w), BACKGROUND_DEPTH)
    yy, xx = np.mgrid[0:h, 0:w]
    base = TOY_COLORS + rng.uniform(-jitter, jitter, size=TOY_COLORS.shape)
    count = int(rng.integers(n_shapes[0], n_shapes[1] + 1))
    # nearer shapes are painted later
    depths = np.sort(rng.uniform(10, 60, size=count))[::-1]
    for d in depths:
        cls = int(rng.integers(1, len(TOY_CLASSES)))
        sh, sw = rng.integers(size // 7, size // 2.5, size=2)
        cy, cx = rng.integers(sh // 2, h - sh // 2), rng.integers(sw // 2, w - sw // 2)
        if cls in (1, 3):
            m = (np.abs(yy - cy) <= sh / 2) & (np.abs(xx - cx) <= sw / 2)
        else:
            m = ((yy - cy) / (sh / 2)) ** 2 + ((xx - cx) / (sw / 2)) ** 2 <= 1.0
        labels[m] = cls
        depth[m] = d
    img = base[labels] + rng.normal(0, noise, size=(h, w, 3))
    image = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return image, SemanticLayout(labels, list(TOY_CLASSES)), depth


def toy_dataset(n: int, seed: int = 0, size: int = 96, prefix: str = "toy"):
    """``n`` samples as ``(image, layout, source_id, depth)`` tuples."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        image, layout, depth = toy_sample(rng, size)
        out.append((image, layout, f"{prefix}{i:04d}", depth))
    return out


def write_dataset(root, samples, classes=TOY_CLASSES) -> Path:
    """Lay samples out as ``images/``, ``layouts/``, ``depth/`` plus ``classes.json``."""
    root = Path(root)
    for sub in ("images", "layouts", "depth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_class_table(root / "classes.json", classes)
    for image, layout, sid, depth in samples:
        write_image(root / "images" / f"{sid}.png", image)
        write_layout(root / "layouts" / f"{sid}.png", layout)
        if depth is not None:
            np.save(root / "depth" / f"{sid}.npy", depth)
    (root / "colors.json").write_text(json.dumps({"colors": TOY_COLORS.tolist()}) + "\n")
    return root


def classify_by_color(rgb: np.ndarray, class_colors: np.ndarray, classes) -> SemanticLayout:
    """Label each pixel with the class whose reference color is nearest."""
    d = ((np.asarray(rgb, float)[:, :, None, :] - class_colors[None, None]) ** 2).sum(axis=-1)
    return SemanticLayout(d.argmin(axis=2).astype(np.uint8), list(classes))


def class_mean_colors(samples, n_classes: int) -> np.ndarray:
    acc = np.zeros((n_classes, 3))
    cnt = np.zeros(n_classes)
    for image, layout, *_ in samples:
        for c in range(n_classes):
            sel = layout.labels == c
            acc[c] += image[sel].sum(axis=0)
            cnt[c] += sel.sum()
    return acc / np.maximum(cnt, 1)[:, None]
