"""Final synthesis stage: a backend registry and the harmonic-fill baseline."""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from . import kernels
from .compositor import CONTENT, Canvas
from .segment_bank import UNLABELED, SemanticLayout, label_components, read_image, write_layout

DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITERS = 20000
DEFAULT_BLEND = 0.3


class FinisherError(RuntimeError):
    def __init__(self, backend: str, message: str):
        super().__init__(f"finisher backend {backend!r}: {message}")
        self.backend = backend


def missing_mask(canvas: Canvas) -> np.ndarray:
    return canvas.state != CONTENT


@dataclass
class FinisherInput:
    canvas: Canvas
    layout: SemanticLayout
    missing: np.ndarray | None = None

    def __post_init__(self):
        derived = missing_mask(self.canvas)
        if self.missing is None:
            self.missing = derived
        elif not np.array_equal(np.asarray(self.missing, bool), derived):
            raise ValueError("missing mask does not match the canvas state")
        if self.layout.shape != self.canvas.state.shape:
            raise ValueError("layout and canvas sizes differ")


def _offset_views(a, dy, dx):
    """(source, shifted) views pairing each pixel with its (dy, dx) neighbour."""
    h, w = a.shape[:2]
    src = a[max(-dy, 0):h + min(-dy, 0), max(-dx, 0):w + min(-dx, 0)]
    nb = a[max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)]
    return src, nb


_NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def harmonic_fill(rgb: np.ndarray, missing: np.ndarray, tol: float = DEFAULT_TOL,
                  max_iters: int = DEFAULT_MAX_ITERS, labels: np.ndarray | None = None,
                  backend=None) -> tuple[np.ndarray, dict]:
    """Fill ``missing`` pixels by Jacobi iteration of 4-neighbour averaging.

    Values are worked in [0, 1] units, so ``tol`` is per 8-bit-normalized
    channel. With ``labels``, neighbours only couple when they carry the same
    label, so fill never diffuses across a layout boundary. Each connected
    fill region starts at the mean of the content pixels bordering it; a
    region bordering no content takes the mean content color of its label,
    or the global content mean. Returns float RGB in [0, 255] and iteration
    info.
    """
    missing = np.asarray(missing, bool)
    h, w = missing.shape
    content = ~missing
    if not content.any():
        raise ValueError("no content pixels to extend")
    lab = np.zeros((h, w), np.int64) if labels is None else np.asarray(labels, np.int64)
    src_rgb = np.asarray(rgb, np.float64) / 255.0
    vals = src_rgb.reshape(-1, 3).copy()
    if not missing.any():
        return vals.reshape(h, w, 3) * 255.0, {"sweeps": 0, "change": 0.0}

    four = ndimage.generate_binary_structure(2, 1)
    regions = np.zeros((h, w), np.int64)
    n = 0
    for c in np.unique(lab[missing]):
        r, k = ndimage.label(missing & (lab == c), structure=four)
        regions[r > 0] = r[r > 0] + n
        n += k
    border_sum = np.zeros((n + 1, 3))
    border_cnt = np.zeros(n + 1)
    for dy, dx in _NEIGHBOURS:
        reg, nb_content = _offset_views(regions, dy, dx)[0], _offset_views(content, dy, dx)[1]
        same = np.equal(*_offset_views(lab, dy, dx))
        px = _offset_views(src_rgb, dy, dx)[1]
        sel = nb_content & (reg > 0) & same
        np.add.at(border_sum, reg[sel], px[sel])
        np.add.at(border_cnt, reg[sel], 1)

    global_mean = vals[content.ravel()].mean(axis=0)
    init = border_sum / np.maximum(border_cnt, 1)[:, None]
    region_label = np.zeros(n + 1, np.int64)
    region_label[regions[missing]] = lab[missing]
    for rid in np.flatnonzero(border_cnt[1:] == 0) + 1:
        sel = content & (lab == region_label[rid])
        init[rid] = src_rgb[sel].mean(axis=0) if sel.any() else global_mean
    idx_missing = np.flatnonzero(missing.ravel())
    flat_regions = regions.ravel()
    vals[idx_missing] = init[flat_regions[idx_missing]]

    active = idx_missing[border_cnt[flat_regions[idx_missing]] > 0]
    ys, xs = np.divmod(active, w)
    flat_lab = lab.ravel()
    nbr = np.full((active.size, 4), -1, dtype=np.int64)
    for k, (dy, dx) in enumerate(_NEIGHBOURS):
        yy, xx = ys + dy, xs + dx
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        q = np.where(ok, yy * w + xx, 0)
        ok &= flat_lab[q] == flat_lab[active]
        nbr[ok, k] = q[ok]
    sweeps, change = (backend or kernels).jacobi(vals, active.astype(np.int64), nbr, float(tol), int(max_iters))
    return vals.reshape(h, w, 3) * 255.0, {"sweeps": int(sweeps), "change": float(change), "regions": n}


def harmonize(rgb: np.ndarray, layout: SemanticLayout, content: np.ndarray,
              blend: float = DEFAULT_BLEND, connectivity: int = 4) -> np.ndarray:
    """Pull each layout region's mean color toward its class's mean over content pixels."""
    out = np.asarray(rgb, np.float64).copy()
    if blend == 0:
        return out
    class_mean = {}
    for c in np.unique(layout.labels):
        if c == UNLABELED:
            continue
        sel = (layout.labels == c) & content
        if sel.any():
            class_mean[int(c)] = out[sel].mean(axis=0)
    for cls, box, m in label_components(layout.labels, connectivity):
        if cls not in class_mean:
            continue
        view = out[box.slices]
        shift = blend * (class_mean[cls] - view[m].mean(axis=0))
        view[m] += shift
    return np.clip(out, 0.0, 255.0)


def finish_baseline(inp: FinisherInput, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
                    harmonize_regions: bool = False, blend: float = DEFAULT_BLEND,
                    respect_layout: bool = True) -> np.ndarray:
    """Harmonic fill of every non-content pixel, optionally followed by harmonization.

    With ``respect_layout`` the fill is confined to layout regions of one
    label. Returns float RGB in [0, 255]; use ``to_uint8`` for files.
    """
    if not (~inp.missing).any():
        raise ValueError("canvas has no content pixels; nothing to extend")
    labels = inp.layout.labels if respect_layout else None
    filled, _ = harmonic_fill(inp.canvas.rgb, inp.missing, tol, max_iters, labels)
    if harmonize_regions:
        filled = harmonize(filled, inp.layout, ~inp.missing, blend)
    return filled


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


# -- backends -------------------------------------------------------------------

Backend = Callable[[FinisherInput], np.ndarray]
_REGISTRY: dict[str, Backend] = {}


def register_backend(name: str, fn: Backend) -> None:
    _REGISTRY[name] = fn


def get_backend(name: str) -> Backend:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise FinisherError(name, f"not registered (known: {sorted(_REGISTRY)})") from None


def backend_names() -> list[str]:
    return sorted(_REGISTRY)


register_backend("baseline", finish_baseline)
register_backend("identity", lambda inp: inp.canvas.rgb.astype(np.float64))


class CommandBackend:
    """External model plugged in through files.

    The command template may use ``{canvas}``, ``{state}``, ``{layout}`` and
    ``{output}``; the process must write an RGB image of the canvas size to
    ``{output}``.
    """

    def __init__(self, command: str, name: str = "command"):
        self.command = command
        self.name = name

    def __call__(self, inp: FinisherInput) -> np.ndarray:
        with tempfile.TemporaryDirectory() as tmp:
            t = Path(tmp)
            paths = {k: str(t / f"{k}.png") for k in ("canvas", "state", "layout", "output")}
            inp.canvas.save(paths["canvas"], paths["state"])
            write_layout(paths["layout"], inp.layout)
            argv = [a.format(**paths) for a in shlex.split(self.command)]
            proc = subprocess.run(argv, capture_output=True, text=True)
            if proc.returncode != 0:
                raise FinisherError(self.name, f"exited with {proc.returncode}: {proc.stderr.strip()}")
            if not Path(paths["output"]).is_file():
                raise FinisherError(self.name, "produced no output image")
            return read_image(paths["output"]).astype(np.float64)


def finish(inp: FinisherInput, backend: str | Backend = "baseline", **kwargs) -> np.ndarray:
    if isinstance(backend, str):
        name, fn = backend, get_backend(backend)
    else:
        name, fn = getattr(backend, "name", getattr(backend, "__name__", repr(backend))), backend
    try:
        out = fn(inp, **kwargs) if kwargs else fn(inp)
    except FinisherError:
        raise
    except Exception as e:  # noqa: BLE001
        raise FinisherError(name, f"failed: {e}") from e
    out = np.asarray(out)
    expected = inp.canvas.rgb.shape
    if out.shape != expected:
        raise FinisherError(name, f"returned an image of shape {out.shape}, expected {expected}")
    return out
