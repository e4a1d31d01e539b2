"""Command-line front end.

    segsynth [--config FILE] [--seed N] [--jobs N] [-v] <command> ...

Dataset directories hold ``images/``, ``layouts/``, a ``classes.json`` class
table and optionally ``depth/<stem>.npy``; file stems are the source ids.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__, compositor, evaluation
from .canvas_sim import export_training_pairs
from .compositor import DepthMap, OrderingTable, resolve_fallback
from .config import ConfigError, PipelineConfig, fallback_names, load_config
from .pipeline import CoarseLayoutError, derive_seed, synthesize
from .segment_bank import (BankError, SemanticLayout, build_bank, load_bank, read_class_table, read_image,
                           read_layout, save_bank, write_image)

log = logging.getLogger("segsynth")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_CONFIG = 4
EXIT_BANK = 5

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------------

def _find_image(folder: Path, stem: str) -> Path | None:
    for suf in IMAGE_SUFFIXES:
        p = folder / f"{stem}{suf}"
        if p.is_file():
            return p
    return None


def load_dataset(root, with_depth: bool = False):
    """``(image, layout, source_id[, depth])`` tuples in sorted stem order."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} not found")
    table = root / "classes.json"
    if not table.is_file():
        raise FileNotFoundError(f"dataset {root} has no classes.json")
    classes, unlabeled = read_class_table(table)
    lay_dir = root / "layouts"
    if not lay_dir.is_dir():
        raise FileNotFoundError(f"dataset {root} has no layouts/ directory")
    stems = sorted(p.stem for p in lay_dir.glob("*.png"))
    if not stems:
        raise FileNotFoundError(f"no layouts in {lay_dir}")
    out = []
    for stem in stems:
        img = _find_image(root / "images", stem)
        if img is None:
            raise FileNotFoundError(f"no image for layout {stem!r} in {root / 'images'}")
        image = read_image(img)
        layout = read_layout(lay_dir / f"{stem}.png", classes, unlabeled)
        if image.shape[:2] != layout.shape:
            raise ValueError(f"{stem}: image {image.shape[:2]} and layout {layout.shape} sizes differ")
        if with_depth:
            dp = root / "depth" / f"{stem}.npy"
            out.append((image, layout, stem, DepthMap(np.load(dp)) if dp.is_file() else None))
        else:
            out.append((image, layout, stem))
    return out


def _path(arg, configured, what: str) -> Path:
    p = arg if arg is not None else configured
    if p is None:
        raise UsageError(f"no {what} given (pass it on the command line or set it in the config)")
    return Path(p)


def _existing(p: Path, what: str) -> Path:
    if not p.exists():
        raise FileNotFoundError(f"{what} {p} not found")
    return p


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _ordering_for(cfg: PipelineConfig, classes, path) -> OrderingTable:
    if path is not None:
        table = OrderingTable.load(_existing(Path(path), "ordering file"))
        if table.classes != list(classes):
            raise ConfigError(f"ordering file {path} was built for a different class table")
        return table
    return OrderingTable(list(classes), resolve_fallback(classes, fallback_names(cfg.compositor, classes)))


def _write_json(path: Path, data) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, indent=1) + "\n")
    tmp.replace(path)


# -- commands ---------------------------------------------------------------------

def cmd_build_bank(cfg: PipelineConfig, args) -> int:
    src = _existing(_path(args.dataset, cfg.paths.dataset, "dataset"), "dataset")
    out = _path(args.out, cfg.paths.bank, "bank output directory")
    t0 = time.perf_counter()
    data = load_dataset(src)
    bank = build_bank(data, cfg.bank.min_area, cfg.bank.connectivity, data[0][1].classes, jobs=cfg.jobs)
    save_bank(bank, out)
    log.info("bank: %d segments from %d images in %.2fs -> %s", len(bank), len(data),
             time.perf_counter() - t0, out)
    return EXIT_OK


def cmd_derive_ordering(cfg: PipelineConfig, args) -> int:
    src = _existing(_path(args.dataset, cfg.paths.dataset, "dataset"), "dataset")
    out = _path(args.out, cfg.paths.ordering, "ordering output file")
    data = load_dataset(src, with_depth=True)
    classes = data[0][1].classes
    names = fallback_names(cfg.compositor, classes)
    fallback = resolve_fallback(classes, names) if names is not None else None
    if all(d is None for *_, d in data) and fallback is None:
        raise ConfigError("the dataset has no depth maps; set compositor.fallback to a class order")
    table = compositor.derive_ordering([(lay, d) for _, lay, _, d in data], classes, fallback,
                                       cfg.compositor.adjacency, cfg.bank.connectivity, cfg.jobs)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.save(out)
    log.info("ordering over %d classes from %d layouts (%d with depth) -> %s", len(classes), len(data),
             sum(d is not None for *_, d in data), out)
    return EXIT_OK


def cmd_synth(cfg: PipelineConfig, args) -> int:
    bank_dir = _existing(_path(args.bank, cfg.paths.bank, "bank"), "bank")
    out = _path(args.out, cfg.paths.output, "output directory")
    if args.k is not None:
        cfg.retrieval.k = args.k
    if args.exclude_source is not None:
        cfg.retrieval.exclude_source = args.exclude_source
    if cfg.retrieval.k < 1 or args.samples < 1:
        raise ConfigError("--k and --samples must be >= 1")
    layouts = []
    for p in args.layouts:
        p = Path(p)
        files = sorted(p.glob("*.png")) if p.is_dir() else [_existing(p, "layout")]
        layouts.extend(files)
    if not layouts:
        raise FileNotFoundError("no layout files given")
    if len({p.stem for p in layouts}) != len(layouts):
        raise UsageError("layout file stems must be unique (outputs are named after them)")

    bank = load_bank(bank_dir)
    ordering = _ordering_for(cfg, bank.class_table, args.ordering or cfg.paths.ordering)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(i, p, s) for i, p in enumerate(layouts) for s in range(args.samples)]
    inner_jobs = cfg.jobs if len(tasks) == 1 else 1
    loaded = {}
    for p in layouts:
        lay = read_layout(p)
        if lay.classes != bank.class_table:
            raise ConfigError(f"{p}: class table differs from the bank's")
        loaded[p] = lay

    def work(task):
        i, p, s = task
        seed = derive_seed(cfg.seed, i, s)
        stem = p.stem if args.samples == 1 else f"{p.stem}_s{s:03d}"
        t0 = time.perf_counter()
        res = synthesize(loaded[p], bank, ordering, cfg, seed, jobs=inner_jobs)
        write_image(out / f"{stem}_final.png", res.image)
        res.canvas.save(out / f"{stem}_canvas.png", out / f"{stem}_state.png")
        _write_json(out / f"{stem}_provenance.json", {
            "layout": str(p), "bank": str(bank_dir), "seed": seed, "sample": s,
            "k": cfg.retrieval.k, "exclude_source": cfg.retrieval.exclude_source,
            "ordering": ordering.to_dict()["fallback_back_to_front"], "regions": res.regions})
        log.info("synth %s: %d regions in %.2fs (%s)", stem, len(res.regions), time.perf_counter() - t0,
                 ", ".join(f"{k} {v:.2f}s" for k, v in res.timings.items()))
        return stem

    t0 = time.perf_counter()
    done = _map(work, tasks, cfg.jobs)
    log.info("synthesized %d images in %.2fs", len(done), time.perf_counter() - t0)
    return EXIT_OK


def cmd_simulate(cfg: PipelineConfig, args) -> int:
    src = _existing(_path(args.dataset, cfg.paths.dataset, "dataset"), "dataset")
    bank_dir = _existing(_path(args.bank, cfg.paths.bank, "bank"), "bank")
    out = _path(args.out, cfg.paths.output, "output directory")
    data = load_dataset(src)
    bank = load_bank(bank_dir)
    t0 = time.perf_counter()
    rows = export_training_pairs(data, bank, cfg.sim, out, jobs=cfg.jobs)
    failed = [r for r in rows if "error" in r]
    log.info("simulated %d canvases in %.2fs (%d failed) -> %s", len(rows) - len(failed),
             time.perf_counter() - t0, len(failed), out)
    return EXIT_FAILURE if failed else EXIT_OK


def _layout_pairs(ref: Path, pred: Path):
    if ref.is_dir() != pred.is_dir():
        raise UsageError("reference and prediction must both be files or both be directories")
    if not ref.is_dir():
        return [(ref, pred)]
    pairs = []
    for r in sorted(ref.glob("*.png")):
        p = pred / r.name
        if not p.is_file():
            cand = sorted(pred.glob(f"{r.stem}*_final.png"))
            if not cand:
                raise FileNotFoundError(f"no prediction for {r.name} in {pred}")
            p = cand[0]
        pairs.append((r, p))
    if not pairs:
        raise FileNotFoundError(f"no reference layouts in {ref}")
    return pairs


def cmd_eval_layout(cfg: PipelineConfig, args) -> int:
    ref = _existing(Path(args.reference), "reference")
    pred = _existing(Path(args.predicted), "prediction")
    colors = None
    if args.colors is not None:
        colors = np.asarray(json.loads(_existing(Path(args.colors), "colors file").read_text())["colors"], float)
    pairs = _layout_pairs(ref, pred)

    def work(pair):
        r, p = pair
        rl = read_layout(r)
        if colors is None:
            pl = read_layout(p, rl.classes)
        else:
            rgb = read_image(p)
            d = ((rgb.astype(float)[:, :, None, :] - colors[None, None]) ** 2).sum(axis=-1)
            pl = SemanticLayout(d.argmin(axis=2).astype(np.uint8), list(rl.classes))
        if pl.shape != rl.shape:
            raise ValueError(f"{p}: size {pl.shape} differs from reference {rl.shape}")
        return rl.classes, evaluation.confusion(rl, pl)

    results = _map(work, pairs, cfg.jobs)
    classes = results[0][0]
    total = sum(c for _, c in results)
    agg = evaluation.agreement_from_confusion(total, classes)
    per_image = [evaluation.agreement_from_confusion(c, classes) for _, c in results]
    extra = {"images": len(pairs),
             "per_image_mean_iou": float(np.mean([a.mean_iou for a in per_image])),
             "per_image_pixel_accuracy": float(np.mean([a.pixel_accuracy for a in per_image]))}
    if args.out:
        evaluation.write_agreement_report(args.out, agg, extra)
    print(f"mean IoU {agg.mean_iou:.4f}  pixel accuracy {agg.pixel_accuracy:.4f}  ({len(pairs)} images)")
    return EXIT_OK


def _images_in(folder: Path, pattern: str = "*"):
    files = sorted(p for p in folder.glob(pattern) if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no images matching {pattern!r} in {folder}")
    return files


def cmd_eval_spectrum(cfg: PipelineConfig, args) -> int:
    dirs = [_existing(Path(d), "image directory") for d in (args.dir_a, args.dir_b)]
    res = tuple(args.resolution)
    spectra = []
    for d, pattern in zip(dirs, (args.glob, args.glob_b or args.glob)):
        images = _map(read_image, _images_in(d, pattern), cfg.jobs)
        spectra.append(evaluation.mean_power_spectrum(images, res))
    dist = evaluation.spectrum_distance(*spectra)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, sp in zip(("a", "b"), spectra):
            sp.save(out / f"spectrum_{name}.npy", out / f"spectrum_{name}.png")
        _write_json(out / "spectrum_report.json", {"dir_a": str(dirs[0]), "dir_b": str(dirs[1]),
                                                   "count_a": spectra[0].count, "count_b": spectra[1].count,
                                                   "resolution": list(res), "mean_abs_log10_diff": dist})
    print(f"mean |log10 power difference| {dist:.6f}  ({spectra[0].count} vs {spectra[1].count} images)")
    return EXIT_OK


def cmd_inspect_bank(cfg: PipelineConfig, args) -> int:
    bank_dir = _existing(_path(args.bank, cfg.paths.bank, "bank"), "bank")
    bank = load_bank(bank_dir, verify=not args.no_verify)
    info = {"segments": len(bank), "sources": len(bank.sources()), "classes": bank.class_table,
            "per_class": bank.stats, "min_area": bank.min_area, "connectivity": bank.connectivity}
    if bank.segments:
        areas = np.array([s.area for s in bank.segments.values()])
        info["area"] = {"min": int(areas.min()), "median": float(np.median(areas)), "max": int(areas.max())}
    if args.json:
        print(json.dumps(info, indent=1))
    else:
        print(f"{bank_dir}: {info['segments']} segments from {info['sources']} images")
        for name, n in info["per_class"].items():
            print(f"  {name:<24} {n}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------

def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", help="YAML config file", **({"default": None} | d))
    p.add_argument("--seed", type=int, help="base random seed (unsigned 64-bit)", **({"default": None} | d))
    p.add_argument("--jobs", type=int, help="worker threads", **({"default": None} | d))
    p.add_argument("-v", "--verbose", action="count", help="more logging (repeatable)", **({"default": 0} | d))
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. compositor.band=0.1",
                   **({"default": []} | d))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segsynth", description="Semi-parametric image synthesis from semantic layouts.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, fn, help):
        p = sub.add_parser(name, help=help, description=help)
        _global_flags(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("build-bank", cmd_build_bank, "extract a segment memory bank from a dataset")
    p.add_argument("--dataset")
    p.add_argument("--out", help="bank directory")

    p = add("derive-ordering", cmd_derive_ordering, "derive the class occlusion ordering from depth maps")
    p.add_argument("--dataset")
    p.add_argument("--out", help="ordering JSON file")

    p = add("synth", cmd_synth, "synthesize images for semantic layouts")
    p.add_argument("layouts", nargs="+", help="layout PNGs or directories of them")
    p.add_argument("--bank")
    p.add_argument("--out", help="output directory")
    p.add_argument("--ordering", help="ordering JSON file (default: the config's fallback order)")
    p.add_argument("--k", type=int, help="pick uniformly among the top k matches")
    p.add_argument("--samples", type=int, default=1, help="outputs per layout")
    p.add_argument("--exclude-source", help="never retrieve segments from this source id")

    p = add("simulate", cmd_simulate, "simulate training canvases from a dataset")
    p.add_argument("--dataset")
    p.add_argument("--bank")
    p.add_argument("--out", help="output directory")

    p = add("eval-layout", cmd_eval_layout, "per-class IoU and pixel accuracy between layouts")
    p.add_argument("reference", help="layout PNG or directory")
    p.add_argument("predicted", help="layout PNG or directory (RGB images with --colors)")
    p.add_argument("--colors", help="JSON with a 'colors' list; classify RGB predictions by nearest class color")
    p.add_argument("--out", help="write a JSON report here")

    p = add("eval-spectrum", cmd_eval_spectrum, "compare mean power spectra of two image folders")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.add_argument("--resolution", type=int, nargs=2, default=[256, 256], metavar=("H", "W"))
    p.add_argument("--glob", default="*", help="file pattern within each folder, e.g. '*_final.png'")
    p.add_argument("--glob-b", help="pattern for DIR_B if it differs from --glob")
    p.add_argument("--out", help="directory for spectra and a JSON report")

    p = add("inspect-bank", cmd_inspect_bank, "summarize a memory bank")
    p.add_argument("bank", nargs="?")
    p.add_argument("--json", action="store_true")
    p.add_argument("--no-verify", action="store_true", help="skip checksum verification")
    return parser


def _overrides(items) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = yaml.safe_load(value)
    return out


def make_config(args) -> PipelineConfig:
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["sim.rng_seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
        return args.func(cfg, args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (ConfigError, yaml.YAMLError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BankError as e:
        print(f"bank error: {e}", file=sys.stderr)
        return EXIT_BANK
    except CoarseLayoutError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as e:  # noqa: BLE001
        log.debug("unhandled failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
