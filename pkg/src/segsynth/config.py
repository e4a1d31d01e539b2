"""Pipeline configuration: YAML file -> validated nested dataclasses."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from . import compositor, finisher
from .canvas_sim import SimConfig
from .retrieval import DEFAULT_TOPK
from .segment_bank import DEFAULT_MIN_AREA


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    bank: str | None = None
    dataset: str | None = None
    output: str | None = None
    ordering: str | None = None


@dataclass
class BankConfig:
    min_area: int = DEFAULT_MIN_AREA
    connectivity: int = 4


@dataclass
class RetrievalConfig:
    k: int = 1
    topk_default: int = DEFAULT_TOPK
    exclude_source: str | None = None
    query_min_area: int | None = None     # None: the bank's min_area
    max_unlabeled_fraction: float = 0.25


@dataclass
class AlignmentConfig:
    allow_rotation: bool = False
    scale_min: float = 0.25
    scale_max: float = 4.0
    anisotropy: float = 1.5


@dataclass
class CompositorConfig:
    band: float = compositor.DEFAULT_BAND
    interior_rate: float = compositor.DEFAULT_INTERIOR_RATE
    fallback: list[str] | str | None = None
    exterior_exclude: list[str] = field(default_factory=list)
    adjacency: int = compositor.ADJACENCY_PX


@dataclass
class FinisherConfig:
    backend: str = "baseline"
    tol: float = finisher.DEFAULT_TOL
    max_iters: int = finisher.DEFAULT_MAX_ITERS
    harmonize: bool = False
    blend: float = finisher.DEFAULT_BLEND
    respect_layout: bool = True
    command: str | None = None


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    bank: BankConfig = field(default_factory=BankConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    compositor: CompositorConfig = field(default_factory=CompositorConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    finisher: FinisherConfig = field(default_factory=FinisherConfig)
    seed: int = 0
    jobs: int = 1

    def validate(self) -> "PipelineConfig":
        def check(ok, msg):
            if not ok:
                raise ConfigError(msg)
        check(self.bank.min_area >= 0, "bank.min_area must be >= 0")
        check(self.bank.connectivity in (4, 8), "bank.connectivity must be 4 or 8")
        check(self.retrieval.k >= 1, "retrieval.k must be >= 1")
        check(self.retrieval.query_min_area is None or self.retrieval.query_min_area >= 0,
              "retrieval.query_min_area must be >= 0")
        check(0 <= self.retrieval.max_unlabeled_fraction <= 1, "retrieval.max_unlabeled_fraction must lie in [0, 1]")
        check(0 < self.alignment.scale_min <= 1 <= self.alignment.scale_max, "alignment scale clamp must bracket 1")
        check(self.alignment.anisotropy >= 1, "alignment.anisotropy must be >= 1")
        check(0 <= self.compositor.band <= 0.5, "compositor.band must lie in [0, 0.5]")
        check(0 <= self.compositor.interior_rate <= 1, "compositor.interior_rate must lie in [0, 1]")
        check(self.compositor.adjacency >= 0, "compositor.adjacency must be >= 0")
        check(self.finisher.tol > 0 and self.finisher.max_iters >= 1, "finisher tol/max_iters must be positive")
        check(0 <= self.finisher.blend <= 1, "finisher.blend must lie in [0, 1]")
        check(self.jobs >= 1, "jobs must be >= 1")
        check(0 <= self.seed < 2**64, "seed must be an unsigned 64-bit integer")
        return self


def _build(cls, data: Any, where: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {where + '.' if where else ''}{key}")
        sub = _SECTIONS.get(key) if cls is PipelineConfig else None
        kwargs[key] = _build(sub, value, key) if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {where or 'config'}: {e}") from e


_SECTIONS = {"paths": PathsConfig, "bank": BankConfig, "retrieval": RetrievalConfig,
             "alignment": AlignmentConfig, "compositor": CompositorConfig, "sim": SimConfig,
             "finisher": FinisherConfig}


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file {p} not found")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {p}: {e}") from e
    for dotted, value in (overrides or {}).items():
        node = data
        *head, last = dotted.split(".")
        for part in head:
            node = node.setdefault(part, {})
        node[last] = value
    return _build(PipelineConfig, data, "").validate()


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(dataclasses.asdict(cfg), sort_keys=False)


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("segsynth").joinpath("presets").iterdir()
                  if p.name.endswith(".yaml"))


def load_preset(name: str) -> list[str]:
    f = resources.files("segsynth").joinpath("presets", f"{name}.yaml")
    if not f.is_file():
        raise ConfigError(f"unknown fallback preset {name!r} (known: {preset_names()})")
    return list(yaml.safe_load(f.read_text())["back_to_front"])


def fallback_names(cfg: CompositorConfig, classes: list[str]) -> list[str] | None:
    """Class names back-to-front from config: a list, ``preset:<name>``, or nothing."""
    fb = cfg.fallback
    if fb is None:
        return None
    if isinstance(fb, str):
        if not fb.startswith("preset:"):
            raise ConfigError("compositor.fallback must be a list of class names or 'preset:<name>'")
        known = set(classes)
        return [n for n in load_preset(fb[len("preset:"):]) if n in known]
    return list(fb)
