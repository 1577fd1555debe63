"""Run configuration: one JSON document, strictly validated, with dotted overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .geometry import Box, Metric, SiteSpec
from .hierarchy import TreeParams
from .neural import Encoding
from .rng import derive_seed
from .runtime import TrainConfig
from .sampler import SamplePlan


class ConfigError(ValueError):
    pass


@dataclass
class SitesSection:
    family: str = "segments"
    n: int = 200
    dim: int = 2
    metric: str = "L2"
    size_range: list = field(default_factory=lambda: [0.02, 0.08])
    domain_lo: list = field(default_factory=lambda: [0.0, 0.0])
    domain_hi: list = field(default_factory=lambda: [1.0, 1.0])


@dataclass
class TreeSection:
    k: int = 16
    leaf_capacity: int = 64
    margin: float = 0.1


@dataclass
class SamplingSection:
    n_samples: int = 12000
    rho: float = 0.5
    epsilon_frac: float = 0.05
    epsilon: Any = None
    max_rejection_factor: int = 1000


@dataclass
class TrainSection:
    hidden: list = field(default_factory=lambda: [128, 128])
    encoding: str = "none"
    m: int = 6
    sigma: float = 1.0
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3


@dataclass
class EvalSection:
    n_queries: int = 100_000
    bins: int = 10
    beam: int = 1
    boundary_gap_frac: float = 0.02
    raster_resolution: int = 256


@dataclass
class RunConfig:
    sites: SitesSection = field(default_factory=SitesSection)
    tree: TreeSection = field(default_factory=TreeSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    workers: int = 1
    save_datasets: bool = True
    output: str = "run"

    # --- construction ---------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        cfg = _build(cls, doc, "")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None, overrides: list[str] | None = None) -> "RunConfig":
        doc: dict = {}
        if path is not None:
            try:
                doc = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for item in overrides or []:
            apply_override(doc, item)
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    # --- validation -------------------------------------------------------

    def validate(self) -> None:
        try:
            self.site_spec().validate()
            self.tree_params().validate()
            self.train_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not 0.0 <= self.sampling.rho <= 1.0:
            raise ConfigError("sampling.rho must lie in [0, 1]")
        eps = self.sampling.epsilon
        if eps is not None and (isinstance(eps, bool) or not isinstance(eps, (int, float)) or eps < 0):
            raise ConfigError("sampling.epsilon must be null or a nonnegative number")
        if self.sampling.n_samples < 1:
            raise ConfigError("sampling.n_samples must be >= 1")
        ev = self.eval
        if ev.n_queries < 1 or ev.bins < 2 or ev.beam < 1 or ev.raster_resolution < 1:
            raise ConfigError("eval: n_queries, beam, raster_resolution must be >= 1 and bins >= 2")
        if ev.boundary_gap_frac < 0:
            raise ConfigError("eval.boundary_gap_frac must be >= 0")

    # --- typed views --------------------------------------------------------

    def site_spec(self) -> SiteSpec:
        s = self.sites
        try:
            metric = Metric(s.metric)
        except ValueError as exc:
            raise ConfigError(f"unknown metric {s.metric!r}") from exc
        if len(s.size_range) != 2:
            raise ConfigError("sites.size_range needs two values")
        return SiteSpec(int(s.dim), int(s.n), s.family, (float(s.size_range[0]), float(s.size_range[1])),
                        Box(s.domain_lo, s.domain_hi), metric)

    def tree_params(self) -> TreeParams:
        return TreeParams(self.tree.k, self.tree.leaf_capacity, self.tree.margin)

    def sample_plan(self) -> SamplePlan:
        sp = self.sampling
        n_boundary = int(round(sp.rho * sp.n_samples))
        return SamplePlan(sp.n_samples - n_boundary, n_boundary,
                          None if sp.epsilon is None else float(sp.epsilon),
                          sp.epsilon_frac, sp.max_rejection_factor)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            epochs=t.epochs, batch_size=t.batch_size, hidden=tuple(int(h) for h in t.hidden),
            encoding=Encoding(t.encoding, t.m, t.sigma), lr=t.lr, plan=self.sample_plan(),
            seed=self.stage_seed("train"), workers=self.workers,
        )

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)


SEED_SCHEME = (
    "stage seed = splitmix64 fold of (root seed, stage name); stages: sites, tree, train, queries. "
    "Per node: node seed = fold(train seed, 'node', node id); k-means at a node uses "
    "fold(tree seed, 'kmeans', node id)."
)


def _build(cls, doc: Any, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, f in known.items():
        if name not in doc:
            continue
        value = doc[name]
        current = getattr(defaults, name)
        if hasattr(current, "__dataclass_fields__"):
            kwargs[name] = _build(type(current), value, f"{where}{name}.")
        else:
            kwargs[name] = _coerce(value, current, f"{where}{name}")
    return cls(**kwargs)


def _coerce(value, default, where):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list")
        return copy.deepcopy(value)
    return value


def apply_override(doc: dict, item: str) -> None:
    """Apply ``section.key=value``; the value is parsed as JSON, else kept as a string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-object")
    node[parts[-1]] = value
