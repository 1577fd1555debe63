"""Stage functions behind the command-line driver.

Each stage reads and writes plain files under one output directory, so
stages can run separately (``gen``, ``build``, ``train``...) or chained
(``run_pipeline``). ``MANIFEST.json`` records which stages completed.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import SEED_SCHEME, ConfigError, RunConfig
from .evaluation import EvalReport, evaluate, profile_csv, rasterize, write_ppm
from .geometry import SiteSet, random_site_set
from .hierarchy import SiteTree, build_tree
from .neural import dumps_model, loads_model
from .runtime import NodeTrainingError, route, train_tree
from .sampler import SamplingError, sample_uniform

log = logging.getLogger(__name__)

STAGES = ("gen", "build", "train", "eval", "raster")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage} failed: {message}")
        self.stage = stage


def prepare_output(out: str | Path) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _manifest_path(out: Path) -> Path:
    return out / "MANIFEST.json"


def read_manifest(out: Path) -> dict:
    path = _manifest_path(out)
    if path.exists():
        return json.loads(path.read_text())
    return {"seed_scheme": SEED_SCHEME, "stages": {s: "pending" for s in STAGES}, "complete": False}


def mark(out: Path, stage: str, status: str) -> None:
    man = read_manifest(out)
    man["stages"][stage] = status
    man["complete"] = all(v == "complete" for v in man["stages"].values())
    man["files"] = sorted(str(p.relative_to(out)) for p in out.rglob("*")
                          if p.is_file() and p.name != "MANIFEST.json")
    _manifest_path(out).write_text(json.dumps(man, indent=1) + "\n")


def _stage(out: Path, name: str):
    """Context manager marking a stage failed/complete in the manifest."""

    class _Ctx:
        def __enter__(self):
            mark(out, name, "running")

        def __exit__(self, exc_type, exc, tb):
            if exc is None:
                mark(out, name, "complete")
                return False
            mark(out, name, "failed")
            if isinstance(exc, (StageError, ConfigError)):
                return False
            raise StageError(name, str(exc)) from exc

    return _Ctx()


# --- stages -------------------------------------------------------------------

def stage_gen(cfg: RunConfig, out: Path) -> SiteSet:
    with _stage(out, "gen"):
        ss = random_site_set(cfg.site_spec(), cfg.stage_seed("sites"))
        (out / "sites.json").write_text(ss.dumps())
        (out / "config.json").write_text(cfg.dumps())
    return ss


def load_sites(out: Path) -> SiteSet:
    return SiteSet.loads((out / "sites.json").read_text())


def stage_build(cfg: RunConfig, out: Path, ss: SiteSet) -> SiteTree:
    with _stage(out, "build"):
        t = cfg.tree
        tree = build_tree(ss, t.k, t.leaf_capacity, cfg.stage_seed("tree"), t.margin)
        (out / "tree.json").write_text(tree.dumps())
    return tree


def load_tree(out: Path, with_models: bool = True) -> SiteTree:
    doc = json.loads((out / "tree.json").read_text())
    tree = SiteTree.from_json(doc)
    if with_models:
        for node, item in zip(tree.nodes, doc["nodes"]):
            if item["model_ref"] is None:
                raise ValueError(f"node {node.id} has no trained model; run the train stage")
            node.model = loads_model((out / item["model_ref"]).read_text())
    return tree


def stage_train(cfg: RunConfig, out: Path, ss: SiteSet, tree: SiteTree) -> SiteTree:
    with _stage(out, "train"):
        tcfg = cfg.train_config()
        try:
            results = train_tree(tree, ss, tcfg)
        except NodeTrainingError as exc:
            hint = " (suggestion: increase sampling.epsilon_frac)" if isinstance(exc.cause, SamplingError) else ""
            raise StageError("train", f"{exc}{hint}") from exc
        models = out / "models"
        models.mkdir(exist_ok=True)
        refs = {}
        curves = {}
        for node in tree.nodes:
            ref = f"models/{node.id}.json"
            (out / ref).write_text(dumps_model(node.model))
            refs[node.id] = ref
            res = results[node.id]
            curves[str(node.id)] = {"initial_loss": res.initial_loss, "losses": res.losses,
                                    "train_accuracy": res.train_accuracy, "n_samples": res.n_samples}
        (out / "tree.json").write_text(tree.dumps(refs))
        (out / "train_log.json").write_text(json.dumps(curves, indent=1) + "\n")
        if cfg.save_datasets:
            data_dir = out / "datasets"
            data_dir.mkdir(exist_ok=True)
            for node in tree.nodes:
                if results[node.id].data is not None:
                    results[node.id].data.write(data_dir / f"node_{node.id}.bin")
    return tree


def eval_queries(cfg: RunConfig, ss: SiteSet) -> np.ndarray:
    return sample_uniform(ss.domain, cfg.eval.n_queries, cfg.stage_seed("queries"))


def report_config(cfg: RunConfig, tree: SiteTree) -> dict:
    tc = cfg.train_config()
    return {
        "run": cfg.to_dict(),
        "epsilon_frac": cfg.sampling.epsilon_frac,
        "n": cfg.sites.n,
        "family": cfg.sites.family,
        "metric": cfg.sites.metric,
        "seed": cfg.seed,
        "architecture": {"hidden": list(tc.hidden), "encoding": tc.encoding.to_json(),
                         "epochs": tc.epochs, "batch_size": tc.batch_size, "lr": tc.lr,
                         "optimizer": "adam"},
        "tree": {"depth": tree.depth, "nodes": len(tree.nodes), "leaves": len(tree.leaves())},
    }


def stage_eval(cfg: RunConfig, out: Path, ss: SiteSet, tree: SiteTree) -> EvalReport:
    with _stage(out, "eval"):
        ev = cfg.eval
        report = evaluate(tree, ss, eval_queries(cfg, ss), beam=ev.beam, bins=ev.bins,
                          boundary_gap=ev.boundary_gap_frac * ss.domain.diagonal,
                          config=report_config(cfg, tree))
        (out / "report.json").write_text(report.dumps())
        (out / "boundary_profile.csv").write_text(profile_csv(report.boundary_profile))
    return report


def stage_raster(cfg: RunConfig, out: Path, ss: SiteSet, tree: SiteTree) -> None:
    with _stage(out, "raster"):
        res = cfg.eval.raster_resolution
        rdir = out / "rasters"
        rdir.mkdir(exist_ok=True)
        for mode in ("labels", "error", "envelope"):
            write_ppm(rdir / f"tree_{mode}.ppm", rasterize(tree, ss, res, mode, cfg.eval.beam))
        for mode in ("labels", "envelope"):
            write_ppm(rdir / f"oracle_{mode}.ppm", rasterize(ss, ss, res, mode))


def run_pipeline(cfg: RunConfig, out: str | Path) -> EvalReport:
    out = prepare_output(out)
    ss = stage_gen(cfg, out)
    tree = stage_build(cfg, out, ss)
    stage_train(cfg, out, ss, tree)
    report = stage_eval(cfg, out, ss, tree)
    stage_raster(cfg, out, ss, tree)
    return report


def infer_file(tree: SiteTree, queries_csv: Path, out_csv: Path, beam: int = 1) -> int:
    """Read query rows (coordinates; an optional header is skipped) and write predictions."""
    rows = []
    with open(queries_csv, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if rows:
                    raise
    x = np.array(rows, dtype=float)
    r = route(tree, x, beam)
    order = r.order()[:, 0]
    idx = np.arange(len(x))
    site = r.candidates[idx, order]
    score = r.logits[idx, order]
    buf = io.StringIO()
    w = csv.writer(buf)
    d = x.shape[1]
    w.writerow([f"x{i + 1}" for i in range(d)] + ["site", "score", "leaf", "clamped"])
    for row, s, sc, leaf, cl in zip(x, site, score, r.leaf, r.clamped):
        w.writerow([repr(float(v)) for v in row] + [int(s), repr(float(sc)), int(leaf), int(cl)])
    Path(out_csv).write_text(buf.getvalue())
    return len(x)


# --- sweeps -------------------------------------------------------------------

SWEEP_COLUMNS = ("parameter", "value", "status", "top1", "top2", "kendall_tau", "order2",
                 "top1_boundary", "top2_boundary", "n_boundary", "message")


def sweep_config(cfg: RunConfig, parameter: str, value: float) -> RunConfig:
    if parameter == "epsilon":
        return replace(cfg, sampling=replace(cfg.sampling, epsilon_frac=float(value), epsilon=None))
    if parameter == "segment_length":
        if cfg.sites.family != "segments":
            raise ConfigError("segment_length sweeps need sites.family = segments")
        return replace(cfg, sites=replace(cfg.sites, size_range=[float(value), float(value)]))
    raise ConfigError(f"unknown sweep parameter {parameter!r}; expected epsilon or segment_length")


def run_sweep(cfg: RunConfig, out: str | Path, parameter: str, values: Sequence[float]) -> list[dict]:
    """One pipeline per value, all with the same root seed; rows go to ``table.csv``.

    A failing value is recorded with its status and the sweep continues.
    """
    out = prepare_output(out)
    configs = [sweep_config(cfg, parameter, v) for v in values]
    for c in configs:
        c.validate()
    rows = []
    for i, (value, c) in enumerate(zip(values, configs)):
        row = {"parameter": parameter, "value": float(value)}
        try:
            rep = run_pipeline(c, out / f"{parameter}_{i}")
            row.update(status="ok", top1=rep.top1, top2=rep.top2, kendall_tau=rep.kendall_tau,
                       order2=rep.order2, top1_boundary=rep.top1_boundary,
                       top2_boundary=rep.top2_boundary, n_boundary=rep.n_boundary, message="")
        except (StageError, ConfigError) as exc:
            log.error("sweep value %s failed: %s", value, exc)
            row.update(status=getattr(exc, "stage", "config") + "_failed", message=str(exc))
        rows.append(row)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, restval="")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    (out / "table.csv").write_text(buf.getvalue())
    return rows
