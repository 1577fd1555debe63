"""Command-line driver.

Every subcommand reads the same JSON config (``--config``) with optional
``--set section.key=value`` overrides and works inside one output directory.
Exit codes: 0 ok, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .config import ConfigError, RunConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="JSON run configuration")
    common.add_argument("--set", "-s", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. train.epochs=10 (repeatable)")
    common.add_argument("--out", "-o", help="output directory (overrides the config's output)")
    common.add_argument("--verbose", "-v", action="store_true")

    p = argparse.ArgumentParser(prog="neuralenvelope",
                                description="Hierarchical neural surrogate of generalized Voronoi diagrams")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate sites.json")
    sub.add_parser("build", parents=[common], help="build the k-means site tree")
    sub.add_parser("train", parents=[common], help="sample and train every node")
    sub.add_parser("eval", parents=[common], help="evaluate against the exact oracle")
    sub.add_parser("raster", parents=[common], help="write PPM rasters")
    sub.add_parser("pipeline", parents=[common], help="run every stage")
    inf = sub.add_parser("infer", parents=[common], help="predict nearest sites for a CSV of queries")
    inf.add_argument("queries", help="CSV with one query per row")
    inf.add_argument("--output", dest="pred_out", help="prediction CSV (default: <out>/predictions.csv)")
    inf.add_argument("--beam", type=int, default=None)
    sw = sub.add_parser("sweep", parents=[common], help="run one pipeline per parameter value")
    sw.add_argument("parameter", choices=["epsilon", "segment_length"])
    sw.add_argument("values", nargs="+", type=float)
    return p


def _run(args) -> int:
    cfg = RunConfig.load(args.config, args.set)
    out = Path(args.out or cfg.output)
    cmd = args.command

    if cmd == "sweep":
        rows = pl.run_sweep(cfg, out, args.parameter, args.values)
        for r in rows:
            print(f"{r['parameter']}={r['value']:g} {r['status']} top1={r.get('top1', '')}")
        return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_STAGE
    if cmd == "pipeline":
        rep = pl.run_pipeline(cfg, out)
        print(json.dumps({"top1": rep.top1, "top2": rep.top2, "kendall_tau": rep.kendall_tau,
                          "order2": rep.order2}))
        return EXIT_OK

    out = pl.prepare_output(out)
    if cmd == "gen":
        ss = pl.stage_gen(cfg, out)
        print(f"n={len(ss.sites)} d={ss.dim} family={cfg.sites.family}")
        return EXIT_OK
    try:
        ss = pl.load_sites(out)
    except OSError as exc:
        raise pl.StageError(cmd, f"cannot read sites.json in {out}; run gen first ({exc})") from exc
    if cmd == "build":
        tree = pl.stage_build(cfg, out, ss)
        print(f"nodes={len(tree.nodes)} leaves={len(tree.leaves())} depth={tree.depth}")
        return EXIT_OK
    try:
        tree = pl.load_tree(out, with_models=cmd != "train")
    except (OSError, ValueError) as exc:
        raise pl.StageError(cmd, str(exc)) from exc
    if cmd == "train":
        pl.stage_train(cfg, out, ss, tree)
    elif cmd == "eval":
        rep = pl.stage_eval(cfg, out, ss, tree)
        print(json.dumps({"top1": rep.top1, "top2": rep.top2, "kendall_tau": rep.kendall_tau,
                          "order2": rep.order2}))
    elif cmd == "raster":
        pl.stage_raster(cfg, out, ss, tree)
    elif cmd == "infer":
        beam = args.beam if args.beam is not None else cfg.eval.beam
        if beam < 1:
            raise ConfigError("--beam must be >= 1")
        dest = Path(args.pred_out) if args.pred_out else out / "predictions.csv"
        try:
            n = pl.infer_file(tree, Path(args.queries), dest, beam)
        except (OSError, ValueError) as exc:
            raise pl.StageError("infer", str(exc)) from exc
        print(f"wrote {n} predictions to {dest}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pl.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
