"""``gridfrag`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .errors import GridFragError, MissingPrerequisiteError, ValidationError
from .experiment import (
    Manifest,
    build_report,
    find_scenario,
    load_config,
    resolve_config,
    run_stage,
    scenarios,
    stage_done,
)

log = logging.getLogger("gridfrag")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_MISSING = 3
STAGES = ("generate", "fit", "select", "evaluate", "upgrade")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config; defaults are used for missing keys")
    common.add_argument("--scenario", help="run a single scenario id such as a65_cov0.1")
    common.add_argument("--seed", type=int, help="base seed; overrides the config and re-derives stage seeds")
    common.add_argument("--force", action="store_true", help="recompute outputs that already exist")
    common.add_argument("--workers", type=int, help="parallel scenario workers")
    common.add_argument("--outdir", type=Path, help="output directory (overrides config output_dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gridfrag", description="Grid-component fragility experiments.",
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "simulate stress and failure records",
        "fit": "MLE, bootstrap prior and MCMC posterior",
        "select": "BIC model selection over feature sets",
        "evaluate": "system and component divergences",
        "upgrade": "upgrade plans under the risk target",
        "report": "consolidated tables across the grid",
        "run-all": "every stage followed by the report",
    }
    for name, text in helps.items():
        sub.add_parser(name, help=text, parents=[common])
    return parser


def _config(args) -> dict:
    if args.config is not None:
        cfg = load_config(args.config, args.seed)
    else:
        cfg = resolve_config(None, args.seed)
    if args.outdir is not None:
        cfg["output_dir"] = str(args.outdir)
    if args.workers is not None:
        if args.workers < 1:
            raise ValidationError("--workers must be >= 1")
        cfg["workers"] = args.workers
    return cfg


def _stage(cfg: dict, stage: str, selected, force: bool) -> None:
    outdir = Path(cfg["output_dir"])
    manifest = Manifest(outdir)
    if manifest.data.get("seeds") not in (None, cfg["seeds"]) and not force:
        raise ValidationError(f"{outdir} was produced with different seeds; use --force or another --outdir")
    todo = [sc for sc in selected if force or not stage_done(manifest, sc, stage)]
    for sc in selected:
        if sc not in todo:
            log.info("%s %s: up to date", stage, sc.id)
    if not todo:
        return
    workers = min(int(cfg.get("workers", 1)), len(todo))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(run_stage, *zip(*[(cfg, stage, sc, manifest.data) for sc in todo])))
    else:
        results = [run_stage(cfg, stage, sc, manifest.data) for sc in todo]
    for sc, written in zip(todo, results):
        log.info("%s %s: wrote %s", stage, sc.id, ", ".join(written))
        manifest.record([outdir / w for w in written])
    manifest.set_meta(seeds=cfg["seeds"])
    manifest.save()


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = _config(args)
    selected = [find_scenario(cfg, args.scenario)] if args.scenario else scenarios(cfg)
    if args.command in STAGES:
        _stage(cfg, args.command, selected, args.force)
        return EXIT_OK
    if args.command == "run-all":
        for stage in STAGES:
            _stage(cfg, stage, selected, args.force)
    missing = build_report(cfg)
    if missing:
        print(f"report incomplete; missing scenarios: {', '.join(missing)}", file=sys.stderr)
        return EXIT_MISSING
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except MissingPrerequisiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ValidationError, GridFragError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
