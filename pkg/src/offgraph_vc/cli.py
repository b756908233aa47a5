"""Command-line driver: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .pipeline import (
    FUSION_MODES,
    PATH_MODES,
    STAGE_OUTPUTS,
    STAGES,
    MissingArtifact,
    PipelineConfig,
    load_config,
    write_resolved_config,
)

logger = logging.getLogger("offgraph_vc")

# which earlier artifacts each stage reads (for --dry-run plans)
STAGE_INPUTS = {
    "gen-data": [],
    "label-gains": ["data/investments.jsonl"],
    "train-selector": ["groups.jsonl"],
    "eval-selector": ["selector.json", "groups.jsonl"],
    "run-agents": ["data/investments.jsonl", "selector.json"],
    "train-gate": ["verdicts.jsonl"],
    "predict": ["selector.json", "verdicts.jsonl", "gate.json"],
    "evaluate": ["predictions.jsonl"],
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file")
    common.add_argument("--out", type=Path, help="output directory (overrides config)")
    common.add_argument("--data", type=Path, help="dataset directory (default: <out>/data)")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("--mock-llm", action="store_true", help="use the deterministic mock gateway")
    common.add_argument("--dry-run", action="store_true", help="print the resolved plan and exit")
    common.add_argument("--workers", type=int, help="target-level concurrency")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--paths", choices=PATH_MODES, help="path retrieval mode")
    common.add_argument("--fusion", choices=FUSION_MODES, help="evidence fusion mode")
    common.add_argument("--no-graph", action="store_true", help="drop the investment-path view")
    common.add_argument("--no-peers", action="store_true", help="drop the peer-company view")
    common.add_argument("--no-investor", action="store_true", help="drop the lead-investor view")

    parser = argparse.ArgumentParser(prog="offgraph-vc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, parents=[common], help=f"run the {name} stage")
        if name == "gen-data":
            p.add_argument("--companies", type=int, help="number of companies to generate")
        if name == "evaluate":
            p.add_argument("--baselines", type=Path, help="metrics.csv of a baseline run for delta columns")
    return parser


def resolve(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config)
    top = {}
    if args.out is not None:
        top["out_dir"] = str(args.out)
    if args.data is not None:
        top["data_dir"] = str(args.data)
    if args.seed is not None:
        top["seed"] = args.seed
    if args.workers is not None:
        top["workers"] = args.workers
    if args.fusion is not None:
        top["fusion"] = args.fusion
    ret = {}
    if args.paths is not None:
        ret["path_mode"] = args.paths
    if args.no_graph:
        ret["use_graph"] = False
    if args.no_peers:
        ret["use_peers"] = False
    if args.no_investor:
        ret["use_investor"] = False
    if ret:
        top["retrieval"] = replace(cfg.retrieval, **ret)
    if args.mock_llm:
        top["gateway"] = replace(cfg.gateway, provider="mock")
    if getattr(args, "companies", None) is not None:
        top["generator"] = replace(cfg.generator, n_companies=args.companies)
    return replace(cfg, **top)


def plan(command: str, cfg: PipelineConfig) -> dict:
    def where(rel: str) -> str:
        if rel.startswith("data/"):
            return str(cfg.data_path / rel[len("data/"):])
        return str(cfg.out / rel)

    return {
        "command": command,
        "reads": [where(p) for p in STAGE_INPUTS[command]],
        "writes": [where(p) for p in STAGE_OUTPUTS[command]],
        "config": cfg.to_dict(),
    }


def _fail(message: str, code: int = 2) -> int:
    # single machine-parsable line on stderr
    print(f"error: {' '.join(message.split())}", file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve(args)
    except (ValueError, TypeError, OSError) as exc:
        return _fail(f"config: {exc}")
    if args.dry_run:
        print(json.dumps(plan(args.command, cfg), indent=2, sort_keys=True, default=str))
        return 0
    try:
        write_resolved_config(cfg, args.command)
        if args.command == "evaluate":
            result = STAGES["evaluate"](cfg, args.baselines)
        else:
            result = STAGES[args.command](cfg)
    except MissingArtifact as exc:
        return _fail(str(exc))
    except (ValueError, KeyError, OSError) as exc:
        logger.debug("stage failed", exc_info=True)
        return _fail(f"{args.command}: {exc}", 1)
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
