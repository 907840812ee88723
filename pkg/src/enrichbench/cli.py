"""Command-line front end.

Exit codes: 0 on success, 1 for bad arguments or an invalid configuration,
2 when a run aborted after exhausting a resource budget (its partial output
is still written).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any

from .config import ConfigError, dump_config, load_config
from .engine import Run
from .runner import MANIFEST_NAME, run_config, run_scenario
from .scenarios import SCENARIO_NAMES, build_scenario, scale_config

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ABORTED = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enrichbench",
        description=(
            "Simulated stream-processing pipeline for comparing data "
            "enrichment strategies."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser(
        "run", help="run a scenario preset or a single config document"
    )
    run.add_argument(
        "scenario", nargs="?", choices=SCENARIO_NAMES, metavar="SCENARIO",
        help=f"one of: {', '.join(SCENARIO_NAMES)}",
    )
    run.add_argument("--config", type=Path, help="run one JSON config instead")
    run.add_argument("--out", type=Path, default=Path("runs"), help="output root")
    run.add_argument(
        "--seed", type=int, default=None,
        help="master seed (default 1; for --config, the document's seed)",
    )
    run.add_argument(
        "--repeats", type=int, default=1,
        help="run each variant at seeds SEED..SEED+N-1",
    )
    run.add_argument(
        "--duration-scale", type=float, default=1.0, metavar="X",
        help="compress schedules by X in (0, 1] for quick runs",
    )
    run.add_argument(
        "--name", default="run", help="directory name for a --config run"
    )
    run.add_argument(
        "--figures", action="store_true", help="render charts after the run"
    )

    sub.add_parser("list-scenarios", help="show scenario presets")

    val = sub.add_parser("validate", help="check a config document")
    val.add_argument("--config", type=Path, required=True)
    val.add_argument(
        "--print", action="store_true", dest="echo",
        help="print the validated config in canonical form",
    )

    rep = sub.add_parser(
        "report", help="render charts for a finished scenario directory"
    )
    rep.add_argument("dir", type=Path, help="directory containing the manifest")
    rep.add_argument(
        "--figure", action="append", dest="figure_ids", metavar="ID",
        help="specific figure id (repeatable); default fits the scenario",
    )
    return parser


def _summary_line(variant: str, seed: int, summary: dict[str, Any]) -> str:
    latency = summary["latency"]
    p50 = f"{latency['p50_ms']} ms" if latency["count"] else "-"
    hit = summary["hit_rate"]
    bits = [
        f"consumed {summary['events_consumed']}/{summary['events_offered']}",
        f"p50 {p50}",
    ]
    if hit is not None:
        bits.append(f"hit rate {hit:.1%}")
    if summary["saturated_at_events_per_s"] is not None:
        bits.append(f"saturated at {summary['saturated_at_events_per_s']:g}/s")
    if summary["aborted"]:
        bits.append(f"ABORTED ({summary['abort_reason']})")
    return f"  {variant} seed {seed}: " + ", ".join(bits)


def _cmd_run(args: argparse.Namespace) -> int:
    if (args.scenario is None) == (args.config is None):
        print("run: give a scenario name or --config, not both", file=sys.stderr)
        return EXIT_ERROR

    if args.config is not None:
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        config = scale_config(config, args.duration_scale)
        out_dir = args.out / args.name
        result, summary = run_config(config, out_dir / "run")
        manifest_body = {
            "scenario": "custom",
            "title": f"single run from {args.config.name}",
            "description": "",
            "duration_scale": args.duration_scale,
            "seeds": [config.seed],
            "runs": [
                {
                    "variant": "run",
                    "seed": config.seed,
                    "dir": "run",
                    "files": result.csv_names,
                    "config": config.to_dict(),
                    "summary": summary,
                }
            ],
        }
        (out_dir / MANIFEST_NAME).write_text(
            json.dumps(manifest_body, indent=2) + "\n"
        )
        print(f"{args.name} -> {out_dir}")
        print(_summary_line("run", config.seed, summary))
        aborted = summary["aborted"]
        scenario_dir = out_dir
    else:
        print(f"{args.scenario} -> {args.out / args.scenario}")
        _path, manifest = run_scenario(
            args.scenario,
            args.out,
            seed=1 if args.seed is None else args.seed,
            repeats=args.repeats,
            duration_scale=args.duration_scale,
            on_variant=lambda v, s, summ: print(_summary_line(v, s, summ)),
        )
        aborted = any(r["summary"]["aborted"] for r in manifest["runs"])
        scenario_dir = args.out / args.scenario

    if args.figures:
        from .figures import render_figures

        for path in render_figures(scenario_dir):
            print(f"  wrote {path}")
    return EXIT_ABORTED if aborted else EXIT_OK


def _cmd_list(_args: argparse.Namespace) -> int:
    for name in SCENARIO_NAMES:
        scenario = build_scenario(name)
        variants = ", ".join(v for v, _ in scenario.variants)
        horizon = scenario.variants[0][1].horizon_s
        print(f"{name}: {scenario.title}")
        print(f"  {horizon:g} s; variants: {variants}")
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    Run(config.engine_params())  # exercises cross-field constraints
    if args.echo:
        sys.stdout.write(dump_config(config))
    else:
        print(f"{args.config}: ok")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    from .figures import render_figures

    if not (args.dir / MANIFEST_NAME).exists():
        print(f"report: no {MANIFEST_NAME} in {args.dir}", file=sys.stderr)
        return EXIT_ERROR
    for path in render_figures(args.dir, args.figure_ids):
        print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "list-scenarios": _cmd_list,
    "validate": _cmd_validate,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
