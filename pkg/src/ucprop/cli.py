"""Command-line entry point: ``ucprop <subcommand> [--config PATH] [--out DIR] ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import io
from .config import ScenarioConfig, load_config, validate
from .errors import ConfigError
from .experiments import run_experiment

SUBCOMMANDS = {
    "solve": "solve",
    "caccioppoli": "caccioppoli",
    "doubling": "doubling",
    "three-sphere": "three-sphere",
    "muckenhoupt": "muckenhoupt",
    "dyadic-check": "dyadic",
    "propagate": "propagate-l2",
    "growth": "growth-linf",
    "convergence": "convergence",
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="YAML scenario file")
    p.add_argument("--out", type=Path, help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="run and ensemble seed (overrides config)")
    p.add_argument("--grid", type=int, help="nodes per axis (overrides config)")
    p.add_argument("--quiet", action="store_true", help="print nothing on success")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ucprop", description="Quantitative unique continuation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, exp in SUBCOMMANDS.items():
        _common(sub.add_parser(name, help=f"run the {exp} experiment"))
    rep = sub.add_parser("report", help="summarize the summary.json files under a directory")
    _common(rep)
    return parser


def resolve_config(args, experiment: str) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig(experiment=experiment)
    cfg.experiment = experiment
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.ensemble.seed = args.seed
    if args.grid is not None:
        cfg.grid.n = args.grid
    if args.out is not None:
        cfg.output = str(args.out)
    problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def report(root: Path) -> tuple[str, bool]:
    """Markdown table of every assertion found in ``root/**/summary.json``."""
    lines = ["| experiment | assertion | passed | measured | threshold |", "|---|---|---|---|---|"]
    ok = True
    found = sorted(root.rglob("summary.json"))
    for path in found:
        data = json.loads(path.read_text())
        for a in data.get("assertions", []):
            ok &= bool(a["passed"])
            lines.append(
                f"| {data['experiment']} | {a['name']} | {'PASS' if a['passed'] else 'FAIL'} "
                f"| {io.format_value(a['measured'])} | {io.format_value(a['threshold'])} |"
            )
    if not found:
        lines.append("| (none) | no summary.json found | | | |")
        ok = False
    return "\n".join(lines) + "\n", ok


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        root = args.out or Path("out")
        text, ok = report(root)
        io.write_text(root / "report.md", text)
        if not args.quiet:
            print(text, end="")
        return 0 if ok else 1
    try:
        cfg = resolve_config(args, SUBCOMMANDS[args.command])
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return 2
    bundle = run_experiment(cfg)
    if not args.quiet or not bundle.passed:
        for a in bundle.assertions:
            print(f"{'PASS' if a.passed else 'FAIL'} {a.name}: measured {a.measured:.6g}, threshold {a.threshold:.6g}")
        for e in bundle.errors:
            print(f"member {e['member']}: {e['error']}")
        print(f"wrote {cfg.output}")
    return 0 if bundle.passed else 1


if __name__ == "__main__":
    sys.exit(main())
