"""Run every shipped config through the CLI and write a combined report."""
import argparse
import sys
from pathlib import Path

from ucprop.cli import main
from ucprop.config import load_config

SUBCOMMAND = {
    "dyadic": "dyadic-check",
    "propagate-l2": "propagate",
    "growth-linf": "growth",
}


def run(configs: Path, out: Path, grid: int | None) -> int:
    worst = 0
    for path in sorted(configs.glob("*.yaml")):
        experiment = load_config(path).experiment
        argv = [SUBCOMMAND.get(experiment, experiment), "--config", str(path), "--out", str(out / path.stem)]
        if grid is not None:
            argv += ["--grid", str(grid)]
        print(f"== {path.stem}", flush=True)
        worst = max(worst, main(argv))
    main(["report", "--out", str(out)])
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs", type=Path, default=Path(__file__).parent.parent / "configs")
    ap.add_argument("--out", type=Path, default=Path("runs"))
    ap.add_argument("--grid", type=int, default=None, help="override nodes per axis for a quick pass")
    args = ap.parse_args()
    sys.exit(run(args.configs, args.out, args.grid))
