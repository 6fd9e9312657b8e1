"""Run selected configs twice and compare the output trees byte for byte."""
import argparse
import sys
import tempfile
from pathlib import Path

from ucprop.config import load_config
from ucprop.experiments import RUNNERS, write_bundle


def tree(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def check(paths) -> list[str]:
    bad = []
    with tempfile.TemporaryDirectory() as tmp:
        for path in paths:
            cfg = load_config(path)
            for rep in ("a", "b"):
                write_bundle(RUNNERS[cfg.experiment](cfg), Path(tmp) / rep / path.stem)
            same = tree(Path(tmp) / "a" / path.stem) == tree(Path(tmp) / "b" / path.stem)
            print(f"{path.stem}: {'identical' if same else 'DIFFERENT'}", flush=True)
            if not same:
                bad.append(path.stem)
    return bad


if __name__ == "__main__":
    root = Path(__file__).parent.parent / "configs"
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("names", nargs="*", default=["dyadic", "convergence", "solve", "growth"])
    args = ap.parse_args()
    sys.exit(1 if check([root / f"{n}.yaml" for n in args.names]) else 0)
