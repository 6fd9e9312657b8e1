import json
from pathlib import Path

import pytest

from ucprop import io
from ucprop.cli import main
from ucprop.plots import FigureSpec, emit_plots, render

DYADIC = "experiment: dyadic\ndomain: {dim: 2, lo: 0.0, hi: 1.0}\nsweep: {samples: 200, betas: [0.5]}\n"


def write_config(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def tree(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_solve_writes_field(tmp_path):
    out = tmp_path / "solve"
    assert main(["solve", "--grid", "13", "--out", str(out), "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert "member0.field.bin" in summary["files"]
    sol = io.field_from_bytes((out / "member0.field.bin").read_bytes())
    assert sol.grid.counts == (13, 13, 13)
    assert sol.residual_norm <= 1e-8


def test_dyadic_deterministic(tmp_path):
    cfg = write_config(tmp_path, DYADIC)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["dyadic-check", "--config", cfg, "--out", str(a), "--quiet"]) == 0
    assert main(["dyadic-check", "--config", cfg, "--out", str(b), "--quiet"]) == 0
    ta, tb = tree(a), tree(b)
    assert ta and ta == tb


def test_seed_changes_output(tmp_path):
    cfg = write_config(tmp_path, DYADIC)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["dyadic-check", "--config", cfg, "--out", str(a), "--quiet", "--seed", "1"])
    main(["dyadic-check", "--config", cfg, "--out", str(b), "--quiet", "--seed", "2"])
    assert tree(a) != tree(b)


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, "experiment: doubling\nconstants: {kappa: 0.3}\n")
    assert main(["doubling", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
    assert "kappa < 1/4 required" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_report(tmp_path, capsys):
    out = tmp_path / "runs"
    main(["convergence", "--out", str(out / "convergence"), "--quiet"])
    capsys.readouterr()
    assert main(["report", "--out", str(out)]) == 0
    text = (out / "report.md").read_text()
    assert "| convergence | observed_order | PASS |" in text
    assert text == capsys.readouterr().out


def test_report_empty(tmp_path):
    assert main(["report", "--out", str(tmp_path), "--quiet"]) == 1


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["bogus"])


def test_plot_single_point_skipped(tmp_path):
    note = render(FigureSpec("fit", "fit", [1.0], [2.0]), tmp_path / "fit.svg")
    assert "skipped" in note
    assert not (tmp_path / "fit.svg").exists()


def test_plots_deterministic(tmp_path):
    specs = [
        FigureSpec("fit", "fit", [1, 2, 3], [2.0, 4.1, 6.0], "x", "y"),
        FigureSpec("hist", "hist", [0.1, 0.2, 0.2, 0.5], reference=0.4),
        FigureSpec("line", "line", [1], [1]),
    ]
    w1, n1 = emit_plots(specs, tmp_path / "a")
    w2, n2 = emit_plots(specs, tmp_path / "b")
    assert w1 == ["fit.svg", "hist.svg"] and len(n1) == 1
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
