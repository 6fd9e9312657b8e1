"""Persistence: lattice binaries, cube-family text, CSV rows and JSON summaries."""
from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .dyadic import CubeFamily, Root
from .geometry import Grid, RegionMask
from .solver import SolutionField

MAGIC_MASK = "UCPROP-MASK 1"
MAGIC_FIELD = "UCPROP-FIELD 1"


def _header(magic: str, grid: Grid, extra: dict | None = None) -> bytes:
    lines = [
        magic,
        f"dim {grid.dim}",
        "counts " + " ".join(str(c) for c in grid.counts),
        f"spacing {grid.h!r}",
        "origin " + " ".join(repr(float(o)) for o in grid.origin),
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k} {v}")
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("ascii")


def _read_header(blob: bytes, magic: str):
    text_end = blob.index(b"\nend\n") + len(b"\nend\n")
    lines = blob[:text_end].decode("ascii").splitlines()
    if lines[0] != magic:
        raise ValueError(f"expected header {magic!r}, got {lines[0]!r}")
    meta = {}
    for line in lines[1:-1]:
        key, _, val = line.partition(" ")
        meta[key] = val
    grid = Grid(
        int(meta.pop("dim")),
        float(meta.pop("spacing")),
        tuple(int(c) for c in meta.pop("counts").split()),
        tuple(float(o) for o in meta.pop("origin").split()),
    )
    return grid, meta, blob[text_end:]


def mask_to_bytes(region: RegionMask) -> bytes:
    """Text header then one byte per node in C order."""
    return _header(MAGIC_MASK, region.grid) + region.mask.astype(np.uint8).tobytes(order="C")


def mask_from_bytes(blob: bytes) -> RegionMask:
    grid, _, payload = _read_header(blob, MAGIC_MASK)
    arr = np.frombuffer(payload, dtype=np.uint8)
    if arr.size != int(np.prod(grid.shape)):
        raise ValueError("payload size does not match header counts")
    return RegionMask(grid, arr.reshape(grid.shape).astype(bool))


def field_to_bytes(sol: SolutionField) -> bytes:
    """Text header then little-endian float64 node values in C order."""
    extra = {
        "residual": repr(float(sol.residual_norm)),
        "tolerance": repr(float(sol.tolerance)),
        "boundary": sol.boundary,
    }
    return _header(MAGIC_FIELD, sol.grid, extra) + sol.u.astype("<f8").tobytes(order="C")


def field_from_bytes(blob: bytes) -> SolutionField:
    grid, meta, payload = _read_header(blob, MAGIC_FIELD)
    arr = np.frombuffer(payload, dtype="<f8")
    if arr.size != int(np.prod(grid.shape)):
        raise ValueError("payload size does not match header counts")
    return SolutionField(
        grid,
        arr.reshape(grid.shape).astype(float),
        float(meta.get("residual", "nan")),
        meta.get("boundary", "custom"),
        float(meta.get("tolerance", "1e-10")),
    )


def family_to_text(family: CubeFamily) -> str:
    """Root line, then one ``(rank, path)`` line per cube in sorted order."""
    root = family.root
    lines = ["root " + " ".join(repr(float(c)) for c in root.center) + f" side {root.side!r}"]
    for p in sorted(family.paths, key=lambda q: (len(q), q)):
        lines.append(f"{len(p)} " + ",".join(str(l) for l in p))
    return "\n".join(lines) + "\n"


def family_from_text(text: str) -> CubeFamily:
    lines = [l for l in text.splitlines() if l.strip()]
    head = lines[0].split()
    if head[0] != "root" or head[-2] != "side":
        raise ValueError("first line must be 'root <center...> side <side>'")
    root = Root(tuple(float(x) for x in head[1:-2]), float(head[-1]))
    paths = []
    for line in lines[1:]:
        rank, _, rest = line.partition(" ")
        path = tuple(int(x) for x in rest.split(",")) if rest.strip() else ()
        if len(path) != int(rank):
            raise ValueError(f"rank {rank} does not match path {rest!r}")
        paths.append(path)
    return CubeFamily(root, frozenset(paths))


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if isinstance(v, (tuple, list, np.ndarray)):
        return " ".join(format_value(x) for x in v)
    return str(v)


def rows_to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    """One header line, fixed column order, 17 significant digits."""
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(r.get(c, "")) for c in columns])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


def to_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_text(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text.encode("utf-8"))
    return path


def write_bytes(path: Path, blob: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    return path
