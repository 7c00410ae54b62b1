"""ASCII PLY export of point clouds (x, y, z in millimetres)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError


def _fmt(v: float) -> str:
    # float32 storage: shortest text that round-trips the single-precision value
    s = np.format_float_positional(np.float32(v), unique=True, trim="-")
    return "0" if s == "-0" else s


def format_ply(points: np.ndarray) -> str:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    body = [" ".join(_fmt(v) for v in p) for p in pts]
    return "\n".join(header + body) + "\n"


def write_ply(path: str | Path, points: np.ndarray) -> None:
    Path(path).write_text(format_ply(points), newline="\n")


def read_ply(path: str | Path) -> np.ndarray:
    """Read the vertex x, y, z columns of an ASCII PLY file."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError(f"{path}: not a PLY file")
    n_vertex = None
    props: list[str] = []
    in_vertex = False
    end = None
    for i, line in enumerate(lines[1:], 1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise FormatError(f"{path}: only ASCII PLY is supported")
        if tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            end = i
            break
    if end is None or n_vertex is None:
        raise FormatError(f"{path}: incomplete PLY header")
    try:
        cols = [props.index(c) for c in ("x", "y", "z")]
    except ValueError as exc:
        raise FormatError(f"{path}: vertex lacks x/y/z properties") from exc
    rows = lines[end + 1 : end + 1 + n_vertex]
    if len(rows) != n_vertex:
        raise FormatError(f"{path}: expected {n_vertex} vertices, found {len(rows)}")
    if not n_vertex:
        return np.zeros((0, 3))
    data = np.array([[float(v) for v in r.split()] for r in rows])
    return data[:, cols]
