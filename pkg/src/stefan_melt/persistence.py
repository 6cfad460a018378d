"""Flat-file outputs: CSV series, JSON reports and SVG line plots.

Every file is written atomically (temporary file in the target directory,
then ``os.replace``) and carries the hash of the configuration that produced
it.  Floats are printed with ``repr``, the shortest string that round-trips,
so identical runs give byte-identical files.
"""

from __future__ import annotations

import hashlib
import html
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "format_value",
    "config_hash",
    "atomic_write_text",
    "write_csv",
    "read_csv",
    "write_json",
    "svg_line_plot",
    "Series",
]


def format_value(v) -> str:
    """Shortest round-trip text for numbers; ``str`` for everything else."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return repr(f)
    return str(v)


def _canonical_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(config: Mapping) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON form."""
    return hashlib.sha256(_canonical_json(config).encode("utf-8")).hexdigest()[:16]


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _meta_lines(meta: Mapping[str, object]) -> list[str]:
    return [f"# {key}: {format_value(meta[key])}" for key in sorted(meta)]


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], meta: Mapping[str, object]) -> Path:
    """``#``-prefixed ``key: value`` metadata lines, a header row, then one line per row.

    ``meta`` must contain ``config_hash``.
    """
    if "config_hash" not in meta:
        raise ValueError("CSV metadata must include the config hash")
    lines = _meta_lines(meta)
    lines.append(",".join(columns))
    width = len(columns)
    for row in rows:
        row = list(row)
        if len(row) != width:
            raise ValueError(f"row has {len(row)} fields, header has {width}")
        lines.append(",".join(format_value(v) for v in row))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path) -> tuple[dict[str, str], tuple[str, ...], np.ndarray]:
    """Inverse of ``write_csv`` for numeric tables: (metadata, column names, float array)."""
    meta: dict[str, str] = {}
    header: tuple[str, ...] | None = None
    data: list[list[float]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(":")
                meta[key.strip()] = value.strip()
            elif header is None:
                header = tuple(line.split(","))
            else:
                data.append([float(v) for v in line.split(",")])
    if header is None:
        raise ValueError(f"{path}: no header row")
    arr = np.array(data, dtype=np.float64).reshape(len(data), len(header))
    return meta, header, arr


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else format_value(f)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def write_json(path, report: Mapping, meta: Mapping[str, object]) -> Path:
    """Report under ``"result"`` and metadata (with the config hash) under ``"meta"``."""
    if "config_hash" not in meta:
        raise ValueError("JSON metadata must include the config hash")
    text = json.dumps({"meta": _jsonable(meta), "result": _jsonable(report)}, sort_keys=True, indent=2,
                      allow_nan=False)
    return atomic_write_text(path, text + "\n")


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

Series = tuple[str, np.ndarray, np.ndarray]  # (label, x, y)

_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")
_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 40, 50


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def svg_line_plot(series: Sequence[Series], title: str = "", xlabel: str = "", ylabel: str = "",
                  logx: bool = False, logy: bool = False, meta: Mapping[str, object] | None = None) -> str:
    """Static line plot as a standalone SVG document (no scripts, fonts or external references).

    Log axes plot ``log10`` of the data; non-positive or non-finite points
    are dropped.  ``meta`` is embedded as an XML comment.
    """
    prepared = []
    for label, x, y in series:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        ok = np.isfinite(x) & np.isfinite(y)
        if logx:
            ok &= x > 0
        if logy:
            ok &= y > 0
        x, y = x[ok], y[ok]
        if logx:
            x = np.log10(x)
        if logy:
            y = np.log10(y)
        prepared.append((label, x, y))
    xs = np.concatenate([p[1] for p in prepared]) if prepared else np.zeros(0)
    ys = np.concatenate([p[2] for p in prepared]) if prepared else np.zeros(0)
    if xs.size == 0:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    else:
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(v):
        return _ML + (v - x0) / (x1 - x0) * pw

    def py(v):
        return _MT + ph - (v - y0) / (y1 - y0) * ph

    def fmt(v):
        return f"{v:.2f}"

    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">']
    if meta:
        body = "; ".join(f"{k}={format_value(meta[k])}" for k in sorted(meta)).replace("--", "- -")
        out.append(f"<!-- {body} -->")
    out.append(f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>')
    out.append(f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for v in _ticks(x0, x1):
        X = px(v)
        label = f"1e{v:.3g}" if logx else f"{v:.4g}"
        out.append(f'<line x1="{fmt(X)}" y1="{_MT + ph}" x2="{fmt(X)}" y2="{_MT + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{fmt(X)}" y="{_MT + ph + 18}" font-size="11" text-anchor="middle">{html.escape(label)}</text>')
    for v in _ticks(y0, y1):
        Y = py(v)
        label = f"1e{v:.3g}" if logy else f"{v:.4g}"
        out.append(f'<line x1="{_ML - 5}" y1="{fmt(Y)}" x2="{_ML}" y2="{fmt(Y)}" stroke="black"/>')
        out.append(f'<text x="{_ML - 8}" y="{fmt(Y + 4)}" font-size="11" text-anchor="end">{html.escape(label)}</text>')
    for i, (label, x, y) in enumerate(prepared):
        colour = _COLOURS[i % len(_COLOURS)]
        if x.size:
            pts = " ".join(f"{fmt(px(a))},{fmt(py(b))}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        ly = _MT + 14 + 16 * i
        out.append(f'<line x1="{_ML + pw - 150}" y1="{ly}" x2="{_ML + pw - 130}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{_ML + pw - 125}" y="{ly + 4}" font-size="11">{html.escape(label)}</text>')
    out.append(f'<text x="{_W / 2}" y="22" font-size="14" text-anchor="middle">{html.escape(title)}</text>')
    out.append(f'<text x="{_ML + pw / 2}" y="{_H - 10}" font-size="12" text-anchor="middle">{html.escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{_MT + ph / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {_MT + ph / 2})">{html.escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
