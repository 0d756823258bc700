"""Flat-file outputs: CSV/JSON tables with provenance headers, a run manifest,
and SVG line charts.

Data files carry only deterministic metadata (config hash, seed, version) so
that identical runs produce byte-identical files; the wall-clock timestamp
lives in ``run.json`` alone.
"""
from __future__ import annotations

import csv
import datetime as _dt
import io as _io
import json
import math
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import __version__


class SchemaError(ValueError):
    """A data file lacks a required column or is malformed."""


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _json_value(x):
    if isinstance(x, np.ndarray):
        return [_json_value(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_json_value(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _json_value(v) for k, v in x.items()}
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if not math.isfinite(x) else x
    return x


def provenance(config_hash: str, seed: Optional[int] = None, **extra) -> dict:
    meta = {"config_hash": config_hash, "version": __version__}
    if seed is not None:
        meta["seed"] = int(seed)
    meta.update(extra)
    return meta


def table_text(columns: Mapping[str, Sequence], meta: Mapping) -> str:
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    n_rows = {len(a) for a in arrays}
    if len(n_rows) > 1:
        raise ValueError("columns differ in length")
    buf = _io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in zip(*arrays):
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def write_table(path: Path, columns: Mapping[str, Sequence], meta: Mapping,
                fmt: str = "csv") -> Path:
    """Write a column table as CSV (``#`` metadata, header, rows) or JSON."""
    path = Path(path)
    if fmt == "json":
        path = path.with_suffix(".json")
        doc = {"meta": _json_value(dict(meta)),
               "columns": {k: _json_value(np.asarray(v)) for k, v in columns.items()}}
        path.write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n")
    elif fmt == "csv":
        path = path.with_suffix(".csv")
        path.write_text(table_text(columns, meta))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_json_value(obj), indent=1) + "\n")
    return path


def read_table(path: Path, required: Sequence[str] = ()) -> tuple[dict, dict]:
    """Read a table written by :func:`write_table` (CSV or JSON).

    Returns ``(columns, meta)``; raises :class:`SchemaError` naming the first
    missing required column.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        doc = json.loads(text)
        meta = doc.get("meta", {})
        columns = {k: np.array([np.nan if v is None else v for v in vals], dtype=float)
                   for k, vals in doc.get("columns", {}).items()}
    else:
        meta = {}
        body = []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            elif line.strip():
                body.append(line)
        if not body:
            raise SchemaError(f"{path}: no header row")
        rows = list(csv.reader(body))
        header = [h.strip() for h in rows[0]]
        try:
            data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
        except ValueError as exc:
            raise SchemaError(f"{path}: non-numeric cell ({exc})") from None
        data = data.reshape(len(rows) - 1, len(header))
        columns = {h: data[:, i] for i, h in enumerate(header)}
    for name in required:
        if name not in columns:
            raise SchemaError(f"{path}: missing required column {name!r}")
    return columns, meta


def write_manifest(out_dir: Path, meta: Mapping, files: Sequence[Path]) -> Path:
    doc = dict(meta)
    doc["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    doc["files"] = sorted(Path(f).name for f in files)
    return write_json(Path(out_dir) / "run.json", doc)


def write_svg(path: Path, panels: Sequence[dict], title: str = "") -> Path:
    """Stacked line charts. Each panel: ``{"x", "series": {label: y}, "xlabel", "ylabel"}``."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "dpcollapse"
    fig, axes = plt.subplots(len(panels), 1, figsize=(6, 2.6 * len(panels)), sharex=True,
                             squeeze=False)
    for ax, panel in zip(axes[:, 0], panels):
        for label, y in panel["series"].items():
            ax.plot(panel["x"], y, label=label, lw=1.2)
        ax.set_ylabel(panel.get("ylabel", ""))
        ax.grid(alpha=0.3)
        if len(panel["series"]) > 1:
            ax.legend(fontsize=8)
    axes[-1, 0].set_xlabel(panels[-1].get("xlabel", ""))
    if title:
        axes[0, 0].set_title(title)
    fig.tight_layout()
    path = Path(path).with_suffix(".svg")
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
