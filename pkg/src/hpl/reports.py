"""Deterministic report and manifest emission.

Reports are JSON (stable key order, floats at 17 significant digits,
non-finite values tagged as strings) or CSV with the same float format.
Every run that writes files gets a sibling manifest recording the
command, parameters, master seed, artifact version, timestamps, and a
sha256 digest of each output; identical command + seed must reproduce
byte-identical outputs (the manifest's timestamps excepted).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from datetime import datetime, timezone
from pathlib import Path

__all__ = ["dumps17", "write_json", "write_csv", "write_manifest", "sha256_file"]


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def _emit(obj, out: list[str]) -> None:
    if obj is None or isinstance(obj, bool):
        out.append(json.dumps(obj))
    elif isinstance(obj, float):
        out.append(_fmt_float(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(", ")
            out.append(json.dumps(str(k)))
            out.append(": ")
            _emit(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(", ")
            _emit(v, out)
        out.append("]")
    elif hasattr(obj, "item"):  # numpy scalars
        _emit(obj.item(), out)
    elif hasattr(obj, "tolist"):  # numpy arrays
        _emit(obj.tolist(), out)
    else:
        raise TypeError(f"cannot serialize {type(obj)!r}")


def dumps17(obj) -> str:
    """JSON text with floats at 17 significant digits, insertion-ordered keys."""
    out: list[str] = []
    _emit(obj, out)
    return "".join(out)


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps17(obj) + "\n")
    return path


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def write_csv(path: str | Path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    if rows:
        writer = csv.writer(buf, lineterminator="\n")
        header = list(rows[0].keys())
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(row.get(k)) for k in header])
    path.write_text(buf.getvalue())
    return path


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_manifest(out_dir: str | Path, command: str, params: dict,
                   seed: int | None, outputs: list[Path],
                   started: datetime, name: str = "manifest") -> Path:
    from . import __version__
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "params": params,
        "seed": seed,
        "artifact_version": __version__,
        "started": started.astimezone(timezone.utc).isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": {p.name: sha256_file(p) for p in outputs},
    }
    return write_json(out_dir / f"{name}.manifest.json", manifest)
