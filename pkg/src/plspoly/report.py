"""Deterministic JSON and CSV serialization for CLI reports.

Floats are written with 17 significant digits so that a report reloads to
the exact binary values and reruns diff cleanly. Non-finite floats become
JSON ``null`` and empty CSV cells.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, is_dataclass
from typing import Any, Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1


def _float(x: float) -> str:
    return format(x, ".17g")


def to_plain(obj: Any) -> Any:
    """Convert numpy scalars/arrays and dataclasses to builtin containers."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON text with ``.17g`` floats and insertion-ordered keys."""
    out: list[str] = []
    _emit(to_plain(obj), out, 0, indent)
    return "".join(out) + "\n"


def _emit(obj: Any, out: list, level: int, indent: int) -> None:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(_float(obj) if math.isfinite(obj) else "null")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (k, v) in enumerate(obj.items()):
            out.append(f"{pad}{json.dumps(k)}: ")
            _emit(v, out, level + 1, indent)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
            return
        if all(isinstance(v, (int, float, bool)) or v is None for v in obj):
            parts: list[str] = []
            for v in obj:
                buf: list[str] = []
                _emit(v, buf, 0, indent)
                parts.append("".join(buf))
            out.append("[" + ", ".join(parts) + "]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(pad)
            _emit(v, out, level + 1, indent)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def cell(v: Any) -> str:
    v = to_plain(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _float(v) if math.isfinite(v) else ""
    return str(v)


def csv_table(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([cell(v) for v in row])
    return buf.getvalue()


def csv_sections(sections: Sequence[tuple[str, Sequence[str], Iterable[Sequence[Any]]]]) -> str:
    """Several tables in one file, each introduced by a ``# section: name`` line."""
    parts = []
    for name, header, rows in sections:
        parts.append(f"# section: {name}\n" + csv_table(header, rows))
    return "\n".join(parts)
