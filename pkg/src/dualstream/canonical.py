"""Canonical JSON: sorted keys, floats at 17 significant digits."""

from __future__ import annotations

import json
import math
from typing import Any

import numpy as np


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite float {x!r} has no canonical JSON form")
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def dumps(obj: Any, indent: int | None = None) -> str:
    return _encode(obj, indent, 0)


def _encode(obj: Any, indent: int | None, level: int) -> str:
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if obj is None or isinstance(obj, (bool, str)):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    nl = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end = "" if indent is None else "\n" + " " * (indent * level)
    sep = "," if indent is None else ","
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{nl}{json.dumps(str(k))}:{'' if indent is None else ' '}{_encode(obj[k], indent, level + 1)}"
                 for k in sorted(obj, key=str)]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{nl}{_encode(v, indent, level + 1)}" for v in obj]
        return "[" + sep.join(items) + end + "]"
    raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def loads(text: str) -> Any:
    return json.loads(text)
