"""JSON writing with all floats rendered at 17 significant digits, so every
numeric artifact round-trips bit-exactly."""

from __future__ import annotations

import json
import math
from pathlib import Path


def _render(obj) -> str:
    if isinstance(obj, bool) or obj is None or isinstance(obj, (str, int)):
        return json.dumps(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"cannot serialize non-finite float {obj}")
        text = format(obj, ".17g")
        # keep it a JSON number even for integral values
        return text if any(c in text for c in ".eE") else text + ".0"
    if isinstance(obj, dict):
        items = ", ".join(f"{json.dumps(str(k))}: {_render(v)}" for k, v in obj.items())
        return "{" + items + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_render(v) for v in obj) + "]"
    # numpy scalars and arrays
    if hasattr(obj, "item") and getattr(obj, "shape", None) == ():
        return _render(obj.item())
    if hasattr(obj, "tolist"):
        return _render(obj.tolist())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps17(obj) -> str:
    return _render(obj)


def dump17(obj, path) -> None:
    Path(path).write_text(_render(obj) + "\n")
