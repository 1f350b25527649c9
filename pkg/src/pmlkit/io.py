"""File helpers shared by the CLI: atomic writes and parameter parsing."""

from __future__ import annotations

import json
import math
import os
import re
import tempfile
from pathlib import Path

from pmlkit.errors import InputError

_LOG_LITERAL = re.compile(r"^log\(?\s*([0-9.eE+-]+)\s*\)?$")


def parse_eps(text: str) -> float:
    """Parse a leakage level in nats; ``log5`` or ``log(5)`` means ``log(5)``."""
    s = str(text).strip()
    match = _LOG_LITERAL.match(s)
    try:
        value = math.log(float(match.group(1))) if match else float(s)
    except ValueError as exc:
        raise InputError(f"cannot parse {text!r} as nats or logK") from exc
    if not math.isfinite(value) or value < 0:
        raise InputError(f"leakage level must be finite and non-negative, got {text!r}")
    return value


def parse_count(text: str) -> int:
    """Parse a sample count, allowing scientific notation such as ``2e4``."""
    try:
        value = float(text)
    except ValueError as exc:
        raise InputError(f"cannot parse {text!r} as a count") from exc
    if value < 1 or value != int(value):
        raise InputError(f"count must be a positive integer, got {text!r}")
    return int(value)


def parse_grid(text: str) -> list[float]:
    """``start:stop:num`` (inclusive, evenly spaced) or a comma-separated list of levels."""
    s = text.strip()
    if s.count(":") == 2:
        start, stop, num = s.split(":")
        a, b, n = parse_eps(start), parse_eps(stop), parse_count(num)
        if n == 1:
            return [a]
        return [a + (b - a) * i / (n - 1) for i in range(n)]
    return [parse_eps(part) for part in s.split(",") if part.strip()]


def write_text_atomic(path, text: str) -> Path:
    """Write ``text`` to ``path`` via a temporary file in the same directory and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json_atomic(path, data) -> Path:
    return write_text_atomic(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc
