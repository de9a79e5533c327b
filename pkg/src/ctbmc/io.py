"""Text serialization for generators, paths, and fit results.

Two grammars, documented exactly in docs/file_formats.md: a JSON document
for generators (self-describing, diagonals recomputed on load) and a
line-oriented record format for observed paths (one jump per line, loadable
in a single pass).  Floats are written with repr, the shortest decimal that
round-trips, so save followed by load reproduces values bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .model import Generator, validate
from .simulate import ObservedPath

__all__ = [
    "GeneratorDocument",
    "load_generator",
    "save_generator",
    "load_path",
    "save_path",
    "fit_result_to_dict",
    "generator_to_dict",
    "generator_from_dict",
]

GENERATOR_FORMAT = "bivariate-generator"
PATH_MAGIC = "bivariate-path"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class GeneratorDocument:
    """A generator plus the optional structural mask and metadata stored with it."""

    generator: Generator
    mask: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)


def generator_to_dict(gen, mask=None, metadata=None):
    doc = {
        "format": GENERATOR_FORMAT,
        "version": FORMAT_VERSION,
        "d": gen.d,
        "r": gen.r,
        "blocks": gen.blocks.tolist(),
    }
    doc["mask"] = None if mask is None else np.asarray(mask, dtype=bool).tolist()
    doc["metadata"] = dict(metadata or {})
    return doc


def generator_from_dict(obj):
    if not isinstance(obj, dict):
        raise ParseError(f"generator document must be an object, got {type(obj).__name__}")
    if obj.get("format") != GENERATOR_FORMAT:
        raise ParseError(f"unknown format tag {obj.get('format')!r}")
    if obj.get("version") != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {obj.get('version')!r}")
    for key in ("d", "r", "blocks"):
        if key not in obj:
            raise ParseError(f"missing required field {key!r}")
    d, r = obj["d"], obj["r"]
    if not (isinstance(d, int) and isinstance(r, int) and d >= 1 and r >= 1):
        raise ParseError(f"dimensions must be positive integers, got d={d!r} r={r!r}")
    try:
        blocks = np.array(obj["blocks"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"blocks are not a numeric array: {exc}") from exc
    if blocks.shape != (d, d, r, r):
        raise ParseError(
            f"blocks have shape {blocks.shape}, expected {(d, d, r, r)}"
        )
    gen = Generator(blocks)
    report = validate(gen)
    report.raise_if_failed()
    mask = obj.get("mask")
    if mask is not None:
        mask = np.array(mask)
        if mask.shape != (d, d, r, r):
            raise ParseError(f"mask has shape {mask.shape}, expected {(d, d, r, r)}")
        mask = mask.astype(bool)
    meta = obj.get("metadata") or {}
    if not isinstance(meta, dict):
        raise ParseError("metadata must be an object")
    return GeneratorDocument(generator=gen, mask=mask, metadata=meta)


def load_generator(text):
    """Parse a generator document; raises ParseError on grammar problems and
    ValidationError when the stored rates break the structural axioms."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    return generator_from_dict(obj)


def save_generator(gen, mask=None, metadata=None):
    return json.dumps(generator_to_dict(gen, mask=mask, metadata=metadata), indent=2) + "\n"


def save_path(path, metadata=None):
    """Serialize an observed path, one jump per line after a short header."""
    lines = [f"{PATH_MAGIC} {FORMAT_VERSION}"]
    lines.append(f"x0 {int(path.x0)}")
    lines.append(f"T {float(path.horizon)!r}")
    lines.append(f"n {path.n_jumps}")
    for key, value in (metadata or {}).items():
        key = str(key)
        if any(ch.isspace() for ch in key):
            raise ValueError(f"metadata key {key!r} contains whitespace")
        lines.append(f"meta {key} {value}")
    lines.append("jumps")
    for t, x in zip(path.times, path.states):
        lines.append(f"{float(t)!r} {int(x)}")
    return "\n".join(lines) + "\n"


def load_path(text):
    """Parse a path file; line numbers in errors are one-based."""
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty path file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != PATH_MAGIC:
        raise ParseError(f"line 1: expected '{PATH_MAGIC} <version>' header")
    if head[1] != str(FORMAT_VERSION):
        raise ParseError(f"line 1: unsupported version {head[1]!r}")

    x0 = horizon = count = None
    metadata = {}
    body_start = None
    for num, line in enumerate(lines[1:], start=2):
        stripped = line.strip()
        if not stripped:
            continue
        fields = stripped.split(None, 2)
        key = fields[0]
        if key == "jumps":
            if len(fields) != 1:
                raise ParseError(f"line {num}: 'jumps' takes no arguments")
            body_start = num
            break
        if key == "x0":
            x0 = _parse_int(fields, num, "x0")
        elif key == "T":
            horizon = _parse_float(fields, num, "T")
        elif key == "n":
            count = _parse_int(fields, num, "n")
        elif key == "meta":
            if len(fields) != 3:
                raise ParseError(f"line {num}: meta needs a key and a value")
            metadata[fields[1]] = fields[2]
        else:
            raise ParseError(f"line {num}: unknown header field {key!r}")
    if body_start is None:
        raise ParseError("missing 'jumps' separator")
    for name, value in (("x0", x0), ("T", horizon), ("n", count)):
        if value is None:
            raise ParseError(f"missing required header field {name!r}")

    times = np.empty(count)
    states = np.empty(count, dtype=np.int64)
    got = 0
    for num, line in enumerate(lines[body_start:], start=body_start + 1):
        stripped = line.strip()
        if not stripped:
            continue
        fields = stripped.split()
        if len(fields) != 2:
            raise ParseError(f"line {num}: expected '<time> <state>', got {len(fields)} fields")
        if got >= count:
            raise ParseError(f"line {num}: more than the declared {count} jumps")
        try:
            times[got] = float(fields[0])
        except ValueError as exc:
            raise ParseError(f"line {num}: bad jump time {fields[0]!r}") from exc
        try:
            states[got] = int(fields[1])
        except ValueError as exc:
            raise ParseError(f"line {num}: bad state {fields[1]!r}") from exc
        got += 1
    if got != count:
        raise ParseError(f"declared {count} jumps but found {got}")

    # Header metadata is advisory and intentionally not part of the object.
    path = ObservedPath(x0=x0, times=times, states=states, horizon=horizon)
    path.validate()
    return path


def _parse_int(fields, num, name):
    if len(fields) != 2:
        raise ParseError(f"line {num}: {name} needs exactly one value")
    try:
        return int(fields[1])
    except ValueError as exc:
        raise ParseError(f"line {num}: bad integer {fields[1]!r} for {name}") from exc


def _parse_float(fields, num, name):
    if len(fields) != 2:
        raise ParseError(f"line {num}: {name} needs exactly one value")
    try:
        value = float(fields[1])
    except ValueError as exc:
        raise ParseError(f"line {num}: bad number {fields[1]!r} for {name}") from exc
    if not np.isfinite(value):
        raise ParseError(f"line {num}: {name} must be finite")
    return value


def fit_result_to_dict(result):
    """JSON-ready summary of an EM fit."""
    return {
        "format": "bivariate-fit-result",
        "version": FORMAT_VERSION,
        "estimate": generator_to_dict(result.estimate),
        "loglik_trace": [float(v) for v in result.loglik_trace],
        "iterations": int(result.iterations),
        "termination": result.termination,
        "degenerate_states": [list(s) for s in result.degenerate_states],
    }
