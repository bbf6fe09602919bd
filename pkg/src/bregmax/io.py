"""JSON file formats for instances, pms and directions, and report serialization.

Instance file::

    {
      "z": ["00", "01", "10", "11"],
      "f": [[0, 0, 1, 1], [0, 1, 0, 1]],
      "beta": {"kind": "classical", "nu": [1, 1, 1, 1]},
      "tolerances": {"root_abs": 1e-12}
    }

``f`` may be an empty list (the point family).  ``beta`` is
``{"kind": "classical", "nu": [...]}`` or
``{"kind": "entropy_quadratic", "alpha": [...]}``; ``nu`` may be omitted and
defaults to all ones.  Unknown keys are rejected everywhere.

A pm file is ``{"pm": [...]}`` (or a bare list, or a mapping from labels to
weights); a direction file is ``{"u": [...]}`` (same alternatives).
"""

from __future__ import annotations

import json
import math
from dataclasses import fields
from pathlib import Path
from typing import Any

import numpy as np

from .beta import CLASSICAL, ENTROPY_QUADRATIC, BetaSystem, make_classical, make_entropy_quadratic
from .errors import BregmaxError, ParseError, ValidationError
from .family import Instance, Pm
from .numerics import DEFAULT_TOL, Tolerances

SCHEMA = "bregmax/1"
SIGNIFICANT_DIGITS = 12

_TOP_KEYS = {"z", "f", "beta", "tolerances"}
_BETA_KEYS = {CLASSICAL: {"kind", "nu"}, ENTROPY_QUADRATIC: {"kind", "alpha"}}


# ---------------------------------------------------------------------------
# Parsing helpers
# ---------------------------------------------------------------------------

class _Source:
    """Raw document text, used to attach line numbers to field errors."""

    def __init__(self, text: str, name: str):
        self.text = text
        self.name = name

    def line_of(self, key: str) -> int | None:
        pos = self.text.find(f'"{key}"')
        return None if pos < 0 else self.text.count("\n", 0, pos) + 1

    def error(self, field: str, message: str, key: str | None = None) -> ParseError:
        line = self.line_of(key if key is not None else field.split("[")[0].split(".")[-1])
        where = f"{self.name}:{line}" if line else self.name
        return ParseError(f"{where}: field {field!r}: {message}")


def _load_json(text: str, name: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{name}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _read(path) -> tuple[str, str]:
    p = Path(path)
    try:
        return p.read_text(encoding="utf-8"), str(p)
    except OSError as exc:
        raise ParseError(f"{p}: cannot read file ({exc.strerror})") from None


def _number(src: _Source, field: str, v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise src.error(field, f"expected a number, got {type(v).__name__}")
    x = float(v)
    if not math.isfinite(x):
        raise src.error(field, "number must be finite")
    return x


def _vector(src: _Source, field: str, v, length: int | None = None) -> np.ndarray:
    if not isinstance(v, list):
        raise src.error(field, f"expected a list of numbers, got {type(v).__name__}")
    if length is not None and len(v) != length:
        raise src.error(field, f"expected {length} entries, got {len(v)}")
    return np.array([_number(src, f"{field}[{i}]", x) for i, x in enumerate(v)], dtype=float)


def _check_keys(src: _Source, where: str, obj: dict, allowed: set[str], required: set[str]) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise src.error(where or unknown[0], f"unknown key(s) {unknown}", key=unknown[0])
    missing = sorted(required - set(obj))
    if missing:
        raise src.error(where or missing[0], f"missing key(s) {missing}", key=where or None)


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------

def parse_instance(text: str, name: str = "<instance>") -> Instance:
    src = _Source(text, name)
    doc = _load_json(text, name)
    if not isinstance(doc, dict):
        raise ParseError(f"{name}: top level must be an object")
    _check_keys(src, "", doc, _TOP_KEYS, {"z", "f", "beta"})

    z = doc["z"]
    if not isinstance(z, list) or not z:
        raise src.error("z", "expected a nonempty list of labels")
    labels = []
    for i, lab in enumerate(z):
        if isinstance(lab, bool) or not isinstance(lab, (str, int)):
            raise src.error(f"z[{i}]", "labels must be strings or integers")
        labels.append(str(lab))
    n = len(labels)

    f = doc["f"]
    if not isinstance(f, list):
        raise src.error("f", "expected a list of rows")
    rows = [_vector(src, f"f[{j}]", row, n) for j, row in enumerate(f)]
    fmat = np.array(rows, dtype=float).reshape(len(rows), n)

    beta = _parse_beta(src, doc["beta"], n)
    tol = _parse_tolerances(src, doc.get("tolerances"))
    if len(set(labels)) != n:
        raise ValidationError(f"{name}: z labels must be distinct")
    try:
        return Instance(tuple(labels), fmat, beta, tol)
    except ValueError as exc:
        raise ValidationError(f"{name}: {exc}") from None


def _parse_beta(src: _Source, b, n: int) -> BetaSystem:
    if not isinstance(b, dict):
        raise src.error("beta", "expected an object")
    kind = b.get("kind")
    if kind not in _BETA_KEYS:
        raise src.error("beta.kind", f"expected one of {sorted(_BETA_KEYS)}, got {kind!r}", key="kind")
    allowed = _BETA_KEYS[kind]
    _check_keys(src, "beta", b, allowed, {"kind"} if kind == CLASSICAL else allowed)
    try:
        if kind == CLASSICAL:
            nu = _vector(src, "beta.nu", b["nu"], n) if "nu" in b else np.ones(n)
            return make_classical(nu)
        return make_entropy_quadratic(_vector(src, "beta.alpha", b["alpha"], n))
    except (BregmaxError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ValidationError(f"{src.name}: beta: {exc}") from None


def _parse_tolerances(src: _Source, t) -> Tolerances:
    if t is None:
        return DEFAULT_TOL
    if not isinstance(t, dict):
        raise src.error("tolerances", "expected an object")
    names = {f.name for f in fields(Tolerances)}
    _check_keys(src, "tolerances", t, names, set())
    values = {k: _number(src, f"tolerances.{k}", v) for k, v in t.items()}
    try:
        return DEFAULT_TOL.with_overrides(**values)
    except ValueError as exc:
        raise ValidationError(f"{src.name}: tolerances: {exc}") from None


def load_instance(path) -> Instance:
    """Read and validate an instance file."""
    text, name = _read(path)
    return parse_instance(text, name)


def instance_to_dict(inst: Instance) -> dict:
    beta = inst.beta
    if beta.kind == CLASSICAL:
        b = {"kind": CLASSICAL, "nu": [float(x) for x in beta.params]}
    elif beta.kind == ENTROPY_QUADRATIC:
        b = {"kind": ENTROPY_QUADRATIC, "alpha": [float(x) for x in beta.params]}
    else:
        raise ValidationError("only single-kind builtin generator systems can be written to a file")
    doc = {"z": list(inst.z_labels), "f": [[float(x) for x in row] for row in inst.f], "beta": b}
    if inst.tol != DEFAULT_TOL:
        doc["tolerances"] = {f.name: getattr(inst.tol, f.name) for f in fields(Tolerances)}
    return doc


def dump_instance(inst: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Pms and directions
# ---------------------------------------------------------------------------

def _parse_vector_file(text: str, name: str, key: str, labels: tuple[str, ...] | None) -> np.ndarray:
    src = _Source(text, name)
    doc = _load_json(text, name)
    if isinstance(doc, dict) and key in doc:
        _check_keys(src, "", doc, {key}, {key})
        doc = doc[key]
    if isinstance(doc, dict):
        if labels is None:
            raise src.error(key, "a label mapping needs an instance to resolve labels")
        unknown = sorted(set(doc) - set(labels))
        if unknown:
            raise src.error(key, f"unknown label(s) {unknown}", key=unknown[0])
        return np.array([_number(src, f"{key}.{lab}", doc.get(lab, 0.0)) for lab in labels])
    n = None if labels is None else len(labels)
    return _vector(src, key, doc, n)


def parse_pm(text: str, name: str = "<pm>", labels: tuple[str, ...] | None = None) -> Pm:
    w = _parse_vector_file(text, name, "pm", labels)
    if np.any(w < 0):
        raise ValidationError(f"{name}: pm weights must be nonnegative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValidationError(f"{name}: pm weights sum to {w.sum()!r}, not 1")
    return Pm.normalized(w)


def load_pm(path, labels: tuple[str, ...] | None = None) -> Pm:
    text, name = _read(path)
    return parse_pm(text, name, labels)


def parse_direction(text: str, name: str = "<direction>", labels: tuple[str, ...] | None = None) -> np.ndarray:
    return _parse_vector_file(text, name, "u", labels)


def load_direction(path, labels: tuple[str, ...] | None = None) -> np.ndarray:
    text, name = _read(path)
    return parse_direction(text, name, labels)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def jsonable(obj):
    """Convert a report to JSON-ready values: floats to 12 significant digits, non-finite as strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, Pm):
        return jsonable(obj.weights)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        x = float(f"{x:.{SIGNIFICANT_DIGITS}g}")
        return 0.0 if x == 0 else x
    return obj


def dumps_report(report: dict) -> str:
    """Deterministic JSON text of a report (schema tag first, keys in insertion order)."""
    body = {"schema": SCHEMA}
    body.update(report)
    return json.dumps(jsonable(body), indent=2, allow_nan=False) + "\n"
