"""Machine-readable verdicts and the JSON writer shared by every check."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

MAX_WITNESSES = 10


@dataclass
class Certificate:
    """Outcome of one numerical check.

    ``worst_margin`` is the smallest slack seen over all applicable samples
    (negative means violated). ``verdict`` is true iff that slack stays above
    ``-tolerance``; a check whose premise never applied is vacuously true.
    """

    check: str
    verdict: bool
    samples: int = 0
    worst_margin: float = math.inf
    tolerance: float = 0.0
    parameters: dict = field(default_factory=dict)
    witnesses: list = field(default_factory=list)
    details: dict = field(default_factory=dict)
    witness_files: list = field(default_factory=list)
    # raw failing states, written to disk by callers; not part of the JSON
    witness_states: list = field(default_factory=list, repr=False)

    @property
    def vacuous(self) -> bool:
        return self.samples == 0

    @property
    def status(self) -> str:
        if self.vacuous:
            return "vacuous"
        return "pass" if self.verdict else "fail"

    def add_witness(self, item, state=None) -> None:
        if len(self.witnesses) < MAX_WITNESSES:
            self.witnesses.append(item)
            if state is not None:
                self.witness_states.append(state)

    def to_json(self) -> dict:
        out = {
            "check": self.check,
            "verdict": "vacuous" if self.vacuous and self.verdict else bool(self.verdict),
            "status": self.status,
            "samples": int(self.samples),
            "worst_margin": self.worst_margin,
            "tolerance": self.tolerance,
            "parameters": self.parameters,
            "witness_files": list(self.witness_files),
        }
        out.update(self.details)
        return out


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _to_plain(obj: Any) -> Any:
    if isinstance(obj, Certificate):
        return _to_plain(obj.to_json())
    if hasattr(obj, "to_json") and not isinstance(obj, type):
        return _to_plain(obj.to_json())
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON text with every float written at 17 significant digits.

    Keys keep insertion order so identical inputs give byte-identical output.
    """
    plain = _to_plain(obj)

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if o is None:
            return "null"
        if o is True:
            return "true"
        if o is False:
            return "false"
        if isinstance(o, int):
            return str(o)
        if isinstance(o, float):
            return _fmt_float(o)
        if isinstance(o, str):
            return json.dumps(o, ensure_ascii=False)
        if isinstance(o, list):
            if not o:
                return "[]"
            if all(not isinstance(v, (list, dict)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [pad + json.dumps(k, ensure_ascii=False) + ": " + enc(v, level + 1)
                     for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(plain, 0) + "\n"


def write_json(path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_field_csv(path, state) -> Path:
    """One field as CSV ``species,i,x,value`` (1-based indices)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["species,i,x,value"]
    for k, row in enumerate(state.values):
        for i, (x, v) in enumerate(zip(state.grid.x, row)):
            lines.append(f"{k + 1},{i + 1},{_fmt_float(float(x))},{_fmt_float(float(v))}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_certificate(root, cert: Certificate) -> Path:
    """Write ``certificates/<check>.json`` under ``root`` plus its witness files.

    Failing states go to CSV. A failed check without states still gets a
    JSON witness so every failure names at least one file.
    """
    root = Path(root)
    files = []
    for k, st in enumerate(cert.witness_states):
        files.append(write_field_csv(root / "witnesses" / f"{cert.check}_{k}.csv", st))
    if not cert.verdict and not files:
        payload = {"check": cert.check, "worst_margin": cert.worst_margin,
                   "witnesses": cert.witnesses, "details": cert.details}
        files.append(write_json(root / "witnesses" / f"{cert.check}.json", payload))
    cert.witness_files = [p.relative_to(root).as_posix() for p in files]
    return write_json(root / "certificates" / f"{cert.check}.json", cert)
