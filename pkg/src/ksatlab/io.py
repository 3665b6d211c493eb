"""DIMACS formulas with JSON sidecars, and binary population snapshots."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .model import Formula

_POP_MAGIC = b"KSATPOP1"


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def format_dimacs(f: Formula, comment: str | None = None) -> str:
    lines = []
    if comment:
        lines.extend(f"c {line}" for line in comment.splitlines())
    lines.append(f"p cnf {f.n} {f.m}")
    for vs, ss in zip(f.var, f.sign):
        lits = " ".join(str(int(s) * (int(v) + 1)) for v, s in zip(vs, ss))
        lines.append(f"{lits} 0")
    return "\n".join(lines) + "\n"


def write_dimacs(f: Formula, path, meta: dict | None = None) -> None:
    """Write ``path`` and, when ``meta`` is given, ``path.json`` next to it."""
    Path(path).write_text(format_dimacs(f))
    if meta is not None:
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def parse_dimacs(text: str) -> Formula:
    n = None
    declared_m = None
    clauses = []
    current: list[int] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("c") or line.startswith("%"):
            continue
        if line.startswith("p"):
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise InvalidInput(f"bad DIMACS header: {line!r}")
            n, declared_m = int(parts[2]), int(parts[3])
            continue
        for tok in line.split():
            lit = int(tok)
            if lit == 0:
                clauses.append(current)
                current = []
            else:
                current.append(lit)
    if current:
        clauses.append(current)
    if n is None:
        raise InvalidInput("DIMACS header 'p cnf n m' missing")
    if declared_m is not None and declared_m != len(clauses):
        raise InvalidInput(f"header declares {declared_m} clauses, found {len(clauses)}")
    widths = {len(c) for c in clauses}
    if len(widths) > 1:
        raise InvalidInput("mixed clause lengths are not supported")
    return Formula.from_literals(n, clauses)


def read_dimacs(path):
    """Return ``(formula, meta)``; meta is ``{}`` without a sidecar."""
    f = parse_dimacs(Path(path).read_text())
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return f, meta


def write_population(path, samples, header: dict) -> None:
    """Magic, u64 header length, JSON header, then little-endian f64 samples."""
    samples = np.ascontiguousarray(samples, dtype="<f8")
    head = dict(header)
    head["N"] = int(samples.size)
    blob = json.dumps(head, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_POP_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(samples.tobytes())


def read_population(path):
    """Return ``(samples, header)``."""
    data = Path(path).read_bytes()
    if not data.startswith(_POP_MAGIC):
        raise InvalidInput(f"{path} is not a population snapshot")
    off = len(_POP_MAGIC)
    (hlen,) = struct.unpack("<Q", data[off:off + 8])
    off += 8
    header = json.loads(data[off:off + hlen])
    samples = np.frombuffer(data[off + hlen:], dtype="<f8").astype(np.float64)
    if samples.size != header.get("N", samples.size):
        raise InvalidInput("population size disagrees with header")
    return samples, header
