"""On-disk artifacts of a run: history, convergence curve, summary, checkpoint."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import pickle
import struct
from pathlib import Path
from typing import Any, Iterable

from .errors import CorruptCheckpoint
from .optimizer import EvaluationDatabase, EvaluationRecord
from .problem import Fidelity, rank_key

HISTORY = "history.jsonl"
CONVERGENCE = "convergence.csv"
SUMMARY = "summary.json"
CHECKPOINT = "checkpoint.bin"

CSV_COLUMNS = ("eval_index", "fidelity", "best_fom_so_far", "best_objective_so_far", "feasible_yet", "L",
               "iteration")

MAGIC = b"BNNBOCKP"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIQ32s")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


# -- history ------------------------------------------------------------------

def append_history(path: Path, records: Iterable[EvaluationRecord]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")


def read_history(path: Path) -> list[EvaluationRecord]:
    with open(path, encoding="utf-8") as fh:
        return [EvaluationRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def truncate_history(path: Path, n_records: int) -> None:
    """Drop lines written after the last checkpoint (they will be regenerated)."""
    if not path.exists():
        path.touch()
        return
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if len(lines) < n_records:
        raise CorruptCheckpoint(f"{path} has {len(lines)} records, checkpoint expects {n_records}")
    if len(lines) > n_records:
        _atomic_write(path, "".join(lines[:n_records]).encode("utf-8"))


# -- convergence curve --------------------------------------------------------

def convergence_rows(db: EvaluationDatabase) -> list[dict[str, Any]]:
    """One row per record; running incumbents are kept per fidelity."""
    best: dict[Fidelity, EvaluationRecord] = {}
    count: dict[Fidelity, int] = {}
    feasible: dict[Fidelity, bool] = {}
    rows = []
    for rec in db:
        f = rec.fidelity
        count[f] = count.get(f, 0) + 1
        if f not in best or rank_key(rec) < rank_key(best[f]):
            best[f] = rec
        feasible[f] = feasible.get(f, False) or rec.feasible
        rows.append({
            "eval_index": count[f],
            "fidelity": int(f),
            "best_fom_so_far": best[f].fom,
            "best_objective_so_far": best[f].f[0],
            "feasible_yet": feasible[f],
            "L": rec.tr_length,
            "iteration": rec.iteration,
        })
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_convergence(path: Path, db: EvaluationDatabase) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in convergence_rows(db):
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    _atomic_write(path, buf.getvalue().encode("utf-8"))


def read_convergence(path: Path) -> list[dict[str, Any]]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({
                "eval_index": int(row["eval_index"]),
                "fidelity": int(row["fidelity"]),
                "best_fom_so_far": float(row["best_fom_so_far"]),
                "best_objective_so_far": float(row["best_objective_so_far"]),
                "feasible_yet": row["feasible_yet"] == "true",
                "L": float(row["L"]) if row["L"] else None,
                "iteration": int(row["iteration"]),
            })
    return out


# -- summary ------------------------------------------------------------------

def build_summary(algorithm: str, seed: int, db: EvaluationDatabase, diagnostics: dict[str, Any],
                  total_time: float) -> dict[str, Any]:
    """Per-seed statistics; counts refer to high-fidelity evaluations."""
    best = db.result_best(Fidelity.HIGH)
    first = next((k for k, r in enumerate(db.of(Fidelity.HIGH), start=1) if r.feasible), None)
    n_high = db.count(Fidelity.HIGH)
    n_init = n_high - diagnostics.get("n_high_new", n_high)
    return {
        "algorithm": algorithm,
        "seed": seed,
        "success": first is not None,
        "evals_to_feasible": first,
        "evals_to_feasible_after_init": None if first is None else max(first - n_init, 0),
        "best_objective": best.f[0] if best else None,
        "best_fom": best.fom if best else None,
        "best_values": list(best.values) if best else None,
        "n_high": n_high,
        "n_low": db.count(Fidelity.LOW),
        "n_high_new": diagnostics.get("n_high_new"),
        "iterations": diagnostics.get("iterations"),
        "restarts": diagnostics.get("restarts", 0),
        "stop_reason": diagnostics.get("stop_reason", ""),
        "modeling_time": diagnostics.get("modeling_time", 0.0),
        "evaluation_time": diagnostics.get("evaluation_time", 0.0),
        "total_time": total_time,
    }


def write_summary(path: Path, summary: dict[str, Any]) -> None:
    text = json.dumps(summary, indent=2, allow_nan=False, default=_json_default)
    _atomic_write(path, (text + "\n").encode("utf-8"))


def _json_default(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    raise TypeError(f"cannot serialize {type(v).__name__}")


# -- checkpoint ---------------------------------------------------------------

def save_checkpoint(path: Path, payload: dict[str, Any]) -> None:
    body = pickle.dumps(payload, protocol=pickle.HIGHEST_PROTOCOL)
    header = _HEADER.pack(MAGIC, CHECKPOINT_VERSION, len(body), hashlib.sha256(body).digest())
    _atomic_write(Path(path), header + body)


def load_checkpoint(path: Path) -> dict[str, Any]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise CorruptCheckpoint(f"{path}: truncated header")
    magic, version, length, digest = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported checkpoint version {version}")
    body = data[_HEADER.size:]
    if len(body) != length:
        raise CorruptCheckpoint(f"{path}: expected {length} payload bytes, found {len(body)}")
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint(f"{path}: checksum mismatch")
    try:
        return pickle.loads(body)
    except Exception as exc:  # pickle raises a zoo of types on bad input
        raise CorruptCheckpoint(f"{path}: cannot decode payload: {exc}") from exc
