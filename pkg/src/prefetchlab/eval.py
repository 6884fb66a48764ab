"""Precision/recall scoring of prediction sets plus report plumbing.

A PredictionSet records, for one miss transition, the delta set a model
would prefetch and the delta that actually happened. Precision@k asks how
often the true delta was in the set (an empty set counts as a miss, and a
true delta outside a model's output vocabulary can never match). Recall@k
compares the union of everything predicted against the union of deltas
that occurred.
"""

from __future__ import annotations

import hashlib
import json
import math
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError


class PredictionSet(NamedTuple):
    timestep: int
    predicted: tuple[int, ...]
    true_delta: int


def precision_at_k(sets: Sequence[PredictionSet], k: int = 10) -> float:
    if not sets:
        raise DataError("no prediction sets to score")
    hits = sum(1 for s in sets if s.true_delta in s.predicted[:k])
    return hits / len(sets)


def recall_at_k(sets: Sequence[PredictionSet], k: int = 10) -> float:
    if not sets:
        raise DataError("no prediction sets to score")
    predicted: set[int] = set()
    true: set[int] = set()
    for s in sets:
        predicted.update(s.predicted[:k])
        true.add(s.true_delta)
    return len(predicted & true) / len(true)


def metrics_summary(sets: Sequence[PredictionSet], k: int = 10) -> dict:
    return {
        "precision_at_k": precision_at_k(sets, k),
        "recall_at_k": recall_at_k(sets, k),
        "k": k,
        "n_events": len(sets),
    }


def geometric_mean(values, lo: float = 1e-4, hi: float = 1.0) -> float:
    """Geometric mean with values clamped into [lo, hi] first."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise DataError("no values to average")
    return float(np.exp(np.mean(np.log(np.clip(arr, lo, hi)))))


def split_index(n: int, fraction: float = 0.7) -> int:
    """Temporal split point: floor(fraction * n), exact in rational arithmetic."""
    if n < 10:
        raise DataError(f"stream too short to split: {n} < 10")
    frac = Fraction(str(fraction))
    if not 0 < frac < 1:
        raise DataError(f"split fraction must be in (0, 1), got {fraction}")
    return (n * frac.numerator) // frac.denominator


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def sanitize(obj):
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(obj, dict):
        return {str(key): sanitize(v) for key, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [sanitize(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_report(path, payload: dict) -> None:
    """Deterministic report file: sorted keys, fixed formatting, one \\n."""
    text = json.dumps(sanitize(payload), sort_keys=True, indent=2)
    with open(path, "w", newline="\n") as f:
        f.write(text)
        f.write("\n")


def read_report(path) -> dict:
    with open(path) as f:
        return json.load(f)
