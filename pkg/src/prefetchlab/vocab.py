"""Delta streams, delta/PC vocabularies and corpus coverage statistics.

Deltas are two's-complement differences of successive cache-line addresses
in the miss stream: record N pairs the PC of miss N with the delta leading
to miss N+1. Line granularity (not bytes) is used throughout, since a
prefetch only has to land in the right line.

Class IDs are dense and 0-based. Ordering is by descending frequency with
ties broken by ascending delta value, which makes vocabularies a pure
function of the corpus. The input side keeps every delta above a count
threshold; the output side is the top `max_output` slice of the input
side, so output classes are always a subset of input classes. Each side
has one extra reserved ID (`oov_input` / `oov_output`) for everything else.
"""

from __future__ import annotations

import csv
import struct
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, TraceFormatError
from .trace import MissRecord, signed_delta


class DeltaRecord:
    """(timestep, pc of miss N, delta from miss N to miss N+1)."""

    __slots__ = ("timestep", "pc", "delta")

    def __init__(self, timestep: int, pc: int, delta: int):
        self.timestep = timestep
        self.pc = pc
        self.delta = delta

    def __eq__(self, other):
        return (
            isinstance(other, DeltaRecord)
            and (self.timestep, self.pc, self.delta)
            == (other.timestep, other.pc, other.delta)
        )

    def __repr__(self):
        return f"DeltaRecord(timestep={self.timestep}, pc={self.pc:#x}, delta={self.delta})"


def compute_deltas(misses: Sequence[MissRecord]) -> list[DeltaRecord]:
    """Line-granular delta stream; output length is len(misses) - 1."""
    if len(misses) < 2:
        raise DataError("need at least 2 misses to form a delta stream")
    return [
        DeltaRecord(m.timestep, m.pc, signed_delta(m.line_addr, nxt.line_addr))
        for m, nxt in zip(misses, misses[1:])
    ]


def delta_values(deltas: Iterable) -> list[int]:
    """Accept DeltaRecords or plain ints and return the delta values."""
    return [d.delta if isinstance(d, DeltaRecord) else int(d) for d in deltas]


def _ranked(counts: Counter) -> list[tuple[int, int]]:
    """(delta, count) pairs sorted by count desc, then delta asc."""
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


class DeltaVocab:
    """Bidirectional delta <-> class-ID mapping with frequency counts."""

    def __init__(self, counts: Counter, max_output: int, min_input_count: int):
        if max_output < 1 or min_input_count < 1:
            raise DataError("max_output and min_input_count must be >= 1")
        self.counts = Counter(counts)
        self.max_output = max_output
        self.min_input_count = min_input_count

        eligible = [(d, c) for d, c in _ranked(self.counts) if c >= min_input_count]
        self.input_classes = [(d, i) for i, (d, _) in enumerate(eligible)]
        self.output_classes = self.input_classes[:max_output]
        self._input_id = {d: i for d, i in self.input_classes}
        self._output_id = {d: i for d, i in self.output_classes}
        self._output_delta = {i: d for d, i in self.output_classes}

    # Reserved IDs sit one past the dense class ranges.
    @property
    def n_input(self) -> int:
        return len(self.input_classes)

    @property
    def n_output(self) -> int:
        return len(self.output_classes)

    @property
    def oov_input(self) -> int:
        return self.n_input

    @property
    def oov_output(self) -> int:
        return self.n_output

    def encode_input(self, deltas: Iterable) -> np.ndarray:
        oov = self.oov_input
        get = self._input_id.get
        return np.array([get(d, oov) for d in delta_values(deltas)], dtype=np.int64)

    def encode_output(self, deltas: Iterable) -> np.ndarray:
        oov = self.oov_output
        get = self._output_id.get
        return np.array([get(d, oov) for d in delta_values(deltas)], dtype=np.int64)

    def decode_output(self, class_id: int) -> int:
        return self._output_delta[class_id]

    def output_deltas(self) -> list[int]:
        return [d for d, _ in self.output_classes]

    def output_coverage(self) -> float:
        """Fraction of total delta mass representable by the output classes."""
        total = sum(self.counts.values())
        covered = sum(self.counts[d] for d, _ in self.output_classes)
        return covered / total if total else 0.0


def build_vocab(
    deltas: Iterable, max_output: int = 50_000, min_input_count: int = 10
) -> DeltaVocab:
    """Build input/output vocabularies from a delta stream."""
    values = delta_values(deltas)
    if not values:
        raise DataError("cannot build a vocabulary from an empty delta stream")
    return DeltaVocab(Counter(values), max_output, min_input_count)


def encode(deltas: Iterable, vocab: DeltaVocab, side: str) -> np.ndarray:
    """Encode delta values to class IDs; unseen deltas map to the OOV ID."""
    if side == "input":
        return vocab.encode_input(deltas)
    if side == "output":
        return vocab.encode_output(deltas)
    raise DataError(f"side must be 'input' or 'output', got {side!r}")


class PcVocab:
    """Dense IDs for PCs seen in training, ordered like DeltaVocab."""

    def __init__(self, counts: Counter):
        self.counts = Counter(counts)
        ranked = sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))
        self._id = {pc: i for i, (pc, _) in enumerate(ranked)}

    @property
    def n_pcs(self) -> int:
        return len(self._id)

    @property
    def oov(self) -> int:
        return self.n_pcs

    def encode(self, pcs: Iterable[int]) -> np.ndarray:
        get = self._id.get
        oov = self.oov
        return np.array([get(pc, oov) for pc in pcs], dtype=np.int64)


def build_pc_vocab(records: Iterable) -> PcVocab:
    """PC vocabulary over MissRecords/DeltaRecords (or raw PC values)."""
    pcs = [r.pc if hasattr(r, "pc") else int(r) for r in records]
    if not pcs:
        raise DataError("cannot build a PC vocabulary from an empty stream")
    return PcVocab(Counter(pcs))


# ---------------------------------------------------------------------------
# Coverage statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageStats:
    num_misses: int
    num_unique_pcs: int
    num_unique_addrs: int
    num_unique_deltas: int
    addrs_for_50pct_mass: int
    deltas_for_50pct_mass: int


def mass_prefix_length(counts: Counter, fraction: float = 0.5) -> int:
    """Minimum prefix of the frequency-sorted list whose mass is >= fraction."""
    total = sum(counts.values())
    if total == 0:
        return 0
    need = fraction * total
    acc = 0
    for k, (_, c) in enumerate(_ranked(counts), start=1):
        acc += c
        if acc >= need:
            return k
    return len(counts)


def coverage_stats(
    misses: Sequence[MissRecord], deltas: Iterable
) -> CoverageStats:
    """Table-style dataset statistics (addresses counted at line granularity)."""
    if not misses:
        raise DataError("empty miss stream")
    values = delta_values(deltas)
    if not values:
        raise DataError("empty delta stream")
    addr_counts = Counter(m.line_addr for m in misses)
    delta_counts = Counter(values)
    return CoverageStats(
        num_misses=len(misses),
        num_unique_pcs=len({m.pc for m in misses}),
        num_unique_addrs=len(addr_counts),
        num_unique_deltas=len(delta_counts),
        addrs_for_50pct_mass=mass_prefix_length(addr_counts),
        deltas_for_50pct_mass=mass_prefix_length(delta_counts),
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

VOCAB_MAGIC = b"PFVOCAB1"
_VOCAB_HEADER = struct.Struct("<IQQQ")  # version, max_output, min_input_count, n_entries
_VOCAB_ENTRY = struct.Struct("<qQq")  # delta, count, input class id (-1 below threshold)
VOCAB_VERSION = 1


def save_vocab(vocab: DeltaVocab, path) -> None:
    """Versioned flat file: header then (delta, count, class_id) triples.

    All observed deltas are stored (sub-threshold ones with class_id -1) so
    that a reload rebuilds the identical vocabulary and full counts.
    """
    with open(path, "wb") as f:
        f.write(VOCAB_MAGIC)
        f.write(
            _VOCAB_HEADER.pack(
                VOCAB_VERSION, vocab.max_output, vocab.min_input_count, len(vocab.counts)
            )
        )
        for delta, count in _ranked(vocab.counts):
            f.write(_VOCAB_ENTRY.pack(delta, count, vocab._input_id.get(delta, -1)))


def load_vocab(path) -> DeltaVocab:
    with open(path, "rb") as f:
        magic = f.read(len(VOCAB_MAGIC))
        if magic != VOCAB_MAGIC:
            raise TraceFormatError(f"{path}: bad magic {magic!r}")
        version, max_output, min_count, n = _VOCAB_HEADER.unpack(f.read(_VOCAB_HEADER.size))
        if version != VOCAB_VERSION:
            raise TraceFormatError(f"{path}: unsupported vocab version {version}")
        counts = Counter()
        expected_ids = {}
        for _ in range(n):
            delta, count, class_id = _VOCAB_ENTRY.unpack(f.read(_VOCAB_ENTRY.size))
            counts[delta] = count
            if class_id >= 0:
                expected_ids[delta] = class_id
    vocab = DeltaVocab(counts, max_output, min_count)
    if vocab._input_id != expected_ids:
        raise TraceFormatError(f"{path}: stored class ids do not match counts")
    return vocab


def vocab_to_csv(vocab: DeltaVocab, path) -> None:
    """Inspection export: delta, count, input/output class IDs (-1 = none)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["delta", "count", "input_class_id", "output_class_id"])
        for delta, count in _ranked(vocab.counts):
            w.writerow(
                [
                    delta,
                    count,
                    vocab._input_id.get(delta, -1),
                    vocab._output_id.get(delta, -1),
                ]
            )
