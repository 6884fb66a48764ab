"""Memory access trace formats and synthetic trace generators.

File formats
------------
binary: 8-byte magic ``PFTRACE1`` followed by fixed-width 16-byte records,
    each a little-endian (pc: u64, addr: u64) pair. Seekable, no padding.
text:   one ``0xPC,0xADDR`` pair per line, ``#`` starts a comment. The
    writer emits a single comment header line; readers skip comments and
    blank lines.

Miss streams reuse the same layouts with (pc, addr) per miss; timesteps are
implicit in record order and the line address is recomputed on load.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

from .errors import ConfigError, TraceFormatError, TraceParseError

TRACE_MAGIC = b"PFTRACE1"
_RECORD = struct.Struct("<QQ")
_CHUNK_RECORDS = 4096
_MASK64 = (1 << 64) - 1


class TraceRecord(NamedTuple):
    """One dynamic memory access: instruction address and data address."""

    pc: int
    addr: int


class MissRecord(NamedTuple):
    """One cache-miss event, ordered by 0-based timestep within its stream."""

    timestep: int
    pc: int
    addr: int
    line_addr: int


def signed_delta(line_a: int, line_b: int) -> int:
    """64-bit two's-complement difference ``line_b - line_a``."""
    d = (line_b - line_a) & _MASK64
    return d - (1 << 64) if d >= (1 << 63) else d


# ---------------------------------------------------------------------------
# Reading / writing
# ---------------------------------------------------------------------------


def write_trace(records: Iterable[TraceRecord], path, fmt: str = "binary") -> None:
    """Write records to `path` in the given format ("binary" or "text")."""
    if fmt == "binary":
        with open(path, "wb") as f:
            f.write(TRACE_MAGIC)
            for rec in records:
                f.write(_RECORD.pack(rec.pc, rec.addr))
    elif fmt == "text":
        with open(path, "w") as f:
            f.write("# pftrace v1: pc,addr (hex)\n")
            for rec in records:
                f.write(f"0x{rec.pc:x},0x{rec.addr:x}\n")
    else:
        raise ConfigError(f"unknown trace format: {fmt!r}")


def read_trace(path, fmt: str = "binary") -> Iterator[TraceRecord]:
    """Stream records from `path`; memory use is independent of trace length."""
    if fmt == "binary":
        return _read_binary(path)
    if fmt == "text":
        return _read_text(path)
    raise ConfigError(f"unknown trace format: {fmt!r}")


def _read_binary(path) -> Iterator[TraceRecord]:
    with open(path, "rb") as f:
        magic = f.read(len(TRACE_MAGIC))
        if magic != TRACE_MAGIC:
            raise TraceFormatError(
                f"{path}: bad magic {magic!r}, expected {TRACE_MAGIC!r}"
            )
        offset = len(TRACE_MAGIC)
        while True:
            chunk = f.read(_RECORD.size * _CHUNK_RECORDS)
            if not chunk:
                return
            if len(chunk) % _RECORD.size:
                raise TraceParseError(
                    f"{path}: truncated record at byte offset "
                    f"{offset + len(chunk) - len(chunk) % _RECORD.size}"
                )
            for pc, addr in _RECORD.iter_unpack(chunk):
                yield TraceRecord(pc, addr)
            offset += len(chunk)


def _read_text(path) -> Iterator[TraceRecord]:
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split(",")
            if len(parts) != 2:
                raise TraceParseError(f"{path}: line {lineno}: expected 'pc,addr'")
            try:
                pc = int(parts[0], 16)
                addr = int(parts[1], 16)
            except ValueError:
                raise TraceParseError(
                    f"{path}: line {lineno}: invalid hex field in {body!r}"
                ) from None
            if not (0 <= pc <= _MASK64 and 0 <= addr <= _MASK64):
                raise TraceParseError(f"{path}: line {lineno}: value out of 64-bit range")
            yield TraceRecord(pc, addr)


def write_miss_trace(misses: Iterable[MissRecord], path, fmt: str = "binary") -> None:
    """Write a miss stream using the trace layout (pc, addr per miss)."""
    write_trace((TraceRecord(m.pc, m.addr) for m in misses), path, fmt)


def read_miss_trace(path, fmt: str = "binary", line_size: int = 64) -> list[MissRecord]:
    """Load a miss stream written by `write_miss_trace`.

    Timesteps are assigned from record order; line addresses are derived
    from `line_size`, which must match the simulation that produced the file.
    """
    shift = _line_shift(line_size)
    return [
        MissRecord(t, rec.pc, rec.addr, rec.addr >> shift)
        for t, rec in enumerate(read_trace(path, fmt))
    ]


def _line_shift(line_size: int) -> int:
    if line_size <= 0 or line_size & (line_size - 1):
        raise ConfigError(f"line_size must be a power of two, got {line_size}")
    return line_size.bit_length() - 1


# ---------------------------------------------------------------------------
# Synthetic trace specs
# ---------------------------------------------------------------------------
#
# Every generator is a pure function of its spec (the seed is a spec field),
# and each spec's docstring states the exact delta structure it produces so
# tests can check generated traces against ground truth.


@dataclass(frozen=True)
class StrideSpec:
    """Single strided stream: addr_i = start + i*stride, one PC.

    Produces a constant byte delta of `stride` at every step.
    """

    length: int
    stride: int = 64
    start: int = 0
    pc: int = 0x400000
    seed: int = 0

    kind = "stride"


@dataclass(frozen=True)
class MultiStrideSpec:
    """Round-robin interleaving of independent strided streams.

    Stream j advances by strides[j] each time it is scheduled; accesses
    rotate over streams one at a time. Within stream j the (per-PC) delta
    is exactly strides[j]; the global delta alternates between streams'
    current positions.
    """

    length: int
    strides: tuple[int, ...] = (64, 128)
    starts: tuple[int, ...] | None = None
    pcs: tuple[int, ...] | None = None
    seed: int = 0

    kind = "multi-stride"


@dataclass(frozen=True)
class PcCorrelatedSpec:
    """Trace whose next byte delta is decided by the PC of the current access.

    A single address pointer is advanced by all PCs. PCs are scheduled in
    runs of `run_length` consecutive accesses (round-robin, or seeded-random
    run order when selection="random").

    Two dynamics are supported, exactly one of which must be configured:

    * cycles: cycles[p] is PC p's private delta cycle; each access by PC p
      advances the pointer by the next element of cycles[p]. The delta
      after an access is therefore a deterministic function of (PC, the
      PC's cycle position).
    * table + shifts: a global index j into `table` evolves as
      j' = (j + shifts[p]) mod len(table) at every access by PC p, and the
      pointer advances by table[j']. Since table values are distinct, the
      next delta is a deterministic function of (PC, previous delta).
    """

    length: int
    cycles: tuple[tuple[int, ...], ...] | None = None
    table: tuple[int, ...] | None = None
    shifts: tuple[int, ...] | None = None
    run_length: int = 1
    selection: str = "round_robin"
    start: int = 0x10000000
    pcs: tuple[int, ...] | None = None
    seed: int = 0

    kind = "pc-correlated"


@dataclass(frozen=True)
class RegionHoppingSpec:
    """Several disjoint address regions, each walked with its own delta set.

    The trace visits regions in runs of `run_length` accesses (round-robin
    or seeded-random region order). Each region keeps a private pointer
    that persists across visits; every intra-region step advances it by a
    seeded-uniform draw from deltas[r]. Deltas across a region hop are the
    (irregular) differences between region pointers. Region r's accesses
    all use pcs[r].
    """

    length: int
    deltas: tuple[tuple[int, ...], ...] = ((64, 128), (192, 256), (320, 384))
    bases: tuple[int, ...] | None = None
    run_length: int = 32
    selection: str = "round_robin"
    pcs: tuple[int, ...] | None = None
    seed: int = 0

    kind = "region-hopping"
    base_spacing = 1 << 40


@dataclass(frozen=True)
class LinkedListSpec:
    """Pointer-chase over a fixed random permutation of `nodes` nodes.

    Node i lives at base + i*node_size; the walk repeatedly traverses the
    same seeded permutation, so the byte-delta sequence is irregular but
    periodic with period `nodes`.
    """

    length: int
    nodes: int = 1024
    node_size: int = 64
    base: int = 0x20000000
    pc: int = 0x400000
    seed: int = 0

    kind = "linked-list"


SyntheticSpec = (
    StrideSpec | MultiStrideSpec | PcCorrelatedSpec | RegionHoppingSpec | LinkedListSpec
)


def generate_synthetic(spec: SyntheticSpec) -> list[TraceRecord]:
    """Generate a trace from `spec`; bit-identical for identical specs."""
    if spec.length < 0:
        raise ConfigError("length must be non-negative")
    if isinstance(spec, StrideSpec):
        return _gen_stride(spec)
    if isinstance(spec, MultiStrideSpec):
        return _gen_multi_stride(spec)
    if isinstance(spec, PcCorrelatedSpec):
        return _gen_pc_correlated(spec)
    if isinstance(spec, RegionHoppingSpec):
        return _gen_region_hopping(spec)
    if isinstance(spec, LinkedListSpec):
        return _gen_linked_list(spec)
    raise ConfigError(f"unknown synthetic spec type: {type(spec).__name__}")


def _gen_stride(spec: StrideSpec) -> list[TraceRecord]:
    return [
        TraceRecord(spec.pc, (spec.start + i * spec.stride) & _MASK64)
        for i in range(spec.length)
    ]


def _gen_multi_stride(spec: MultiStrideSpec) -> list[TraceRecord]:
    n = len(spec.strides)
    if n == 0:
        raise ConfigError("multi-stride needs at least one stream")
    starts = spec.starts if spec.starts is not None else tuple(i << 40 for i in range(n))
    pcs = spec.pcs if spec.pcs is not None else tuple(0x400000 + 4 * i for i in range(n))
    if len(starts) != n or len(pcs) != n:
        raise ConfigError("strides, starts and pcs must have equal lengths")
    pos = list(starts)
    out = []
    for i in range(spec.length):
        j = i % n
        out.append(TraceRecord(pcs[j], pos[j] & _MASK64))
        pos[j] += spec.strides[j]
    return out


def _schedule_runs(n_choices: int, length: int, run_length: int, selection: str, seed: int):
    """Yield a choice index per step, in runs of run_length consecutive steps."""
    if run_length < 1:
        raise ConfigError("run_length must be >= 1")
    if selection not in ("round_robin", "random"):
        raise ConfigError(f"unknown selection mode: {selection!r}")
    rng = random.Random(seed)
    step = 0
    run = 0
    while step < length:
        if selection == "round_robin":
            choice = run % n_choices
        else:
            choice = rng.randrange(n_choices)
        for _ in range(min(run_length, length - step)):
            yield choice
            step += 1
        run += 1


def _gen_pc_correlated(spec: PcCorrelatedSpec) -> list[TraceRecord]:
    if (spec.cycles is None) == (spec.table is None):
        raise ConfigError("configure exactly one of cycles or table+shifts")
    if spec.table is not None:
        if spec.shifts is None:
            raise ConfigError("table mode requires shifts")
        if len(set(spec.table)) != len(spec.table):
            raise ConfigError("table deltas must be distinct")
        n_pcs = len(spec.shifts)
    else:
        n_pcs = len(spec.cycles)
        if any(len(c) == 0 for c in spec.cycles):
            raise ConfigError("every PC needs a non-empty delta cycle")
    if n_pcs == 0:
        raise ConfigError("need at least one PC")
    pcs = spec.pcs if spec.pcs is not None else tuple(0x400000 + 4 * i for i in range(n_pcs))
    if len(pcs) != n_pcs:
        raise ConfigError("pcs length must match the number of configured PCs")

    addr = spec.start
    out = []
    if spec.cycles is not None:
        cursor = [0] * n_pcs
        for p in _schedule_runs(n_pcs, spec.length, spec.run_length, spec.selection, spec.seed):
            out.append(TraceRecord(pcs[p], addr & _MASK64))
            addr += spec.cycles[p][cursor[p]]
            cursor[p] = (cursor[p] + 1) % len(spec.cycles[p])
    else:
        j = 0
        d = len(spec.table)
        for p in _schedule_runs(n_pcs, spec.length, spec.run_length, spec.selection, spec.seed):
            out.append(TraceRecord(pcs[p], addr & _MASK64))
            j = (j + spec.shifts[p]) % d
            addr += spec.table[j]
    return out


def _gen_region_hopping(spec: RegionHoppingSpec) -> list[TraceRecord]:
    n = len(spec.deltas)
    if n == 0:
        raise ConfigError("need at least one region")
    if any(len(ds) == 0 for ds in spec.deltas):
        raise ConfigError("every region needs a non-empty delta set")
    bases = spec.bases if spec.bases is not None else tuple(
        spec.base_spacing * (i + 1) for i in range(n)
    )
    pcs = spec.pcs if spec.pcs is not None else tuple(0x400000 + 4 * i for i in range(n))
    if len(bases) != n or len(pcs) != n:
        raise ConfigError("deltas, bases and pcs must have equal lengths")
    # Regions must stay disjoint: bound the worst-case pointer drift.
    max_step = max(max(abs(d) for d in ds) for ds in spec.deltas)
    spacing = min(
        abs(a - b) for i, a in enumerate(bases) for b in bases[i + 1 :]
    ) if n > 1 else None
    if spacing is not None and spec.length * max_step >= spacing // 2:
        raise ConfigError(
            "trace could drift across regions: shrink length/deltas or spread bases"
        )

    rng = random.Random(spec.seed ^ 0x5EED)
    pos = list(bases)
    out = []
    for r in _schedule_runs(n, spec.length, spec.run_length, spec.selection, spec.seed):
        out.append(TraceRecord(pcs[r], pos[r] & _MASK64))
        pos[r] += rng.choice(spec.deltas[r])
    return out


def _gen_linked_list(spec: LinkedListSpec) -> list[TraceRecord]:
    if spec.nodes < 1:
        raise ConfigError("need at least one node")
    rng = random.Random(spec.seed)
    order = list(range(spec.nodes))
    rng.shuffle(order)
    return [
        TraceRecord(spec.pc, (spec.base + order[i % spec.nodes] * spec.node_size) & _MASK64)
        for i in range(spec.length)
    ]
