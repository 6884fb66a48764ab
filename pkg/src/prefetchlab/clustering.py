"""1-D k-means over miss line addresses and per-cluster delta streams.

Addresses are clustered at line granularity as a frequency-weighted
multiset. Fitting is standard Lloyd iteration with k-means++ seeding from
a fixed RNG seed; an empty cluster is reseeded to the point farthest from
its nearest centroid. Within each cluster, deltas are computed between
consecutive misses of that cluster, and normalized with mean/std taken
from the training split only.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, TraceFormatError
from .trace import MissRecord, signed_delta
from .vocab import DeltaRecord, delta_values


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # sorted ascending, float64
    n_iters: int
    inertia: float

    def assign(self, addresses) -> np.ndarray:
        """Nearest-centroid assignment; ties go to the lower centroid index."""
        x = np.asarray(addresses, dtype=np.float64)
        return np.argmin(np.abs(x[:, None] - self.centroids[None, :]), axis=1)


def kmeans_fit(
    addresses: Iterable[int], k: int, max_iters: int = 100, seed: int = 0
) -> ClusterModel:
    """Lloyd's algorithm on scalar addresses; deterministic given seed."""
    x = np.asarray(list(addresses), dtype=np.float64)
    if k < 1:
        raise ConfigError("k must be >= 1")
    if len(np.unique(x)) < k:
        raise ConfigError(f"need at least {k} distinct addresses, got {len(np.unique(x))}")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(x, k, rng)

    prev_assign = None
    prev_inertia = np.inf
    n_iters = 0
    for n_iters in range(1, max_iters + 1):
        dist = np.abs(x[:, None] - centroids[None, :])
        assign = np.argmin(dist, axis=1)
        inertia = float(np.sum((x - centroids[assign]) ** 2))
        assert inertia <= prev_inertia * (1 + 1e-12) + 1e-9, "inertia increased"
        prev_inertia = inertia
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign
        for j in range(k):
            members = x[assign == j]
            if len(members):
                centroids[j] = members.mean()
            else:
                # reseed to the point farthest from its nearest centroid
                nearest = np.min(np.abs(x[:, None] - centroids[None, :]), axis=1)
                centroids[j] = x[np.argmax(nearest)]

    order = np.argsort(centroids, kind="stable")
    centroids = centroids[order]
    return ClusterModel(k=k, centroids=centroids, n_iters=n_iters, inertia=prev_inertia)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = np.empty(k, dtype=np.float64)
    centroids[0] = x[rng.integers(len(x))]
    d2 = (x - centroids[0]) ** 2
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining mass sits on chosen points; pick any distinct value
            remaining = np.setdiff1d(x, centroids[:j])
            centroids[j] = remaining[0]
        else:
            centroids[j] = x[rng.choice(len(x), p=d2 / total)]
        d2 = np.minimum(d2, (x - centroids[j]) ** 2)
    return centroids


# ---------------------------------------------------------------------------
# Stream partitioning
# ---------------------------------------------------------------------------


@dataclass
class ClusteredStream:
    """Per-cluster delta sub-streams plus the per-miss cluster assignment.

    Sub-stream records keep their global miss timesteps, so merging the
    sub-streams back by timestep reproduces the original order. Each
    record's delta runs from its miss to the next miss in the same cluster.
    """

    assignments: np.ndarray  # cluster id per input miss
    sub_streams: list[list[DeltaRecord]]
    norm_params: np.ndarray  # (k, 2): mean, std per cluster (train split only)

    def merged_timesteps(self) -> list[tuple[int, int]]:
        """(timestep, cluster_id) pairs of all sub-stream records, in order."""
        pairs = [
            (rec.timestep, c)
            for c, recs in enumerate(self.sub_streams)
            for rec in recs
        ]
        return sorted(pairs)


def partition_stream(
    misses: Sequence[MissRecord], model: ClusterModel, train_len: int | None = None
) -> ClusteredStream:
    """Split a miss stream into per-cluster delta streams.

    `train_len` bounds the miss prefix whose deltas feed the normalization
    parameters (both endpoints of a delta must fall inside the prefix);
    None uses the whole stream.
    """
    if train_len is None:
        train_len = len(misses)
    assignments = model.assign([m.line_addr for m in misses])

    sub_streams: list[list[DeltaRecord]] = [[] for _ in range(model.k)]
    train_deltas: list[list[int]] = [[] for _ in range(model.k)]
    last_in_cluster: dict[int, int] = {}
    for i, m in enumerate(misses):
        c = int(assignments[i])
        j = last_in_cluster.get(c)
        if j is not None:
            prev = misses[j]
            d = signed_delta(prev.line_addr, m.line_addr)
            sub_streams[c].append(DeltaRecord(prev.timestep, prev.pc, d))
            if i < train_len:
                train_deltas[c].append(d)
        last_in_cluster[c] = i

    norm = np.zeros((model.k, 2), dtype=np.float64)
    norm[:, 1] = 1.0
    for c in range(model.k):
        if train_deltas[c]:
            arr = np.asarray(train_deltas[c], dtype=np.float64)
            std = float(arr.std())
            norm[c] = (float(arr.mean()), std if std > 0 else 1.0)
    return ClusteredStream(assignments=assignments, sub_streams=sub_streams, norm_params=norm)


def normalize_deltas(deltas: Iterable, params) -> np.ndarray:
    """(delta - mean) / std as float64; std must come pre-clamped (>0)."""
    mean, std = float(params[0]), float(params[1])
    if std <= 0:
        std = 1.0
    return (np.asarray(delta_values(deltas), dtype=np.float64) - mean) / std


def denormalize_deltas(values, params) -> np.ndarray:
    mean, std = float(params[0]), float(params[1])
    if std <= 0:
        std = 1.0
    return np.asarray(values, dtype=np.float64) * std + mean


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

KMEANS_MAGIC = b"PFKMEAN1"
_KM_HEADER = struct.Struct("<IQQdB")  # version, k, n_iters, inertia, has_norms
KMEANS_VERSION = 1


def save_cluster_model(model: ClusterModel, path, norm_params: np.ndarray | None = None) -> None:
    """Versioned file: k, centroids, optional per-cluster norm params."""
    with open(path, "wb") as f:
        f.write(KMEANS_MAGIC)
        f.write(
            _KM_HEADER.pack(
                KMEANS_VERSION, model.k, model.n_iters, model.inertia,
                1 if norm_params is not None else 0,
            )
        )
        f.write(np.ascontiguousarray(model.centroids, dtype="<f8").tobytes())
        if norm_params is not None:
            if norm_params.shape != (model.k, 2):
                raise ConfigError("norm_params must have shape (k, 2)")
            f.write(np.ascontiguousarray(norm_params, dtype="<f8").tobytes())


def load_cluster_model(path) -> tuple[ClusterModel, np.ndarray | None]:
    with open(path, "rb") as f:
        magic = f.read(len(KMEANS_MAGIC))
        if magic != KMEANS_MAGIC:
            raise TraceFormatError(f"{path}: bad magic {magic!r}")
        version, k, n_iters, inertia, has_norms = _KM_HEADER.unpack(f.read(_KM_HEADER.size))
        if version != KMEANS_VERSION:
            raise TraceFormatError(f"{path}: unsupported version {version}")
        centroids = np.frombuffer(f.read(8 * k), dtype="<f8").copy()
        norms = None
        if has_norms:
            norms = np.frombuffer(f.read(16 * k), dtype="<f8").reshape(k, 2).copy()
    model = ClusterModel(k=k, centroids=centroids, n_iters=n_iters, inertia=inertia)
    return model, norms


def assignments_to_csv(misses: Sequence[MissRecord], model: ClusterModel, path) -> None:
    """(timestep, addr, cluster_id) rows for address-space plots."""
    assign = model.assign([m.line_addr for m in misses])
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestep", "addr", "cluster_id"])
        for m, c in zip(misses, assign):
            w.writerow([m.timestep, m.addr, int(c)])
