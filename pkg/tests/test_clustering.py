import math
import random

import numpy as np
import pytest

from prefetchlab.clustering import (
    ClusterModel,
    assignments_to_csv,
    denormalize_deltas,
    kmeans_fit,
    load_cluster_model,
    normalize_deltas,
    partition_stream,
    save_cluster_model,
)
from prefetchlab.errors import ConfigError, TraceFormatError
from prefetchlab.trace import MissRecord


def misses_from_lines(lines, pcs=None):
    pcs = pcs or [0x400000] * len(lines)
    return [MissRecord(t, pcs[t], lines[t] * 64, lines[t]) for t in range(len(lines))]


def blob_addresses(rng, centers, per_blob=200, spread=50):
    out = []
    for c in centers:
        out.extend(c + rng.randrange(-spread, spread + 1) for _ in range(per_blob))
    rng.shuffle(out)
    return out


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def test_kmeans_recovers_separated_blobs():
    rng = random.Random(0)
    for seed in range(5):
        centers = [10_000, 500_000, 90_000_000]
        addrs = blob_addresses(rng, centers)
        model = kmeans_fit(addrs, k=3, seed=seed)
        assert list(model.centroids) == sorted(model.centroids)
        for c, got in zip(sorted(centers), model.centroids):
            assert abs(got - c) < 100
        # every point lands with its own blob
        assign = model.assign(addrs)
        for a, cl in zip(addrs, assign):
            assert abs(a - sorted(centers)[cl]) < 200


def test_kmeans_deterministic_per_seed():
    rng = random.Random(1)
    addrs = blob_addresses(rng, [100, 10_000], per_blob=50)
    a = kmeans_fit(addrs, k=2, seed=3)
    b = kmeans_fit(addrs, k=2, seed=3)
    assert np.array_equal(a.centroids, b.centroids)
    assert a.inertia == b.inertia
    assert a.n_iters == b.n_iters


def test_kmeans_inertia_reasonable():
    # k == number of distinct points -> perfect fit
    model = kmeans_fit([10, 20, 30, 10, 20, 30], k=3, seed=0)
    assert model.inertia == pytest.approx(0.0)
    assert list(model.centroids) == [10, 20, 30]


def test_kmeans_validation():
    with pytest.raises(ConfigError):
        kmeans_fit([1, 1, 1], k=2)
    with pytest.raises(ConfigError):
        kmeans_fit([1, 2, 3], k=0)


def test_assignment_ties_go_to_lower_index():
    model = ClusterModel(k=2, centroids=np.array([0.0, 10.0]), n_iters=1, inertia=0.0)
    assert model.assign([5]).tolist() == [0]
    assert model.assign([4, 6]).tolist() == [0, 1]


def test_kmeans_weighted_by_frequency():
    # heavy mass on one value pulls a centroid onto it
    addrs = [100] * 1000 + [110] * 1000 + [9_000_000] * 10
    model = kmeans_fit(addrs, k=2, seed=0)
    assert abs(model.centroids[0] - 105) < 6
    assert abs(model.centroids[1] - 9_000_000) < 1


# ---------------------------------------------------------------------------
# Stream partitioning
# ---------------------------------------------------------------------------


def test_partition_stream_per_cluster_deltas():
    # two regions interleaved; within-cluster deltas skip the other cluster
    lines = [100, 5000, 102, 5003, 105, 5009]
    misses = misses_from_lines(lines)
    model = ClusterModel(k=2, centroids=np.array([102.0, 5004.0]), n_iters=1, inertia=0.0)
    stream = partition_stream(misses, model)
    assert stream.assignments.tolist() == [0, 1, 0, 1, 0, 1]
    assert [r.delta for r in stream.sub_streams[0]] == [2, 3]
    assert [r.delta for r in stream.sub_streams[1]] == [3, 6]
    # records carry the source miss's global timestep
    assert [r.timestep for r in stream.sub_streams[0]] == [0, 2]
    assert [r.timestep for r in stream.sub_streams[1]] == [1, 3]


def test_partition_stream_merge_reproduces_assignment_order():
    rng = random.Random(9)
    lines = [rng.choice([100, 101, 102, 90_000, 90_001]) for _ in range(500)]
    # force line changes so deltas exist
    misses = misses_from_lines(lines)
    model = kmeans_fit([m.line_addr for m in misses], k=2, seed=0)
    stream = partition_stream(misses, model)
    merged = stream.merged_timesteps()
    # each cluster's last miss emits no record; all others appear once, in order
    expected = []
    last = {}
    for i, m in enumerate(misses):
        last[int(stream.assignments[i])] = i
    for i, m in enumerate(misses):
        c = int(stream.assignments[i])
        if i != last[c]:
            expected.append((m.timestep, c))
    assert merged == expected
    n_nonempty = len(set(stream.assignments.tolist()))
    assert sum(len(s) for s in stream.sub_streams) == len(misses) - n_nonempty


def test_norm_params_come_from_train_split_only():
    lines = [0, 10, 30, 60, 1000, 2000]  # deltas 10,20,30 then big test-only ones
    misses = misses_from_lines(lines)
    model = ClusterModel(k=1, centroids=np.array([0.0]), n_iters=1, inertia=0.0)
    stream = partition_stream(misses, model, train_len=4)
    mean, std = stream.norm_params[0]
    arr = np.array([10.0, 20.0, 30.0])
    assert mean == pytest.approx(arr.mean())
    assert std == pytest.approx(arr.std())


def test_norm_params_degenerate_std_clamped():
    misses = misses_from_lines([0, 5, 10, 15])
    model = ClusterModel(k=1, centroids=np.array([0.0]), n_iters=1, inertia=0.0)
    stream = partition_stream(misses, model)
    assert stream.norm_params[0][1] == 1.0  # constant deltas -> std clamped to 1


def test_empty_cluster_gets_default_norm():
    misses = misses_from_lines([0, 1, 2])
    model = ClusterModel(k=2, centroids=np.array([0.0, 10_000.0]), n_iters=1, inertia=0.0)
    stream = partition_stream(misses, model)
    assert stream.norm_params[1].tolist() == [0.0, 1.0]
    assert stream.sub_streams[1] == []


def test_normalize_matches_single_pass_oracle():
    rng = random.Random(21)
    for _ in range(20):
        sample = [rng.randrange(-10_000, 10_000) for _ in range(500)]
        # independent single-pass mean/std
        n = len(sample)
        mean = sum(sample) / n
        var = sum((x - mean) ** 2 for x in sample) / n
        std = math.sqrt(var)
        normed = normalize_deltas(sample, (mean, std))
        assert abs(normed.mean()) < 1e-9
        assert abs(normed.std() - 1.0) < 1e-9
        back = denormalize_deltas(normed, (mean, std))
        assert np.allclose(back, sample, atol=1e-6)


def test_normalize_zero_std_treated_as_one():
    out = normalize_deltas([5, 7], (5.0, 0.0))
    assert out.tolist() == [0.0, 2.0]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def test_cluster_model_roundtrip(tmp_path):
    model = kmeans_fit([1, 2, 3, 1000, 2000, 3000], k=2, seed=1)
    norms = np.array([[1.5, 2.5], [-3.0, 0.5]])
    path = tmp_path / "c.bin"
    save_cluster_model(model, path, norms)
    loaded, got_norms = load_cluster_model(path)
    assert loaded.k == model.k
    assert np.array_equal(loaded.centroids, model.centroids)
    assert loaded.n_iters == model.n_iters
    assert loaded.inertia == model.inertia
    assert np.array_equal(got_norms, norms)


def test_cluster_model_roundtrip_without_norms(tmp_path):
    model = kmeans_fit([1, 1000], k=2, seed=0)
    path = tmp_path / "c.bin"
    save_cluster_model(model, path)
    _, norms = load_cluster_model(path)
    assert norms is None


def test_cluster_model_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"XXXXXXXX" + b"\x00" * 64)
    with pytest.raises(TraceFormatError):
        load_cluster_model(path)


def test_assignments_csv(tmp_path):
    misses = misses_from_lines([10, 5000, 11])
    model = ClusterModel(k=2, centroids=np.array([10.0, 5000.0]), n_iters=1, inertia=0.0)
    path = tmp_path / "a.csv"
    assignments_to_csv(misses, model, path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "timestep,addr,cluster_id"
    assert rows[1] == f"0,{10 * 64},0"
    assert rows[2] == f"1,{5000 * 64},1"
    assert rows[3] == f"2,{11 * 64},0"
