"""
Stream vs GHB PC/DC
===================

Two table-driven baselines, two traces. The stream prefetcher owns the
constant-stride regime; GHB's delta correlation picks up repeating cycles
that never look like a stride.
"""

from prefetchlab import baselines, cachesim, trace
from prefetchlab.eval import precision_at_k


def score(misses):
    out = {}
    for name, pf in (("stream", baselines.StreamPrefetcher()),
                     ("ghb_pc_dc", baselines.GhbPcDc())):
        sets = baselines.baseline_prediction_sets(pf, misses)
        out[name] = precision_at_k(sets[100:])  # drop the warmup
    return out


hierarchy = cachesim.default_broadwell_config()

records = trace.generate_synthetic(trace.StrideSpec(length=20_000, stride=64))
misses, _ = cachesim.simulate(records, hierarchy)
print("stride trace:          ", {k: round(v, 3) for k, v in score(misses).items()})

# Per-PC delta cycles: the stride changes at every access, so the stream
# prefetcher never confirms, while GHB replays last cycle's continuation.
cycles = (tuple(64 * d for d in (1, 2, 3, 4)), tuple(64 * d for d in (7, 5, 9, 6)))
spec = trace.PcCorrelatedSpec(length=20_000, cycles=cycles, run_length=64, seed=2)
records = trace.generate_synthetic(spec)
misses, _ = cachesim.simulate(records, hierarchy)
print("pc-correlated cycles:  ", {k: round(v, 3) for k, v in score(misses).items()})

# A pointer chase defeats both: the delta sequence has period 64k and no
# local structure a table can index.
spec = trace.LinkedListSpec(length=20_000, nodes=65_536, seed=2)
records = trace.generate_synthetic(spec)
misses, _ = cachesim.simulate(records, hierarchy)
print("linked-list chase:     ", {k: round(v, 3) for k, v in score(misses).items()})
