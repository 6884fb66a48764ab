"""
Miss deltas as a vocabulary
===========================

The models treat prefetching as classification over line-address deltas.
This script builds that vocabulary for a region-hopping trace and prints
the frequency structure the classifier sees.
"""

from prefetchlab import cachesim, trace, vocab

spec = trace.RegionHoppingSpec(length=20_000, run_length=32, seed=1)
records = trace.generate_synthetic(spec)
misses, _ = cachesim.simulate(records, cachesim.default_broadwell_config())

deltas = vocab.compute_deltas(misses)
stats = vocab.coverage_stats(misses, deltas)
print("misses:", stats.num_misses)
print("unique pcs:", stats.num_unique_pcs)
print("unique line addrs:", stats.num_unique_addrs)
print("unique deltas:", stats.num_unique_deltas)
print("addrs for 50% mass:", stats.addrs_for_50pct_mass)
print("deltas for 50% mass:", stats.deltas_for_50pct_mass)

# The head of the distribution is tiny (the per-region steps); the tail is
# a long list of one-off region-hop deltas that no classifier should chase.
v = vocab.build_vocab(deltas, max_output=50, min_input_count=10)
print("input classes:", v.n_input, " output classes:", v.n_output)
print("train-mass covered by output classes:", round(v.output_coverage(), 4))
print("most frequent deltas (lines):")
for delta, idx in v.output_classes[:8]:
    print(f"  class {idx}: delta {delta}")
