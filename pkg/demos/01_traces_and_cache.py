"""
Synthetic traces and the cache hierarchy
========================================

Generate a few access patterns, replay them through the default
three-level hierarchy, and look at what survives to the miss stream.
"""

from prefetchlab import cachesim, trace

# A pure stride walk: every access lands on a fresh 64-byte line, so the
# hierarchy filters nothing and the miss stream mirrors the trace.
spec = trace.StrideSpec(length=5000, stride=64)
records = trace.generate_synthetic(spec)
misses, stats = cachesim.simulate(records, cachesim.default_broadwell_config())
print("stride trace:")
print("  accesses:", len(records), " llc misses:", len(misses))
for i, level in enumerate(stats.levels):
    print(f"  L{i + 1}: accesses={level.accesses} hits={level.hits} misses={level.misses}")

# A linked-list walk over 256 nodes fits in L1 after the first lap, so
# almost everything after the cold misses is filtered out.
spec = trace.LinkedListSpec(length=5000, nodes=256)
records = trace.generate_synthetic(spec)
misses, stats = cachesim.simulate(records, cachesim.default_broadwell_config())
print("linked-list trace (256 nodes, fits in cache):")
print("  accesses:", len(records), " llc misses:", len(misses))

# Blow the walk up to 64k nodes (4 MiB of lines) and the LLC can no longer
# hold the working set: the pointer chase misses all the way down.
spec = trace.LinkedListSpec(length=200_000, nodes=65_536)
records = trace.generate_synthetic(spec)
misses, stats = cachesim.simulate(records, cachesim.default_broadwell_config())
print("linked-list trace (64k nodes, thrashes):")
print("  accesses:", len(records), " llc misses:", len(misses))
print("  miss rate at LLC:", round(stats.levels[-1].misses / stats.levels[-1].accesses, 3))
