"""
Shared frozen matrices from a seed
==================================

The frozen pair (A, B) is never stored.  It is regenerated from the master
seed and the layer shape, so every layer of one shape uses the same pair and
a checkpoint only needs the seed.
"""

import numpy as np

from vera import adapters as ad
from vera.adapters import AdapterConfig
from vera.prng import InitScheme, make_stream

cfg = AdapterConfig(rank=4, r_max=16, master_seed=1234)
pool = ad.SharedPool.for_config(cfg)
pair = pool.get(64, 64)
print("A", pair.A.shape, "B", pair.B.shape, "distinct shapes in pool:", len(pool))

# Regenerating with the same seed gives bit-identical matrices.
again = ad.build_shared((64, 64), 16, InitScheme.kaiming_uniform(), 1234)
print("regenerated identical:", np.array_equal(pair.A, again.A) and np.array_equal(pair.B, again.B))

# A lower rank uses a prefix: the first r rows of A and the first r columns of B.
print("rank 4 slice is a prefix:", np.array_equal(pair.A_r(4), pair.A[:4]))

# Kaiming-uniform bound is sqrt(6 / fan_in); the sample maximum sits just below it.
print("max |A| =", float(np.abs(pair.A).max()), "bound =", np.sqrt(6 / 64))

# The generator itself: xoshiro256** seeded through SplitMix64, one stream per key.
s = make_stream(1234, 7)
print("first draws:", [hex(s.next_u64()) for _ in range(3)])
