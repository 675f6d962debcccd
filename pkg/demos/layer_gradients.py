"""
One adapted layer: forward, backward and merge
==============================================

h = W0 x + b * (B (d * (A x))).  Only d and b are trained.  Fresh layers
start with b = 0, so they reproduce the frozen layer exactly.
"""

import numpy as np

from vera import adapters as ad
from vera.adapters import AdapterConfig, Method
from vera.harness.gradcheck import finite_difference, max_relative_error

rng = np.random.default_rng(0)
W0 = rng.normal(size=(6, 5))
layer = ad.build_layer(AdapterConfig(rank=3, master_seed=5), W0, "demo")
x = rng.normal(size=(4, 5))
print("fresh layer equals W0 x:", np.array_equal(ad.forward(layer, x)[0], x @ W0.T))

# Pretend training happened.
layer.d[:] = rng.normal(size=3)
layer.b[:] = rng.normal(size=6)

# Analytic gradients of sum(h * g) against central differences.
g = rng.normal(size=(4, 6))
grads, gx = ad.backward(layer, x, g, ad.forward(layer, x)[1])
loss = lambda: float(np.sum(ad.forward(layer, x)[0] * g))
for name in ("d", "b"):
    fd = finite_difference(loss, getattr(layer, name))
    print(f"grad {name}: max relative error {max_relative_error(grads[name], fd):.1e}")

# Folding the update into W0 removes the extra inference cost.
merged = ad.merge(layer)
print("merged matches adapter:", np.allclose(x @ merged.T, ad.forward(layer, x)[0]))

# Trainable values per method for a 768 x 768 projection at rank 16.
for method in Method:
    built = ad.build_layer(AdapterConfig(method=method, rank=16), np.zeros((768, 768)), "p")
    print(f"{method.label:>9}: {ad.trainable_params(built)}")
