"""Three ways to estimate the gradient of the multilinear extension.

Exact enumeration is the reference.  Sampling is unbiased but noisy.  The
Taylor estimator is deterministic; how well it does depends on the loads.
On lightly loaded links the error shrinks with the order L.  On links near
saturation an expansion around the current load diverges as soon as a
placement empties the queue, since the load then moves farther than the
distance to the pole at 1.
"""
import time

import numpy as np

from kellycache.bench import load_instance
from kellycache.gradient import grad_exact, grad_sampling, grad_taylor
from kellycache.model import load


def fractional_point(net, rng, n_free=14):
    y = np.where(net.relevant, rng.uniform(0, 1, net.shape), 0.0)
    y *= np.minimum(1.0, net.capacities / np.maximum(y.sum(axis=1), 1e-12))[:, None]
    # freeze all but a few coordinates so the exact reference stays cheap
    frac = np.flatnonzero((y > 0) & (y < 1))
    keep = rng.choice(frac, size=min(n_free, len(frac)), replace=False)
    flat = np.round(y).reshape(-1)
    flat[keep] = y.reshape(-1)[keep]
    return flat.reshape(net.shape)


def compare(net, cost, x0, y):
    print(f"max load with empty caches {load(net, x0).max():.3f}")
    t = time.perf_counter()
    ref = grad_exact(net, cost, x0, y).g
    print(f"exact: largest entry {np.abs(ref).max():.4f}, {time.perf_counter() - t:.3f}s")
    for T in (10, 100, 1000):
        g = grad_sampling(net, cost, x0, y, T, seed=1).g
        print(f"  sampling T={T:5d}: max error {np.abs(g - ref).max():.4f}")
    for L in (1, 2, 3):
        for mode in ("current", "power"):
            err = np.abs(grad_taylor(net, cost, x0, y, L, mode).g - ref).max()
            print(f"  taylor L={L} ({mode:7s}): max error {err:.4f}")


inst = load_instance("abilene")
net, cost, x0 = inst.net, inst.costs, inst.x0
y = fractional_point(net, np.random.default_rng(0))

print("abilene as shipped, slow links close to saturation")
compare(net, cost, x0, y)

print("\nsame network with every service rate tripled")
compare(net.replace(mu=3 * net.mu), cost, x0, y)
