"""Caching gain, its multilinear extension and three gradient estimators.

``F(x) = C(x0) - C(x)`` is the cost saved by placement ``x`` relative to the
stable starting placement ``x0``.  ``G(y) = E[F(x)]`` with ``x_j`` drawn
independently as Bernoulli(``y_j``).

Gradients:

* :func:`grad_exact` enumerates the fractional coordinates (test oracle),
* :func:`grad_sampling` averages finite differences over Bernoulli samples,
* :class:`TaylorEstimator` expands each edge cost into a polynomial in the
  load and takes expectations of load powers in closed form.

Coordinates fixed to one by ``x0`` are frozen and report a zero gradient.
Coordinates that cannot change any load (see ``CacheNetwork.relevant``) have
a zero gradient by construction and are never enumerated.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import sparse

from .costs import CostModel, Costs, _models, edge_costs, taylor_alpha, total_cost
from .model import CacheNetwork, ModelError, dominates, load
from .wdnf import WdnfPoly, load_poly

__all__ = [
    "GradientVector",
    "EnumerationTooLarge",
    "gain",
    "g_exact",
    "grad_exact",
    "grad_sampling",
    "grad_taylor",
    "sampling_preset",
    "TaylorEstimator",
    "marginal_gains",
    "fractional_coords",
]

ENUM_CAP = 20
AT_CURRENT_LOAD = "current"
POWER_SERIES = "power"


class EnumerationTooLarge(RuntimeError):
    pass


@dataclass(frozen=True)
class GradientVector:
    g: np.ndarray
    strategy: str
    bias_bound: float | None = None
    samples: int | None = None


def _check(x0, x):
    if not dominates(x, x0):
        raise ModelError("placement does not dominate x0")


def gain(net: CacheNetwork, costs: Costs, x0: np.ndarray, x: np.ndarray):
    """``C(x0) - C(x)``; ``x`` may be batched."""
    _check(x0, x)
    out = total_cost(net, costs, x0) - total_cost(net, costs, x)
    return out if np.ndim(out) else float(out)


def _free(net: CacheNetwork, x0: np.ndarray) -> np.ndarray:
    return net.relevant & (np.asarray(x0) < 0.5)


def fractional_coords(net: CacheNetwork, y: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Flat indices of relevant coordinates strictly between 0 and 1."""
    y = np.asarray(y, dtype=float)
    mask = net.relevant & (y > tol) & (y < 1 - tol)
    return np.flatnonzero(mask)


def _bits(m: int) -> np.ndarray:
    return ((np.arange(2**m)[:, None] >> np.arange(m)[None, :]) & 1).astype(float)


def _costs_of(net, costs, base, coords, bits, chunk=1 << 14):
    # total cost of `base` with the flat coordinates `coords` set to each row of `bits`
    out = np.empty(len(bits))
    flat = np.asarray(base, dtype=float).reshape(-1)
    for s in range(0, len(bits), chunk):
        B = np.repeat(flat[None, :], min(chunk, len(bits) - s), axis=0)
        B[:, coords] = bits[s : s + chunk]
        out[s : s + chunk] = total_cost(net, costs, B.reshape((-1,) + net.shape))
    return out


def _expected_cost(net, costs, y, coords, cap):
    if len(coords) > cap:
        raise EnumerationTooLarge("enumeration oracle infeasible")
    y = np.asarray(y, dtype=float)
    base = np.round(y)
    bits = _bits(len(coords))
    p = y.reshape(-1)[coords]
    w = np.prod(np.where(bits > 0, p, 1.0 - p), axis=1)
    return float(w @ _costs_of(net, costs, base, coords, bits))


def g_exact(net: CacheNetwork, costs: Costs, x0: np.ndarray, y: np.ndarray, cap: int = ENUM_CAP) -> float:
    """Multilinear extension by full enumeration of the fractional coordinates."""
    _check(x0, y)
    coords = fractional_coords(net, y)
    return total_cost(net, costs, x0) - _expected_cost(net, costs, y, coords, cap)


def grad_exact(net: CacheNetwork, costs: Costs, x0: np.ndarray, y: np.ndarray, cap: int = ENUM_CAP) -> GradientVector:
    """Exact gradient of G by enumeration.

    When all free coordinates fit under ``cap`` a single enumeration serves
    every coordinate: the partial derivative in ``j`` is the enumeration sum
    weighted by the product of the other coordinates' probabilities.
    Otherwise the marginal gains are averaged over the fractional support.
    """
    _check(x0, y)
    y = np.asarray(y, dtype=float)
    free = np.flatnonzero(_free(net, x0))
    g = np.zeros(y.size)
    if len(free) <= cap:
        bits = _bits(len(free))
        p = y.reshape(-1)[free]
        probs = np.where(bits > 0, p, 1.0 - p)
        c = _costs_of(net, costs, np.round(y), free, bits)
        m = len(free)
        pre = np.ones_like(probs)
        suf = np.ones_like(probs)
        if m:
            pre[:, 1:] = np.cumprod(probs[:, :-1], axis=1)
            suf[:, :-1] = np.cumprod(probs[:, :0:-1], axis=1)[:, ::-1]
        loo = pre * suf
        g[free] = -((loo * (2 * bits - 1)) * c[:, None]).sum(axis=0)
    else:
        # F(x with j = 1) - F(x with j = 0) does not depend on x_j, so averaging
        # the marginal gains over the fractional support is exact
        frac = fractional_coords(net, y)
        if len(frac) > cap:
            raise EnumerationTooLarge("enumeration oracle infeasible")
        bits = _bits(len(frac))
        p = y.reshape(-1)[frac]
        w = np.prod(np.where(bits > 0, p, 1.0 - p), axis=1)
        flat = np.round(y).reshape(-1)
        chunk = max(1, (1 << 22) // max(1, y.size))
        for s in range(0, len(bits), chunk):
            X = np.repeat(flat[None, :], min(chunk, len(bits) - s), axis=0)
            X[:, frac] = bits[s : s + chunk]
            mg = marginal_gains(net, costs, X.reshape((-1,) + net.shape)).reshape(len(X), -1)
            g += w[s : s + chunk] @ mg
        keep = np.zeros(y.size, dtype=bool)
        keep[free] = True
        g[~keep] = 0.0
    return GradientVector(g.reshape(net.shape), "exact", bias_bound=0.0)


class _Triples:
    """Sparse bookkeeping of which coordinates switch off which edge flows.

    A triple ``(r, k, m)`` says: caching class r's object at path node k
    removes class r's response flow from the path's m-th edge (k <= m).
    """

    def __init__(self, net: CacheNetwork):
        C = net.catalog_size
        comp = net._compiled
        tr, tk, tm, tj, te, tw = [], [], [], [], [], []
        for r, req in enumerate(net.requests):
            if req.rate <= 0:
                continue
            p = req.path
            for m in range(len(p) - 1):
                e = net.edge_index[(p[m + 1], p[m])]
                for k in range(m + 1):
                    tr.append(r)
                    tk.append(k)
                    tm.append(m)
                    tj.append(p[k] * C + req.obj)
                    te.append(e)
                    tw.append(req.rate / net.mu[e])
        self.r = np.array(tr, dtype=np.int64)
        self.k = np.array(tk, dtype=np.int64)
        self.m = np.array(tm, dtype=np.int64)
        self.node = comp.paths[self.r, self.k] if len(tr) else np.zeros(0, dtype=np.int64)
        self.obj = comp.obj[self.r] if len(tr) else np.zeros(0, dtype=np.int64)
        self.w = np.array(tw, dtype=float)
        keys = np.array(tj, dtype=np.int64) * max(net.n_edges, 1) + np.array(te, dtype=np.int64)
        pair_keys, pair_of = np.unique(keys, return_inverse=True)
        self.pair_j = pair_keys // max(net.n_edges, 1)
        self.pair_e = pair_keys % max(net.n_edges, 1)
        n_pairs = len(pair_keys)
        n_vars = net.n_nodes * C
        self.to_pair = sparse.csr_matrix(
            (np.ones(len(tr)), (np.arange(len(tr)), pair_of)), shape=(len(tr), n_pairs)
        )
        self.to_var = sparse.csr_matrix(
            (np.ones(n_pairs), (np.arange(n_pairs), self.pair_j)), shape=(n_pairs, n_vars)
        )


_TRIPLES: "weakref.WeakKeyDictionary[CacheNetwork, _Triples]" = weakref.WeakKeyDictionary()


def _triples(net: CacheNetwork) -> _Triples:
    t = _TRIPLES.get(net)
    if t is None:
        t = _TRIPLES[net] = _Triples(net)
    return t


def _pair_cost(costs: Costs, rho: np.ndarray, mu: np.ndarray, pair_e: np.ndarray) -> np.ndarray:
    if isinstance(costs, CostModel):
        return np.asarray(costs.value(rho, mu[pair_e]))
    models = _models(costs, len(mu))
    out = np.empty_like(rho)
    per_pair = [models[e] for e in pair_e]
    for m in dict.fromkeys(per_pair):
        cols = np.array([c == m for c in per_pair])
        out[..., cols] = m.value(rho[..., cols], mu[pair_e[cols]])
    return out


def marginal_gains(net: CacheNetwork, costs: Costs, X: np.ndarray) -> np.ndarray:
    """``F(X with x_j = 1) - F(X with x_j = 0)`` for every coordinate j.

    ``X`` is a binary placement or a batch of them.  Only the edges whose
    flow depends on coordinate j are re-evaluated.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    X = X.reshape((-1,) + net.shape)
    t = _triples(net)
    n = net.n_nodes * net.catalog_size
    if len(t.w) == 0:
        out = np.zeros((X.shape[0], n))
        return out.reshape(net.shape) if single else out.reshape((-1,) + net.shape)
    comp = net._compiled
    held = X[:, comp.paths, comp.obj[:, None]]
    held = np.where(comp.pad, 0.0, held)
    cnt = np.cumsum(held, axis=-1)
    own = X[:, t.node, t.obj]
    # class r still sends flow over edge m if nothing but node k caches upstream
    alive = (cnt[:, t.r, t.m] - own) < 0.5
    D = np.asarray(t.to_pair.T @ (alive * t.w).T).T
    rho = load(net, X)
    xj = X.reshape(X.shape[0], n)[:, t.pair_j]
    rest = np.maximum(rho[:, t.pair_e] - (1.0 - xj) * D, 0.0)
    diff = _pair_cost(costs, rest + D, net.mu, t.pair_e) - _pair_cost(costs, rest, net.mu, t.pair_e)
    out = np.asarray(t.to_var.T @ diff.T).T
    return out.reshape(net.shape) if single else out.reshape((-1,) + net.shape)


def grad_sampling(
    net: CacheNetwork, costs: Costs, x0: np.ndarray, y: np.ndarray, T: int, seed=None, chunk: int = 256
) -> GradientVector:
    """Average of ``F(x+) - F(x-)`` over T Bernoulli(y) samples."""
    _check(x0, y)
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    y = np.asarray(y, dtype=float)
    acc = np.zeros(net.shape)
    for s in range(0, T, chunk):
        X = (rng.random((min(chunk, T - s),) + net.shape) < y).astype(float)
        acc += marginal_gains(net, costs, X).sum(axis=0)
    g = acc / T
    g[np.asarray(x0) > 0.5] = 0.0
    return GradientVector(g, "sampling", samples=T)


def sampling_preset(net: CacheNetwork) -> tuple[float, int]:
    """Step size and sample count that carry the sampling-based guarantee."""
    nc = net.catalog_size * net.n_nodes
    delta = 1.0 / (40 * nc * float(net.capacities.sum()) ** 2)
    T = math.ceil(10.0 / delta**2 * (1 + math.log(nc)))
    return delta, T


class TaylorEstimator:
    """Closed-form gradient surrogate built from W-DNF load powers.

    ``expansion`` is ``"current"`` to expand each edge cost around the edge's
    load at the query point, or ``"power"`` to use the cost's power series
    at zero load.  Load powers are built once and reused across calls.
    """

    def __init__(self, net: CacheNetwork, costs: Costs, x0: np.ndarray, L: int, expansion: str = AT_CURRENT_LOAD):
        if L < 1:
            raise ValueError("L must be at least 1")
        if expansion not in (AT_CURRENT_LOAD, POWER_SERIES):
            raise ValueError(f"unknown expansion {expansion!r}")
        self.net, self.costs, self.L, self.expansion = net, costs, L, expansion
        self.x0 = np.asarray(x0, dtype=float)
        self.models = _models(costs, net.n_edges)
        self.powers: list[list[WdnfPoly]] = []
        busy = []
        for e in range(net.n_edges):
            p = load_poly(net, e)
            if len(p) == 0:
                continue
            chain = [p]
            for _ in range(L - 1):
                chain.append(chain[-1] * p)
            busy.append(e)
            self.powers.append(chain)
        self.busy = np.array(busy, dtype=np.int64)
        self.rho0 = load(net, self.x0)
        self.W = self._derivative_bound()
        self.bias_bound = self.W * net.n_edges / math.factorial(L + 1)
        self._series = None

    def _derivative_bound(self, grid: int = 65) -> float:
        # max |C^(L+1)| over [0, load at x0] on each busy edge
        W = 0.0
        s = np.linspace(0.0, 1.0, grid)
        for e in self.busy:
            pts = s * self.rho0[e]
            d = self.models[e].derivative(pts, self.L + 1, self.net.mu[e])
            W = max(W, float(np.max(np.abs(d))))
        return W

    def alpha(self, y: np.ndarray) -> np.ndarray:
        """Per-busy-edge coefficients, shape (n_busy, L + 1)."""
        mu = self.net.mu[self.busy]
        if self.expansion == POWER_SERIES:
            if self._series is None:
                self._series = np.array([self.models[e].series(self.L, self.net.mu[e]) for e in self.busy]).reshape(
                    len(self.busy), self.L + 1
                )
            return self._series
        rho = np.array([chain[0].evaluate(y) for chain in self.powers])
        out = np.zeros((len(self.busy), self.L + 1))
        ms = [self.models[e] for e in self.busy]
        for m in dict.fromkeys(ms):
            rows = np.array([c == m for c in ms])
            out[rows] = taylor_alpha(m, rho[rows], self.L, mu[rows])
        return out

    def __call__(self, y: np.ndarray) -> GradientVector:
        y = np.asarray(y, dtype=float)
        flat = y.reshape(-1)
        a = self.alpha(flat)
        g = np.zeros(flat.size)
        for row, chain in enumerate(self.powers):
            for k, poly in enumerate(chain, start=1):
                if a[row, k] != 0.0:
                    g += a[row, k] * poly.pin_difference(flat)
        g = g.reshape(self.net.shape)
        g[self.x0 > 0.5] = 0.0
        return GradientVector(g, f"taylor-{self.expansion}", bias_bound=self.bias_bound)

    def surrogate_cost(self, y: np.ndarray) -> float:
        flat = np.asarray(y, dtype=float).reshape(-1)
        a = self.alpha(flat)
        total = 0.0
        for row, chain in enumerate(self.powers):
            total += a[row, 0] + sum(a[row, k] * p.evaluate(flat) for k, p in enumerate(chain, start=1))
        idle = np.setdiff1d(np.arange(self.net.n_edges), self.busy)
        if len(idle):
            total += float(edge_costs([self.models[e] for e in idle], np.zeros(len(idle)), self.net.mu[idle]).sum())
        return total

    def surrogate_gain(self, y: np.ndarray) -> float:
        return total_cost(self.net, self.costs, self.x0) - self.surrogate_cost(y)


def grad_taylor(
    net: CacheNetwork, costs: Costs, x0: np.ndarray, y: np.ndarray, L: int, expansion: str = AT_CURRENT_LOAD
) -> GradientVector:
    _check(x0, y)
    return TaylorEstimator(net, costs, x0, L, expansion)(y)


GradientFn = Callable[[np.ndarray], GradientVector]
