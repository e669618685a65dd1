"""Kelly cache networks: topology, request classes, placements and edge loads.

A placement is a numpy array of shape ``(n_nodes, catalog_size)``; entry
``x[v, i]`` says whether node ``v`` caches object ``i``.  Fractional arrays
with entries in ``[0, 1]`` are accepted wherever a placement is, and then
the computed loads are expectations under independent Bernoulli caching.
Leading batch dimensions are allowed by :func:`load`.

Responses travel the request path backwards.  The response of class ``r``
crosses the edge ``(p[k+1], p[k])`` only if none of ``p[0..k]`` caches the
requested object.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

__all__ = [
    "RequestClass",
    "CacheNetwork",
    "ModelError",
    "empty_placement",
    "is_feasible",
    "dominates",
    "class_rate_on_edge",
    "load",
    "is_stable",
]


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class RequestClass:
    obj: int
    path: tuple[int, ...]
    rate: float

    def position(self, v: int) -> int:
        """1-based position of node ``v`` on the path."""
        return self.path.index(v) + 1


@dataclass(frozen=True, eq=False)
class CacheNetwork:
    """Immutable cache network.

    ``edges`` are directed ``(u, v)`` pairs, ``mu`` their service rates.
    ``servers[i]`` is the set of nodes permanently storing object ``i``;
    that storage does not count against ``capacities``.
    """

    edges: tuple[tuple[int, int], ...]
    mu: np.ndarray
    capacities: np.ndarray
    servers: tuple[frozenset[int], ...]
    requests: tuple[RequestClass, ...]
    node_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        caps = np.array(self.capacities, dtype=np.int64)
        mu.setflags(write=False)
        caps.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "capacities", caps)
        object.__setattr__(self, "edges", tuple((int(u), int(v)) for u, v in self.edges))
        object.__setattr__(self, "servers", tuple(frozenset(int(s) for s in S) for S in self.servers))
        if not self.node_names:
            object.__setattr__(self, "node_names", tuple(str(v) for v in range(len(caps))))
        self._validate()

    def _validate(self):
        n = self.n_nodes
        if len(self.node_names) != n:
            raise ModelError("node_names length does not match the node count")
        if caps_bad := np.flatnonzero(self.capacities < 0).tolist():
            raise ModelError(f"negative capacity at nodes {caps_bad}")
        if self.mu.shape != (len(self.edges),):
            raise ModelError("one service rate per edge is required")
        if np.any(~(self.mu > 0)):
            raise ModelError("service rates must be positive")
        index = self.edge_index
        if len(index) != len(self.edges):
            raise ModelError("duplicate edge")
        for u, v in self.edges:
            if not (0 <= u < n and 0 <= v < n) or u == v:
                raise ModelError(f"bad edge ({u}, {v})")
            if (v, u) not in index:
                raise ModelError(f"edge ({u}, {v}) has no reverse edge")
        for i, S in enumerate(self.servers):
            if not S:
                raise ModelError(f"object {i} has no designated server")
            if any(not 0 <= s < n for s in S):
                raise ModelError(f"object {i} has an unknown designated server")
        for r, req in enumerate(self.requests):
            p = req.path
            if not 0 <= req.obj < self.catalog_size:
                raise ModelError(f"request {r}: unknown object {req.obj}")
            if req.rate < 0:
                raise ModelError(f"request {r}: negative rate")
            if len(p) == 0 or len(set(p)) != len(p):
                raise ModelError(f"request {r}: path is empty or not simple")
            S = self.servers[req.obj]
            if p[-1] not in S or any(w in S for w in p[:-1]):
                raise ModelError(f"request {r}: path is not well-routed")
            for a, b in zip(p, p[1:]):
                if (a, b) not in index:
                    raise ModelError(f"request {r}: ({a}, {b}) is not an edge")

    @classmethod
    def build(
        cls,
        nodes: Sequence[str],
        edges: Iterable[tuple[str, str, float]],
        capacities: Mapping[str, int],
        servers: Mapping[int, Iterable[str]],
        requests: Iterable[tuple[int, Sequence[str], float]],
        catalog_size: int | None = None,
        symmetric: bool = True,
    ) -> "CacheNetwork":
        """Build a network from node names.

        With ``symmetric=True`` every listed edge is added in both directions
        with the same service rate.
        """
        ids = {name: k for k, name in enumerate(nodes)}
        elist, mus, seen = [], [], set()
        for a, b, m in edges:
            pairs = [(ids[a], ids[b]), (ids[b], ids[a])] if symmetric else [(ids[a], ids[b])]
            for e in pairs:
                if e not in seen:
                    seen.add(e)
                    elist.append(e)
                    mus.append(float(m))
        caps = np.zeros(len(nodes), dtype=np.int64)
        for name, c in capacities.items():
            caps[ids[name]] = c
        n_obj = catalog_size if catalog_size is not None else max(servers) + 1
        srv = [frozenset(ids[s] for s in servers.get(i, ())) for i in range(n_obj)]
        reqs = tuple(RequestClass(int(i), tuple(ids[w] for w in path), float(rate)) for i, path, rate in requests)
        return cls(tuple(elist), np.array(mus), caps, tuple(srv), reqs, tuple(nodes))

    def replace(self, **changes) -> "CacheNetwork":
        return dataclasses.replace(self, **changes)

    @property
    def n_nodes(self) -> int:
        return len(self.capacities)

    @property
    def catalog_size(self) -> int:
        return len(self.servers)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_nodes, self.catalog_size)

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {e: k for k, e in enumerate(self.edges)}

    def var(self, v: int, i: int) -> int:
        """Dense variable index of the pair (v, i)."""
        return v * self.catalog_size + i

    @cached_property
    def _compiled(self) -> "_Compiled":
        return _Compiled(self)

    @cached_property
    def relevant(self) -> np.ndarray:
        """Mask of (v, i) pairs that can change some load.

        Caching ``i`` at ``v`` matters only if a request for ``i`` passes
        ``v`` before its last node.
        """
        mask = np.zeros(self.shape, dtype=bool)
        for req in self.requests:
            if req.rate > 0:
                for w in req.path[:-1]:
                    mask[w, req.obj] = True
        return mask

    def arrival_rates(self) -> np.ndarray:
        """Per-edge response arrival rate with no caching."""
        return load(self, empty_placement(self)) * self.mu


class _Compiled:
    """Padded arrays used by the vectorized load computation."""

    def __init__(self, net: CacheNetwork):
        R = len(net.requests)
        kmax = max([len(r.path) for r in net.requests], default=1)
        self.kmax = kmax
        self.paths = np.zeros((R, kmax), dtype=np.int64)
        self.pad = np.ones((R, kmax), dtype=bool)
        self.obj = np.array([r.obj for r in net.requests], dtype=np.int64)
        self.rate = np.array([r.rate for r in net.requests], dtype=float)
        rows, cols = [], []
        for r, req in enumerate(net.requests):
            K = len(req.path)
            self.paths[r, :K] = req.path
            self.pad[r, :K] = False
            for m in range(K - 1):
                rows.append(r * (kmax - 1) + m)
                cols.append(net.edge_index[(req.path[m + 1], req.path[m])])
        self.slots = R * (kmax - 1)
        data = np.ones(len(rows))
        # slot (r, m) carries class r's responses over edge m of its path
        self.incidence = sparse.csr_matrix((data, (rows, cols)), shape=(self.slots, net.n_edges))
        self.incidence_t = self.incidence.T.tocsr()


def empty_placement(net: CacheNetwork) -> np.ndarray:
    return np.zeros(net.shape)


def is_feasible(net: CacheNetwork, x: np.ndarray, tol: float = 1e-9) -> bool:
    x = np.asarray(x, dtype=float)
    if x.shape != net.shape:
        return False
    if np.any(x < -tol) or np.any(x > 1 + tol):
        return False
    return bool(np.all(x.sum(axis=1) <= net.capacities + tol))


def dominates(x: np.ndarray, x0: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.all(np.asarray(x) >= np.asarray(x0) - tol))


def class_rate_on_edge(net: CacheNetwork, r: int, e: tuple[int, int] | int, x: np.ndarray) -> float:
    """Rate of class-``r`` responses arriving on edge ``e = (u, v)``."""
    if isinstance(e, (int, np.integer)):
        e = net.edges[e]
    u, v = e
    req = net.requests[r]
    p = req.path
    hops = list(zip(p, p[1:]))
    if (v, u) not in hops:
        raise ModelError("class does not traverse edge")
    k = p.index(v) + 1
    x = np.asarray(x, dtype=float)
    out = req.rate
    for w in p[:k]:
        out *= 1.0 - x[w, req.obj]
    return float(out)


def load(net: CacheNetwork, x: np.ndarray) -> np.ndarray:
    """Per-edge loads; ``x`` may carry leading batch dimensions."""
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-2]
    comp = net._compiled
    if comp.slots == 0:
        return np.zeros(batch + (net.n_edges,))
    keep = 1.0 - x[..., comp.paths, comp.obj[:, None]]
    keep = np.where(comp.pad, 1.0, keep)
    surv = np.cumprod(keep, axis=-1)[..., :-1]
    flow = (surv * comp.rate[:, None]).reshape(-1, comp.slots)
    rates = (comp.incidence_t @ flow.T).T
    return rates.reshape(batch + (net.n_edges,)) / net.mu


def is_stable(net: CacheNetwork, x: np.ndarray, margin: float = 0.0) -> bool:
    return bool(np.all(load(net, x) < 1.0 - margin))
