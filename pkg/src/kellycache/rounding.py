"""Rounding a fractional placement to an integral one.

``swap_round`` merges the convex decomposition left by continuous greedy and
never looks at the objective.  ``pipage_round`` moves mass between pairs of
fractional coordinates at one node and keeps whichever endpoint has the
larger multilinear extension.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .costs import Costs
from .gradient import ENUM_CAP, EnumerationTooLarge, TaylorEstimator, fractional_coords, g_exact
from .model import CacheNetwork
from .optimize import CgTrace

__all__ = ["swap_round", "pipage_round"]


def _slots(row: np.ndarray, cap: int) -> list[int]:
    # objects cached at one node, padded with empty-slot sentinels -1, -2, ...
    objs = np.flatnonzero(row).tolist()
    return sorted(objs + [-(s + 1) for s in range(max(cap - len(objs), 0))])


def swap_round(trace: CgTrace, seed=None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    dirs = [np.asarray(m) > 0.5 for m in trace.directions]
    gam = np.asarray(trace.gammas, dtype=float)
    # consecutive identical vertices merge without any coin flip
    blocks: list[tuple[np.ndarray, float]] = []
    for m, g in zip(dirs, gam):
        if blocks and np.array_equal(blocks[-1][0], m):
            blocks[-1] = (m, blocks[-1][1] + g)
        else:
            blocks.append((m, g))
    n_nodes = len(trace.capacities)
    caps = [max(int(c), int(blocks[0][0][v].sum())) for v, c in enumerate(trace.capacities)]
    cur = [set(_slots(blocks[0][0][v], caps[v])) for v in range(n_nodes)]
    weight = blocks[0][1]
    for m, g in blocks[1:]:
        for v in range(n_nodes):
            other = set(_slots(m[v], caps[v]))
            keep = weight / (weight + g)
            while cur[v] != other:
                i = min(cur[v] - other)
                j = min(other - cur[v])
                if rng.random() < keep:
                    other.discard(j)
                    other.add(i)
                else:
                    cur[v].discard(i)
                    cur[v].add(j)
        weight += g
    x = np.zeros(blocks[0][0].shape)
    for v in range(n_nodes):
        for i in cur[v]:
            if i >= 0:
                x[v, i] = 1.0
    return x


def _snap(y: np.ndarray, tol: float) -> None:
    y[np.abs(y) < tol] = 0.0
    y[np.abs(y - 1.0) < tol] = 1.0


def pipage_round(
    net: CacheNetwork,
    costs: Costs,
    x0: np.ndarray,
    y: np.ndarray,
    g_eval: str | Callable[[np.ndarray], float] = "auto",
    L: int = 1,
    cap: int = ENUM_CAP,
    tol: float = 1e-9,
    info: dict | None = None,
) -> np.ndarray:
    """Deterministic pipage rounding.

    ``g_eval`` is ``"exact"`` (enumeration), ``"taylor"`` (surrogate built
    with order ``L``), ``"auto"`` (exact when at most ``cap`` relevant
    coordinates are fractional) or a callable returning G at a point.
    A surrogate carries no guarantee; ``info["heuristic"]`` reports it.
    """
    y = np.array(y, dtype=float)
    _snap(y, tol)
    n_frac = len(fractional_coords(net, y, tol))
    if g_eval == "auto":
        g_eval = "exact" if n_frac <= cap else "taylor"
    if g_eval == "exact":
        if n_frac > cap:
            raise EnumerationTooLarge("too many fractional coordinates for exact G; use swap rounding")
        G = lambda z: g_exact(net, costs, x0, z, cap)
        heuristic = False
    elif g_eval == "taylor":
        G = TaylorEstimator(net, costs, x0, L).surrogate_gain
        heuristic = True
    elif callable(g_eval):
        G, heuristic = g_eval, True
    else:
        raise ValueError(f"unknown G evaluation {g_eval!r}")
    steps = 0
    while True:
        frac = np.argwhere((y > tol) & (y < 1 - tol))
        if len(frac) == 0:
            break
        v = frac[0][0]
        at_v = [i for w, i in frac if w == v]
        cands = []
        if len(at_v) >= 2:
            i, j = at_v[0], at_v[1]
            a, b = y[v, i], y[v, j]
            up = y.copy()
            e = min(1 - a, b)
            up[v, i], up[v, j] = a + e, b - e
            down = y.copy()
            e = min(a, 1 - b)
            down[v, i], down[v, j] = a - e, b + e
            cands = [up, down]
        else:
            i = at_v[0]
            up = y.copy()
            up[v, i] = 1.0
            down = y.copy()
            down[v, i] = 0.0
            if up[v].sum() <= net.capacities[v] + tol:
                cands.append(up)
            cands.append(down)
        for c in cands:
            _snap(c, tol)
        vals = [G(c) for c in cands]
        y = cands[int(np.argmax(vals))]
        steps += 1
    if info is not None:
        info.update(heuristic=heuristic, steps=steps)
    return y
