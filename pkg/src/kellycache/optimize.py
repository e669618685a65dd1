"""Greedy and continuous-greedy cache placement.

Both maximize the caching gain subject to the per-node capacities, which
form a partition matroid.  Ties always go to the lowest dense index
``v * catalog_size + i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .costs import Costs, total_cost
from .gradient import (
    AT_CURRENT_LOAD,
    POWER_SERIES,
    GradientVector,
    TaylorEstimator,
    grad_exact,
    grad_sampling,
    marginal_gains,
)
from .model import CacheNetwork, ModelError, is_feasible, is_stable

__all__ = ["greedy", "lp_direction", "CgConfig", "CgTrace", "continuous_greedy", "make_estimator"]

ESTIMATORS = ("taylor", "power", "sampling", "exact")


def _check_start(net: CacheNetwork, x0: np.ndarray) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if not is_feasible(net, x0):
        raise ModelError("starting placement is infeasible")
    if not is_stable(net, x0):
        raise ModelError("no stable starting placement given")
    return x0


def greedy(net: CacheNetwork, costs: Costs, x0: np.ndarray, history: list | None = None) -> np.ndarray:
    """Add the item with the largest marginal gain until no cache has room.

    If ``history`` is a list, the chosen ``(v, i, marginal_gain)`` triples
    are appended to it.
    """
    x = _check_start(net, x0).copy()
    slack = net.capacities - x.sum(axis=1).round().astype(np.int64)
    while True:
        avail = (x < 0.5) & (slack[:, None] > 0)
        if not avail.any():
            return x
        mg = np.where(avail, marginal_gains(net, costs, x), -np.inf)
        j = int(np.argmax(mg))
        v, i = divmod(j, net.catalog_size)
        x[v, i] = 1.0
        slack[v] -= 1
        if history is not None:
            history.append((v, i, float(mg.flat[j])))


def lp_direction(net: CacheNetwork, x0: np.ndarray, g: GradientVector | np.ndarray) -> np.ndarray:
    """Maximize <m, g> over the placements that dominate x0.

    Per node: keep the mandatory items, then fill the remaining slots with
    the largest strictly positive gradient entries.
    """
    g = np.asarray(g.g if isinstance(g, GradientVector) else g, dtype=float)
    x0 = np.asarray(x0) > 0.5
    m = x0.copy()
    slack = net.capacities - x0.sum(axis=1)
    for v in range(net.n_nodes):
        if slack[v] <= 0:
            continue
        row = np.where(x0[v], -np.inf, g[v])
        order = np.argsort(-row, kind="stable")[: slack[v]]
        m[v, order[row[order] > 0]] = True
    return m


@dataclass(frozen=True)
class CgConfig:
    """Continuous-greedy settings.

    ``K`` fixes K equal steps of size 1/K; otherwise steps of size ``gamma``
    are taken with the last one clipped so the total is exactly one.
    """

    estimator: str = "taylor"
    L: int = 1
    T: int = 100
    gamma: float | None = None
    K: int | None = None
    seed: int | None = 0
    keep_iterates: bool = False

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.K is not None and self.K < 1:
            raise ValueError("K must be positive")
        if self.gamma is not None and not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")

    def steps(self) -> np.ndarray:
        if self.K is not None:
            return np.full(self.K, 1.0 / self.K)
        gamma = 0.01 if self.gamma is None else self.gamma
        K = max(1, math.ceil(1.0 / gamma - 1e-9))
        out = np.full(K, gamma)
        out[-1] = 1.0 - gamma * (K - 1)
        return out


@dataclass
class CgTrace:
    """Record of a continuous-greedy run.

    ``y`` equals ``sum(gammas[k] * directions[k])``; the directions are the
    integral vertices that swap rounding consumes.
    """

    x0: np.ndarray
    capacities: np.ndarray
    gammas: np.ndarray
    directions: list[np.ndarray]
    y: np.ndarray
    iterates: list[np.ndarray] | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.gammas)


def make_estimator(net: CacheNetwork, costs: Costs, x0: np.ndarray, cfg: CgConfig):
    """Return ``(gradient function, bias bound)`` for the configured estimator."""
    if cfg.estimator == "exact":
        return (lambda y: grad_exact(net, costs, x0, y)), 0.0
    if cfg.estimator == "sampling":
        rng = np.random.default_rng(cfg.seed)
        return (lambda y: grad_sampling(net, costs, x0, y, cfg.T, rng)), None
    expansion = AT_CURRENT_LOAD if cfg.estimator == "taylor" else POWER_SERIES
    est = TaylorEstimator(net, costs, x0, cfg.L, expansion)
    return est, est.bias_bound


def continuous_greedy(net: CacheNetwork, costs: Costs, x0: np.ndarray, cfg: CgConfig = CgConfig()) -> CgTrace:
    x0 = _check_start(net, x0)
    grad, bias = make_estimator(net, costs, x0, cfg)
    gammas = cfg.steps()
    y = x0.copy()
    directions, iterates = [], [] if cfg.keep_iterates else None
    for gk in gammas:
        if iterates is not None:
            iterates.append(y.copy())
        m = lp_direction(net, x0, grad(y))
        directions.append(m)
        y = np.clip(y + gk * (m - x0), 0.0, 1.0)
    caps = np.minimum(net.capacities, net.catalog_size)
    diagnostics = {
        "estimator": cfg.estimator,
        "K": len(gammas),
        "L": cfg.L if cfg.estimator in ("taylor", "power") else None,
        "T": cfg.T if cfg.estimator == "sampling" else None,
        "B": bias,
        "P": 2.0 * total_cost(net, costs, x0),
        "D": float(np.sqrt(caps.sum())),
        "D_loose": float(net.n_nodes * net.capacities.max(initial=0)),
    }
    if isinstance(grad, TaylorEstimator):
        diagnostics["W"] = grad.W
        diagnostics["surrogate_gain"] = grad.surrogate_gain(y)
    return CgTrace(x0, net.capacities.copy(), gammas, directions, y, iterates, diagnostics)
