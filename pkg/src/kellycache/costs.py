"""Per-edge queue cost functions C(rho) and their Taylor data.

Every shipped cost is a rational function of the load on ``[0, 1)``.  Values
use closed forms; derivatives of any order come from exact power-series
division of the numerator and denominator polynomials around the expansion
point, so no numerical differentiation is involved.

For the M/M/k kinds the argument is the per-server utilization.  Give such an
edge its aggregate rate ``k * mu_server`` and the network load is exactly that
utilization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import comb, factorial

from .model import CacheNetwork, load

__all__ = [
    "CostKind",
    "CostModel",
    "Costs",
    "TaylorCoeffs",
    "UnstableLoad",
    "queue_size",
    "delay_per_queue",
    "load_linear",
    "separable_power_series",
    "mmk_queue_prob",
    "mmk_queue_size_cost",
    "md1_queue_size",
    "polynomial",
    "value",
    "erlang_c",
    "mmk_queue_size",
    "power_series_coeffs",
    "taylor_coeffs",
    "taylor_alpha",
    "edge_costs",
    "total_cost",
    "expected_system_delay",
]


class UnstableLoad(ValueError):
    pass


class CostKind(str, Enum):
    QUEUE_SIZE = "queue_size"
    DELAY = "delay"
    LOAD = "load"
    POWER_SERIES = "power_series"
    MMK_PROB = "mmk_prob"
    MMK_SIZE = "mmk_size"
    MD1 = "md1"
    POLYNOMIAL = "polynomial"


@dataclass(frozen=True)
class CostModel:
    """A convex non-decreasing edge cost.

    ``k`` is the server count of the M/M/k kinds.  ``coeffs`` holds the
    ascending coefficients of a polynomial cost, or the increments
    ``c(n+1) - c(n)`` of a separable power-series cost, whose constant
    ``c(0)`` is ``c0``.
    """

    kind: CostKind
    k: int = 1
    coeffs: tuple[float, ...] = ()
    c0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", CostKind(self.kind))
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if self.k < 1:
            raise ValueError("server count must be at least 1")

    def rational(self) -> tuple[np.ndarray, np.ndarray]:
        """Ascending numerator and denominator coefficients in rho.

        For the delay kind the factor ``1/mu`` is left out.
        """
        K = self.kind
        if K is CostKind.QUEUE_SIZE:
            return np.array([0.0, 1.0]), np.array([1.0, -1.0])
        if K is CostKind.DELAY:
            return np.array([1.0]), np.array([1.0, -1.0])
        if K is CostKind.LOAD:
            return np.array([0.0, 1.0]), np.array([1.0])
        if K is CostKind.POWER_SERIES:
            return np.array((self.c0,) + self.coeffs), np.array([1.0])
        if K is CostKind.POLYNOMIAL:
            return np.array(self.coeffs or (0.0,)), np.array([1.0])
        if K is CostKind.MD1:
            return np.array([0.0, 2.0, -1.0]), np.array([2.0, -2.0])
        P = np.polynomial.Polynomial
        k = self.k
        a = P([0.0, 1.0])
        top = (k * a) ** k / math.factorial(k)
        head = sum(((k * a) ** n / math.factorial(n) for n in range(k)), P([0.0]))
        bottom = (1 - a) * head + top
        if K is CostKind.MMK_PROB:
            return top.coef, bottom.coef
        # E[n] = k a + a P^Q / (1 - a)
        num = k * a * (1 - a) * bottom + a * top
        den = (1 - a) * bottom
        return num.coef, den.coef

    def scale(self, mu):
        return 1.0 / np.asarray(mu, dtype=float) if self.kind is CostKind.DELAY else 1.0

    def value(self, rho, mu=1.0, strict: bool = True):
        """C(rho), elementwise.

        With ``strict`` a load of 1 or more raises :class:`UnstableLoad`;
        otherwise such entries evaluate to ``inf``.
        """
        rho = np.asarray(rho, dtype=float)
        if np.any(rho < -1e-12):
            raise ValueError("negative load")
        rho = np.maximum(rho, 0.0)
        bad = rho >= 1.0
        if strict and np.any(bad):
            raise UnstableLoad("unstable load")
        r = np.where(bad, 0.0, rho)
        K = self.kind
        if K is CostKind.QUEUE_SIZE:
            out = r / (1.0 - r)
        elif K is CostKind.DELAY:
            # an idle queue holds no packets, so it adds no delay
            out = np.where(r > 0, 1.0 / (1.0 - r), 0.0) * self.scale(mu)
        elif K is CostKind.LOAD:
            out = r.copy()
        elif K in (CostKind.POWER_SERIES, CostKind.POLYNOMIAL):
            out = np.polynomial.polynomial.polyval(r, self.rational()[0])
        elif K is CostKind.MMK_PROB:
            out = erlang_c(self.k, r)
        elif K is CostKind.MMK_SIZE:
            out = mmk_queue_size(self.k, r)
        else:
            out = r + r * r / (2.0 * (1.0 - r))
        out = np.where(bad, np.inf, out)
        return out if out.ndim else float(out)

    def taylor(self, rho0, order: int, mu=1.0) -> np.ndarray:
        """Taylor coefficients ``C^(j)(rho0) / j!`` for ``j = 0..order``.

        Uses the smooth rational form; for the delay kind that means the
        expansion ignores the drop to zero at an idle queue.
        """
        rho0 = np.asarray(rho0, dtype=float)
        flat = rho0.reshape(-1)
        num, den = self.rational()
        n = _shift(num, flat, order)
        d = _shift(den, flat, order)
        q = np.zeros((flat.size, order + 1))
        for j in range(order + 1):
            acc = n[:, j].copy()
            for i in range(1, j + 1):
                acc -= d[:, i] * q[:, j - i]
            q[:, j] = acc / d[:, 0]
        q = q.reshape(rho0.shape + (order + 1,))
        s = self.scale(mu)
        if np.ndim(s):
            s = np.asarray(s)[..., None]
        return q * s

    def derivative(self, rho, order: int, mu=1.0):
        out = self.taylor(rho, order, mu)[..., order] * math.factorial(order)
        return out if np.ndim(out) else float(out)

    def series(self, L: int, mu=1.0) -> np.ndarray:
        """Maclaurin coefficients up to degree L."""
        return self.taylor(0.0, L, mu)

    def __str__(self):
        if self.kind in (CostKind.MMK_PROB, CostKind.MMK_SIZE):
            return f"{self.kind.value}:{self.k}"
        return self.kind.value


def _shift(coef: np.ndarray, rho0: np.ndarray, order: int) -> np.ndarray:
    # coefficients of p(rho0 + t) in t, padded to order + 1 columns
    deg = len(coef) - 1
    out = np.zeros((rho0.size, max(order, deg) + 1))
    for i in range(deg + 1):
        j = np.arange(i, deg + 1)
        out[:, i] = (coef[j] * comb(j, i)) @ (rho0[None, :] ** (j - i)[:, None])
    return out[:, : order + 1]


Costs = Union[CostModel, Sequence[CostModel]]


def queue_size() -> CostModel:
    return CostModel(CostKind.QUEUE_SIZE)


def delay_per_queue() -> CostModel:
    return CostModel(CostKind.DELAY)


def load_linear() -> CostModel:
    return CostModel(CostKind.LOAD)


def separable_power_series(increments, n_max: int, c0: float = 0.0) -> CostModel:
    """Expected cost of a separable per-packet cost ``c(n)`` under geometric queue lengths."""
    return CostModel(CostKind.POWER_SERIES, coeffs=tuple(power_series_coeffs(increments, n_max)[1:]), c0=c0)


def mmk_queue_prob(k: int) -> CostModel:
    return CostModel(CostKind.MMK_PROB, k=k)


def mmk_queue_size_cost(k: int) -> CostModel:
    return CostModel(CostKind.MMK_SIZE, k=k)


def md1_queue_size() -> CostModel:
    return CostModel(CostKind.MD1)


def polynomial(coeffs: Sequence[float]) -> CostModel:
    return CostModel(CostKind.POLYNOMIAL, coeffs=tuple(coeffs))


def value(model: CostModel, rho, mu=1.0):
    return model.value(rho, mu)


def _check_util(a):
    a = np.asarray(a, dtype=float)
    if np.any(a >= 1.0):
        raise UnstableLoad("unstable load")
    if np.any(a < 0):
        raise ValueError("negative load")
    return a


def erlang_c(k: int, a):
    """Probability that an arrival to an M/M/k queue has to wait."""
    a = _check_util(a)
    ka = k * a
    head = sum(ka**n / math.factorial(n) for n in range(k))
    tail = ka**k / (math.factorial(k) * (1.0 - a))
    out = tail / (head + tail)
    return out if np.ndim(out) else float(out)


def mmk_queue_size(k: int, a):
    """Expected number of packets in an M/M/k system at per-server load ``a``."""
    a = _check_util(a)
    out = k * a + a * erlang_c(k, a) / (1.0 - a)
    return out if np.ndim(out) else float(out)


def power_series_coeffs(increments: Sequence[float] | Callable[[int], float], n_max: int) -> np.ndarray:
    """Coefficients ``a[0..n_max]`` of ``E[c(n)] - c(0)`` as a series in rho.

    With geometric queue lengths ``P(n > m) = rho**(m+1)``, so the increment
    ``c(m+1) - c(m)`` multiplies ``rho**(m+1)``.
    """
    if callable(increments):
        inc = np.array([increments(m) for m in range(n_max)], dtype=float)
    else:
        inc = np.zeros(n_max)
        given = np.asarray(increments, dtype=float)[:n_max]
        inc[: len(given)] = given
    if np.any(inc < 0):
        raise ValueError("cost not monotone")
    return np.concatenate([[0.0], inc])


@dataclass(frozen=True)
class TaylorCoeffs:
    rho_star: float
    order: int
    alpha: np.ndarray

    def __call__(self, rho):
        return np.polynomial.polynomial.polyval(rho, self.alpha)


def taylor_alpha(model: CostModel, rho_star, L: int, mu=1.0) -> np.ndarray:
    """Coefficients of the degree-L Taylor polynomial about rho_star, in powers of rho.

    ``alpha[k] = sum_{i=k..L} (-1)**(i-k) * binom(i, k) / i! * C^(i)(rho*) * rho***(i-k)``.
    Vectorized over ``rho_star``; the result has a trailing axis of length L+1.
    """
    rs = np.asarray(rho_star, dtype=float)
    d = model.taylor(rs, L, mu) * factorial(np.arange(L + 1))  # derivatives
    alpha = np.zeros(rs.shape + (L + 1,))
    for k in range(L + 1):
        for i in range(k, L + 1):
            alpha[..., k] += (-1) ** (i - k) * comb(i, k) / math.factorial(i) * d[..., i] * rs ** (i - k)
    return alpha


def taylor_coeffs(model: CostModel, rho_star: float, L: int, mu: float = 1.0) -> TaylorCoeffs:
    if not 0 <= rho_star < 1:
        raise UnstableLoad("expansion point must lie in [0, 1)")
    return TaylorCoeffs(float(rho_star), L, taylor_alpha(model, rho_star, L, mu))


def _models(costs: Costs, n_edges: int) -> list[CostModel]:
    if isinstance(costs, CostModel):
        return [costs] * n_edges
    costs = list(costs)
    if len(costs) != n_edges:
        raise ValueError("one cost model per edge is required")
    return costs


def edge_costs(costs: Costs, rho, mu, strict: bool = True) -> np.ndarray:
    """Apply per-edge costs along the last axis of ``rho``."""
    rho = np.asarray(rho, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if isinstance(costs, CostModel):
        return np.asarray(costs.value(rho, mu, strict))
    out = np.empty_like(rho)
    models = _models(costs, rho.shape[-1])
    for m in dict.fromkeys(models):
        cols = np.array([c == m for c in models])
        out[..., cols] = m.value(rho[..., cols], mu[cols], strict)
    return out


def total_cost(net: CacheNetwork, costs: Costs, x: np.ndarray, strict: bool = True):
    """Sum of edge costs; ``x`` may be batched."""
    out = edge_costs(costs, load(net, x), net.mu, strict).sum(axis=-1)
    return out if np.ndim(out) else float(out)


def expected_system_delay(net: CacheNetwork, x: np.ndarray) -> float:
    """Mean response time by Little's law, with M/M/1 queues on every edge."""
    rho = load(net, x)
    total_rate = sum(r.rate for r in net.requests)
    if total_rate == 0:
        return 0.0
    return float(np.sum(queue_size().value(rho)) / total_rate)
