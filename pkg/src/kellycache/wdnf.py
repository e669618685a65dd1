"""Weighted disjunctive normal form polynomials.

A W-DNF polynomial is ``f(x) = sum_s beta_s * prod_{j in I(s)} (1 - x_j)``
with ``beta_s >= 0``.  Because ``(1 - x)**2 == 1 - x`` on binary inputs, a
product of two such polynomials is again one: the index sets of the factors
are united.  Evaluating ``f`` at a fractional ``y`` gives the expectation of
``f(x)`` when each ``x_j`` is an independent Bernoulli(``y_j``).

Variables use the dense ``v * catalog_size + i`` index of placements, so a
placement array can be passed directly after flattening.
"""
from __future__ import annotations

import os
from typing import Iterable, Mapping

import numpy as np

from .model import CacheNetwork

__all__ = ["WdnfPoly", "TermCapExceeded", "term_cap", "load_poly", "multiply", "power", "evaluate"]

DEFAULT_TERM_CAP = 10**6


class TermCapExceeded(RuntimeError):
    pass


def term_cap() -> int:
    raw = os.environ.get("KELLYCACHE_TERM_CAP")
    return int(raw) if raw else DEFAULT_TERM_CAP


class WdnfPoly:
    """Immutable W-DNF polynomial.

    Terms map a sorted tuple of variable indices to a non-negative weight;
    the empty tuple is the constant term.
    """

    __slots__ = ("_terms", "_groups")

    def __init__(self, terms: Mapping[Iterable[int], float] | Iterable[tuple[float, Iterable[int]]] = ()):
        items = terms.items() if isinstance(terms, Mapping) else ((idx, b) for b, idx in terms)
        out: dict[tuple[int, ...], float] = {}
        for idx, beta in items:
            if beta < 0:
                raise ValueError("W-DNF weights must be non-negative")
            key = tuple(sorted(set(int(j) for j in idx)))
            out[key] = out.get(key, 0.0) + float(beta)
        self._terms = {k: b for k, b in out.items() if b != 0.0}
        self._groups = None

    @classmethod
    def constant(cls, c: float = 1.0) -> "WdnfPoly":
        return cls({(): c})

    @property
    def terms(self) -> dict[tuple[int, ...], float]:
        return dict(self._terms)

    def __len__(self):
        return len(self._terms)

    def __eq__(self, other):
        if not isinstance(other, WdnfPoly) or self._terms.keys() != other._terms.keys():
            return False
        return all(np.isclose(b, other._terms[k], rtol=1e-12, atol=0) for k, b in self._terms.items())

    def __repr__(self):
        body = " + ".join(f"{b:g}*{list(k)}" for k, b in sorted(self._terms.items()))
        return f"WdnfPoly({body or '0'})"

    def __mul__(self, other: "WdnfPoly") -> "WdnfPoly":
        return multiply(self, other)

    def variables(self) -> list[int]:
        return sorted({j for k in self._terms for j in k})

    def _compiled(self):
        # terms grouped by degree: (index matrix, weights)
        if self._groups is None:
            by_deg: dict[int, list] = {}
            for k, b in self._terms.items():
                by_deg.setdefault(len(k), []).append((k, b))
            groups = []
            for deg, items in sorted(by_deg.items()):
                idx = np.array([k for k, _ in items], dtype=np.int64).reshape(len(items), deg)
                groups.append((idx, np.array([b for _, b in items])))
            self._groups = groups
        return self._groups

    def evaluate(self, y) -> float:
        y = np.asarray(y, dtype=float).reshape(-1)
        total = 0.0
        for idx, beta in self._compiled():
            total += float(beta @ np.prod(1.0 - y[idx], axis=1))
        return total

    def evaluate_rows(self, Y) -> np.ndarray:
        """Evaluate at every row of a 2-D array."""
        Y = np.asarray(Y, dtype=float)
        out = np.zeros(Y.shape[0])
        for idx, beta in self._compiled():
            out += np.prod(1.0 - Y[:, idx], axis=2) @ beta
        return out

    def pinned(self, y, j: int, bit: float) -> float:
        y = np.array(y, dtype=float).reshape(-1)
        y[j] = bit
        return self.evaluate(y)

    def pin_difference(self, y) -> np.ndarray:
        """Vector of ``f(y with y_j = 0) - f(y with y_j = 1)`` over all j.

        Since f is affine in each coordinate this is the sum, over terms
        containing j, of the term's weight times the product of its other
        factors.  Computed for all j at once with prefix/suffix products.
        """
        y = np.asarray(y, dtype=float).reshape(-1)
        out = np.zeros(y.size)
        for idx, beta in self._compiled():
            deg = idx.shape[1]
            if deg == 0:
                continue
            f = 1.0 - y[idx]
            pre = np.ones_like(f)
            suf = np.ones_like(f)
            pre[:, 1:] = np.cumprod(f[:, :-1], axis=1)
            suf[:, :-1] = np.cumprod(f[:, :0:-1], axis=1)[:, ::-1]
            np.add.at(out, idx.reshape(-1), (pre * suf * beta[:, None]).reshape(-1))
        return out


def multiply(f1: WdnfPoly, f2: WdnfPoly) -> WdnfPoly:
    cap = term_cap()
    out: dict[tuple[int, ...], float] = {}
    right = [(set(k), b) for k, b in f2._terms.items()]
    for k1, b1 in f1._terms.items():
        for s2, b2 in right:
            key = tuple(sorted(s2.union(k1)))
            out[key] = out.get(key, 0.0) + b1 * b2
        if len(out) > cap:
            raise TermCapExceeded(f"W-DNF product exceeds {cap} terms; reduce L or network size")
    return WdnfPoly(out)


def power(f: WdnfPoly, k: int) -> WdnfPoly:
    """``f**k``; ``k = 0`` gives the constant 1."""
    if k < 0:
        raise ValueError("power must be non-negative")
    out = WdnfPoly.constant(1.0)
    for _ in range(k):
        out = multiply(out, f)
    return out


def evaluate(f: WdnfPoly, y) -> float:
    return f.evaluate(y)


def load_poly(net: CacheNetwork, e: tuple[int, int] | int) -> WdnfPoly:
    """The load of edge ``e = (u, v)`` as a W-DNF polynomial in the placement."""
    if isinstance(e, (int, np.integer)):
        e = net.edges[e]
    u, v = e
    mu = net.mu[net.edge_index[(u, v)]]
    C = net.catalog_size
    terms = []
    for req in net.requests:
        p = req.path
        for m in range(len(p) - 1):
            if p[m] == v and p[m + 1] == u:
                terms.append((req.rate / mu, [w * C + req.obj for w in p[: m + 1]]))
    return WdnfPoly(terms)
