"""Plain-text instance files and result CSVs.

Instance format, one record per line, ``#`` starts a comment::

    nodes 4 u v w z          # count, then optional names
    edge u v 1.0             # directed edge and its service rate
    cap u 1                  # cache slots at a node
    server 0 v               # designated server of object 0
    request 0 0.5 u v        # object, rate, request path
    catalog 2                # optional, defaults to 1 + largest server object
    cost delay               # optional default edge cost for this instance

Nodes are referred to by name when names are given, otherwise by index.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .costs import CostKind, CostModel
from .model import CacheNetwork, ModelError, RequestClass

__all__ = ["FormatError", "parse_instance", "read_instance", "format_instance", "parse_cost", "write_results", "fmt"]

CSV_COLUMNS = ["experiment_id", "topology", "algorithm", "seed", "gain", "normalized_gain", "wallclock_seconds", "params_json"]


class FormatError(ValueError):
    pass


def fmt(v) -> str:
    """Nine significant digits, locale independent."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".9g")


_COST_ALIASES = {
    "queue": CostKind.QUEUE_SIZE,
    "queue_size": CostKind.QUEUE_SIZE,
    "delay": CostKind.DELAY,
    "load": CostKind.LOAD,
    "md1": CostKind.MD1,
    "mmk_prob": CostKind.MMK_PROB,
    "mmk_size": CostKind.MMK_SIZE,
}


def parse_cost(text: str) -> CostModel:
    """``queue_size``, ``delay``, ``load``, ``md1``, ``mmk_size:2``, ``mmk_prob:3``."""
    name, _, arg = text.strip().replace(" ", ":").partition(":")
    if name not in _COST_ALIASES:
        raise FormatError(f"unknown cost {text!r}")
    kind = _COST_ALIASES[name]
    if kind in (CostKind.MMK_PROB, CostKind.MMK_SIZE):
        return CostModel(kind, k=int(arg or 1))
    if arg:
        raise FormatError(f"cost {name!r} takes no parameter")
    return CostModel(kind)


def parse_instance(text: str) -> tuple[CacheNetwork, CostModel | None]:
    names: list[str] | None = None
    ids: dict[str, int] = {}
    edges, mus, caps, servers, requests = [], [], {}, {}, []
    catalog = None
    cost = None

    def node(tok, ln):
        if tok not in ids:
            raise FormatError(f"line {ln}: unknown node {tok!r}")
        return ids[tok]

    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split()
        if not line:
            continue
        key, args = line[0], line[1:]
        try:
            if key == "nodes":
                if names is not None:
                    raise FormatError(f"line {ln}: repeated nodes record")
                n = int(args[0])
                names = args[1:] if len(args) > 1 else [str(k) for k in range(n)]
                if len(names) != n or len(set(names)) != n:
                    raise FormatError(f"line {ln}: expected {n} distinct node names")
                ids = {s: k for k, s in enumerate(names)}
                continue
            if names is None:
                raise FormatError(f"line {ln}: 'nodes' must come first")
            if key == "edge":
                u, v, m = args
                edges.append((node(u, ln), node(v, ln)))
                mus.append(float(m))
            elif key == "cap":
                v, c = args
                caps[node(v, ln)] = int(c)
            elif key == "server":
                i, v = args
                servers.setdefault(int(i), set()).add(node(v, ln))
            elif key == "request":
                i, rate, *path = args
                if not path:
                    raise FormatError(f"line {ln}: request without a path")
                requests.append(RequestClass(int(i), tuple(node(w, ln) for w in path), float(rate)))
            elif key == "catalog":
                (c,) = args
                catalog = int(c)
            elif key == "cost":
                cost = parse_cost(":".join(args))
            else:
                raise FormatError(f"line {ln}: unknown record {key!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"line {ln}: malformed {key!r} record") from exc
    if names is None:
        raise FormatError("missing 'nodes' record")
    n_obj = catalog if catalog is not None else (max(servers) + 1 if servers else 0)
    cap_arr = np.zeros(len(names), dtype=np.int64)
    for v, c in caps.items():
        cap_arr[v] = c
    try:
        net = CacheNetwork(
            tuple(edges),
            np.array(mus, dtype=float),
            cap_arr,
            tuple(frozenset(servers.get(i, ())) for i in range(n_obj)),
            tuple(requests),
            tuple(names),
        )
    except ModelError as exc:
        raise FormatError(str(exc)) from exc
    return net, cost


def read_instance(path: str | Path) -> tuple[CacheNetwork, CostModel | None]:
    return parse_instance(Path(path).read_text())


def format_instance(net: CacheNetwork, cost: CostModel | None = None, comment: str | None = None) -> str:
    nm = net.node_names
    out = []
    if comment:
        out += [f"# {line}" for line in comment.splitlines()]
    out.append(f"nodes {net.n_nodes} " + " ".join(nm))
    out.append(f"catalog {net.catalog_size}")
    if cost is not None:
        out.append(f"cost {cost}")
    for (u, v), m in zip(net.edges, net.mu):
        out.append(f"edge {nm[u]} {nm[v]} {fmt(m)}")
    for v, c in enumerate(net.capacities):
        if c:
            out.append(f"cap {nm[v]} {c}")
    for i, S in enumerate(net.servers):
        for v in sorted(S):
            out.append(f"server {i} {nm[v]}")
    for r in net.requests:
        out.append(f"request {r.obj} {fmt(r.rate)} " + " ".join(nm[w] for w in r.path))
    return "\n".join(out) + "\n"


def write_results(rows: list[dict], dest=None, timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow(
            [
                row["experiment_id"],
                row["topology"],
                row["algorithm"],
                row["seed"],
                fmt(row["gain"]),
                fmt(row.get("normalized_gain")),
                fmt(row["wallclock_seconds"]) if timing else "",
                row["params_json"],
            ]
        )
    text = buf.getvalue()
    if dest is not None:
        Path(dest).write_text(text)
    return text
