"""Instances, baselines and the experiment harness.

Generated instances follow one recipe: pick a graph, place one designated
server per object uniformly at random, pick the request sources, route every
request along a hop-count shortest path, then give each edge a low or a high
service rate so that the network is stable with empty caches.
"""
from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Sequence

import networkx as nx
import numpy as np

from .costs import CostModel, Costs, delay_per_queue, queue_size, total_cost
from .fileformat import FormatError, parse_cost, parse_instance, read_instance
from .gradient import EnumerationTooLarge, gain
from .model import CacheNetwork, ModelError, RequestClass, empty_placement, load
from .optimize import CgConfig, continuous_greedy, greedy
from .rounding import pipage_round, swap_round

__all__ = [
    "Instance",
    "FIXTURES",
    "gen_topology",
    "path_fig3",
    "gen_demands",
    "assign_service_rates",
    "brute_force_opt",
    "rnd_placement",
    "rnd_mean_gain",
    "load_instance",
    "build_instance",
    "ExperimentSpec",
    "run_algorithm",
    "run_experiment",
    "mm1k_counterexample",
]

FIXTURES = ("abilene", "abilene-r2", "geant", "dtelekom")
ALGORITHMS = ("greedy", "cg-taylor", "cg-power", "cg-sample", "cg-exact", "rnd", "brute")


@dataclass
class Instance:
    name: str
    net: CacheNetwork
    costs: Costs
    x0: np.ndarray


def _skeleton(g: nx.Graph, names: Sequence[str] | None = None) -> CacheNetwork:
    g = nx.convert_node_labels_to_integers(g, ordering="sorted")
    edges = sorted({(u, v) for a, b in g.edges for u, v in ((a, b), (b, a))})
    n = g.number_of_nodes()
    return CacheNetwork(tuple(edges), np.ones(len(edges)), np.zeros(n, dtype=np.int64), (), (), tuple(names or ()))


def path_fig3(delta: float = 0.5, M: float = 200.0) -> CacheNetwork:
    """Four-node chain v - u - w - z on which greedy is close to half-optimal.

    Node u requests object 0 (server v) and object 1 (server z), both at rate
    delta.  Nodes u and w hold one item each; link u-w is fast (rate M).
    """
    return CacheNetwork.build(
        ["u", "v", "w", "z"],
        [("u", "v", 1.0), ("u", "w", M), ("w", "z", 1.0)],
        {"u": 1, "w": 1},
        {0: ["v"], 1: ["z"]},
        [(0, ["u", "v"], delta), (1, ["u", "w", "z"], delta)],
    )


def _fixture_text(name: str) -> str:
    return resources.files("kellycache").joinpath("data", f"{name.replace('-', '_')}.txt").read_text()


def gen_topology(kind: str, seed: int | None = None, **params) -> CacheNetwork:
    """Graph-only network: unit service rates, no caches, no catalog.

    ``path_fig3`` and ``file`` return complete instances instead.
    """
    if kind == "erdos_renyi":
        g = nx.gnp_random_graph(params["n"], params["p"], seed=seed)
        if not nx.is_connected(g):
            raise ModelError("generated graph is disconnected; try another seed")
        return _skeleton(g)
    if kind == "hypercube":
        return _skeleton(nx.hypercube_graph(params["d"]))
    if kind == "star":
        return _skeleton(nx.star_graph(params["n"] - 1))
    if kind == "path_fig3":
        return path_fig3(params.get("delta", 0.5), params.get("M", 200.0))
    if kind == "file":
        return read_instance(params["path"])[0]
    if kind in FIXTURES:
        net = parse_instance(_fixture_text(kind))[0]
        return net.replace(servers=(), requests=(), capacities=np.zeros(net.n_nodes, dtype=np.int64), mu=np.ones(net.n_edges))
    raise ValueError(f"unknown topology {kind!r}")


def _graph(net: CacheNetwork) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(range(net.n_nodes))
    g.add_edges_from(net.edges)
    return g


def _route(dist: dict[int, int], adj: list[list[int]], src: int, dst: int) -> list[int]:
    # walk down the distance field, lowest-index neighbour first
    if src not in dist:
        raise ModelError(f"no path from node {src} to node {dst}")
    path = [src]
    while path[-1] != dst:
        here = dist[path[-1]]
        path.append(next(w for w in adj[path[-1]] if dist.get(w) == here - 1))
    return path


def gen_demands(
    net: CacheNetwork,
    n_objects: int,
    n_requests: int,
    n_sources: int,
    law: str = "powerlaw",
    rate: float = 1.0,
    seed: int | None = None,
    exponent: float = 1.2,
    capacity: int | Sequence[int] | None = None,
) -> CacheNetwork:
    """Add designated servers and request classes (and optionally capacities)."""
    if min(n_objects, n_requests, n_sources) < 1:
        raise ValueError("counts must be positive")
    if law == "powerlaw" and exponent <= 1:
        raise ValueError("power-law exponent must exceed 1")
    n = net.n_nodes
    if n_sources > n:
        raise ValueError("more sources than nodes")
    rng = np.random.default_rng(seed)
    server = rng.integers(0, n, size=n_objects)
    sources = rng.choice(n, size=n_sources, replace=False)
    if law == "powerlaw":
        w = np.arange(1, n_objects + 1, dtype=float) ** -exponent
        objs = rng.choice(n_objects, size=n_requests, p=w / w.sum())
    elif law == "uniform":
        objs = rng.integers(0, n_objects, size=n_requests)
    else:
        raise ValueError(f"unknown demand law {law!r}")
    srcs = sources[rng.integers(0, n_sources, size=n_requests)]
    g = _graph(net)
    adj = [sorted(g.neighbors(v)) for v in range(n)]
    dists: dict[int, dict[int, int]] = {}
    servers = tuple(frozenset([int(s)]) for s in server)
    reqs = []
    for i, s in zip(objs.tolist(), srcs.tolist()):
        t = int(server[i])
        if t not in dists:
            dists[t] = nx.single_source_shortest_path_length(g, t)
        path = _route(dists[t], adj, s, t)
        cut = next(k for k, w in enumerate(path) if w in servers[i])
        reqs.append(RequestClass(int(i), tuple(path[: cut + 1]), float(rate)))
    caps = net.capacities
    if capacity is not None:
        caps = np.broadcast_to(np.asarray(capacity, dtype=np.int64), (n,)).copy()
    return net.replace(servers=servers, requests=tuple(reqs), capacities=caps)


def assign_service_rates(
    net: CacheNetwork, seed: int | None = None, low: float = 1.05, high: float = 200.0, p_low: float = 0.7
) -> CacheNetwork:
    """Slow edges get ``low * lambda_max``, fast ones ``high * lambda_max``.

    The busiest edges are always slow; every other edge is slow with
    probability ``p_low``.
    """
    lam = net.arrival_rates()
    lam_max = float(lam.max(initial=0.0)) or 1.0
    rng = np.random.default_rng(seed)
    draw = rng.random(net.n_edges)
    slow = np.isclose(lam, lam_max, rtol=1e-12, atol=0) | (draw < p_low)
    return net.replace(mu=np.where(slow, low * lam_max, high * lam_max))


def brute_force_opt(net: CacheNetwork, costs: Costs, x0: np.ndarray | None = None, cap: int = 10**6):
    """Exhaustive optimum; returns ``(placement, gain)``.

    Only maximal choices of relevant items are enumerated (the gain is
    monotone and irrelevant items never change it).  Among equal gains the
    first placement in lexicographic enumeration order wins.
    """
    x0 = empty_placement(net) if x0 is None else np.asarray(x0, dtype=float)
    options = []
    for v in range(net.n_nodes):
        slack = int(net.capacities[v] - x0[v].sum().round())
        cand = np.flatnonzero(net.relevant[v] & (x0[v] < 0.5)).tolist()
        options.append(list(itertools.combinations(cand, max(0, min(slack, len(cand))))))
    count = int(np.prod([len(o) for o in options], dtype=float))
    if count > cap:
        raise EnumerationTooLarge("instance too large for oracle")
    base = total_cost(net, costs, x0)
    best_x, best_g = x0.copy(), 0.0
    it = itertools.product(*options)
    while True:
        chunk = list(itertools.islice(it, 4096))
        if not chunk:
            break
        X = np.repeat(x0[None], len(chunk), axis=0)
        for b, choice in enumerate(chunk):
            for v, objs in enumerate(choice):
                X[b, v, list(objs)] = 1.0
        gains = base - total_cost(net, costs, X)
        k = int(np.argmax(gains))
        if gains[k] > best_g + 1e-12 * max(1.0, abs(best_g)):
            best_x, best_g = X[k], float(gains[k])
    return best_x, best_g


def rnd_placement(net: CacheNetwork, seed=None, x0: np.ndarray | None = None) -> np.ndarray:
    """Fill every cache with items drawn uniformly without replacement."""
    rng = np.random.default_rng(seed)
    x = empty_placement(net) if x0 is None else np.array(x0, dtype=float)
    for v in range(net.n_nodes):
        free = np.flatnonzero(x[v] < 0.5)
        k = min(int(net.capacities[v] - x[v].sum().round()), len(free))
        if k > 0:
            x[v, rng.choice(free, size=k, replace=False)] = 1.0
    return x


def rnd_mean_gain(net: CacheNetwork, costs: Costs, x0=None, seed=None, repeats: int = 10) -> float:
    x0 = empty_placement(net) if x0 is None else x0
    kids = np.random.SeedSequence(seed).spawn(repeats)
    return float(np.mean([gain(net, costs, x0, rnd_placement(net, np.random.default_rng(k), x0)) for k in kids]))


def load_instance(source: str, cost: CostModel | None = None) -> Instance:
    """A builtin instance (``path-fig3``, ``abilene``, ``abilene-r2``) or a file.

    The cost defaults to the one recorded with the instance, else queue size.
    """
    if source in ("path-fig3", "path_fig3"):
        net, hint = path_fig3(), delay_per_queue()
    elif source in ("abilene", "abilene-r2"):
        net, hint = parse_instance(_fixture_text(source))
    else:
        try:
            net, hint = read_instance(source)
        except FileNotFoundError as exc:
            raise FormatError(f"no such instance: {source}") from exc
    return Instance(source, net, cost or hint or queue_size(), empty_placement(net))


@dataclass
class ExperimentSpec:
    """One experiment: an instance recipe, algorithms and seeds.

    ``topology`` holds ``kind`` plus generator parameters, e.g.
    ``{"kind": "erdos_renyi", "n": 100, "p": 0.1}``, ``{"kind": "geant"}``,
    ``{"kind": "path_fig3"}`` or ``{"kind": "file", "path": ...}``.  Complete
    instances (``path_fig3``, ``abilene``, files with requests) ignore the
    demand fields.  When ``service_rate`` is set, service rates are assigned
    with every request at that rate and the requests then run at ``rate``.
    """

    experiment_id: str
    topology: dict
    catalog: int = 10
    requests: int = 100
    sources: int = 4
    capacity: int = 2
    law: str = "powerlaw"
    exponent: float = 1.2
    rate: float = 1.0
    service_rate: float | None = None
    instance_seed: int = 0
    cost: str | None = None
    algorithms: list[str] = field(default_factory=lambda: ["greedy", "cg-taylor", "rnd"])
    seeds: list[int] = field(default_factory=lambda: [1])
    L: int = 1
    T: int = 500
    gamma: float | None = 0.001
    K: int | None = None
    rounding: str = "swap"
    normalize: bool = False
    output: str | None = None

    def __post_init__(self):
        if not isinstance(self.topology, dict) or "kind" not in self.topology:
            raise ValueError("topology must be a mapping with a 'kind'")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {a!r}")
        if min(self.catalog, self.requests, self.sources) < 1 or self.capacity < 0:
            raise ValueError("counts must be positive")
        if self.law == "powerlaw" and self.exponent <= 1:
            raise ValueError("power-law exponent must exceed 1")
        if self.rounding not in ("swap", "pipage"):
            raise ValueError("rounding must be 'swap' or 'pipage'")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError("experiment spec must be a JSON object")
        return cls(**data)


def _scaled(net: CacheNetwork, rate: float) -> CacheNetwork:
    return net.replace(requests=tuple(RequestClass(r.obj, r.path, rate) for r in net.requests))


def build_instance(spec: ExperimentSpec) -> Instance:
    topo = dict(spec.topology)
    kind = topo.pop("kind")
    hint = None
    if kind in ("path_fig3", "path-fig3"):
        net, hint = path_fig3(**topo), delay_per_queue()
    elif kind in ("abilene", "abilene-r2") and not topo.pop("graph_only", False):
        net, hint = parse_instance(_fixture_text(kind))
    elif kind == "file":
        net, hint = read_instance(topo["path"])
    else:
        net = gen_topology(kind, seed=spec.instance_seed, **topo)
    if not net.requests:
        first = spec.rate if spec.service_rate is None else spec.service_rate
        net = gen_demands(net, spec.catalog, spec.requests, spec.sources, spec.law, first, spec.instance_seed, spec.exponent, spec.capacity)
        net = assign_service_rates(net, spec.instance_seed)
        if spec.service_rate is not None:
            net = _scaled(net, spec.rate)
    costs = parse_cost(spec.cost) if spec.cost else (hint or queue_size())
    return Instance(kind, net, costs, empty_placement(net))


def run_algorithm(inst: Instance, alg: str, seed: int, L=1, T=500, gamma=0.001, K=None, rounding="swap") -> tuple[np.ndarray, dict]:
    """Run one placement algorithm; returns the placement and diagnostics."""
    net, costs, x0 = inst.net, inst.costs, inst.x0
    if alg == "greedy":
        return greedy(net, costs, x0), {}
    if alg == "brute":
        return brute_force_opt(net, costs, x0)[0], {}
    if alg == "rnd":
        return rnd_placement(net, seed, x0), {}
    est = {"cg-taylor": "taylor", "cg-power": "power", "cg-sample": "sampling", "cg-exact": "exact"}[alg]
    cfg = CgConfig(estimator=est, L=L, T=T, gamma=gamma, K=K, seed=seed)
    trace = continuous_greedy(net, costs, x0, cfg)
    diag = dict(trace.diagnostics)
    if rounding == "swap":
        x = swap_round(trace, seed)
    else:
        info: dict = {}
        x = pipage_round(net, costs, x0, trace.y, "auto", L=L, info=info)
        diag["rounding_heuristic"] = info["heuristic"]
    return x, diag


def _cell(args):
    inst, spec, alg, seed = args
    t0 = time.perf_counter()
    if alg == "rnd":
        value = rnd_mean_gain(inst.net, inst.costs, inst.x0, seed)
    else:
        x, _ = run_algorithm(inst, alg, seed, spec.L, spec.T, spec.gamma, spec.K, spec.rounding)
        value = gain(inst.net, inst.costs, inst.x0, x)
    return value, time.perf_counter() - t0


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> list[dict]:
    """One row per (algorithm, seed), sorted by algorithm order then seed.

    The ``rnd`` row reports the mean over ten placements seeded from the
    row's seed; with ``normalize`` every gain is divided by that mean.
    """
    inst = build_instance(spec)
    cells = [(alg, s) for alg in spec.algorithms for s in spec.seeds]
    work = [(inst, spec, a, s) for a, s in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell, work))
    else:
        results = [_cell(w) for w in work]
    rnd = {}
    if spec.normalize:
        rnd = {s: rnd_mean_gain(inst.net, inst.costs, inst.x0, s) for s in spec.seeds}
    echo = {k: v for k, v in asdict(spec).items() if k not in ("experiment_id", "algorithms", "seeds", "output")}
    echo["cost"] = str(inst.costs) if isinstance(inst.costs, CostModel) else "per-edge"
    params = json.dumps(echo, sort_keys=True, separators=(",", ":"))
    rows = []
    for (alg, s), (value, secs) in zip(cells, results):
        norm = value / rnd[s] if spec.normalize and rnd[s] > 0 else None
        rows.append(
            dict(
                experiment_id=spec.experiment_id,
                topology=inst.name,
                algorithm=alg,
                seed=s,
                gain=value,
                normalized_gain=norm,
                wallclock_seconds=secs,
                params_json=params,
            )
        )
    return rows


def mm1k_counterexample(lam: float = 0.9, mu: float = 1.0, k: int = 2) -> dict:
    """Loads of a three-node line of M/M/1/k queues under all four placements.

    Node 1 requests object 1 from node 3 via node 2; ``x11``/``x21`` say
    whether node 1/node 2 caches it.  Losses at the queue (3,2) thin the
    flow reaching (2,1), which breaks monotonicity and both modularity
    directions of the loads.
    """

    def drop(rho):
        return rho**k * (1 - rho) / (1 - rho ** (k + 1)) if rho > 0 else 0.0

    def loads(x11, x21):
        r32 = lam * (1 - x11) * (1 - x21) / mu
        r21 = lam * (1 - x11) * (1 - drop(r32)) / mu
        return r32, r21

    table = {f"{a}{b}": loads(a, b) for a in (0, 1) for b in (0, 1)}
    p = drop(lam / mu)
    # A = {}, B = {(1,1)}, element e = (2,1)
    inc32_A = table["01"][0] - table["00"][0]
    inc32_B = table["11"][0] - table["10"][0]
    inc21_A = table["01"][1] - table["00"][1]
    inc21_B = table["11"][1] - table["10"][1]
    return {
        "drop_probability": p,
        "table": table,
        "expected": {
            "00": (lam / mu, lam * (1 - p) / mu),
            "10": (0.0, 0.0),
            "01": (0.0, lam / mu),
            "11": (0.0, 0.0),
        },
        "non_monotone": table["01"][1] > table["00"][1],
        "increments": {"rho32": (inc32_A, inc32_B), "rho21": (inc21_A, inc21_B)},
        "rho32_not_submodular": inc32_A < inc32_B,
        "rho21_not_supermodular": inc21_A > inc21_B,
    }
