"""Regenerate the topology fixtures under src/kellycache/data.

The backbone graphs are reconstructions with the published node and link
counts; their exact link sets are not public.  For the 11-node backbone the
node lettering, servers and fast links are chosen by a seeded search for an
instance where greedy is far from optimal.  Run from the repository root.
"""
from pathlib import Path

import networkx as nx
import numpy as np

from kellycache.bench import brute_force_opt
from kellycache.costs import queue_size
from kellycache.fileformat import format_instance
from kellycache.gradient import gain
from kellycache.model import CacheNetwork, empty_placement
from kellycache.optimize import greedy

DATA = Path("src/kellycache/data")

CITIES = ["SEA", "SNV", "LAX", "DEN", "KSC", "HOU", "CHI", "IND", "ATL", "WAS", "NYC"]
LINKS = [
    ("SEA", "SNV"), ("SEA", "DEN"), ("SNV", "LAX"), ("SNV", "DEN"), ("LAX", "HOU"), ("DEN", "KSC"), ("KSC", "HOU"),
    ("KSC", "IND"), ("HOU", "ATL"), ("CHI", "IND"), ("IND", "ATL"), ("CHI", "NYC"), ("ATL", "WAS"), ("WAS", "NYC"),
]


def random_backbone(n, links, seed):
    rng = np.random.default_rng(seed)
    g = nx.Graph()
    g.add_nodes_from(range(n))
    for v in range(1, n):
        g.add_edge(v, int(rng.integers(0, v)))
    while g.number_of_edges() < links:
        u, v = (int(t) for t in rng.integers(0, n, size=2))
        if u != v:
            g.add_edge(u, v)
    return g


def graph_file(g, prefix, comment):
    names = [f"{prefix}{v:02d}" for v in range(g.number_of_nodes())]
    edges = sorted({e for a, b in g.edges for e in ((a, b), (b, a))})
    net = CacheNetwork(tuple(edges), np.ones(len(edges)), np.zeros(len(names), dtype=np.int64), (), (), tuple(names))
    return format_instance(net, comment=comment)


def lettering(sources, caches):
    # sources become b and i, caches a, g and h; the rest fill the other letters
    order = {"a": caches[0], "b": sources[0], "g": caches[1], "h": caches[2], "i": sources[1]}
    rest = iter(c for c in CITIES if c not in order.values())
    return {letter: order.get(letter) or next(rest) for letter in "abcdefghijk"}


def build(letters, servers, reqs, fast, M=200.0, eps=0.05):
    city = {v: k for k, v in letters.items()}
    links = [(city[a], city[b], M if frozenset((a, b)) in fast else 2 + eps) for a, b in LINKS]
    g = nx.Graph([(city[a], city[b]) for a, b in LINKS])
    paths = []
    for obj, src in reqs:
        t = servers[obj]
        dist = nx.single_source_shortest_path_length(g, t)
        p = [src]
        while p[-1] != t:
            p.append(min(w for w in g.neighbors(p[-1]) if dist[w] == dist[p[-1]] - 1))
        paths.append((obj, p, 1.0))
    net = CacheNetwork.build(list("abcdefghijk"), links, {"a": 2, "g": 1, "h": 1}, {i: [s] for i, s in enumerate(servers)}, paths, catalog_size=4)
    if np.any(net.arrival_rates() / net.mu >= 1):
        return None
    return net


def search(tries=20000, seed=4):
    rng = np.random.default_rng(seed)
    reqs = [(0, "b"), (1, "b"), (2, "i"), (3, "i")]
    best = None
    for _ in range(tries):
        pick = [CITIES[k] for k in rng.choice(11, size=5, replace=False)]
        letters = lettering(pick[:2], pick[2:])
        servers = [str(rng.choice([c for c in "acdefghjk"])) for _ in range(4)]
        links = [frozenset((a, b)) for a, b in LINKS]
        inv = {v: k for k, v in letters.items()}
        lettered = [frozenset(inv[c] for c in e) for e in links]
        fast = {lettered[k] for k in rng.choice(len(lettered), size=3, replace=False)}
        LINKS_L = [tuple(sorted(e)) for e in lettered]
        net = build_lettered(LINKS_L, servers, reqs, fast)
        if net is None:
            continue
        c = queue_size()
        x0 = empty_placement(net)
        _, opt = brute_force_opt(net, c, x0)
        if opt <= 1e-9:
            continue
        ratio = gain(net, c, x0, greedy(net, c, x0)) / opt
        if best is None or ratio < best[0]:
            best = (ratio, LINKS_L, servers, fast, letters)
    return best


def build_lettered(links_l, servers, reqs, fast, M=200.0, eps=0.05):
    links = [(a, b, M if frozenset((a, b)) in fast else 2 + eps) for a, b in links_l]
    g = nx.Graph([(a, b) for a, b in links_l])
    paths = []
    for obj, src in reqs:
        t = servers[obj]
        if t == src:
            return None
        dist = nx.single_source_shortest_path_length(g, t)
        p = [src]
        while p[-1] != t:
            p.append(min(w for w in g.neighbors(p[-1]) if dist[w] == dist[p[-1]] - 1))
        paths.append((obj, p, 1.0))
    net = CacheNetwork.build(list("abcdefghijk"), sorted(links), {"a": 2, "g": 1, "h": 1}, {i: [s] for i, s in enumerate(servers)}, paths, catalog_size=4)
    if np.any(net.arrival_rates() / net.mu >= 1):
        return None
    return net


if __name__ == "__main__":
    DATA.mkdir(parents=True, exist_ok=True)
    note = "reconstruction: node and link counts match the published backbone, link set does not"
    (DATA / "geant.txt").write_text(graph_file(random_backbone(22, 33, 2), "g", note))
    (DATA / "dtelekom.txt").write_text(graph_file(random_backbone(68, 273, 3), "t", note))
    ratio, links_l, servers, fast, letters = search()
    print("abilene greedy/optimum", ratio, servers, sorted(tuple(sorted(f)) for f in fast), letters)
    reqs = [(0, "b"), (1, "b"), (2, "i"), (3, "i")]
    full = build_lettered(links_l, servers, reqs, fast)
    cities = ", ".join(f"{k}={v}" for k, v in letters.items())
    head = (
        "reconstruction of the 11-node backbone (" + cities + ")\n"
        "4 requests from b and i, caches at a, g, h, three fast links; queue-size cost"
    )
    (DATA / "abilene.txt").write_text(format_instance(full, queue_size(), head))
    two = build_lettered(links_l, servers, [(0, "b"), (2, "i")], fast)
    (DATA / "abilene_r2.txt").write_text(format_instance(two, queue_size(), "two-request variant of the abilene reconstruction"))
