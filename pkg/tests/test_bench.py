import json

import networkx as nx
import numpy as np
import pytest
from oracles import brute_opt, c_queue, random_instance
from scipy import stats

from kellycache import bench
from kellycache.costs import delay_per_queue, queue_size
from kellycache.gradient import EnumerationTooLarge
from kellycache.model import empty_placement, is_stable, load


def test_topology_sizes():
    h = bench.gen_topology("hypercube", d=7)
    assert (h.n_nodes, h.n_edges) == (128, 896)
    s = bench.gen_topology("star", n=100)
    assert (s.n_nodes, s.n_edges) == (100, 198)
    er = bench.gen_topology("erdos_renyi", seed=4, n=100, p=0.1)
    assert er.n_nodes == 100
    assert abs(er.n_edges - 2 * 4950 * 0.1) <= 0.1 * 990
    with pytest.raises(ValueError):
        bench.gen_topology("torus")


@pytest.mark.parametrize("name,nodes,edges", [("geant", 22, 66), ("dtelekom", 68, 546), ("abilene", 11, 28)])
def test_fixture_sizes(name, nodes, edges):
    net = bench.gen_topology(name)
    assert (net.n_nodes, net.n_edges) == (nodes, edges)


def test_abilene_fixtures_are_complete_and_stable():
    for name in ("abilene", "abilene-r2"):
        inst = bench.load_instance(name)
        assert inst.net.requests and is_stable(inst.net, inst.x0)


def test_chain_generator(chain):
    x0 = empty_placement(chain)
    rho = dict(zip(chain.edges, load(chain, x0)))
    u, v, w, z = range(4)
    assert rho[(v, u)] == pytest.approx(0.5)
    assert rho[(z, w)] == pytest.approx(0.5)
    assert rho[(w, u)] == pytest.approx(0.0025)
    assert rho[(u, v)] == 0.0


def test_demands_single_source_single_object():
    net = bench.gen_demands(bench.gen_topology("star", n=6), 1, 20, 1, seed=3)
    assert len({(r.obj, r.path) for r in net.requests}) == 1


def test_demands_are_well_routed_shortest_paths():
    net = bench.gen_topology("hypercube", d=4)
    net = bench.gen_demands(net, 5, 50, 4, seed=9, capacity=1)
    g = nx.Graph(list(net.edges))
    for r in net.requests:
        t = r.path[-1]
        assert t in net.servers[r.obj]
        assert len(r.path) - 1 == nx.shortest_path_length(g, r.path[0], t)
    assert np.all(net.capacities == 1)


def test_powerlaw_rank_one_frequency():
    net = bench.gen_topology("star", n=5)
    n = 10_000
    out = bench.gen_demands(net, 300, n, 2, "powerlaw", seed=17, exponent=1.2)
    hits = sum(r.obj == 0 for r in out.requests)
    w = np.arange(1, 301, dtype=float) ** -1.2
    p = w[0] / w.sum()
    assert abs(hits - n * p) <= 3 * np.sqrt(n * p * (1 - p))


def test_uniform_law_chi_square():
    net = bench.gen_topology("star", n=5)
    out = bench.gen_demands(net, 20, 10_000, 2, "uniform", seed=21)
    counts = np.bincount([r.obj for r in out.requests], minlength=20)
    assert stats.chisquare(counts).pvalue > 0.01


def test_service_rates_keep_empty_caches_stable():
    net = bench.gen_topology("erdos_renyi", seed=4, n=100, p=0.1)
    net = bench.gen_demands(net, 10, 300, 20, seed=4)
    net = bench.assign_service_rates(net, seed=4)
    assert is_stable(net, empty_placement(net))
    lam = net.arrival_rates()
    lam_max = lam.max()
    assert np.all(net.mu[np.isclose(lam, lam_max)] == pytest.approx(1.05 * lam_max))
    fast = np.isclose(net.mu, 200 * lam_max)
    assert abs(fast.mean() - 0.3) <= 0.03


def test_service_rates_single_chain():
    net = bench.gen_topology("star", n=3)
    net = net.replace(servers=(frozenset([1]),), requests=(bench.RequestClass(0, (2, 0, 1), 0.7),))
    net = bench.assign_service_rates(net, seed=0)
    lam = net.arrival_rates()
    assert lam.max() == pytest.approx(0.7)
    assert is_stable(net, empty_placement(net))


def test_brute_force_chain(chain):
    x, g = bench.brute_force_opt(chain, delay_per_queue())
    assert g == pytest.approx(4.0)
    assert x[0, 0] == 1 and x[2, 1] == 1


def test_brute_force_zero_capacity(chain):
    net = chain.replace(capacities=np.zeros(4, dtype=np.int64))
    x, g = bench.brute_force_opt(net, queue_size())
    assert g == 0.0 and not x.any()


def test_brute_force_matches_oracle_and_cap(rng):
    for _ in range(20):
        net = random_instance(rng, n_nodes=3, catalog=2)
        assert bench.brute_force_opt(net, queue_size())[1] == pytest.approx(brute_opt(net, c_queue), abs=1e-10)
    with pytest.raises(EnumerationTooLarge, match="too large"):
        bench.brute_force_opt(net, queue_size(), cap=0)


def test_rnd_placement_cases(chain):
    full = chain.replace(capacities=np.array([2, 0, 2, 0]))
    assert bench.rnd_placement(full, 1).sum() == 4
    none = chain.replace(capacities=np.zeros(4, dtype=np.int64))
    assert not bench.rnd_placement(none, 1).any()
    x = bench.rnd_placement(chain, 3)
    assert x.sum(axis=1).tolist() == [1, 0, 1, 0]
    m = bench.rnd_mean_gain(chain, delay_per_queue(), seed=2)
    assert m == bench.rnd_mean_gain(chain, delay_per_queue(), seed=2)
    assert 0 <= m <= 4.0


def test_mm1k_counterexample_table():
    rep = bench.mm1k_counterexample()
    p = 0.9**2 * 0.1 / (1 - 0.9**3)
    assert rep["drop_probability"] == pytest.approx(p)
    for key, (r32, r21) in rep["expected"].items():
        assert rep["table"][key] == pytest.approx((r32, r21))
    assert rep["table"]["10"] == (0.0, 0.0)
    assert rep["table"]["01"][1] == pytest.approx(0.9)
    assert rep["non_monotone"] and rep["rho32_not_submodular"] and rep["rho21_not_supermodular"]


def test_experiment_rows_and_normalization(tmp_path):
    spec = bench.ExperimentSpec(
        "t", {"kind": "path_fig3"}, algorithms=["greedy", "cg-taylor", "rnd"], seeds=[1, 2], K=200, normalize=True
    )
    rows = bench.run_experiment(spec)
    assert [(r["algorithm"], r["seed"]) for r in rows] == [
        ("greedy", 1), ("greedy", 2), ("cg-taylor", 1), ("cg-taylor", 2), ("rnd", 1), ("rnd", 2)
    ]
    for r in rows:
        if r["algorithm"] == "rnd":
            assert r["normalized_gain"] == pytest.approx(1.0)
    params = json.loads(rows[0]["params_json"])
    assert params["cost"] == "delay" and params["K"] == 200


def test_experiment_spec_validation():
    with pytest.raises(ValueError):
        bench.ExperimentSpec("t", {"n": 3})
    with pytest.raises(ValueError):
        bench.ExperimentSpec("t", {"kind": "star", "n": 4}, algorithms=["magic"])
    with pytest.raises(ValueError):
        bench.ExperimentSpec.from_json("[1, 2]")


def test_capacity_sweep_on_small_instance():
    gains = []
    for c in (1, 3):
        spec = bench.ExperimentSpec("c", {"kind": "hypercube", "d": 3}, catalog=6, requests=30, capacity=c,
                                    algorithms=["greedy"], instance_seed=5)
        gains.append(bench.run_experiment(spec)[0]["gain"])
    assert gains[1] >= gains[0] > 0


def test_jobs_do_not_change_results():
    spec = bench.ExperimentSpec("j", {"kind": "hypercube", "d": 3}, catalog=5, requests=20, algorithms=["greedy", "rnd", "cg-sample"],
                                seeds=[1, 2], T=5, gamma=0.1)
    a = [{k: v for k, v in r.items() if k != "wallclock_seconds"} for r in bench.run_experiment(spec)]
    b = [{k: v for k, v in r.items() if k != "wallclock_seconds"} for r in bench.run_experiment(spec, jobs=2)]
    assert a == b
