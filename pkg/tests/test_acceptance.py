"""Acceptance criteria, one test each.

Every test records a ``ACCEPTANCE n PASS|FAIL`` line that the terminal summary
prints.  Run directly with ``python tests/test_acceptance.py``.
"""
import itertools
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from oracles import brute_opt, c_queue, enum_grad, random_instance

from kellycache import bench
from kellycache.costs import (
    delay_per_queue,
    md1_queue_size,
    mmk_queue_size_cost,
    polynomial,
    queue_size,
    total_cost,
)
from kellycache.gradient import g_exact, gain, grad_exact, grad_sampling, grad_taylor
from kellycache.model import empty_placement, is_feasible, is_stable, load
from kellycache.optimize import CgConfig, continuous_greedy, greedy
from kellycache.rounding import pipage_round, swap_round
from kellycache.wdnf import WdnfPoly


@pytest.fixture
def report(request):
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])
    state = {"t0": time.perf_counter()}

    def record(n, ok, detail):
        secs = time.perf_counter() - state["t0"]
        lines.append(f"ACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'} ({secs:.1f}s) {detail}")
        return secs

    return record


def bits_of(m):
    return ((np.arange(2**m)[:, None] >> np.arange(m)[None, :]) & 1).astype(float)


def test_01_greedy_tightness(report):
    delta, M = 0.5, 200.0
    net = bench.path_fig3(delta, M)
    x0 = empty_placement(net)
    g = gain(net, delay_per_queue(), x0, greedy(net, delay_per_queue(), x0))
    opt = bench.brute_force_opt(net, delay_per_queue(), x0)[1]
    target = 0.5 * (1 + (1 - delta) / (M - delta))
    ratio = g / opt
    ok = abs(ratio - target) <= 1e-9
    secs = report(1, ok, f"greedy/opt = {ratio:.12f}, target {target:.12f}")
    assert ok and secs < 1.0


def _superset_max(inc, n):
    # out[S'] = max over all subsets S of S' of inc[S]
    out = inc.copy()
    for b in range(n):
        has = (np.arange(len(out)) >> b) & 1 == 1
        idx = np.flatnonzero(has)
        out[idx] = np.maximum(out[idx], out[idx ^ (1 << b)])
    return out


def test_02_supermodularity(report):
    rng = np.random.default_rng(2)
    costs = [queue_size(), md1_queue_size(), mmk_queue_size_cost(2)]
    checked = pairs = 0
    bad = []
    while checked < 200:
        net = random_instance(rng, n_nodes=int(rng.integers(3, 6)), catalog=int(rng.integers(2, 4)), n_requests=7, unstable=True)
        free = np.flatnonzero(net.relevant)
        n = len(free)
        if n == 0 or n > 10:
            continue
        cost = costs[checked % 3]
        X = np.zeros((2**n, net.n_nodes * net.catalog_size))
        X[:, free] = bits_of(n)
        C = total_cost(net, cost, X.reshape((-1,) + net.shape), strict=False)
        masks = np.arange(2**n)
        stable = np.isfinite(C)
        for a in range(n):
            without = masks[(masks >> a) & 1 == 0]
            inc = np.full(2**n, -np.inf)
            ok_s = stable[without]
            inc[without[ok_s]] = C[without[ok_s] | (1 << a)] - C[without[ok_s]]
            # non-increasing: adding an item never raises the cost
            if np.any(inc[without[ok_s]] > 1e-12):
                bad.append(("monotone", checked, a))
            # supermodular: increments grow with the set, over every stable pair
            best_sub = _superset_max(inc, n)
            tgt = without[ok_s]
            slack = 1e-9 * (1 + np.abs(best_sub[tgt]))
            if np.any(inc[tgt] < best_sub[tgt] - slack):
                bad.append(("supermodular", checked, a))
            # pairs counted: stable S' times its subsets
            pairs += int(np.sum(2.0 ** np.array([bin(s).count("1") for s in tgt])))
        checked += 1
    ok = not bad
    secs = report(2, ok, f"{checked} instances, {pairs} (S, S') pairs, violations {len(bad)}")
    assert ok and secs < 30


def test_03_mm1k(report):
    lam, mu, k = 0.9, 1.0, 2
    rep = bench.mm1k_counterexample(lam, mu, k)
    p = lam**k * (1 - lam) / (1 - lam ** (k + 1))
    pattern = {"00": (lam / mu, lam * (1 - p) / mu), "10": (0.0, 0.0), "01": (0.0, lam / mu), "11": (0.0, 0.0)}
    ok = all(np.allclose(rep["table"][c], pattern[c], rtol=0, atol=1e-15) for c in pattern)
    ok &= rep["table"]["01"][1] > rep["table"]["00"][1]
    i32, i21 = rep["increments"]["rho32"], rep["increments"]["rho21"]
    ok &= i32[0] < i32[1] and i21[0] > i21[1]
    ok &= rep["non_monotone"] and rep["rho32_not_submodular"] and rep["rho21_not_supermodular"]
    secs = report(3, ok, f"p_drop = {p:.6f}, rho21 rises {rep['table']['00'][1]:.4f} -> {rep['table']['01'][1]:.4f}")
    assert ok and secs < 1.0


def test_04_wdnf_expectation(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        terms = [(float(rng.uniform(0.1, 3)), rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False).tolist())
                 for _ in range(int(rng.integers(1, 7)))]
        f = WdnfPoly(terms)
        y = rng.uniform(size=n)
        B = bits_of(n)
        w = np.prod(np.where(B > 0, y, 1 - y), axis=1)
        vals = np.array([sum(b * np.prod([1 - x[j] for j in s]) for s, b in f.terms.items()) for x in B])
        worst = max(worst, abs(float(w @ vals) - f.evaluate(y)))
    ok = worst <= 1e-12
    secs = report(4, ok, f"max |E f(x) - f(y)| = {worst:.2e} over 100 polynomials")
    assert ok and secs < 10


def _instances(rng, count, max_free, **kw):
    out = []
    while len(out) < count:
        net = random_instance(rng, **kw)
        if 0 < net.relevant.sum() <= max_free:
            out.append(net)
    return out


def test_05_estimator_equivalence(report):
    rng = np.random.default_rng(5)
    worst = 0.0
    for net in _instances(rng, 10, 12, n_nodes=5, catalog=3, n_requests=6):
        coeffs = rng.uniform(0, 2, size=int(rng.integers(1, 5)))
        L = max(1, len(coeffs) - 1)
        cost = polynomial(coeffs)
        cfun = lambda r, m, c=coeffs: sum(ck * r**k for k, ck in enumerate(c))
        x0 = empty_placement(net)
        # coordinates no request can use never change the cost
        y = np.where(net.relevant, rng.uniform(size=net.shape), 0.0)
        ref = grad_exact(net, cost, x0, y).g
        if net.relevant.sum() <= 8:
            np.testing.assert_allclose(ref, enum_grad(net, cfun, x0, y), atol=1e-10)
        for mode in ("current", "power"):
            worst = max(worst, float(np.abs(grad_taylor(net, cost, x0, y, L, mode).g - ref).max()))
    exact_ok = worst <= 1e-9
    monotone = 0
    nets = _instances(rng, 20, 12, n_nodes=4, catalog=3, n_requests=5, slack=(1 / 0.6, 4.0))
    for net in nets:
        x0 = empty_placement(net)
        assert load(net, x0).max() <= 0.6 + 1e-12
        y = rng.uniform(size=net.shape)
        ref = grad_exact(net, queue_size(), x0, y).g
        errs = [np.abs(grad_taylor(net, queue_size(), x0, y, L, "power").g - ref).max() for L in (1, 2, 5)]
        monotone += errs[0] > errs[1] > errs[2]
    ok = exact_ok and monotone == len(nets)
    secs = report(5, ok, f"polynomial max err {worst:.1e}; power-series error decreasing on {monotone}/{len(nets)}")
    assert ok and secs < 60


def test_06_sampling_statistics(report):
    rng = np.random.default_rng(6)
    inside = total = 0
    for net in _instances(rng, 10, 12, n_nodes=5, catalog=3, n_requests=8):
        x0 = empty_placement(net)
        y = rng.uniform(size=net.shape)
        ref = grad_exact(net, queue_size(), x0, y).g.reshape(-1)
        seeds = np.random.SeedSequence(int(rng.integers(2**31))).spawn(200)
        runs = np.array([grad_sampling(net, queue_size(), x0, y, 100, np.random.default_rng(s)).g.reshape(-1) for s in seeds])
        mean = runs.mean(axis=0)
        se = runs.std(axis=0, ddof=1) / np.sqrt(len(runs))
        # the absolute floor absorbs round-off on coordinates whose estimate is deterministic
        hit = np.abs(mean - ref) <= 4 * se + 1e-9
        inside += int(hit.sum())
        total += hit.size
    frac = inside / total
    ok = frac >= 0.99
    secs = report(6, ok, f"{inside}/{total} coordinates within 4 SE ({100 * frac:.1f}%)")
    assert ok and secs < 60


def test_07_continuous_greedy_guarantee(report):
    rng = np.random.default_rng(7)
    K = 100
    worst = math.inf
    for net in _instances(rng, 50, 12, n_nodes=4, catalog=3, n_requests=5):
        x0 = empty_placement(net)
        tr = continuous_greedy(net, queue_size(), x0, CgConfig(estimator="exact", K=K))
        opt = brute_opt(net, c_queue, x0)
        bound = (1 - 1 / math.e) * opt - tr.diagnostics["P"] / (2 * K)
        worst = min(worst, g_exact(net, queue_size(), x0, tr.y) - bound)
    ok = worst >= 0
    secs = report(7, ok, f"min G(y_K) - bound = {worst:.4f} over 50 instances")
    assert ok and secs < 300


def test_08_rounding(report):
    rng = np.random.default_rng(8)
    runs = 0
    feasible = True
    nets = _instances(rng, 20, 12, n_nodes=4, catalog=3, n_requests=5)
    for net in nets:
        x0 = empty_placement(net)
        j = np.flatnonzero(net.relevant & (net.capacities[:, None] > 0))
        if len(j) and rng.random() < 0.5:
            x0.flat[j[0]] = 1.0
            if not is_stable(net, x0):
                x0.flat[j[0]] = 0.0
        tr = continuous_greedy(net, queue_size(), x0, CgConfig(K=20))
        for s in range(500):
            x = swap_round(tr, s)
            feasible &= bool(is_feasible(net, x) and np.all(x >= x0))
            runs += 1
    worst_z = math.inf
    pipage_gap = math.inf
    fractional = 0
    for k, net in enumerate(nets[:8]):
        x0 = empty_placement(net)
        # noisy gradients spread the iterate over several vertices
        tr = continuous_greedy(net, queue_size(), x0, CgConfig(estimator="sampling", T=3, K=20, seed=k))
        G = g_exact(net, queue_size(), x0, tr.y)
        vals = np.array([gain(net, queue_size(), x0, swap_round(tr, s)) for s in range(1000)])
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        # shortfall in standard errors, with a round-off floor for integral y
        short = max(0.0, G - vals.mean() - 1e-9)
        worst_z = min(worst_z, 0.0 if short == 0 else -short / se if se > 0 else -math.inf)
        fractional += bool(np.any((tr.y > 0) & (tr.y < 1)))
        xp = pipage_round(net, queue_size(), x0, tr.y, "exact")
        pipage_gap = min(pipage_gap, gain(net, queue_size(), x0, xp) - G)
    ok = feasible and worst_z >= -3 and pipage_gap >= -1e-9
    secs = report(8, ok, f"{runs} swap runs feasible={feasible}; min z {worst_z:.2f} ({fractional} fractional y); pipage min F - G {pipage_gap:.3g}")
    assert ok and secs < 120


def test_09_qualitative_trends(report):
    base = dict(topology={"kind": "geant"}, catalog=10, requests=100, capacity=2, instance_seed=9)
    spec = bench.ExperimentSpec("a9", **base, algorithms=["greedy", "cg-taylor"], seeds=[1], L=1)
    inst = bench.build_instance(spec)
    assert (inst.net.n_nodes, inst.net.n_edges) == (22, 66)
    rows = {r["algorithm"]: r["gain"] for r in bench.run_experiment(spec)}
    rnd = bench.rnd_mean_gain(inst.net, inst.costs, inst.x0, seed=1, repeats=10)
    beat = rows["greedy"] > rnd and rows["cg-taylor"] > rnd

    def gains(**kw):
        s = bench.ExperimentSpec("s9", **{**base, **kw}, algorithms=["greedy", "cg-taylor"], seeds=[1])
        return {r["algorithm"]: r["gain"] for r in bench.run_experiment(s)}

    c1, c3 = gains(capacity=1), gains(capacity=3)
    l_lo, l_hi = gains(rate=0.65, service_rate=1.0), gains(rate=1.0, service_rate=1.0)
    cap_ok = all(c3[a] >= c1[a] for a in c1)
    rate_ok = all(l_hi[a] >= l_lo[a] for a in l_lo)
    ok = beat and cap_ok and rate_ok
    secs = report(
        9,
        ok,
        f"rnd {rnd:.2f} greedy {rows['greedy']:.2f} cg {rows['cg-taylor']:.2f}; "
        f"c=1->3 cg {c1['cg-taylor']:.2f}->{c3['cg-taylor']:.2f}; "
        f"rate 0.65->1.0 cg {l_lo['cg-taylor']:.2f}->{l_hi['cg-taylor']:.2f}",
    )
    assert ok and secs < 600


def _cli(*args):
    return subprocess.run([sys.executable, "-m", "kellycache", *args], capture_output=True, check=True).stdout


def test_10_determinism(report, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({
        "experiment_id": "det",
        "topology": {"kind": "erdos_renyi", "n": 20, "p": 0.3},
        "catalog": 6,
        "requests": 40,
        "instance_seed": 3,
        "algorithms": ["greedy", "cg-taylor", "cg-sample", "rnd"],
        "seeds": [1, 2],
        "T": 10,
        "gamma": 0.05,
        "normalize": True,
    }))
    outs = []
    for jobs in ("1", "1", "2"):
        csv = tmp_path / f"out{len(outs)}.csv"
        _cli("compare", str(spec), "--out", str(csv), "--no-timing", "--jobs", jobs)
        outs.append(csv.read_bytes())
    gen = [_cli("generate", "--kind", "erdos-renyi", "--n", "25", "--p", "0.2", "--seed", "7") for _ in range(2)]
    place = [_cli("place", "path-fig3", "--alg", "cg-sample", "--T", "20", "--gamma", "0.1", "--seed", "4") for _ in range(2)]
    ok = len(set(outs)) == 1 and gen[0] == gen[1] and place[0] == place[1]
    report(10, ok, f"compare x3 (jobs 1, 1, 2), generate x2, place x2 byte-identical: {ok}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
