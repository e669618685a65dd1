"""Gains on a generated backbone, normalized by random placement.

Writes a CSV like the command ``kellycache compare`` does.
"""
import sys

from kellycache.bench import ExperimentSpec, run_experiment
from kellycache.fileformat import write_results

spec = ExperimentSpec(
    experiment_id="demo",
    topology={"kind": "geant"},
    catalog=10,
    requests=100,
    capacity=2,
    algorithms=["greedy", "cg-taylor", "cg-power", "rnd"],
    seeds=[1, 2],
    gamma=0.01,
    normalize=True,
)
rows = run_experiment(spec)
sys.stdout.write(write_results(rows, timing=False))

# larger caches never hurt
for c in (1, 2, 3):
    spec.capacity = c
    spec.algorithms = ["greedy"]
    spec.seeds = [1]
    print(f"capacity {c}: greedy gain {run_experiment(spec)[0]['gain']:.3f}")
