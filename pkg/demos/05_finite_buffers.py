"""With finite buffers the load is no longer monotone in the placement.

Packets dropped at a full upstream queue never reach the downstream one, so
caching upstream can raise a downstream load.
"""
from kellycache.bench import mm1k_counterexample

rep = mm1k_counterexample(lam=0.9, mu=1.0, k=2)
print(f"drop probability at load 0.9: {rep['drop_probability']:.4f}")
print("x11 x21   rho32   rho21")
for key, (r32, r21) in rep["table"].items():
    print(f" {key[0]}   {key[1]}    {r32:.4f}  {r21:.4f}")
print("rho21 rises when node 2 caches:", rep["non_monotone"])
print("rho32 fails submodularity:", rep["rho32_not_submodular"])
print("rho21 fails supermodularity:", rep["rho21_not_supermodular"])
