"""Greedy placement can lose half of the achievable gain.

Four nodes in a line, v - u - w - z.  Node u asks for object 0 (stored at v)
and object 1 (stored at z).  Nodes u and w each have one cache slot and the
link u - w is very fast.
"""
from kellycache.bench import brute_force_opt, path_fig3
from kellycache.costs import delay_per_queue
from kellycache.gradient import gain
from kellycache.model import empty_placement, load
from kellycache.optimize import greedy

delta, M = 0.5, 200.0
net = path_fig3(delta, M)
cost = delay_per_queue()
x0 = empty_placement(net)
names = net.node_names

print("loads with empty caches:")
for (a, b), rho in zip(net.edges, load(net, x0)):
    if rho > 0:
        print(f"  {names[a]} -> {names[b]}: {rho:.4f}")

# Greedy grabs object 1 at u because that empties two queues at once.
history = []
x_greedy = greedy(net, cost, x0, history)
for v, i, g in history:
    print(f"greedy puts object {i} at {names[v]}, marginal gain {g:.6f}")

x_opt, opt = brute_force_opt(net, cost, x0)
g = gain(net, cost, x0, x_greedy)
print(f"greedy gain {g:.6f}, optimal gain {opt:.6f}")
print(f"ratio {g / opt:.9f}, closed form {0.5 * (1 + (1 - delta) / (M - delta)):.9f}")
