"""Cache placement in Kelly cache networks."""
from .costs import CostModel, delay_per_queue, md1_queue_size, mmk_queue_size_cost, queue_size
from .gradient import g_exact, gain, grad_exact, grad_sampling, grad_taylor
from .model import CacheNetwork, RequestClass, is_feasible, is_stable, load
from .optimize import CgConfig, continuous_greedy, greedy, lp_direction
from .rounding import pipage_round, swap_round

__version__ = "0.1.0"
