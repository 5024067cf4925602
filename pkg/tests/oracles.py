"""Reference implementations shared by several test modules."""

import math

import numpy as np
from scipy import optimize


def slsqp_distance(c, ball, j_cut, h):
    """Generic convex minimization oracle, sharing no code with the closed form."""
    p = ball.p
    levels = [c.level(l) for l in range(j_cut + 1)]
    sizes = [len(v) for v in levels]
    x0 = np.concatenate(levels)
    bounds = np.cumsum([0] + sizes)
    w = [2 ** (l * (0.5 - 1 / p)) for l in range(j_cut + 1)]
    R = ball.level_radii(j_cut)

    def obj(g):
        return sum(w[l] ** h * np.sum(np.abs(x0[bounds[l]:bounds[l + 1]] - g[bounds[l]:bounds[l + 1]]) ** p) ** (h / p)
                   for l in range(j_cut + 1))

    cons = [{"type": "ineq", "fun": (lambda g, l=l: R[l] ** p - np.sum(np.abs(g[bounds[l]:bounds[l + 1]]) ** p))}
            for l in range(j_cut + 1)]
    best = math.inf
    rng = np.random.default_rng(0)
    # feasible start: every level scaled radially into its l_p ball
    shrunk = x0.copy()
    for l in range(j_cut + 1):
        seg = slice(bounds[l], bounds[l + 1])
        norm = np.sum(np.abs(x0[seg]) ** p) ** (1 / p)
        if norm > R[l]:
            shrunk[seg] *= R[l] / norm
    for start in [x0, shrunk, np.zeros_like(x0), 0.5 * x0, rng.normal(scale=0.1, size=x0.size)]:
        res = optimize.minimize(obj, start, method="SLSQP", constraints=cons,
                                options={"ftol": 1e-15, "maxiter": 1000})
        feas = all(cn["fun"](res.x) >= -1e-9 for cn in cons)
        if feas:
            best = min(best, res.fun)
    return max(best, 0.0) ** (1 / h)
