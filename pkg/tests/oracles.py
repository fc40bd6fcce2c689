"""Independent reference computations used as test oracles.

Nothing here imports the solver code under test. Utilities are evaluated
straight from the payoff formula, and equilibria are located by zooming grid
search so that closed-form results can be checked against brute force.
"""

import math

import numpy as np


def payoff(i, M, B, r, c, h, s):
    """Expected profit of user ``i``: reward share times win chance minus hash cost."""
    total = float(sum(M))
    return (B + r * s[i]) * 2.0 ** (-h) * M[i] / total - c * M[i]


def grid_argmax(f, lo, hi, points=401, levels=12):
    """Maximise a scalar function on ``[lo, hi]`` by repeatedly refining a grid."""
    for _ in range(levels):
        xs = np.linspace(lo, hi, points)
        vals = np.array([f(x) for x in xs])
        k = int(np.argmax(vals))
        step = xs[1] - xs[0]
        lo, hi = max(xs[0], xs[k] - step), min(xs[-1], xs[k] + step)
    return float(xs[k])


def grid_best_response(i, M, B, r, c, h, s, upper=None):
    """User ``i``'s payoff-maximising length given the others, by grid search."""
    M = list(M)
    hi = upper if upper is not None else 4 * max(sum(M), 1.0)

    def f(x):
        trial = list(M)
        trial[i] = x
        if sum(trial) == 0:
            return -math.inf
        return payoff(i, trial, B, r, c, h, s)

    return grid_argmax(f, 0.0, hi)


def grid_equilibrium(B, r, c, h, s, start=1000.0, sweeps=200, tol=1e-7):
    """Nash equilibrium by iterating grid-search best responses to a fixed point."""
    M = [start] * len(s)
    for _ in range(sweeps):
        prev = list(M)
        for i in range(len(s)):
            M[i] = grid_best_response(i, M, B, r, c, h, s)
        if max(abs(a - b) / max(b, 1.0) for a, b in zip(M, prev)) < tol:
            break
    return M


def foc_residual(i, M, B, r, c, h, s):
    """Derivative of user ``i``'s payoff in its own length."""
    total = float(sum(M))
    others = total - M[i]
    return (B + r * s[i]) * 2.0 ** (-h) * others / total**2 - c
