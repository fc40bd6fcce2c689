"""Non-cooperative nonce-selection game among MEC users.

User i buys ``M_i`` hash evaluations at price ``c`` each. Its expected reward
is ``(B + r*s_i) * 2**-h`` scaled by its share ``M_i / sum(M)`` of the merged
service order, so utility is

    u_i = (B + r*s_i) * 2**-h * M_i / sum(M) - c * M_i

The game is solved over the reals and floored to integers at the end.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

__all__ = [
    "SystemParams",
    "UserProfile",
    "GameSolution",
    "RepeatedGameParams",
    "CooperativeResult",
    "reward_weight",
    "price_ratios",
    "utility",
    "utilities",
    "best_response",
    "solve_alternating",
    "closed_form_ne",
    "round_down",
    "access_filter",
    "avg_size_ne",
    "frg_utility",
    "irg_utility",
    "cooperative_benchmark",
    "write_solution_csv",
]


@dataclass(frozen=True)
class SystemParams:
    """Economic and protocol constants shared by all users.

    Attributes:
        B: Fixed block reward.
        r: Transaction fee rate per unit of block size.
        c: Price of one hash evaluation on the MEC server.
        h: Difficulty factor; a single hash succeeds with probability ``2**-h``.
        L: Nonce bit length.
        N: Number of users.
    """

    B: float = 1e4
    r: float = 2.0
    c: float = 0.001
    h: float = 12.0
    L: int = 32
    N: int = 3

    def __post_init__(self):
        if self.B < 0:
            raise ValueError(f"B must be >= 0, got {self.B}")
        if self.r < 0:
            raise ValueError(f"r must be >= 0, got {self.r}")
        if not self.c > 0:
            raise ValueError(f"c must be > 0, got {self.c}")
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if not 0 <= self.h <= self.L:
            raise ValueError(f"h must lie in [0, L={self.L}], got {self.h}")
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")

    def with_h(self, h: float) -> "SystemParams":
        return SystemParams(self.B, self.r, self.c, h, self.L, self.N)


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    s: float
    M: int = 0

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"user {self.user_id}: block size must be > 0, got {self.s}")
        if self.M < 0:
            raise ValueError(f"user {self.user_id}: nonce length must be >= 0")


@dataclass
class GameSolution:
    """Equilibrium allocation.

    ``active_set`` holds original user indices; ``M_star``, ``M_real`` and
    ``utilities`` are aligned with it. ``case`` is 1 (everyone plays),
    2 (some users quit) or 3 (crash: fewer than two users left).
    """

    active_set: tuple[int, ...]
    M_star: tuple[int, ...]
    M_real: tuple[float, ...]
    utilities: tuple[float, ...]
    iterations: int = 0
    converged: bool = True
    case: int = 1
    history: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def crashed(self) -> bool:
        return self.case == 3

    def lengths_for(self, n_users: int) -> np.ndarray:
        """Integer allocation over all ``n_users`` with zeros for dropped users."""
        out = np.zeros(n_users, dtype=np.int64)
        out[list(self.active_set)] = self.M_star
        return out


@dataclass(frozen=True)
class RepeatedGameParams:
    delta: float
    horizon: int | None = None  # None = infinitely repeated

    def __post_init__(self):
        if not 0 <= self.delta < 1:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")
        if self.horizon is not None and self.horizon < 0:
            raise ValueError("horizon must be >= 0")


@dataclass
class CooperativeResult:
    M: np.ndarray
    utilities: np.ndarray
    total: float


def reward_weight(params: SystemParams, sizes) -> np.ndarray:
    """Difficulty-discounted reward ``(B + r*s) * 2**-h`` per user."""
    return (params.B + params.r * np.asarray(sizes, dtype=float)) * 2.0 ** (-params.h)


def price_ratios(params: SystemParams, sizes) -> np.ndarray:
    """``a_j = c * 2**h / (B + r*s_j)``: hash price relative to discounted reward."""
    return params.c * 2.0**params.h / (params.B + params.r * np.asarray(sizes, dtype=float))


def utilities(M, params: SystemParams, sizes) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    total = M.sum()
    if total <= 0:
        raise ZeroDivisionError("utility undefined when every nonce length is zero")
    return reward_weight(params, sizes) * M / total - params.c * M


def utility(i: int, M, params: SystemParams, sizes) -> float:
    """Expected utility of user ``i`` under the strategy profile ``M``."""
    M = np.asarray(M, dtype=float)
    total = M.sum()
    if total <= 0:
        raise ZeroDivisionError("utility undefined when every nonce length is zero")
    w = (params.B + params.r * float(np.asarray(sizes, dtype=float)[i])) * 2.0 ** (-params.h)
    return w * M[i] / total - params.c * M[i]


def best_response(others_sum: float, params: SystemParams, s: float) -> float:
    """Utility-maximising nonce length against opponents buying ``others_sum`` in total.

    Clamped at zero: past ``(B + r*s) / (c * 2**h)`` the user is better off idle.
    """
    if not others_sum > 0:
        raise ValueError("best response needs a positive opponents' total")
    ratio = (params.B + params.r * s) / (params.c * 2.0**params.h)
    return max(0.0, math.sqrt(others_sum * ratio) - others_sum)


def solve_alternating(
    params: SystemParams,
    sizes,
    M_init=None,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> GameSolution:
    """Gauss-Seidel best-response iteration.

    One iteration sweeps every user once, each reacting to the latest values
    of the others. Stops when the largest relative per-user change in a sweep
    falls below ``tol``; otherwise returns with ``converged=False``.
    """
    s = np.asarray(sizes, dtype=float)
    n = s.size
    if n < 2:
        raise ValueError("the game needs at least two users")
    M = np.full(n, 1000.0) if M_init is None else np.array(M_init, dtype=float)
    if M.shape != (n,):
        raise ValueError("M_init must give one value per user")
    if np.any(M < 1) or np.any(M > 2.0**params.L - 1):
        raise ValueError(f"M_init entries must lie in [1, 2**{params.L} - 1]")

    history = [M.copy()]
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        change = 0.0
        for i in range(n):
            others = M.sum() - M[i]
            new = best_response(others, params, s[i])
            change = max(change, abs(new - M[i]) / max(abs(M[i]), 1.0))
            M[i] = new
        history.append(M.copy())
        if change < tol:
            converged = True
            break

    ints = round_down(M)
    return GameSolution(
        active_set=tuple(range(n)),
        M_star=tuple(int(v) for v in ints),
        M_real=tuple(float(v) for v in M),
        utilities=tuple(float(v) for v in utilities(ints, params, s)) if ints.sum() else (0.0,) * n,
        iterations=it,
        converged=converged,
        case=1 if np.all(ints > 0) else 2,
        history=history,
    )


def closed_form_ne(params: SystemParams, sizes) -> np.ndarray:
    """Real-valued equilibrium ``M_i = T - T**2 * a_i`` with ``T = (N-1) / sum(a)``.

    Entries may be non-positive when a user is priced out; see :func:`access_filter`.
    """
    a = price_ratios(params, sizes)
    if a.size < 2:
        raise ValueError("the game needs at least two users")
    T = (a.size - 1) / a.sum()
    return T - T * T * a


def round_down(M) -> np.ndarray:
    """Floor to integers, mapping negatives to zero (non-participation)."""
    return np.maximum(np.floor(np.asarray(M, dtype=float)), 0.0).astype(np.int64)


def access_filter(params: SystemParams, sizes) -> GameSolution:
    """Repeatedly solve on the active set and drop users who cannot take part.

    Every user with a non-positive real share leaves together in one round.
    Once all real shares are positive, users whose share floors to zero leave
    one per round, highest price ratio (smallest share) first. Removing them
    in a batch could drop a user who would hold a whole nonce against the
    smaller final set. Terminates with case 3 once fewer than two users remain.
    """
    s = np.asarray(sizes, dtype=float)
    a_all = price_ratios(params, s)
    # Shares fall as a_j grows, so both removal steps cut from the top of the
    # a-sorted order and the active set is always a prefix of it.
    order = np.argsort(a_all, kind="stable")
    a_sorted = a_all[order]
    csum = np.cumsum(a_sorted)
    k = s.size
    rounds = 0
    while k >= 2:
        rounds += 1
        T = (k - 1) / csum[k - 1]
        weakest = T - T * T * a_sorted[k - 1]
        if weakest <= 0:
            k = int(np.count_nonzero(T - T * T * a_sorted[:k] > 0))
            continue
        if weakest < 1:
            k -= 1
            continue
        active = np.sort(order[:k])
        real = closed_form_ne(params, s[active])
        ints = round_down(real)
        if not (ints > 0).all():
            # summation-order rounding disagreed with the prefix sums; keep peeling
            k -= 1
            continue
        return GameSolution(
            active_set=tuple(int(u) for u in active),
            M_star=tuple(int(v) for v in ints),
            M_real=tuple(float(v) for v in real),
            utilities=tuple(float(v) for v in utilities(ints, params, s[active])),
            iterations=rounds,
            case=1 if k == s.size else 2,
        )
    active = np.sort(order[:k])
    return GameSolution(
        active_set=tuple(int(u) for u in active),
        M_star=(0,) * k,
        M_real=(0.0,) * k,
        utilities=(0.0,) * k,
        iterations=rounds,
        case=3,
    )


def avg_size_ne(params: SystemParams, s_bar: float) -> int:
    """Symmetric equilibrium when every user has the average block size ``s_bar``."""
    n = params.N
    frac = (n - 1) / n
    return int(math.floor(frac * (params.B + params.r * s_bar) / (params.c * 2.0**params.h) * (1 - frac)))


def frg_utility(stage_payoffs: Sequence[float], delta: float) -> float:
    """Discounted sum over all given stages, stage 0 undiscounted."""
    RepeatedGameParams(delta)
    return math.fsum(delta**t * u for t, u in enumerate(stage_payoffs))


def irg_utility(
    stage_payoff_fn: Callable[[int], float],
    delta: float,
    truncation_tol: float = 1e-12,
    max_stages: int = 1_000_000,
) -> float:
    """Normalised infinite-horizon utility ``(1 - delta) * sum delta**t * u[t]``.

    The series is cut once ``delta**t`` times the largest payoff magnitude seen
    so far drops below ``truncation_tol``.
    """
    RepeatedGameParams(delta)
    terms = []
    scale = 0.0
    weight = 1.0
    for t in range(max_stages):
        u = float(stage_payoff_fn(t))
        scale = max(scale, abs(u), 1.0)
        terms.append(weight * u)
        weight *= delta
        if weight * scale < truncation_tol:
            break
    return (1 - delta) * math.fsum(terms)


def cooperative_benchmark(
    params: SystemParams,
    sizes,
    restarts: int = 20,
    seed: int = 0,
    sweeps: int = 200,
    floor: float = 1.0,
) -> CooperativeResult:
    """Approximate maximiser of total utility with every ``M_i >= floor``.

    Multi-start coordinate ascent: each coordinate is optimised by a bounded
    scalar search in log space; starts are log-uniform. This is a numerical
    reference only, not a certified global optimum.
    """
    s = np.asarray(sizes, dtype=float)
    n = s.size
    if n < 2:
        raise ValueError("the game needs at least two users")
    w = reward_weight(params, s)
    # total utility is negative once any M_i exceeds max(w) / c
    upper = max(w.max() / params.c, 10 * floor)
    lo, hi = math.log(floor), math.log(upper)

    def total(M):
        return float(np.dot(w, M) / M.sum() - params.c * M.sum())

    rng = np.random.default_rng(seed)
    best_M, best_val = None, -math.inf
    for _ in range(restarts):
        M = np.exp(rng.uniform(lo, hi, size=n))
        prev = total(M)
        for _ in range(sweeps):
            for i in range(n):
                def neg(x, i=i):
                    M[i] = math.exp(x)
                    return -total(M)

                res = minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                                      options={"xatol": 1e-10})
                # bounded search never evaluates the endpoints
                cands = [(res.fun, res.x), (neg(lo), lo), (neg(hi), hi)]
                M[i] = math.exp(min(cands)[1])
            cur = total(M)
            if cur - prev <= 1e-12 * max(1.0, abs(cur)):
                break
            prev = cur
        val = total(M)
        if val > best_val:
            best_M, best_val = M.copy(), val
    return CooperativeResult(M=best_M, utilities=utilities(best_M, params, s), total=best_val)


def write_solution_csv(solution: GameSolution, params: SystemParams, sizes, path) -> None:
    """Rows ``user_id,s,M_star_real,M_star_int,utility,active`` for every user."""
    s = np.asarray(sizes, dtype=float)
    real = dict(zip(solution.active_set, solution.M_real))
    ints = dict(zip(solution.active_set, solution.M_star))
    util = dict(zip(solution.active_set, solution.utilities))
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["user_id", "s", "M_star_real", "M_star_int", "utility", "active"])
        for u in range(s.size):
            active = u in ints
            wr.writerow([u, repr(float(s[u])), repr(real.get(u, 0.0)), ints.get(u, 0),
                         repr(util.get(u, 0.0)), int(active)])
