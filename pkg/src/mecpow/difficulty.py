"""Round-count model of block production and the difficulty update rule.

With equilibrium demand ``M`` nonces per interaction round and per-hash
success probability ``2**-h``, a block needs on average

    R_min = sum_j (c * 4**h / (B + r*s_j)) / (N - 1)

rounds. Every ``G`` blocks the difficulty is reset to the ``h`` that makes the
window's average round count equal the target ``R_th``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .game import SystemParams, access_filter, price_ratios

__all__ = [
    "TimingParams",
    "DifficultySchedule",
    "SystemCrash",
    "uniform_sizes",
    "total_nonce_demand",
    "expected_hashes_to_success",
    "min_rounds",
    "block_time",
    "block_rounds",
    "avg_rounds",
    "var_rounds",
    "update_difficulty",
    "calibrated_h",
    "run_difficulty_loop",
]

SizeSampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class TimingParams:
    """Timing constants.

    Attributes:
        t0: Seconds per single hash evaluation (model bookkeeping only).
        beta: Seconds per MEC/user interaction round.
        R_th: Target rounds per block.
        G: Blocks per difficulty-adjustment window.
    """

    t0: float = 1e-6
    beta: float = 120.0
    R_th: float = 5.0
    G: int = 10

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError(f"t0 must be > 0, got {self.t0}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.R_th > 0:
            raise ValueError(f"R_th must be > 0, got {self.R_th}")
        if int(self.G) != self.G or self.G < 1:
            raise ValueError(f"G must be an integer >= 1, got {self.G}")

    @property
    def target_time(self) -> float:
        return self.beta * self.R_th


class SystemCrash(RuntimeError):
    """Fewer than two users remain active; no block can be produced."""

    def __init__(self, block_index: int, message: str = "", schedule=None):
        super().__init__(message or f"system crash at block {block_index}: no viable miners")
        self.block_index = block_index
        self.schedule = schedule


@dataclass
class DifficultySchedule:
    """Per-block record of a difficulty-controlled run.

    ``h_history[w]`` is the difficulty used in window ``w``; the final entry is
    the value computed after the last completed window.
    """

    G: int
    target_time: float
    h_history: list[float] = field(default_factory=list)
    sizes: list[np.ndarray] = field(default_factory=list)
    rounds_history: list[float] = field(default_factory=list)
    blocktime_history: list[float] = field(default_factory=list)
    block_h: list[float] = field(default_factory=list)
    block_window: list[int] = field(default_factory=list)

    @property
    def window_index(self) -> int:
        return len(self.h_history) - 1

    @property
    def num_blocks(self) -> int:
        return len(self.rounds_history)

    def window_average_times(self) -> np.ndarray:
        """Mean block time of every (possibly partial) window."""
        t = np.asarray(self.blocktime_history)
        w = np.asarray(self.block_window)
        return np.array([t[w == k].mean() for k in range(int(w.max()) + 1)]) if t.size else t

    def within_target(self, tolerance: float) -> float:
        """Fraction of blocks whose time is within ``tolerance`` seconds of target."""
        t = np.asarray(self.blocktime_history)
        return float(np.mean(np.abs(t - self.target_time) <= tolerance))

    def window_deviation(self) -> float:
        """Mean squared gap between window-average block time and the target."""
        return float(np.mean((self.window_average_times() - self.target_time) ** 2))

    def write_csv(self, path) -> None:
        """Rows ``block_index,window_index,h,rounds,block_time_s,avg_window_time_s``."""
        avgs = self.window_average_times()
        with open(Path(path), "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["block_index", "window_index", "h", "rounds", "block_time_s",
                         "avg_window_time_s"])
            for b in range(self.num_blocks):
                w = self.block_window[b]
                wr.writerow([b, w, repr(self.block_h[b]), repr(self.rounds_history[b]),
                             repr(self.blocktime_history[b]), repr(float(avgs[w]))])


def uniform_sizes(low: float = 0.0, high: float = 1024.0) -> SizeSampler:
    """Sampler for i.i.d. block sizes on ``(low, high]``."""

    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        return high - rng.random(n) * (high - low)

    return sample


def _ratio_sum(params: SystemParams, sizes) -> tuple[float, int]:
    s = np.asarray(sizes, dtype=float)
    if s.size < 2:
        raise ValueError("at least two users are needed")
    return float(np.sum(params.c / (params.B + params.r * s))), s.size


def total_nonce_demand(params: SystemParams, sizes) -> float:
    """Equilibrium nonces bought per round, ``(N-1) / sum_j a_j``."""
    a = price_ratios(params, sizes)
    if a.size < 2:
        raise ValueError("at least two users are needed")
    return (a.size - 1) / a.sum()


def expected_hashes_to_success(h: float) -> float:
    """Mean number of Bernoulli(2**-h) trials up to and including the first success."""
    if h < 0:
        raise ValueError(f"h must be >= 0, got {h}")
    return 2.0**h


def min_rounds(params: SystemParams, sizes, ceil: bool = False) -> float:
    """Expected interaction rounds per block. ``ceil=True`` gives the integer round count."""
    q, n = _ratio_sum(params, sizes)
    rounds = q * 4.0**params.h / (n - 1)
    return float(math.ceil(rounds)) if ceil else rounds


def block_time(params: SystemParams, sizes, timing: TimingParams, ceil: bool = False) -> float:
    return timing.beta * min_rounds(params, sizes, ceil=ceil)


def block_rounds(window: Sequence, params: SystemParams) -> np.ndarray:
    """Per-block ``R_min`` for a window of per-block size vectors."""
    if len(window) == 0:
        raise ValueError("empty window")
    return np.array([min_rounds(params, s) for s in window])


def avg_rounds(window: Sequence, params: SystemParams) -> float:
    return float(block_rounds(window, params).mean())


def var_rounds(window: Sequence, params: SystemParams) -> float:
    """Population variance (divide by G) of the per-block round counts."""
    return float(block_rounds(window, params).var())


def update_difficulty(window: Sequence, params: SystemParams, timing: TimingParams) -> float:
    """Difficulty whose average round count over ``window`` equals ``timing.R_th``.

    Blocks may differ in active-user count; each block's term is divided by
    its own ``N - 1``, which reduces to the usual closed form when N is fixed.
    """
    if len(window) == 0:
        raise ValueError("empty window")
    acc = 0.0
    for s in window:
        q, n = _ratio_sum(params, s)
        acc += q / (n - 1)
    arg = len(window) * timing.R_th / acc
    if not arg > 0:
        raise ValueError("difficulty update undefined: non-positive log argument")
    return 0.5 * math.log2(arg)


def calibrated_h(params: SystemParams, timing: TimingParams, s_bar: float = 512.0) -> float:
    """Difficulty hitting ``R_th`` when every user has block size ``s_bar``."""
    return update_difficulty([np.full(params.N, float(s_bar))], params, timing)


def _sampled_rounds(params: SystemParams, M_total: int, rng: np.random.Generator) -> float:
    hashes = int(rng.geometric(2.0 ** (-params.h)))
    return float(math.ceil(hashes / M_total))


def run_difficulty_loop(
    initial_h: float,
    num_windows: int,
    size_sampler: SizeSampler | None,
    params: SystemParams,
    timing: TimingParams,
    seed: int = 0,
    rounds_source: str = "analytic",
    num_blocks: int | None = None,
    on_block: Callable | None = None,
) -> DifficultySchedule:
    """Hold ``h`` for ``G`` blocks, then reset it from the window; repeat.

    Per block, ``N = params.N`` sizes are drawn, the equilibrium is solved with
    dropouts removed, and the block's round count is recorded. With
    ``rounds_source="analytic"`` that count is ``R_min`` at the block's sizes;
    with ``"sampled"`` it is the integer number of rounds until a geometric
    hash search succeeds at the equilibrium demand.

    Args:
        size_sampler: ``(rng, n) -> sizes``; defaults to Uniform(0, 1024].
        num_blocks: Overrides ``num_windows * G`` (a trailing partial window
            is recorded but does not trigger an update).
        on_block: Optional ``f(block_index, h, sizes, solution, rng)`` hook; a
            non-None return value replaces the block's round count.

    Raises:
        SystemCrash: If a block ends with fewer than two active users.
    """
    if num_windows < 1 and num_blocks is None:
        raise ValueError("num_windows must be >= 1")
    if rounds_source not in ("analytic", "sampled"):
        raise ValueError(f"unknown rounds_source {rounds_source!r}")
    sampler = size_sampler or uniform_sizes()
    G = int(timing.G)
    total = num_windows * G if num_blocks is None else int(num_blocks)
    ss = np.random.SeedSequence(seed)
    size_rng, mine_rng, hook_rng = (np.random.default_rng(c) for c in ss.spawn(3))

    sched = DifficultySchedule(G=G, target_time=timing.target_time, h_history=[float(initial_h)])
    h = float(initial_h)
    window: list[np.ndarray] = []
    for b in range(total):
        p = params.with_h(min(max(h, 0.0), params.L))
        sizes = np.asarray(sampler(size_rng, params.N), dtype=float)
        sol = access_filter(p, sizes)
        if sol.crashed:
            raise SystemCrash(b, schedule=sched)
        active = sizes[list(sol.active_set)]
        if rounds_source == "analytic":
            rounds = min_rounds(p, active)
        else:
            rounds = _sampled_rounds(p, sum(sol.M_star), mine_rng)
        if on_block is not None:
            override = on_block(b, h, sizes, sol, hook_rng)
            if override is not None:
                rounds = float(override)
        sched.sizes.append(sizes)
        sched.rounds_history.append(rounds)
        sched.blocktime_history.append(timing.beta * rounds)
        sched.block_h.append(h)
        sched.block_window.append(len(sched.h_history) - 1)
        window.append(active)
        if len(window) == G:
            h = update_difficulty(window, p, timing)
            sched.h_history.append(h)
            window = []
    return sched
