"""Discrete-round simulation of offloaded proof-of-work mining.

Each interaction round every active user draws fresh nonces, the MEC server
merges them with the fair ordering and evaluates them one at a time; the
first successful hash ends the block. Success is decided either by a seeded
Bernoulli(2**-h) draw (``analytic``) or by a real SHA-256 target check
(``real-hash``).
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .difficulty import DifficultySchedule, SizeSampler, TimingParams, run_difficulty_loop
from .game import GameSolution, SystemParams, access_filter
from .ordering import NonceSequence, merge

__all__ = [
    "BlockHeader",
    "MiningTrace",
    "CampaignResult",
    "NoMinersError",
    "hash_check",
    "bernoulli_check",
    "draw_nonces",
    "service_order",
    "simulate_block",
    "simulate_campaign",
    "write_traces_csv",
]

log = logging.getLogger(__name__)

DIGEST_BITS = 256
MODES = ("analytic", "real-hash")


class NoMinersError(RuntimeError):
    """A block was requested with no active users."""


@dataclass(frozen=True)
class BlockHeader:
    """Header payload ``X`` plus nonce; serialises to ``X || nonce`` (8-byte big-endian)."""

    payload: bytes
    nonce: int

    def __post_init__(self):
        if not 0 <= self.nonce < 2**64:
            raise ValueError("nonce must fit in 8 bytes")

    def serialize(self) -> bytes:
        return bytes(self.payload) + self.nonce.to_bytes(8, "big")

    def digest(self) -> bytes:
        return hashlib.sha256(self.serialize()).digest()


def _threshold(h: float, L: int) -> int:
    hi = int(round(h))
    if hi != h:
        log.debug("real-hash mode rounds h=%s to %d", h, hi)
    if not 0 <= hi <= L:
        raise ValueError(f"h must lie in [0, {L}]")
    return 2 ** (L - hi)


def hash_check(header: BlockHeader, h: float, L: int = DIGEST_BITS) -> bool:
    """True iff SHA-256 of the header, read big-endian, is at most ``2**(L - h)``."""
    return int.from_bytes(header.digest(), "big") <= _threshold(h, L)


def bernoulli_check(h: float, rng: np.random.Generator) -> bool:
    """Success with probability ``2**-h``."""
    if h < 0:
        raise ValueError("h must be >= 0")
    return bool(rng.random() < 2.0 ** (-h))


@dataclass
class MiningTrace:
    """Outcome of mining one block.

    ``rewards`` covers all users (zeros for non-winners). ``model_time`` is
    ``t0 * hashes_executed + beta * rounds_executed``.
    """

    winner: int | None
    winning_nonce: int | None
    hashes_executed: int
    rounds_executed: int
    rewards: tuple[float, ...]
    model_time: float
    h: float
    lengths: tuple[int, ...] = ()
    block: int = 0


@dataclass
class CampaignResult:
    traces: list[MiningTrace]
    schedule: DifficultySchedule
    solutions: list[GameSolution] = field(default_factory=list, repr=False)


def draw_nonces(rng: np.random.Generator, count: int, L: int) -> np.ndarray:
    """``count`` distinct nonces drawn uniformly from ``[0, 2**L)``, ascending."""
    space = 2**L
    if count > space:
        raise ValueError(f"cannot draw {count} distinct nonces from 2**{L}")
    if space <= 4 * count or space <= 2**20:
        return np.sort(rng.choice(space, size=count, replace=False)).astype(np.uint64)
    out = np.unique(rng.integers(0, space, size=count, dtype=np.uint64))
    while out.size < count:
        extra = rng.integers(0, space, size=count - out.size, dtype=np.uint64)
        out = np.unique(np.concatenate([out, extra]))
    return out


@lru_cache(maxsize=256)
def _untied_order(lengths: tuple[int, ...]):
    state = merge([NonceSequence(u, tuple(range(m))) for u, m in enumerate(lengths)], seed=0)
    if state.ties_broken:
        return None
    return _with_ranks(state.order)


def _with_ranks(order: Sequence[int]):
    o = np.asarray(order, dtype=np.int64)
    ranks = np.empty_like(o)
    for u in np.unique(o):
        idx = np.flatnonzero(o == u)
        ranks[idx] = np.arange(idx.size)
    o.flags.writeable = False
    ranks.flags.writeable = False
    return o, ranks


def service_order(lengths: Sequence[int], rng: np.random.Generator):
    """User index served at each position, and that nonce's rank within its user.

    The fair-ordering schedule only depends on the lengths unless a KL tie has
    to be broken, so tie-free schedules are memoised.
    """
    key = tuple(int(m) for m in lengths)
    cached = _untied_order(key)
    if cached is not None:
        return cached
    seed = int(rng.integers(2**63))
    state = merge([NonceSequence(u, tuple(range(m))) for u, m in enumerate(key)], seed=seed)
    return _with_ranks(state.order)


def simulate_block(
    params: SystemParams,
    sizes,
    timing: TimingParams,
    mode: str = "analytic",
    seed: int | np.random.Generator = 0,
    lengths=None,
    payload: bytes | None = None,
) -> MiningTrace:
    """Mine one block.

    Args:
        sizes: Block size of every user.
        lengths: Per-user nonce counts; defaults to the equilibrium allocation
            from :func:`access_filter`. Users with zero length sit out.
        seed: Integer seed or an existing generator.
        payload: Base header bytes; each user's header appends its 4-byte id so
            equal nonces from different users hash differently.

    Raises:
        NoMinersError: If no user has a positive nonce count.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    s = np.asarray(sizes, dtype=float)
    if lengths is None:
        sol = access_filter(params, s)
        if sol.crashed:
            raise NoMinersError("no active users: system crash")
        lengths = sol.lengths_for(s.size)
    lengths = np.asarray(lengths, dtype=np.int64)
    active = np.flatnonzero(lengths > 0)
    if active.size == 0:
        raise NoMinersError("no active users")
    act_len = lengths[active]
    per_round = int(act_len.sum())
    if per_round > 2**params.L * active.size:
        raise ValueError("nonce demand exceeds the nonce space")

    if mode == "real-hash":
        base = rng.bytes(32) if payload is None else bytes(payload)
        headers = [base + int(u).to_bytes(4, "big") for u in active]
        threshold = _threshold(params.h, DIGEST_BITS)
    else:
        p = 2.0 ** (-params.h)

    hashes = 0
    rounds = 0
    winner = nonce = None
    while winner is None:
        rounds += 1
        nonces = [draw_nonces(rng, int(m), params.L) for m in act_len]
        order, ranks = service_order(act_len, rng)
        if mode == "analytic":
            # index of the first success among sequential Bernoulli trials
            first = int(rng.geometric(p)) - 1
            if first < per_round:
                k = int(order[first])
                winner, nonce = int(active[k]), int(nonces[k][ranks[first]])
                hashes += first + 1
            else:
                hashes += per_round
        else:
            for pos in range(per_round):
                k = int(order[pos])
                n = int(nonces[k][ranks[pos]])
                digest = hashlib.sha256(headers[k] + n.to_bytes(8, "big")).digest()
                if int.from_bytes(digest, "big") <= threshold:
                    winner, nonce = int(active[k]), n
                    hashes += pos + 1
                    break
            else:
                hashes += per_round

    rewards = np.zeros(s.size)
    rewards[winner] = params.B + params.r * s[winner]
    return MiningTrace(
        winner=winner,
        winning_nonce=nonce,
        hashes_executed=hashes,
        rounds_executed=rounds,
        rewards=tuple(float(x) for x in rewards),
        model_time=timing.t0 * hashes + timing.beta * rounds,
        h=float(params.h),
        lengths=tuple(int(x) for x in lengths),
    )


def simulate_campaign(
    params: SystemParams,
    timing: TimingParams,
    num_blocks: int,
    size_sampler: SizeSampler | None = None,
    mode: str = "analytic",
    seed: int = 0,
    initial_h: float | None = None,
    rounds_source: str = "analytic",
) -> CampaignResult:
    """Mine ``num_blocks`` blocks under the difficulty controller.

    Each block resamples sizes, solves the equilibrium, mines the block and
    records it; the difficulty is updated after every ``G`` blocks. The
    controller sees ``R_min`` at the block's sizes (``rounds_source="analytic"``)
    or the rounds the block actually took (``"mined"``).

    Raises:
        SystemCrash: With the failing block index, if all but one user quits.
    """
    if num_blocks < 1:
        raise ValueError("num_blocks must be >= 1")
    traces: list[MiningTrace] = []
    solutions: list[GameSolution] = []

    def mine(b, h, sizes, sol, rng):
        p = params.with_h(h)
        t = simulate_block(p, sizes, timing, mode=mode, seed=rng, lengths=sol.lengths_for(len(sizes)))
        t.block = b
        traces.append(t)
        solutions.append(sol)
        return t.rounds_executed if rounds_source == "mined" else None

    if rounds_source not in ("analytic", "mined"):
        raise ValueError(f"unknown rounds_source {rounds_source!r}")
    h0 = params.h if initial_h is None else initial_h
    sched = run_difficulty_loop(h0, 0, size_sampler, params, timing, seed=seed,
                                num_blocks=num_blocks, on_block=mine)
    return CampaignResult(traces=traces, schedule=sched, solutions=solutions)


def write_traces_csv(traces: Sequence[MiningTrace], path) -> None:
    """Rows ``block,winner,hashes,rounds,reward,model_time_s,h``."""
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["block", "winner", "hashes", "rounds", "reward", "model_time_s", "h"])
        for t in traces:
            reward = t.rewards[t.winner] if t.winner is not None else 0.0
            wr.writerow([t.block, t.winner, t.hashes_executed, t.rounds_executed, repr(reward),
                         repr(t.model_time), repr(t.h)])
