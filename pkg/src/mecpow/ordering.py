"""Fair nonce ordering on an untrusted MEC server.

N users each submit an ascending nonce sequence. The server interleaves them
into a single service order such that, at every prefix, each user's share of
served nonces stays as close as possible (in KL divergence) to its
length-proportional target share. A weighted round robin scheduler is kept
as the baseline.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

__all__ = [
    "NonceSequence",
    "OrderingState",
    "MergeComplete",
    "UserExhaustedError",
    "UndefinedDivergenceError",
    "target_mass",
    "kl_divergence",
    "candidate_mass",
    "select_next",
    "merge",
    "wrr_merge",
    "prefix_fairness",
    "read_nonce_file",
    "write_merged_csv",
]

# relative tolerance for treating two KL values as a tie
TIE_RTOL = 1e-12


class UserExhaustedError(ValueError):
    """Raised when a candidate is requested for a user with no nonces left."""


class UndefinedDivergenceError(ValueError):
    """KL(q||p) is infinite: q puts mass where p has none."""


class MergeComplete(Exception):
    """Signal raised by :func:`select_next` once every user is exhausted."""


@dataclass(frozen=True)
class NonceSequence:
    """One user's submitted nonces, strictly ascending and below ``2**L``."""

    user_id: int
    nonces: tuple[int, ...]
    L: int = 32

    def __post_init__(self):
        nonces = tuple(int(n) for n in self.nonces)
        object.__setattr__(self, "nonces", nonces)
        if not nonces:
            raise ValueError(f"user {self.user_id}: nonce sequence must be non-empty")
        if nonces[0] < 0 or nonces[-1] >= 2**self.L:
            raise ValueError(f"user {self.user_id}: nonces must lie in [0, 2**{self.L})")
        if any(b <= a for a, b in zip(nonces, nonces[1:])):
            raise ValueError(f"user {self.user_id}: nonces must be strictly ascending")

    def __len__(self) -> int:
        return len(self.nonces)


def target_mass(lengths: Sequence[int]) -> np.ndarray:
    """Length-proportional service shares ``M_i / sum(M)``."""
    m = np.asarray(lengths, dtype=float)
    if m.ndim != 1 or m.size == 0:
        raise ValueError("need at least one nonce length")
    if np.any(m <= 0):
        raise ValueError("every nonce length must be >= 1")
    return m / m.sum()


def kl_divergence(q: Sequence[float], p: Sequence[float], base: float = math.e) -> float:
    """KL(q || p) with the convention ``0 * log 0 = 0``.

    Args:
        q: Distribution being measured.
        p: Reference distribution.
        base: Logarithm base. Natural log by default.

    Raises:
        ValueError: If the vectors differ in length or do not sum to one.
        UndefinedDivergenceError: If some ``q_i > 0`` has ``p_i == 0``.
    """
    if len(q) != len(p):
        raise ValueError(f"dimension mismatch: {len(q)} vs {len(p)}")
    if abs(math.fsum(q) - 1.0) > 1e-9 or abs(math.fsum(p) - 1.0) > 1e-9:
        raise ValueError("q and p must each sum to 1")
    total = 0.0
    for qi, pi in zip(q, p):
        if qi <= 0.0:
            continue
        if pi <= 0.0:
            raise UndefinedDivergenceError("q_i > 0 where p_i == 0")
        total += qi * math.log(qi / pi)
    if base != math.e:
        total /= math.log(base)
    return total


@dataclass
class OrderingState:
    """Live state of a KL merge.

    ``served[i] + remaining[i] == lengths[i]`` holds throughout, and
    ``merged`` lists ``(user_id, nonce)`` pairs in service order.
    """

    sequences: list[NonceSequence]
    rng_seed: int = 0
    served: list[int] = field(init=False)
    remaining: list[int] = field(init=False)
    merged: list[tuple[int, int]] = field(init=False, default_factory=list)
    order: list[int] = field(init=False, default_factory=list)
    ties_broken: int = field(init=False, default=0)

    def __post_init__(self):
        if not self.sequences:
            raise ValueError("need at least one nonce sequence")
        self.served = [0] * len(self.sequences)
        self.remaining = [len(s) for s in self.sequences]
        self.rng = np.random.default_rng(self.rng_seed)

    @property
    def lengths(self) -> list[int]:
        return [len(s) for s in self.sequences]

    @property
    def done(self) -> bool:
        return not any(self.remaining)

    def advance(self, i: int) -> None:
        """Move user ``i``'s top nonce into the merged sequence."""
        if self.remaining[i] == 0:
            raise UserExhaustedError(f"user index {i} has no nonces left")
        seq = self.sequences[i]
        self.merged.append((seq.user_id, seq.nonces[self.served[i]]))
        self.order.append(i)
        self.served[i] += 1
        self.remaining[i] -= 1


def candidate_mass(state: OrderingState, i: int) -> list[float]:
    """Served-share distribution that would result from serving user ``i`` next."""
    if state.remaining[i] < 1:
        raise UserExhaustedError(f"user index {i} has no nonces left")
    denom = sum(state.served) + 1
    return [(k + (j == i)) / denom for j, k in enumerate(state.served)]


def _check_target(target: Sequence[float], n: int) -> list[float]:
    p = [float(x) for x in target]
    if len(p) != n:
        raise ValueError(f"dimension mismatch: {n} users vs {len(p)} target entries")
    if abs(math.fsum(p) - 1.0) > 1e-9:
        raise ValueError("target must sum to 1")
    return p


def _pick(state: OrderingState, p: list[float], base: float) -> int:
    """Greedy KL choice on a pre-validated target; see :func:`select_next`."""
    served = state.served
    denom = sum(served) + 1
    scores = []
    for i, left in enumerate(state.remaining):
        if not left:
            continue
        total = 0.0
        for j, (k, pj) in enumerate(zip(served, p)):
            qj = (k + (j == i)) / denom
            if qj <= 0.0:
                continue
            if pj <= 0.0:
                raise UndefinedDivergenceError("q_i > 0 where p_i == 0")
            total += qj * math.log(qj / pj)
        if base != math.e:
            total /= math.log(base)
        scores.append((total, i))
    if not scores:
        raise MergeComplete()
    best = min(v for v, _ in scores)
    tied = [i for v, i in scores if abs(v - best) <= TIE_RTOL * max(1.0, abs(v), abs(best))]
    if len(tied) == 1:
        return tied[0]
    state.ties_broken += 1
    return tied[int(state.rng.integers(len(tied)))]


def select_next(state: OrderingState, target: Sequence[float], base: float = math.e) -> int:
    """Index of the non-exhausted user whose service minimises KL to ``target``.

    Ties (relative gap at most ``TIE_RTOL``) are broken uniformly at random with
    the state's generator; no random draw is made when the minimiser is unique.
    """
    return _pick(state, _check_target(target, len(state.sequences)), base)


def merge(sequences: Sequence[NonceSequence], seed: int = 0) -> OrderingState:
    """Run the greedy KL merge to completion and return the final state."""
    state = OrderingState(list(sequences), rng_seed=seed)
    p = _check_target(target_mass(state.lengths), len(state.sequences))
    while True:
        try:
            i = _pick(state, p, math.e)
        except MergeComplete:
            return state
        state.advance(i)


def wrr_merge(sequences: Sequence[NonceSequence], weights: Sequence[int]) -> list[tuple[int, int]]:
    """Weighted round robin: per cycle serve user i up to ``weights[i]`` times in a row."""
    if not sequences:
        raise ValueError("need at least one nonce sequence")
    if len(weights) != len(sequences):
        raise ValueError("need exactly one weight per user")
    if any(int(w) < 1 for w in weights):
        raise ValueError("weights must be positive integers")
    pos = [0] * len(sequences)
    total = sum(len(s) for s in sequences)
    out: list[tuple[int, int]] = []
    while len(out) < total:
        for i, seq in enumerate(sequences):
            take = min(int(weights[i]), len(seq) - pos[i])
            out.extend((seq.user_id, n) for n in seq.nonces[pos[i]:pos[i] + take])
            pos[i] += take
    return out


def prefix_fairness(merged: Sequence, target: Sequence[float], fraction: float = 1.0):
    """Empirical user frequencies over a prefix and their total variation to ``target``.

    ``merged`` may hold ``(user_id, nonce)`` pairs or bare user ids; user ids
    index into ``target``. The prefix covers ``ceil(fraction * len(merged))``
    entries.

    Returns:
        ``(frequencies, tv)`` with ``frequencies`` a numpy array.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if len(merged) == 0:
        raise ValueError("merged sequence is empty")
    n = math.ceil(fraction * len(merged) - 1e-9)
    ids = [e[0] if isinstance(e, tuple) else e for e in merged[:n]]
    counts = np.bincount(np.asarray(ids, dtype=int), minlength=len(target))
    freqs = counts / n
    tv = 0.5 * float(np.abs(freqs - np.asarray(target, dtype=float)).sum())
    return freqs, tv


def read_nonce_file(path: str | Path, L: int = 32) -> list[NonceSequence]:
    """One user per non-blank line, whitespace-separated ascending integers."""
    text = Path(path).read_text()
    seqs = []
    for line in text.splitlines():
        if line.strip():
            seqs.append(NonceSequence(len(seqs), tuple(int(t) for t in line.split()), L=L))
    if not seqs:
        raise ValueError(f"{path}: no nonce sequences found")
    return seqs


def write_merged_csv(merged: Iterable[tuple[int, int]], out: str | Path | TextIO) -> None:
    """Write ``position,user_id,nonce`` rows with a header."""
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            write_merged_csv(merged, fh)
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["position", "user_id", "nonce"])
    for pos, (uid, nonce) in enumerate(merged):
        w.writerow([pos, uid, nonce])


def merged_csv_text(merged: Iterable[tuple[int, int]]) -> str:
    buf = io.StringIO()
    write_merged_csv(merged, buf)
    return buf.getvalue()
