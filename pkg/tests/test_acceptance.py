"""Acceptance suite: one test, and one printed PASS/FAIL line, per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the measured values.
"""

import math
import time

import numpy as np
import pytest

from mecpow.difficulty import (
    TimingParams,
    avg_rounds,
    calibrated_h,
    min_rounds,
    run_difficulty_loop,
    total_nonce_demand,
    update_difficulty,
)
from mecpow.game import (
    SystemParams,
    access_filter,
    best_response,
    closed_form_ne,
    cooperative_benchmark,
    price_ratios,
    solve_alternating,
    utilities,
    utility,
)
from mecpow.mining import BlockHeader, hash_check, simulate_block
from mecpow.ordering import NonceSequence, merge, prefix_fairness, wrr_merge

from oracles import grid_best_response, grid_equilibrium

FIG3 = SystemParams(B=1e4, r=2.0, c=0.001, h=12.0)
S3 = (100.0, 200.0, 300.0)


def verdict(number, title, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}")
    assert ok, f"criterion {number} failed: {detail}"


def random_params(rng):
    return SystemParams(B=rng.uniform(1e3, 5e4), r=rng.uniform(0, 10),
                        c=rng.uniform(1e-4, 1e-2), h=rng.uniform(4, 16))


def test_criterion_01_ordering_fairness():
    start = time.perf_counter()
    lengths, target = (100, 300, 600), (0.1, 0.3, 0.6)
    seqs = [NonceSequence(u, tuple(range(m))) for u, m in enumerate(lengths)]
    wrr = wrr_merge(seqs, [1, 3, 6])
    kl = {0.2: [], 0.5: []}
    for seed in range(100):
        merged = merge(seqs, seed=seed).merged
        for frac in kl:
            kl[frac].append(prefix_fairness(merged, target, frac)[1])
    kl = {f: float(np.mean(v)) for f, v in kl.items()}
    rr = {f: prefix_fairness(wrr, target, f)[1] for f in kl}
    elapsed = time.perf_counter() - start
    ok = kl[0.5] <= 0.02 and all(kl[f] < rr[f] for f in kl) and elapsed < 5.0
    verdict(1, "KL merge prefix fairness vs WRR at M=1000", ok,
            f"KL TV@0.2M={kl[0.2]:.4g} @0.5M={kl[0.5]:.4g}; "
            f"WRR TV@0.2M={rr[0.2]:.4g} @0.5M={rr[0.5]:.4g}; {elapsed:.2f} s")


def test_criterion_02_closed_form_and_alternating():
    M = closed_form_ne(FIG3, S3)
    oracle = np.array(grid_equilibrium(1e4, 2.0, 0.001, 12.0, S3))
    sol = solve_alternating(FIG3, S3)
    rel = np.max(np.abs(np.array(sol.M_real) - M) / M)
    ok = (np.allclose(M, (542.26, 564.37, 585.66), atol=0.01)
          and np.allclose(oracle, (542.26, 564.37, 585.66), atol=0.01)
          and rel <= 1e-3 and sol.converged and sol.iterations <= 20)
    verdict(2, "closed-form NE vs grid oracle and alternating solver", ok,
            f"closed form {np.round(M, 4).tolist()}, grid {np.round(oracle, 4).tolist()}, "
            f"alternating rel gap {rel:.2e} in {sol.iterations} iterations")


def test_criterion_03_two_player_intersection():
    s = (100.0, 200.0)
    M = closed_form_ne(FIG3, s)
    r1 = best_response(M[1], FIG3, s[0])
    r2 = best_response(M[0], FIG3, s[1])
    gaps = (abs(r1 - M[0]) / M[0], abs(r2 - M[1]) / M[1])
    grid = grid_best_response(0, list(M), 1e4, 2.0, 0.001, 12.0, s)
    ok = max(gaps) <= 1e-6 and abs(grid - M[0]) / M[0] <= 1e-6
    verdict(3, "two-player best-response fixed point", ok,
            f"M*={np.round(M, 6).tolist()}, relative gaps {gaps[0]:.1e}, {gaps[1]:.1e}")


def test_criterion_04_monotonicity_sweeps():
    Bs = np.linspace(2e3, 2e4, 91)
    by_B = np.array([closed_form_ne(SystemParams(B=B, r=2.0, c=0.001, h=12.0), S3) for B in Bs])
    rs = np.linspace(0.0, 10.0, 101)
    by_r = np.array([closed_form_ne(SystemParams(B=1e4, r=r, c=0.001, h=12.0), S3) for r in rs])
    dB, dr = np.diff(by_B, axis=0), np.diff(by_r, axis=0)
    ok_B = bool(np.all(dB > 0))
    ok_r = bool(np.all(dr[:, 0] < 0) and np.all(dr[:, 1:] > 0))
    verdict(4, "M* increasing in B; in r user 1 falls, users 2 and 3 rise", ok_B and ok_r,
            f"B sweep increasing={ok_B}; r sweep M1 {by_r[0, 0]:.2f}->{by_r[-1, 0]:.2f}, "
            f"M2 {by_r[0, 1]:.2f}->{by_r[-1, 1]:.2f}, M3 {by_r[0, 2]:.2f}->{by_r[-1, 2]:.2f}")


def test_criterion_05_dropout_filtering():
    params, s = SystemParams(B=100.0, r=2.0, c=0.001, h=12.0), (1.0, 500.0, 1000.0)
    sol = access_filter(params, s)
    oracle = grid_equilibrium(100.0, 2.0, 0.001, 12.0, s[1:])
    oracle_int = tuple(int(math.floor(x)) for x in oracle)
    ok = sol.active_set == (1, 2) and sol.M_star == (60, 115) and oracle_int == (60, 115)
    verdict(5, "user 1 dropped, (60, 115) on users 2 and 3", ok,
            f"active={sol.active_set}, M*={sol.M_star}, grid oracle {np.round(oracle, 3).tolist()}")


def test_criterion_06_cooperation_vs_equilibrium():
    coop = cooperative_benchmark(FIG3, S3)
    ne = utilities(closed_form_ne(FIG3, S3), FIG3, S3)
    losers = [i for i in range(3) if coop.utilities[i] < ne[i]]
    ok = coop.total > ne.sum() and bool(losers)
    verdict(6, "cooperative total beats NE total, some user loses", ok,
            f"coop total {coop.total:.4f} vs NE total {ne.sum():.4f}; users worse off {losers}")


def test_criterion_07_difficulty_control():
    start = time.perf_counter()
    timing = TimingParams(beta=120.0, R_th=5.0, G=10)
    h0 = calibrated_h(FIG3, timing)
    g10 = run_difficulty_loop(h0, 0, None, FIG3, timing, seed=0, num_blocks=200)
    g2 = run_difficulty_loop(h0, 0, None, FIG3, TimingParams(beta=120.0, R_th=5.0, G=2),
                             seed=0, num_blocks=200)
    within = g10.within_target(60.0)
    avgs = g10.window_average_times()
    var10, var2 = np.var(g10.blocktime_history), np.var(g2.blocktime_history)
    elapsed = time.perf_counter() - start
    ok = (within >= 0.95 and np.all(np.abs(avgs - 600) <= 60) and abs(avgs.mean() - 600) <= 30
          and var2 > var10 and elapsed < 30)
    verdict(7, "block time near 600 s, G=2 noisier than G=10", ok,
            f"{within:.1%} of blocks within 60 s; window means {avgs.min():.1f}..{avgs.max():.1f} s "
            f"(mean {avgs.mean():.1f}); var G=2 {var2:.1f} vs G=10 {var10:.1f}; {elapsed:.1f} s")


def test_criterion_08_mining_statistics():
    rng = np.random.default_rng(2024)
    blocks = 10_000
    lengths = access_filter(FIG3, S3).lengths_for(3)
    hashes, wins = np.empty(blocks), np.zeros(3)
    from mecpow.difficulty import TimingParams as TP
    timing = TP()
    for b in range(blocks):
        t = simulate_block(FIG3, S3, timing, mode="analytic", seed=rng, lengths=lengths)
        hashes[b] = t.hashes_executed
        wins[t.winner] += 1
    p = 2.0**-12
    se = math.sqrt(1 - p) / p / math.sqrt(blocks)
    ok_mean = abs(hashes.mean() - 4096) <= 3 * se

    count = 100_000
    hits = sum(hash_check(BlockHeader(b"acceptance", n), 8) for n in range(count))
    sig = math.sqrt((1 / 256) * (1 - 1 / 256) / count)
    ok_rate = abs(hits / count - 1 / 256) <= 3 * sig

    share = lengths / lengths.sum()
    tv = 0.5 * float(np.abs(wins / blocks - share).sum())
    ok = ok_mean and ok_rate and tv <= 0.03
    verdict(8, "mining statistics", ok,
            f"mean hashes {hashes.mean():.1f} (4096 +- {3 * se:.1f}); "
            f"h=8 rate {hits / count:.5f} (0.00391 +- {3 * sig:.5f}); win-share TV {tv:.4f}")


def test_criterion_09_algebraic_identities():
    rng = np.random.default_rng(909)
    worst = [0.0, 0.0, 0.0]
    for _ in range(100):
        params = random_params(rng)
        n = int(rng.integers(2, 8))
        s = rng.uniform(1, 1024, n)
        M = closed_form_ne(params, s)
        a = price_ratios(params, s)
        worst[0] = max(worst[0], abs(M.sum() - (n - 1) / a.sum()) / ((n - 1) / a.sum()))
        window = [s] + [rng.uniform(1, 1024, n) for _ in range(int(rng.integers(0, 9)))]
        timing = TimingParams(R_th=rng.uniform(0.5, 50), G=len(window))
        h_new = update_difficulty(window, params, timing)
        got = avg_rounds(window, params.with_h(h_new))
        worst[1] = max(worst[1], abs(got - timing.R_th) / timing.R_th)
        prod = min_rounds(params, s) * total_nonce_demand(params, s)
        worst[2] = max(worst[2], abs(prod - 2.0**params.h) / 2.0**params.h)
    ok = max(worst) <= 1e-9
    verdict(9, "sum identity, difficulty round trip, rounds x demand = 2^h", ok,
            f"worst relative errors {worst[0]:.1e}, {worst[1]:.1e}, {worst[2]:.1e}")


def test_criterion_10_concavity():
    rng = np.random.default_rng(1010)
    bad_u = bad_br = checked_br = 0
    for _ in range(1000):
        params = random_params(rng)
        n = int(rng.integers(2, 7))
        s = rng.uniform(1, 1024, n)
        M = rng.uniform(2, 5000, n)
        i = int(rng.integers(n))

        def u(x):
            trial = M.copy()
            trial[i] = x
            return utility(i, trial, params, s)

        if not u(M[i] + 1) - 2 * u(M[i]) + u(M[i] - 1) < 0:
            bad_u += 1

        # opponents' totals where the best response is interior
        ratio = (params.B + params.r * s[i]) / (params.c * 2.0**params.h)
        x = rng.uniform(0.01, 0.9) * ratio
        step = 1e-3 * x
        vals = [best_response(x + k * step, params, s[i]) for k in (-1, 0, 1)]
        if min(vals) > 0:
            checked_br += 1
            if not vals[0] - 2 * vals[1] + vals[2] < 0:
                bad_br += 1
    ok = bad_u == 0 and bad_br == 0 and checked_br == 1000
    verdict(10, "negative second differences of utility and best response", ok,
            f"utility violations {bad_u}/1000; best-response violations {bad_br}/{checked_br}")
