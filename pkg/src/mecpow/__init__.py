"""Simulation of proof-of-work offloading to an untrusted MEC server.

Submodules:
    ordering    fair KL-divergence nonce merge and the WRR baseline
    game        nonce-selection game: utilities, equilibria, repeated play
    difficulty  round model and difficulty adjustment controller
    mining      block mining simulation (Bernoulli or SHA-256)
    experiments figure-level experiment runners
"""

from .difficulty import (
    DifficultySchedule,
    SystemCrash,
    TimingParams,
    avg_rounds,
    block_time,
    expected_hashes_to_success,
    min_rounds,
    run_difficulty_loop,
    total_nonce_demand,
    update_difficulty,
    var_rounds,
)
from .game import (
    GameSolution,
    SystemParams,
    UserProfile,
    access_filter,
    avg_size_ne,
    best_response,
    closed_form_ne,
    cooperative_benchmark,
    frg_utility,
    irg_utility,
    round_down,
    solve_alternating,
    utility,
)
from .mining import BlockHeader, MiningTrace, hash_check, simulate_block, simulate_campaign
from .ordering import NonceSequence, OrderingState, merge, prefix_fairness, wrr_merge

__version__ = "0.1.0"
