"""Exact and simulative analysis of a receiver-granted contention backoff.

The package models N senders racing for one receiver with uniformly drawn
backoff counters over failure-dependent windows, builds the exact
discrete-time Markov chain of the synchronized protocol product, checks
qualitative properties on it, computes idle-listening costs, and
cross-validates everything by Monte Carlo simulation of the same automaton.
"""

__version__ = "0.1.0"

from .automata import (
    Automaton,
    ChannelState,
    GlobalState,
    ReceiverPhase,
    ReceiverState,
    ScenarioConfig,
    SenderPhase,
    SenderState,
    StepKind,
    channel_state,
    initial_state,
    label,
    observe_busy,
    successor_distribution,
)
from .backoff import (
    DEFAULT_TABLE,
    BackoffTable,
    ContentionWindow,
    TimingParams,
    compute_tcu,
    rbc_pmf,
    sample_rbc,
    window_for,
)
from .dtmc import (
    DTMC,
    PropertyReport,
    Trace,
    almost_sure_leads_to,
    build,
    check_invariant,
    dump_statespace,
    expected_entries,
    expected_reward,
    expected_visits,
    find_deadlocks,
    idle_listening_rewards,
    prob_reach,
)
from .errors import (
    ConfigError,
    RewardUndefinedError,
    SolverError,
    StateSpaceLimitError,
)
from .montecarlo import (
    Aggregate,
    RunStats,
    Simulator,
    mean_ci95,
    run_once,
    run_rng,
    simulate,
)
from .properties import (
    BATTERY_EXPECTED,
    EnergyResult,
    ProfileResult,
    StudyReport,
    StudyRow,
    idle_listening_energy,
    idle_listening_time,
    run_validity_battery,
    success_profile,
    tcu_variation_study,
)
