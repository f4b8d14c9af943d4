"""Exact engine: state-space construction and verification queries."""

from fractions import Fraction

import numpy as np
import pytest

from ecomac_backoff import (
    ReceiverPhase,
    ScenarioConfig,
    SenderPhase,
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
from ecomac_backoff.errors import (
    RewardUndefinedError,
    StateSpaceLimitError,
)


def first_round_outcomes():
    """Brute force over the 49 equally likely first draws.

    The smaller draw wins the round; a tie collides.  Computed from the
    window arithmetic alone, independent of the automaton.
    """
    win1 = Fraction(sum(1 for a in range(1, 8) for b in range(1, 8) if a < b), 49)
    tie = Fraction(sum(1 for a in range(1, 8) for b in range(1, 8) if a == b), 49)
    return win1, tie


# -- construction ------------------------------------------------------------------


def test_lone_sender_chain_shape(lone_model):
    assert lone_model.n_states == 72
    assert lone_model.n_edges == 78
    assert int(lone_model.terminal_mask.sum()) == 1
    assert len(lone_model.deadlock_indices) == 0


def test_bfs_parents_precede_children(two_sender_model):
    d = two_sender_model
    assert d.parent[0] == -1
    assert (d.parent[1:] < np.arange(1, d.n_states)).all()


def test_rows_are_stochastic(two_sender_model):
    d = two_sender_model
    sums = np.add.reduceat(d.probs, d.indptr[:-1])
    sums[np.diff(d.indptr) == 0] = 1.0  # deadlock rows are empty
    assert np.abs(sums - 1.0).max() < 1e-12


def test_rebuild_is_deterministic(two_sender_cfg, two_sender_model):
    again = build(two_sender_cfg)
    assert (again.features == two_sender_model.features).all()
    assert (again.indptr == two_sender_model.indptr).all()
    assert (again.cols == two_sender_model.cols).all()
    assert (again.probs == two_sender_model.probs).all()


def test_state_cap_is_enforced(two_sender_cfg):
    with pytest.raises(StateSpaceLimitError):
        build(two_sender_cfg, max_states=100)


def test_feature_columns_reconstruct_states(two_sender_model):
    d = two_sender_model
    for idx in (0, 1, d.n_states // 2, d.n_states - 1):
        st = d.state_at(idx)
        assert d.sender_phase(0)[idx] == st.senders[0].phase
        assert d.sender_rbc(1)[idx] == st.senders[1].rbc
        assert d.receiver_phase()[idx] == st.receiver.phase
    assert d.labels_of(0) == {"s1_choose", "s2_choose", "r_w_start",
                              "s1_e_0", "s2_e_0", "s1_rbc_-1", "s2_rbc_-1",
                              "s1_msgs_1", "s2_msgs_1"}


def test_terminal_mask_is_exactly_the_all_done_states(two_sender_model):
    d = two_sender_model
    done = (d.sender_phase(0) == SenderPhase.DONE) & (d.sender_phase(1) == SenderPhase.DONE)
    assert (d.terminal_mask == np.asarray(done)).all()


# -- reachability ------------------------------------------------------------------


def test_first_round_win_probability(two_sender_model):
    d = two_sender_model
    win1, _ = first_round_outcomes()
    mask = np.asarray((d.sender_phase(0) == SenderPhase.SUCCESS) & (d.sender_e(0) == 0))
    assert abs(prob_reach(d, mask)[0] - float(win1)) < 1e-9


def test_first_round_collision_probability(two_sender_model):
    d = two_sender_model
    _, tie = first_round_outcomes()
    mask = np.asarray(
        (np.asarray(d.receiver_phase()) == ReceiverPhase.COLLISION)
        & (d.sender_e(0) == 0) & (d.sender_e(1) == 0)
    )
    assert abs(prob_reach(d, mask)[0] - float(tie)) < 1e-9


def test_outcome_probabilities_partition(two_sender_model):
    d = two_sender_model
    total = 0.0
    success = d.sender_phase(0) == SenderPhase.SUCCESS
    for k in range(13):
        total += prob_reach(d, np.asarray(success & (d.sender_e(0) == k)))[0]
    total += prob_reach(d, np.asarray(d.sender_phase(0) == SenderPhase.REJECT))[0]
    assert abs(total - 1.0) < 1e-9


def test_visits_and_entries_agree_with_reachability(two_sender_model):
    # with one packet each, outcome states are hit at most once
    d = two_sender_model
    mask = np.asarray(d.sender_phase(0) == SenderPhase.SUCCESS)
    p = prob_reach(d, mask)[0]
    assert abs(expected_visits(d, mask) - p) < 1e-9
    assert abs(expected_entries(d, mask) - p) < 1e-9


def test_visit_counts_reject_terminal_states(two_sender_model):
    with pytest.raises(ValueError):
        expected_visits(two_sender_model, two_sender_model.terminal_mask)


# -- rewards -----------------------------------------------------------------------


def test_lone_sender_idle_listening_reward(lone_model):
    # E[draw] = 4 units of 8 ticks at 0.001714 s per tick
    rewards = idle_listening_rewards(lone_model, 0)
    done = np.asarray(lone_model.sender_phase(0) == SenderPhase.DONE)
    assert abs(expected_reward(lone_model, rewards, done) - 0.054848) < 1e-9


def test_reward_requires_an_almost_sure_target(two_sender_model):
    d = two_sender_model
    rewards = idle_listening_rewards(d, 0)
    impossible = np.asarray((d.sender_phase(0) == SenderPhase.REJECT) & (d.sender_e(0) == 0))
    assert not impossible.any()
    with pytest.raises(RewardUndefinedError):
        expected_reward(d, rewards, impossible)


def test_reward_undefined_when_deadlocks_intervene():
    cfg = ScenarioConfig().with_tcu(3)
    d = build(cfg)
    done = np.asarray(d.sender_phase(0) == SenderPhase.DONE)
    with pytest.raises(RewardUndefinedError):
        expected_reward(d, idle_listening_rewards(d, 0), done)


# -- qualitative queries -------------------------------------------------------------


def test_invariant_violation_yields_a_shortest_trace(two_sender_model):
    d = two_sender_model
    report = check_invariant(
        d, np.asarray(d.sender_phase(0) != SenderPhase.SLEEP), "sender 1 never sleeps"
    )
    assert not report.holds
    trace = report.counterexample.indices
    assert trace[0] == 0
    assert d.sender_phase(0)[trace[-1]] == SenderPhase.SLEEP
    for u, v in zip(trace, trace[1:]):
        assert v in d.cols[d.indptr[u]:d.indptr[u + 1]]
    # BFS index order bounds the distance from the start
    assert all(np.asarray(d.sender_phase(0))[: trace[-1]] != SenderPhase.SLEEP)


def test_leads_to_holds_for_countdown_exhaustion(two_sender_model):
    d = two_sender_model
    trigger = np.asarray((d.sender_phase(0) == SenderPhase.COUNTDOWN) & (d.sender_rbc(0) == 1))
    report = almost_sure_leads_to(d, trigger, two_sender_model.terminal_mask, "drains")
    assert report.holds


def test_leads_to_fails_with_a_witness(two_sender_model):
    d = two_sender_model
    trigger = np.zeros(d.n_states, dtype=bool)
    trigger[0] = True
    goal = np.asarray((d.sender_phase(0) == SenderPhase.SUCCESS) & (d.sender_e(0) == 0))
    report = almost_sure_leads_to(d, trigger, goal, "always wins the first round")
    assert not report.holds
    trace = report.counterexample.indices
    assert trace[0] == 0
    # the witness ends where a zero-failure win is out of reach
    assert prob_reach(d, goal)[trace[-1]] == 0.0
    for u, v in zip(trace, trace[1:]):
        assert v in d.cols[d.indptr[u]:d.indptr[u + 1]]


def test_deadlock_traces_in_the_short_unit():
    d = build(ScenarioConfig().with_tcu(3))
    assert len(d.deadlock_indices) > 0
    traces = find_deadlocks(d, limit=3)
    for tr in traces:
        labels = d.labels_of(tr.indices[-1])
        assert any(l.endswith("_send_rts") for l in labels)
        assert labels & {"r_switch_rt", "r_send_cts", "r_w_end"}


# -- dumps --------------------------------------------------------------------------


def test_dump_format_and_determinism(lone_model, tmp_path):
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    dump_statespace(lone_model, p1)
    dump_statespace(lone_model, p2)
    data = p1.read_bytes()
    assert data == p2.read_bytes()
    assert b"\r" not in data
    lines = data.decode("ascii").splitlines()
    assert len(lines) == lone_model.n_states
    for line in lines[:5]:
        idx, labels, succs = line.split("\t")
        assert int(idx) >= 0
        parts = labels.split(",")
        assert parts == sorted(parts)
        for tok in succs.split():
            j, p = tok.split(":")
            assert 0 <= int(j) < lone_model.n_states
            assert 0.0 < float(p) <= 1.0
