"""Explicit-state DTMC construction and verification routines.

States are discovered breadth first from the initial state, so indices are
replay stable for a fixed scenario and non-decreasing in distance from the
start: the smallest index violating a predicate yields a shortest
counterexample trace through the BFS parent tree.  Transitions live in a CSR
triple; full state tuples are reconstructed on demand from a compact int16
feature matrix.

Apart from the self-loops of all-done terminal states the chain is a DAG
(packets only get consumed, failure counters only grow, and every tick makes
progress inside a round), so reachability probabilities, expected rewards,
and expected visit counts are each solved by one substitution sweep over
topological levels.  The fixed-point residual is evaluated afterwards and,
should a model ever contain proper cycles, polished by plain successive
substitution until it drops below 1e-10.
"""

from __future__ import annotations

from array import array
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .automata import (
    Automaton,
    GlobalState,
    N_RECEIVER_FIELDS,
    N_SENDER_FIELDS,
    ReceiverState,
    ScenarioConfig,
    SenderPhase,
    SenderState,
    label,
)
from .errors import RewardUndefinedError, SolverError, StateSpaceLimitError

SOLVE_TOL = 1e-10
ROWSUM_TOL = 1e-12
MAX_STATES_DEFAULT = 10_000_000
_MAX_POLISH_ITERS = 20_000


@dataclass
class Trace:
    """Path of state indices from the initial state to an endpoint."""

    indices: list[int]

    def render(self, dtmc: "DTMC") -> str:
        lines = []
        for step, idx in enumerate(self.indices):
            props = ",".join(sorted(label(dtmc.state_at(idx))))
            lines.append(f"{step:4d}  #{idx}  {props}")
        return "\n".join(lines)


@dataclass
class PropertyReport:
    """Verdict of one verification query, with a counterexample if violated."""

    name: str
    holds: bool
    detail: str = ""
    counterexample: Trace | None = None

    def oneline(self) -> str:
        verdict = "holds" if self.holds else "VIOLATED"
        tail = f" ({self.detail})" if self.detail else ""
        return f"{self.name}: {verdict}{tail}"


@dataclass(eq=False)
class DTMC:
    """Explicit reachable state space of one scenario in BFS order."""

    cfg: ScenarioConfig
    n_states: int
    features: np.ndarray        # int16, one row per state
    indptr: np.ndarray          # int64, CSR row pointers
    cols: np.ndarray            # int32, CSR successor indices
    probs: np.ndarray           # float64, CSR branch probabilities
    parent: np.ndarray          # int32, BFS tree parent (-1 for the root)
    deadlock_indices: np.ndarray
    terminal_mask: np.ndarray   # bool, all-senders-done self-loop states

    _open: tuple | None = field(default=None, repr=False)
    _levels: tuple | None = field(default=None, repr=False)
    _matrix: sparse.csr_matrix | None = field(default=None, repr=False)
    _rev: tuple | None = field(default=None, repr=False)
    _rho: np.ndarray | None = field(default=None, repr=False)

    # -- state access --------------------------------------------------------

    @property
    def n_edges(self) -> int:
        return len(self.cols)

    @property
    def n_senders(self) -> int:
        return self.cfg.n_senders

    def state_at(self, idx: int) -> GlobalState:
        row = self.features[idx]
        senders = tuple(
            SenderState(*map(int, row[i * N_SENDER_FIELDS:(i + 1) * N_SENDER_FIELDS]))
            for i in range(self.n_senders)
        )
        base = self.n_senders * N_SENDER_FIELDS
        return GlobalState(senders, ReceiverState(*map(int, row[base:base + N_RECEIVER_FIELDS])))

    def labels_of(self, idx: int) -> frozenset[str]:
        return label(self.state_at(idx))

    def successors(self, idx: int) -> list[tuple[int, float]]:
        lo, hi = self.indptr[idx], self.indptr[idx + 1]
        return list(zip(self.cols[lo:hi].tolist(), self.probs[lo:hi].tolist()))

    def trace_to(self, idx: int) -> Trace:
        path = [idx]
        while self.parent[path[-1]] >= 0:
            path.append(int(self.parent[path[-1]]))
        path.reverse()
        return Trace(path)

    # feature columns (views, do not mutate)

    def sender_phase(self, i: int) -> np.ndarray:
        return self.features[:, i * N_SENDER_FIELDS + 0]

    def sender_e(self, i: int) -> np.ndarray:
        return self.features[:, i * N_SENDER_FIELDS + 1]

    def sender_rbc(self, i: int) -> np.ndarray:
        return self.features[:, i * N_SENDER_FIELDS + 2]

    def sender_msgs(self, i: int) -> np.ndarray:
        return self.features[:, i * N_SENDER_FIELDS + 3]

    def sender_ticks(self, i: int) -> np.ndarray:
        return self.features[:, i * N_SENDER_FIELDS + 4]

    def receiver_phase(self) -> np.ndarray:
        return self.features[:, self.n_senders * N_SENDER_FIELDS + 0]

    def receiver_winner(self) -> np.ndarray:
        return self.features[:, self.n_senders * N_SENDER_FIELDS + 1]

    def receiver_ticks(self) -> np.ndarray:
        return self.features[:, self.n_senders * N_SENDER_FIELDS + 2]

    def deadlock_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[self.deadlock_indices] = True
        return mask

    # -- derived structures ---------------------------------------------------

    def _edge_rows(self) -> np.ndarray:
        return np.repeat(
            np.arange(self.n_states, dtype=np.int32), np.diff(self.indptr)
        )

    def open_csr(self):
        """CSR triple with self-loops removed (only terminals have them)."""
        if self._open is None:
            rows = self._edge_rows()
            keep = self.cols != rows
            counts = np.bincount(rows[keep], minlength=self.n_states)
            indptr = np.zeros(self.n_states + 1, dtype=np.int64)
            np.cumsum(counts, out=indptr[1:])
            self._open = (indptr, self.cols[keep], self.probs[keep])
        return self._open

    def matrix(self) -> sparse.csr_matrix:
        if self._matrix is None:
            self._matrix = sparse.csr_matrix(
                (self.probs, self.cols, self.indptr),
                shape=(self.n_states, self.n_states),
            )
        return self._matrix

    def reverse_csr(self):
        """Predecessor CSR over open edges, for backward closures."""
        if self._rev is None:
            indptr, cols, _ = self.open_csr()
            rows = np.repeat(
                np.arange(self.n_states, dtype=np.int32), np.diff(indptr)
            )
            order = np.argsort(cols, kind="stable")
            rev_cols = rows[order]
            counts = np.bincount(cols, minlength=self.n_states)
            rev_indptr = np.zeros(self.n_states + 1, dtype=np.int64)
            np.cumsum(counts, out=rev_indptr[1:])
            self._rev = (rev_indptr, rev_cols)
        return self._rev

    def topo_levels(self) -> tuple[list[np.ndarray], bool]:
        """Kahn frontier rounds over open edges; edges cross levels forward.

        Returns (levels, acyclic); with a cyclic model some states stay
        unleveled and solves fall back to successive substitution.
        """
        if self._levels is None:
            indptr, cols, _ = self.open_csr()
            n = self.n_states
            in_deg = np.bincount(cols, minlength=n).astype(np.int64)
            frontier = np.flatnonzero(in_deg == 0)
            levels: list[np.ndarray] = []
            seen = 0
            while frontier.size:
                levels.append(frontier)
                seen += frontier.size
                heads = cols[_row_gather(indptr, frontier)]
                if heads.size == 0:
                    break
                np.subtract.at(in_deg, heads, 1)
                cand = np.unique(heads)
                frontier = cand[in_deg[cand] == 0]
            self._levels = (levels, seen == n)
        return self._levels


def _row_gather(indptr: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Flat CSR positions of all edges leaving `nodes`, row blocks in order."""
    starts = indptr[nodes]
    counts = indptr[nodes + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    seg = np.zeros(len(nodes), dtype=np.int64)
    np.cumsum(counts[:-1], out=seg[1:])
    return np.repeat(starts - seg, counts) + np.arange(total, dtype=np.int64)


def build(cfg: ScenarioConfig, max_states: int = MAX_STATES_DEFAULT,
          automaton: Automaton | None = None) -> DTMC:
    """Enumerate the reachable state space breadth first.

    Raises StateSpaceLimitError when more than `max_states` states are
    discovered.  Every emitted row is audited to sum to 1 within 1e-12.
    """
    auto = automaton if automaton is not None else Automaton(cfg)
    init = auto.initial_state()
    width = cfg.n_senders * N_SENDER_FIELDS + N_RECEIVER_FIELDS

    index: dict[GlobalState, int] = {init: 0}
    queue: deque[GlobalState] = deque((init,))
    feats = array("h")
    for v in init.senders:
        feats.extend(v)
    feats.extend(init.receiver)
    parent = array("i", (-1,))
    indptr = array("q", (0,))
    cols = array("i")
    probs = array("d")
    deadlocks = array("q")
    terminal = array("b", (0,))

    n_done = 0
    while queue:
        state = queue.popleft()
        src = n_done
        n_done += 1
        branches = auto.successor_distribution(state).branches
        if not branches:
            deadlocks.append(src)
        total = 0.0
        for p, nxt in branches:
            total += p
            j = index.get(nxt)
            if j is None:
                j = len(index)
                if j >= max_states:
                    raise StateSpaceLimitError(
                        f"reachable state space exceeds {max_states} states"
                    )
                index[nxt] = j
                queue.append(nxt)
                for v in nxt.senders:
                    feats.extend(v)
                feats.extend(nxt.receiver)
                parent.append(src)
                terminal.append(0)
            cols.append(j)
            probs.append(p)
        indptr.append(len(cols))
        if branches:
            if abs(total - 1.0) > ROWSUM_TOL:
                raise SolverError(
                    f"transition row {src} sums to {total!r}, off by more than {ROWSUM_TOL}"
                )
            if len(branches) == 1 and branches[0][1] == state:
                terminal[src] = 1

    n = len(index)
    del index
    return DTMC(
        cfg=cfg,
        n_states=n,
        features=np.frombuffer(feats, dtype=np.int16).reshape(n, width),
        indptr=np.frombuffer(indptr, dtype=np.int64),
        cols=np.frombuffer(cols, dtype=np.int32) if cols else np.empty(0, np.int32),
        probs=np.frombuffer(probs, dtype=np.float64) if probs else np.empty(0, np.float64),
        parent=np.frombuffer(parent, dtype=np.int32),
        deadlock_indices=np.frombuffer(deadlocks, dtype=np.int64) if deadlocks else np.empty(0, np.int64),
        terminal_mask=np.frombuffer(terminal, dtype=np.int8).astype(bool),
    )


# -- linear solves -------------------------------------------------------------


def _solve_fixed_point(dtmc: DTMC, pinned: np.ndarray, pinned_values: np.ndarray,
                       state_rewards: np.ndarray | None = None) -> np.ndarray:
    """Least solution of x = Px + r with x pinned on absorbing classes.

    One backward substitution pass over topological levels, then residual
    tracking with successive substitution as a safety net.
    """
    n = dtmc.n_states
    x = np.zeros(n, dtype=np.float64)
    x[pinned] = pinned_values[pinned]
    rew = state_rewards if state_rewards is not None else None

    levels, acyclic = dtmc.topo_levels()
    for nodes in reversed(levels):
        nodes = nodes[~pinned[nodes]]
        if nodes.size == 0:
            continue
        flat = _row_gather(dtmc.indptr, nodes)
        counts = dtmc.indptr[nodes + 1] - dtmc.indptr[nodes]
        contrib = dtmc.probs[flat] * x[dtmc.cols[flat]]
        seg = np.repeat(np.arange(nodes.size), counts)
        acc = np.bincount(seg, weights=contrib, minlength=nodes.size)
        x[nodes] = acc + (rew[nodes] if rew is not None else 0.0)

    matrix = dtmc.matrix()
    free = ~pinned
    for _ in range(_MAX_POLISH_ITERS):
        y = matrix.dot(x)
        if rew is not None:
            y += rew
        residual = np.abs(y[free] - x[free]).max() if free.any() else 0.0
        if residual <= SOLVE_TOL:
            return x
        x[free] = y[free]
    raise SolverError(
        f"fixed point not reached within {_MAX_POLISH_ITERS} substitutions "
        f"(residual {residual:.3e})"
    )


def prob_reach(dtmc: DTMC, target_mask: np.ndarray) -> np.ndarray:
    """Probability, per state, of eventually visiting the target set."""
    target_mask = np.asarray(target_mask, dtype=bool)
    pinned = target_mask | dtmc.terminal_mask | dtmc.deadlock_mask()
    vals = np.zeros(dtmc.n_states)
    vals[target_mask] = 1.0
    return _solve_fixed_point(dtmc, pinned, vals)


def expected_reward(dtmc: DTMC, state_rewards: np.ndarray,
                    target_mask: np.ndarray) -> float:
    """Expected reward accumulated from the initial state until the target.

    Rewards accrue on the source state of each transition; zero-duration
    bookkeeping states carry zero reward by construction of the caller's
    reward vector.  Defined only when the target is reached almost surely.
    """
    target_mask = np.asarray(target_mask, dtype=bool)
    reach = prob_reach(dtmc, target_mask)
    if reach[0] < 1.0 - 1e-9:
        raise RewardUndefinedError(
            f"target reached with probability {reach[0]:.12g} < 1; "
            "expected reward is undefined"
        )
    pinned = target_mask | dtmc.terminal_mask | dtmc.deadlock_mask()
    vals = np.zeros(dtmc.n_states)
    rewards = np.asarray(state_rewards, dtype=np.float64)
    return float(_solve_fixed_point(dtmc, pinned, vals, rewards)[0])


def _occupation(dtmc: DTMC) -> np.ndarray:
    """Visit probability of every state, pushed forward level by level.

    Off-terminal parts of the chain are acyclic, so each state is visited at
    most once and occupation equals visit probability.
    """
    if dtmc._rho is None:
        levels, acyclic = dtmc.topo_levels()
        if not acyclic:
            raise SolverError("occupation requires an acyclic transient part")
        indptr, cols, probs = dtmc.open_csr()
        rho = np.zeros(dtmc.n_states)
        rho[0] = 1.0
        for nodes in levels:
            nodes = nodes[rho[nodes] > 0.0]
            if nodes.size == 0:
                continue
            flat = _row_gather(indptr, nodes)
            counts = indptr[nodes + 1] - indptr[nodes]
            weights = np.repeat(rho[nodes], counts) * probs[flat]
            np.add.at(rho, cols[flat], weights)
        dtmc._rho = rho
    return dtmc._rho


def expected_visits(dtmc: DTMC, state_mask: np.ndarray) -> float:
    """Expected number of visits to the masked states (must be transient)."""
    state_mask = np.asarray(state_mask, dtype=bool)
    if (state_mask & dtmc.terminal_mask).any():
        raise ValueError("visit counts are finite only for transient states")
    return float(_occupation(dtmc)[state_mask].sum())


def expected_entries(dtmc: DTMC, state_mask: np.ndarray) -> float:
    """Expected number of transitions entering the masked set from outside.

    Counts each maximal stay once, unlike expected_visits, so it measures
    events (a delivery, a drop) even where an outcome phase persists for
    several states.  Starting inside the set counts as one entry.
    """
    state_mask = np.asarray(state_mask, dtype=bool)
    if (state_mask & dtmc.terminal_mask).any():
        raise ValueError("entry counts are finite only for transient states")
    rho = _occupation(dtmc)
    indptr, cols, probs = dtmc.open_csr()
    rows = np.repeat(np.arange(dtmc.n_states, dtype=np.int64), np.diff(indptr))
    crossing = state_mask[cols] & ~state_mask[rows]
    total = float((rho[rows[crossing]] * probs[crossing]).sum())
    return total + (1.0 if state_mask[0] else 0.0)


def idle_listening_rewards(dtmc: DTMC, sender: int | None = None) -> np.ndarray:
    """Seconds of carrier-sense listening accrued per state and tick.

    Counts senders sitting in their backoff countdown; zero-duration draw
    and round-boundary states contain no countdown phase and accrue nothing.
    """
    senders = range(dtmc.n_senders) if sender is None else (sender,)
    counting = np.zeros(dtmc.n_states, dtype=np.float64)
    for i in senders:
        counting += dtmc.sender_phase(i) == SenderPhase.COUNTDOWN
    return counting * dtmc.cfg.seconds_per_tick


# -- qualitative checks ---------------------------------------------------------


def check_invariant(dtmc: DTMC, good_mask: np.ndarray, name: str) -> PropertyReport:
    """Does every reachable state satisfy the predicate?

    The lowest violating BFS index gives a shortest counterexample trace.
    """
    good_mask = np.asarray(good_mask, dtype=bool)
    bad = np.flatnonzero(~good_mask)
    if bad.size == 0:
        return PropertyReport(name, True, f"all {dtmc.n_states} states satisfy the predicate")
    first = int(bad[0])
    return PropertyReport(
        name, False,
        f"{bad.size} of {dtmc.n_states} states violate the predicate; "
        f"shortest witness reaches state {first}",
        dtmc.trace_to(first),
    )


def _backward_closure(dtmc: DTMC, seed_mask: np.ndarray,
                      blocked_mask: np.ndarray | None = None) -> np.ndarray:
    """States that can reach the seed set, optionally not through blocked ones."""
    rev_indptr, rev_cols = dtmc.reverse_csr()
    reached = seed_mask.copy()
    frontier = np.flatnonzero(seed_mask)
    while frontier.size:
        preds = rev_cols[_row_gather(rev_indptr, frontier)]
        if preds.size == 0:
            break
        preds = np.unique(preds)
        fresh = ~reached[preds]
        if blocked_mask is not None:
            fresh &= ~blocked_mask[preds]
        frontier = preds[fresh]
        reached[frontier] = True
    return reached


def _forward_path(dtmc: DTMC, start: int, target_mask: np.ndarray,
                  blocked_mask: np.ndarray | None = None) -> list[int]:
    """Shortest edge path start -> target avoiding blocked states (BFS)."""
    if target_mask[start]:
        return [start]
    prev = {start: -1}
    frontier = deque((start,))
    while frontier:
        u = frontier.popleft()
        lo, hi = dtmc.indptr[u], dtmc.indptr[u + 1]
        for v in dtmc.cols[lo:hi].tolist():
            if v in prev:
                continue
            if blocked_mask is not None and blocked_mask[v] and not target_mask[v]:
                continue
            prev[v] = u
            if target_mask[v]:
                path = [v]
                while path[-1] != start:
                    path.append(prev[path[-1]])
                path.reverse()
                return path
            frontier.append(v)
    raise AssertionError("closure promised a path that BFS cannot find")


def almost_sure_leads_to(dtmc: DTMC, trigger_mask: np.ndarray,
                         goal_mask: np.ndarray, name: str) -> PropertyReport:
    """From every reachable trigger state, is the goal reached with probability 1?

    Pure graph analysis: a trigger fails iff it can reach, without passing
    through the goal, some state from which the goal is unreachable.
    """
    trigger_mask = np.asarray(trigger_mask, dtype=bool)
    goal_mask = np.asarray(goal_mask, dtype=bool)
    n_triggers = int(trigger_mask.sum())
    if n_triggers == 0:
        return PropertyReport(name, True, "no reachable trigger state")
    can_reach_goal = _backward_closure(dtmc, goal_mask)
    doomed = ~can_reach_goal
    unsafe = _backward_closure(dtmc, doomed, blocked_mask=goal_mask)
    failing = trigger_mask & unsafe
    if not failing.any():
        return PropertyReport(
            name, True, f"{n_triggers} trigger states all reach the goal almost surely"
        )
    first = int(np.flatnonzero(failing)[0])
    prefix = dtmc.trace_to(first).indices
    suffix = _forward_path(dtmc, first, doomed, blocked_mask=goal_mask)
    return PropertyReport(
        name, False,
        f"{int(failing.sum())} of {n_triggers} trigger states can evade the goal; "
        f"witness continues to a state from which the goal is unreachable",
        Trace(prefix[:-1] + suffix),
    )


def find_deadlocks(dtmc: DTMC, limit: int | None = 10) -> list[Trace]:
    """Shortest traces to deadlocked states, lowest BFS indices first."""
    picks = dtmc.deadlock_indices if limit is None else dtmc.deadlock_indices[:limit]
    return [dtmc.trace_to(int(i)) for i in picks]


def dump_statespace(dtmc: DTMC, path) -> None:
    """Write one line per state: index, sorted labels, successor:probability."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for i in range(dtmc.n_states):
            lo, hi = dtmc.indptr[i], dtmc.indptr[i + 1]
            succs = " ".join(
                f"{j}:{p:.12g}"
                for j, p in zip(dtmc.cols[lo:hi].tolist(), dtmc.probs[lo:hi].tolist())
            )
            fh.write(f"{i}\t{','.join(sorted(dtmc.labels_of(i)))}\t{succs}\n")
