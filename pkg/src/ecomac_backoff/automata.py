"""Tick-level product automaton of N contending senders and one receiver.

One global state describes the system during one model tick, with two
zero-duration bookkeeping exceptions: the joint backoff draw that opens a
contention round and the round-boundary reset that closes it.  All
probabilistic branching happens in the draw step; every other state has at
most one successor, and a state with no successor at all is a deadlock.

Sender life cycle within a round::

    CHOOSE --draw--> COUNTDOWN --rbc=0--> SWITCH_RT -> SEND_RTS -> SWITCH_TR
        -> WAIT_CTS -> RECV_CTS -> SUCCESS          (CTS arrived)
                    -> SLEEP                        (timeout / receiver busy)

A countdown sender listens to the medium and decrements its backoff counter
after ``tcu_ticks`` consecutive idle ticks.  Senders are hidden from each
other: only the receiver's CTS transmission is observable, never a rival's
RTS.  A sender that hears the receiver transmit aborts to SLEEP keeping its
counter; the abort takes precedence over a decrement falling on the same
tick.  At the round boundary sleepers re-enter CHOOSE with e+1, and a sleeper
already at e_max rejects the packet instead (observable REJECT state, then
e resets to 0 for the next packet).

The receiver reacts to frame starts and ends within the same tick (the joint
update feeds it the senders' next phases), so a clean RTS is answered with a
CTS whose onset falls exactly 2*d_switch + d_frame ticks after the winner's
counter expired.  Two overlapping RTS latch the receiver in COLLISION for the
rest of the round and it never answers.  A sender that starts transmitting
while the receiver is itself committed to transmit (switching to or sending a
CTS, or draining W_END) has no defined transition: that global state is a
deadlock unless ``robust_mode`` adds a collision-absorbing fallback.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import NamedTuple

from .backoff import DEFAULT_TABLE, BackoffTable
from .errors import ConfigError


class SenderPhase(IntEnum):
    CHOOSE = 0
    COUNTDOWN = 1
    SWITCH_RT = 2
    SEND_RTS = 3
    SWITCH_TR = 4
    WAIT_CTS = 5
    RECV_CTS = 6
    SLEEP = 7
    SUCCESS = 8
    REJECT = 9
    DONE = 10


class ReceiverPhase(IntEnum):
    W_START = 0
    W_RTS = 1
    RECEIVING = 2
    COLLISION = 3
    SWITCH_RT = 4
    SEND_CTS = 5
    W_END = 6


class ChannelState(IntEnum):
    IDLE = 0
    BUSY_SENDER = 1
    BUSY_RECEIVER = 2
    COLLISION = 3


class StepKind(IntEnum):
    """What the next transition of a state is: one terminal self-loop, a
    deadlock (no transition at all), a zero-duration round-boundary reset,
    a zero-duration joint backoff draw, or a synchronized one-tick step."""
    TERMINAL = 0
    DEADLOCK = 1
    BOUNDARY = 2
    DRAW = 3
    TICK = 4


class SenderState(NamedTuple):
    phase: int
    e: int          # failures of the current packet, 0..e_max
    rbc: int        # backoff counter, -1 = not drawn
    msgs: int       # packets still to deliver (including the current one)
    ticks: int      # phase progress: idle ticks into the current contention
                    # unit for COUNTDOWN, remaining ticks otherwise


class ReceiverState(NamedTuple):
    phase: int
    winner: int     # sender being received / answered, -1 = none
    ticks: int      # remaining ticks of SWITCH_RT / SEND_CTS


class GlobalState(NamedTuple):
    senders: tuple[SenderState, ...]
    receiver: ReceiverState


class TransitionDistribution(NamedTuple):
    """Branches of one DTMC step as (probability, next state) pairs.

    Probabilities sum to 1 within 1e-12; an empty branch tuple marks a
    deadlock state.
    """

    branches: tuple[tuple[float, GlobalState], ...]


@dataclass(frozen=True)
class ScenarioConfig:
    """Model parameters for one contention scenario.

    tcu_ticks must equal 2*d_switch + d_frame + d_rssi (the contention unit
    covers two radio switches, one control frame, and one RSSI probe) unless
    ``tcu_experiment`` marks a deliberate contention-unit variation study.
    """

    n_senders: int = 2
    nmax_msg: int = 1
    table: BackoffTable = DEFAULT_TABLE
    tcu_ticks: int = 8
    d_switch: int = 1
    d_frame: int = 5
    d_rssi: int = 1
    cts_timeout: int = 3
    seconds_per_tick: float = 0.001714
    idle_power_mw: float = 13.5
    robust_mode: bool = False
    tcu_experiment: bool = False

    def __post_init__(self):
        if not isinstance(self.n_senders, int) or self.n_senders < 1:
            raise ConfigError(f"n_senders must be an integer >= 1, got {self.n_senders!r}")
        if not isinstance(self.nmax_msg, int) or self.nmax_msg < 0:
            raise ConfigError(f"nmax_msg must be an integer >= 0, got {self.nmax_msg!r}")
        for name in ("tcu_ticks", "d_switch", "d_frame", "d_rssi", "cts_timeout"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        if self.tcu_ticks < 1:
            raise ConfigError("tcu_ticks must be >= 1")
        if self.d_frame < 1:
            raise ConfigError("d_frame must be >= 1")
        if self.cts_timeout < max(1, self.d_rssi):
            raise ConfigError("cts_timeout must be >= max(1, d_rssi)")
        identity = 2 * self.d_switch + self.d_frame + self.d_rssi
        if self.tcu_ticks != identity and not self.tcu_experiment:
            raise ConfigError(
                f"tcu_ticks={self.tcu_ticks} != 2*d_switch + d_frame + d_rssi = {identity}; "
                "set tcu_experiment=True for a contention-unit variation study"
            )
        if not self.seconds_per_tick > 0:
            raise ConfigError("seconds_per_tick must be > 0")
        if self.idle_power_mw < 0:
            raise ConfigError("idle_power_mw must be >= 0")

    @property
    def e_max(self) -> int:
        return self.table.e_max

    @property
    def b_max(self) -> int:
        return self.table.b_max

    def with_tcu(self, tcu_ticks: int) -> "ScenarioConfig":
        """Same scenario with a different contention unit, flagged as a variation."""
        return replace(self, tcu_ticks=tcu_ticks, tcu_experiment=True)


_DONE_SENDER = SenderState(SenderPhase.DONE, 0, -1, 0, 0)
_IDLE_RECEIVER = ReceiverState(ReceiverPhase.W_START, -1, 0)

# sender phases that keep the round alive (transmission pipeline or countdown)
_ACTIVE_ROUND_PHASES = frozenset((
    SenderPhase.COUNTDOWN, SenderPhase.SWITCH_RT, SenderPhase.SEND_RTS,
    SenderPhase.SWITCH_TR, SenderPhase.WAIT_CTS, SenderPhase.RECV_CTS,
))

# receiver phases during which it is committed to its own transmission
_RECEIVER_COMMITTED = frozenset((
    ReceiverPhase.SWITCH_RT, ReceiverPhase.SEND_CTS, ReceiverPhase.W_END,
))


def initial_state(cfg: ScenarioConfig) -> GlobalState:
    """All senders ready to contend for their first packet, receiver idle."""
    if cfg.nmax_msg == 0:
        senders = (_DONE_SENDER,) * cfg.n_senders
    else:
        senders = (SenderState(SenderPhase.CHOOSE, 0, -1, cfg.nmax_msg, 0),) * cfg.n_senders
    return GlobalState(senders, _IDLE_RECEIVER)


def observe_busy(state: GlobalState, sender_id: int) -> bool:
    """Carrier sense of one sender: only the receiver's CTS is audible.

    Senders are hidden from each other, so a rival's RTS never reads busy.
    """
    return state.receiver.phase == ReceiverPhase.SEND_CTS


def channel_state(state: GlobalState, sender_id: int) -> ChannelState:
    """Derived status of the link between one sender and the receiver."""
    transmitters = sum(1 for sd in state.senders if sd.phase == SenderPhase.SEND_RTS)
    receiver_tx = state.receiver.phase == ReceiverPhase.SEND_CTS
    if transmitters + (1 if receiver_tx else 0) >= 2:
        return ChannelState.COLLISION
    if state.senders[sender_id].phase == SenderPhase.SEND_RTS:
        return ChannelState.BUSY_SENDER
    if receiver_tx:
        return ChannelState.BUSY_RECEIVER
    return ChannelState.IDLE


_SENDER_PHASE_NAMES = {p: p.name.lower() for p in SenderPhase}
_RECEIVER_PHASE_NAMES = {p: p.name.lower() for p in ReceiverPhase}


def label(state: GlobalState) -> frozenset[str]:
    """Atomic propositions of a state (sender phases, counters, receiver phase)."""
    props = set()
    for i, sd in enumerate(state.senders, start=1):
        props.add(f"s{i}_{_SENDER_PHASE_NAMES[sd.phase]}")
        props.add(f"s{i}_e_{sd.e}")
        props.add(f"s{i}_rbc_{sd.rbc}")
        props.add(f"s{i}_msgs_{sd.msgs}")
    props.add(f"r_{_RECEIVER_PHASE_NAMES[state.receiver.phase]}")
    return frozenset(props)


class Automaton:
    """Successor-rule engine for one scenario; the single source of semantics.

    Both the DTMC builder and the Monte Carlo simulator step states through
    :meth:`successor_distribution`; neither re-implements any protocol rule.
    """

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        # draw branches per failure count: ((value, prob), ...) ascending
        self._draws = tuple(
            tuple((v, 1.0 / cfg.table.window_for(e).width) for v in cfg.table.window_for(e).values())
            for e in range(cfg.e_max + 1)
        )
        self._sender_step: dict = {}
        self._receiver_step: dict = {}

    def initial_state(self) -> GlobalState:
        return initial_state(self.cfg)

    # -- sender micro-steps ------------------------------------------------

    def _pipeline_start(self) -> tuple[int, int]:
        # (phase, ticks) entered the instant the backoff counter hits zero
        if self.cfg.d_switch >= 1:
            return SenderPhase.SWITCH_RT, self.cfg.d_switch
        return SenderPhase.SEND_RTS, self.cfg.d_frame

    def _sender_next(self, sd: SenderState, ctx: int) -> SenderState:
        """One tick of a single sender.

        ctx: 0 = receiver silent, 1 = receiver transmitting a CTS to someone
        else, 2 = receiver transmitting a CTS to this sender, 3 = receiver
        latched in COLLISION (consulted only in robust mode).
        """
        cached = self._sender_step.get((sd, ctx))
        if cached is not None:
            return cached
        cfg = self.cfg
        phase, e, rbc, msgs, ticks = sd
        if phase == SenderPhase.COUNTDOWN:
            if ctx in (1, 2):
                nxt = SenderState(SenderPhase.SLEEP, e, rbc, msgs, 0)
            elif ticks + 1 == cfg.tcu_ticks:
                if rbc == 1:
                    ph, tk = self._pipeline_start()
                    nxt = SenderState(ph, e, 0, msgs, tk)
                else:
                    nxt = SenderState(SenderPhase.COUNTDOWN, e, rbc - 1, msgs, 0)
            else:
                nxt = SenderState(SenderPhase.COUNTDOWN, e, rbc, msgs, ticks + 1)
        elif phase == SenderPhase.SWITCH_RT:
            if ticks > 1:
                nxt = SenderState(phase, e, rbc, msgs, ticks - 1)
            else:
                nxt = SenderState(SenderPhase.SEND_RTS, e, rbc, msgs, cfg.d_frame)
        elif phase == SenderPhase.SEND_RTS:
            if ticks > 1:
                nxt = SenderState(phase, e, rbc, msgs, ticks - 1)
            elif cfg.d_switch >= 1:
                nxt = SenderState(SenderPhase.SWITCH_TR, e, rbc, msgs, cfg.d_switch)
            else:
                nxt = SenderState(SenderPhase.WAIT_CTS, e, rbc, msgs, cfg.cts_timeout)
        elif phase == SenderPhase.SWITCH_TR:
            if ticks > 1:
                nxt = SenderState(phase, e, rbc, msgs, ticks - 1)
            else:
                nxt = SenderState(SenderPhase.WAIT_CTS, e, rbc, msgs, cfg.cts_timeout)
        elif phase == SenderPhase.WAIT_CTS:
            if ctx == 2:
                nxt = SenderState(SenderPhase.RECV_CTS, e, rbc, msgs, cfg.d_frame)
            elif ctx == 1:
                nxt = SenderState(SenderPhase.SLEEP, e, rbc, msgs, 0)
            elif ticks > 1:
                nxt = SenderState(phase, e, rbc, msgs, ticks - 1)
            else:
                nxt = SenderState(SenderPhase.SLEEP, e, rbc, msgs, 0)
        elif phase == SenderPhase.RECV_CTS:
            if ctx == 3:
                nxt = SenderState(SenderPhase.SLEEP, e, rbc, msgs, 0)
            elif ticks > 1:
                nxt = SenderState(phase, e, rbc, msgs, ticks - 1)
            else:
                nxt = SenderState(SenderPhase.SUCCESS, e, rbc, msgs, 0)
        elif phase in (SenderPhase.SLEEP, SenderPhase.SUCCESS,
                       SenderPhase.REJECT, SenderPhase.DONE):
            # outcome phases hold until the round boundary collects them
            nxt = sd
        else:
            raise AssertionError(f"sender phase {phase} has no tick rule")
        self._sender_step[(sd, ctx)] = nxt
        return nxt

    # -- receiver micro-step -----------------------------------------------

    def _receiver_next(self, rc: ReceiverState, tx_next: tuple[int, ...],
                       frame_end: tuple[int, ...]) -> ReceiverState:
        """One tick of the receiver, fed the senders' simultaneous activity.

        tx_next: senders transmitting during the next tick; frame_end:
        senders whose RTS completes with the current tick.
        """
        key = (rc, tx_next, frame_end)
        cached = self._receiver_step.get(key)
        if cached is not None:
            return cached
        cfg = self.cfg
        phase, winner, ticks = rc
        if phase == ReceiverPhase.W_RTS:
            if len(frame_end) >= 2:
                nxt = ReceiverState(ReceiverPhase.COLLISION, -1, 0)
            elif len(frame_end) == 1:
                nxt = self._answer(frame_end[0])
            elif len(tx_next) >= 2:
                nxt = ReceiverState(ReceiverPhase.COLLISION, -1, 0)
            elif len(tx_next) == 1:
                nxt = ReceiverState(ReceiverPhase.RECEIVING, tx_next[0], 0)
            else:
                nxt = rc
        elif phase == ReceiverPhase.RECEIVING:
            if winner in tx_next:
                nxt = rc if len(tx_next) == 1 else ReceiverState(ReceiverPhase.COLLISION, -1, 0)
            else:
                # the received frame just completed; commit to answering it
                nxt = self._answer(winner)
        elif phase == ReceiverPhase.COLLISION:
            nxt = rc
        elif phase == ReceiverPhase.SWITCH_RT:
            if ticks > 1:
                nxt = ReceiverState(phase, winner, ticks - 1)
            else:
                nxt = ReceiverState(ReceiverPhase.SEND_CTS, winner, cfg.d_frame)
        elif phase == ReceiverPhase.SEND_CTS:
            if ticks > 1:
                nxt = ReceiverState(phase, winner, ticks - 1)
            else:
                nxt = ReceiverState(ReceiverPhase.W_END, winner, 0)
        elif phase == ReceiverPhase.W_END:
            nxt = rc
        else:
            raise AssertionError(f"receiver phase {phase} has no tick rule")
        self._receiver_step[key] = nxt
        return nxt

    def _answer(self, winner: int) -> ReceiverState:
        if self.cfg.d_switch >= 1:
            return ReceiverState(ReceiverPhase.SWITCH_RT, winner, self.cfg.d_switch)
        return ReceiverState(ReceiverPhase.SEND_CTS, winner, self.cfg.d_frame)

    # -- round boundary ----------------------------------------------------

    def _reset_sender(self, sd: SenderState) -> SenderState:
        phase = sd.phase
        if phase in (SenderPhase.SUCCESS, SenderPhase.REJECT):
            msgs = sd.msgs - 1
            if msgs == 0:
                return _DONE_SENDER
            return SenderState(SenderPhase.CHOOSE, 0, -1, msgs, 0)
        if phase == SenderPhase.SLEEP:
            if sd.e == self.cfg.e_max:
                return SenderState(SenderPhase.REJECT, sd.e, -1, sd.msgs, 0)
            return SenderState(SenderPhase.CHOOSE, sd.e + 1, -1, sd.msgs, 0)
        if phase in (SenderPhase.CHOOSE, SenderPhase.DONE):
            return sd
        raise AssertionError(f"sender phase {phase} cannot cross a round boundary")

    # -- full step ----------------------------------------------------------

    def step_kind(self, state: GlobalState) -> StepKind:
        """Classify the next transition without materializing it."""
        senders = state.senders
        if all(sd.phase == SenderPhase.DONE for sd in senders):
            return StepKind.TERMINAL

        # a frame arriving while the receiver is committed to its own
        # transmission has no defined transition
        if state.receiver.phase in _RECEIVER_COMMITTED and not self.cfg.robust_mode:
            if any(sd.phase == SenderPhase.SEND_RTS for sd in senders):
                return StepKind.DEADLOCK

        # the round closes once every still-active sender has an outcome
        # (success, reject, or sleep); CHOOSE appears next to REJECT during
        # the extra reset step that converts a rejected packet
        settled = (SenderPhase.SUCCESS, SenderPhase.REJECT, SenderPhase.SLEEP)
        active = [sd.phase for sd in senders if sd.phase != SenderPhase.DONE]
        if active and all(
            p in settled or p == SenderPhase.CHOOSE for p in active
        ) and any(p in settled for p in active):
            return StepKind.BOUNDARY

        if any(sd.phase == SenderPhase.CHOOSE for sd in senders):
            return StepKind.DRAW
        return StepKind.TICK

    def successor_distribution(self, state: GlobalState) -> TransitionDistribution:
        kind = self.step_kind(state)
        if kind == StepKind.TERMINAL:
            return TransitionDistribution(((1.0, state),))
        if kind == StepKind.DEADLOCK:
            return TransitionDistribution(())
        if kind == StepKind.BOUNDARY:
            nxt = GlobalState(
                tuple(self._reset_sender(sd) for sd in state.senders), _IDLE_RECEIVER
            )
            return TransitionDistribution(((1.0, nxt),))
        if kind == StepKind.DRAW:
            return self._draw_step(state)
        return self._tick_step(state)

    def draw_outcome(self, sd: SenderState, value: int) -> SenderState:
        """Sender state right after drawing `value` backoff units."""
        if value == 0:
            ph, tk = self._pipeline_start()
            return SenderState(ph, sd.e, 0, sd.msgs, tk)
        return SenderState(SenderPhase.COUNTDOWN, sd.e, value, sd.msgs, 0)

    def drawn_state(self, state: GlobalState,
                    outcomes: dict[int, SenderState]) -> GlobalState:
        """Global state after the joint draw resolves to `outcomes`."""
        senders = tuple(
            outcomes.get(i, sd) for i, sd in enumerate(state.senders)
        )
        return GlobalState(senders, ReceiverState(ReceiverPhase.W_RTS, -1, 0))

    def _draw_step(self, state: GlobalState) -> TransitionDistribution:
        # all pending draws resolve jointly in one zero-duration step
        senders = state.senders
        choosing = [i for i, sd in enumerate(senders) if sd.phase == SenderPhase.CHOOSE]
        per_sender = [
            tuple((p, self.draw_outcome(senders[i], v)) for v, p in self._draws[senders[i].e])
            for i in choosing
        ]
        branches = []
        base = list(senders)
        receiver = ReceiverState(ReceiverPhase.W_RTS, -1, 0)
        for combo in itertools.product(*per_sender):
            prob = 1.0
            for i, (p, nxt) in zip(choosing, combo):
                prob *= p
                base[i] = nxt
            branches.append((prob, GlobalState(tuple(base), receiver)))
        return TransitionDistribution(tuple(branches))

    def _tick_step(self, state: GlobalState) -> TransitionDistribution:
        senders = state.senders
        receiver = state.receiver
        rphase = receiver.phase

        if rphase == ReceiverPhase.SEND_CTS:
            base_ctx, cts_to = 1, receiver.winner
        elif self.cfg.robust_mode and rphase == ReceiverPhase.COLLISION:
            base_ctx, cts_to = 3, -1
        else:
            base_ctx, cts_to = 0, -1

        next_senders = tuple(
            self._sender_next(sd, 2 if i == cts_to else base_ctx)
            for i, sd in enumerate(senders)
        )

        tx_next = tuple(i for i, sd in enumerate(next_senders) if sd.phase == SenderPhase.SEND_RTS)
        frame_end = tuple(
            i for i, sd in enumerate(senders)
            if sd.phase == SenderPhase.SEND_RTS and next_senders[i].phase != SenderPhase.SEND_RTS
        )
        if self.cfg.robust_mode and rphase in _RECEIVER_COMMITTED and any(
                sd.phase == SenderPhase.SEND_RTS for sd in senders):
            next_receiver = ReceiverState(ReceiverPhase.COLLISION, -1, 0)
        else:
            next_receiver = self._receiver_next(receiver, tx_next, frame_end)

        return TransitionDistribution(((1.0, GlobalState(next_senders, next_receiver)),))


def successor_distribution(state: GlobalState, cfg: ScenarioConfig) -> TransitionDistribution:
    """Module-level convenience wrapper over :class:`Automaton`."""
    return _automaton_for(cfg).successor_distribution(state)


_AUTOMATON_CACHE: dict[ScenarioConfig, Automaton] = {}


def _automaton_for(cfg: ScenarioConfig) -> Automaton:
    auto = _AUTOMATON_CACHE.get(cfg)
    if auto is None:
        if len(_AUTOMATON_CACHE) > 8:
            _AUTOMATON_CACHE.clear()
        auto = Automaton(cfg)
        _AUTOMATON_CACHE[cfg] = auto
    return auto


# flat integer encoding of a state: (phase, e, rbc, msgs, ticks) per sender,
# then (phase, winner, ticks) for the receiver
N_SENDER_FIELDS = 5
N_RECEIVER_FIELDS = 3


def pack_state(state: GlobalState) -> tuple[int, ...]:
    flat: list[int] = []
    for sd in state.senders:
        flat.extend(sd)
    flat.extend(state.receiver)
    return tuple(flat)


def unpack_state(flat, n_senders: int) -> GlobalState:
    senders = tuple(
        SenderState(*flat[i * N_SENDER_FIELDS:(i + 1) * N_SENDER_FIELDS])
        for i in range(n_senders)
    )
    base = n_senders * N_SENDER_FIELDS
    return GlobalState(senders, ReceiverState(*flat[base:base + N_RECEIVER_FIELDS]))
