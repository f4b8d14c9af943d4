"""Contention windows, backoff counter distributions, and carrier-sense timing.

A sender that has failed to deliver its current packet ``e`` times draws its
random backoff counter (rbc) uniformly from the contention window assigned to
``e`` by a :class:`BackoffTable`.  The counter is decremented once per
contention unit of idle listening, so the backoff delay is ``rbc`` contention
units.  The contention unit duration itself is fixed by radio timing via
:func:`compute_tcu`.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class ContentionWindow:
    """Inclusive integer range [lo, hi] a backoff counter is drawn from."""

    lo: int
    hi: int

    def __post_init__(self):
        if not (0 <= self.lo <= self.hi):
            raise ConfigError(f"contention window [{self.lo}, {self.hi}] needs 0 <= lo <= hi")

    @property
    def width(self) -> int:
        return self.hi - self.lo + 1

    def values(self) -> range:
        return range(self.lo, self.hi + 1)


@dataclass(frozen=True)
class BackoffTable:
    """Maps the per-packet failure count e to a contention window.

    ``rows`` is a tuple of ``(e_lo, e_hi, window)`` entries.  The rows must
    tile ``[0, e_max]`` contiguously, every window must stay inside
    ``[0, b_max]``, and window upper bounds must not grow as e grows: repeated
    failures tighten, never widen, the spread of backoff delays.
    """

    rows: tuple[tuple[int, int, ContentionWindow], ...]
    e_max: int = 12
    b_max: int = 7

    def __post_init__(self):
        if self.e_max < 0 or self.b_max < 0:
            raise ConfigError("e_max and b_max must be non-negative")
        if not self.rows:
            raise ConfigError("backoff table needs at least one row")
        expect = 0
        prev_hi = None
        for e_lo, e_hi, win in self.rows:
            if e_lo != expect:
                raise ConfigError(f"backoff table rows must tile 0..{self.e_max}; gap or overlap at e={e_lo}")
            if e_hi < e_lo:
                raise ConfigError(f"backoff table row [{e_lo}..{e_hi}] is empty")
            if win.hi > self.b_max:
                raise ConfigError(f"window [{win.lo}, {win.hi}] exceeds b_max={self.b_max}")
            if prev_hi is not None and win.hi > prev_hi:
                raise ConfigError("window upper bounds must be non-increasing in e")
            prev_hi = win.hi
            expect = e_hi + 1
        if expect != self.e_max + 1:
            raise ConfigError(f"backoff table rows stop at e={expect - 1}, expected e_max={self.e_max}")

    def window_for(self, e: int) -> ContentionWindow:
        """Contention window for failure count e; e must lie in [0, e_max]."""
        if not 0 <= e <= self.e_max:
            raise ConfigError(f"failure count e={e} outside [0, {self.e_max}]")
        for e_lo, e_hi, win in self.rows:
            if e_lo <= e <= e_hi:
                return win
        raise AssertionError("unreachable: rows tile the domain")


#: Default window table: windows tighten from [1,7] down to [0,3] as failures mount.
DEFAULT_TABLE = BackoffTable(
    rows=(
        (0, 1, ContentionWindow(1, 7)),
        (2, 3, ContentionWindow(0, 7)),
        (4, 6, ContentionWindow(0, 6)),
        (7, 8, ContentionWindow(0, 5)),
        (9, 10, ContentionWindow(0, 4)),
        (11, 12, ContentionWindow(0, 3)),
    ),
    e_max=12,
    b_max=7,
)


def window_for(table: BackoffTable, e: int) -> ContentionWindow:
    return table.window_for(e)


def rbc_pmf(table: BackoffTable, e: int) -> dict[int, float]:
    """Uniform pmf of the backoff counter drawn at failure count e."""
    win = table.window_for(e)
    p = 1.0 / win.width
    return {v: p for v in win.values()}


def sample_rbc(table: BackoffTable, e: int, rng) -> int:
    """Draw one backoff counter for failure count e from a numpy Generator."""
    win = table.window_for(e)
    return int(rng.integers(win.lo, win.hi + 1))


@dataclass(frozen=True)
class TimingParams:
    """Radio timings in integer microseconds.

    t_mxsrt_us: one RX/TX (or TX/RX) switch; t_frmctrl_us: one control frame
    on the air; t_rssi_us: one RSSI channel probe.
    """

    t_mxsrt_us: int
    t_frmctrl_us: int
    t_rssi_us: int

    def __post_init__(self):
        for name in ("t_mxsrt_us", "t_frmctrl_us", "t_rssi_us"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")


def compute_tcu(t_mxsrt_us: int, t_frmctrl_us: int, t_rssi_us: int) -> int:
    """Contention unit in microseconds: two switches + one control frame + one probe.

    The unit is sized so that a winner's RTS and the receiver's CTS onset both
    land inside a rival's current unit of idle listening.
    """
    params = TimingParams(t_mxsrt_us, t_frmctrl_us, t_rssi_us)
    return 2 * params.t_mxsrt_us + params.t_frmctrl_us + params.t_rssi_us
