"""Event-driven emulated time: jittered clocks and the minimum-edge scheduler."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .fixed import DEFAULT_TIME_EXP, TimePoint, seconds_to_ticks

# maximal-length Fibonacci taps (1-indexed bit positions)
MAXIMAL_TAPS = {
    3: (3, 2),
    4: (4, 3),
    5: (5, 3),
    6: (6, 5),
    7: (7, 6),
    9: (9, 5),
    10: (10, 7),
    11: (11, 9),
    15: (15, 14),
    17: (17, 14),
    20: (20, 17),
    23: (23, 18),
    31: (31, 28),
}


class Lfsr:
    """Fibonacci LFSR; new bits enter at bit 0 and the state shifts left.

    The new bit is the XOR of the state bits at ``taps`` (1-indexed, the
    highest tap equal to ``width``).
    """

    def __init__(self, width: int = 31, taps: Iterable[int] | None = None, seed: int = 1):
        taps = tuple(sorted(MAXIMAL_TAPS[width] if taps is None else taps, reverse=True))
        if taps[0] != width or taps[-1] < 1:
            raise ValueError("taps must lie in 1..width and include width")
        self.width = width
        self.taps = taps
        self.mask = (1 << width) - 1
        self.state = seed & self.mask
        if self.state == 0:
            raise ValueError("LFSR seed must be nonzero")

    def next(self) -> int:
        """Shift once and return the new state."""
        s = self.state
        bit = 0
        for t in self.taps:
            bit ^= s >> (t - 1)
        self.state = ((s << 1) | (bit & 1)) & self.mask
        return self.state

    def prev(self) -> int:
        """Undo one shift (the update is a bijection on nonzero states)."""
        s = self.state
        new = s & 1
        low = s >> 1  # old bits 0..width-2
        acc = new
        for t in self.taps[1:]:
            acc ^= low >> (t - 1)
        self.state = low | ((acc & 1) << (self.width - 1))
        return self.state

    def next_bits(self, k: int) -> int:
        """Shift ``k`` times; return the ``k`` new bits, latest in bit 0."""
        if k <= self.taps[-1]:
            s = self.state
            kmask = (1 << k) - 1
            block = 0
            for t in self.taps:
                block ^= s >> (t - k)
            block &= kmask
            self.state = ((s << k) | block) & self.mask
            return block
        out = 0
        for _ in range(k):
            out = (out << 1) | (self.next() & 1)
        return out


class Prbs(Lfsr):
    """PRBS-k data source (x^k + x^tap + 1)."""

    def __init__(self, order: int = 15, seed: int | None = None):
        super().__init__(order, MAXIMAL_TAPS[order], (1 << order) - 1 if seed is None else seed)

    def next_bit(self) -> int:
        return self.next() & 1


def prbs_next(gen: Prbs) -> int:
    return gen.next_bit()


def lfsr_next(lfsr: Lfsr) -> int:
    return lfsr.next()


class EmulatedClock:
    """A clock with ``phases`` evenly spaced output phases per period.

    Jitter is drawn once per full period, uniformly on the tick grid in
    ``[-jitter, +jitter]``, and applied to the increment that completes the
    period. With ``jitter_per_phase`` every phase increment is jittered
    independently instead.
    """

    def __init__(
        self,
        period: int,
        *,
        phases: int = 1,
        jitter: int = 0,
        first_edge: int | None = None,
        seed: int = 1,
        lfsr_width: int = 31,
        jitter_per_phase: bool = False,
        name: str = "",
        scale_exp: int = DEFAULT_TIME_EXP,
    ):
        if period <= 0:
            raise ValueError("period must be positive")
        limit = period / phases if jitter_per_phase else period / 2
        if jitter < 0 or (jitter and 2 * jitter >= limit):
            raise ValueError("jitter must satisfy 0 <= J < period/2")
        self.period = int(period)
        self.phases = phases
        self.jitter = int(jitter)
        self.lfsr = Lfsr(lfsr_width, seed=seed)
        self.jitter_per_phase = jitter_per_phase
        self.name = name
        self.scale_exp = scale_exp
        self.phase = 0
        self.next_edge = int(period // phases if first_edge is None else first_edge)
        self.edges = 0
        self._nudge = 0
        n = 2 * self.jitter + 1
        self._jbits = max(1, (n - 1).bit_length())

    @classmethod
    def from_seconds(cls, period: float, *, jitter: float = 0.0, first_edge=None, **kw):
        scale_exp = kw.get("scale_exp", DEFAULT_TIME_EXP)
        return cls(
            seconds_to_ticks(period, scale_exp),
            jitter=seconds_to_ticks(jitter, scale_exp),
            first_edge=None if first_edge is None else seconds_to_ticks(first_edge, scale_exp),
            **kw,
        )

    @property
    def next_time(self) -> TimePoint:
        return TimePoint(self.next_edge, self.scale_exp)

    def sample_jitter(self) -> int:
        """Uniform integer in ``[-J, J]`` from LFSR bits (rejection sampled)."""
        if self.jitter == 0:
            return 0
        n = 2 * self.jitter + 1
        while True:
            r = self.lfsr.next_bits(self._jbits)
            if r < n:
                return r - self.jitter

    def set_period(self, period: int) -> None:
        """Change the period; the edge already scheduled is not moved."""
        if period <= 0:
            raise ValueError("period must be positive")
        self.period = int(period)

    def nudge(self, ticks: int) -> None:
        """Shift every edge after the one already scheduled by ``ticks``."""
        self._nudge += int(ticks)

    def _increment(self) -> int:
        base = self.period // self.phases
        if self.phase == self.phases - 1:
            base = self.period - base * (self.phases - 1) + self.sample_jitter()
        elif self.jitter_per_phase:
            base += self.sample_jitter()
        base += self._nudge
        self._nudge = 0
        if base <= 0:
            raise RuntimeError(f"clock {self.name!r} phase step collapsed to {base} ticks")
        return base

    def step(self, granted: int) -> int | None:
        """Grant emulated time ``granted``; return the phase that fires, if any."""
        if granted > self.next_edge:
            raise RuntimeError(
                f"clock {self.name!r} skipped its edge at {self.next_edge} (granted {granted})"
            )
        if granted < self.next_edge:
            return None
        fired = self.phase
        self.next_edge += self._increment()
        self.phase = (self.phase + 1) % self.phases
        self.edges += 1
        return fired


def sample_jitter(clk: EmulatedClock) -> int:
    return clk.sample_jitter()


def clock_step(clk: EmulatedClock, granted) -> int | None:
    return clk.step(granted.mantissa if isinstance(granted, TimePoint) else granted)


def set_period(clk: EmulatedClock, new_period: int) -> None:
    clk.set_period(new_period)


@dataclass
class Cycle:
    time: int
    edges: list[tuple[int, int]] = field(default_factory=list)  # (clock index, phase)


class TimeManager:
    """Advances emulated time to the earliest pending clock edge."""

    def __init__(self, clocks: Iterable[EmulatedClock] = (), scale_exp: int = DEFAULT_TIME_EXP):
        self.clocks: list[EmulatedClock] = list(clocks)
        self.scale_exp = scale_exp
        self.now_ticks = 0
        self.cycle_count = 0

    def add(self, clk: EmulatedClock) -> int:
        self.clocks.append(clk)
        return len(self.clocks) - 1

    @property
    def now(self) -> TimePoint:
        return TimePoint(self.now_ticks, self.scale_exp)

    def advance(self) -> Cycle:
        if not self.clocks:
            raise RuntimeError("no clocks registered")
        t = min(c.next_edge for c in self.clocks)
        cyc = Cycle(t)
        for i, c in enumerate(self.clocks):
            ph = c.step(t)
            if ph is not None:
                cyc.edges.append((i, ph))
        self.now_ticks = t
        self.cycle_count += 1
        return cyc


def tm_advance(tm: TimeManager) -> tuple[TimePoint, list[tuple[int, int]]]:
    cyc = tm.advance()
    return TimePoint(cyc.time, tm.scale_exp), cyc.edges
