"""8 GT/s serial link built on the emulator: PRBS transmitter with FFE,
channel + CTLE dynamics, slicer, DFE, bang-bang phase detector, integral
CDR and a nonlinear DCO."""

from __future__ import annotations

import csv
import dataclasses
import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ade import Ade, build_taps
from .budget import ErrorBudget, allocate
from .fixed import DEFAULT_TIME_EXP, seconds_to_ticks, ticks_to_seconds
from .oracle import ExactEngine, exact_superposition, relative_error
from .pwl import fit_pwl
from .step import StepResponse, cascade_step, ctle_setting, synth_channel_step
from .timing import EmulatedClock, Prbs, TimeManager

UI = 125e-12
DCO_CODE_LO, DCO_CODE_HI = 1000, 8192
DCO_FREQ_LO, DCO_FREQ_HI = 7.6e9, 8.0e9
DCO_BETA = (DCO_FREQ_HI - DCO_FREQ_LO) / (DCO_CODE_HI - DCO_CODE_LO)
DCO_ALPHA = DCO_FREQ_LO - DCO_CODE_LO * DCO_BETA
N_TX_SETTINGS = 10


class ConfigError(ValueError):
    pass


@dataclass
class LinkConfig:
    ui_period: float = UI
    tap_count: int = 85
    ctle_setting: int = 8
    tx_setting: int = 0
    tx_jitter: float = 2e-12
    dco_alpha: float = DCO_ALPHA
    dco_beta: float = DCO_BETA
    dco_code_init: int = 1000
    dco_code_min: int = 0
    dco_code_max: int = 16383
    cdr_gain: int = 8
    cdr_phase_step: float = 4e-12
    dfe_taps: list[float] = field(default_factory=list)
    prbs_order: int = 15
    prbs_seed: int | None = None
    jitter_seed: int = 1
    ui_count: int = 1024
    rx_first_edge: float | None = None
    error_budget: float | None = 1e-3
    fit_tol_rel: float = 1e-3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.ui_period > 0:
            raise ConfigError("ui_period must be positive")
        if self.tap_count < 1:
            raise ConfigError("tap_count must be at least 1")
        if not 0 <= self.tx_setting < N_TX_SETTINGS:
            raise ConfigError(f"tx_setting must lie in 0..{N_TX_SETTINGS - 1}")
        if self.ctle_setting < 0:
            raise ConfigError("ctle_setting must be non-negative")
        if self.tx_jitter < 0 or 2 * self.tx_jitter >= self.ui_period / 2:
            raise ConfigError("tx_jitter must satisfy 0 <= J < ui_period/4")
        if not self.dco_code_min <= self.dco_code_init <= self.dco_code_max:
            raise ConfigError("dco_code_init outside the code range")
        if self.dco_alpha + self.dco_beta * self.dco_code_min <= 0 or (
            self.dco_alpha + self.dco_beta * self.dco_code_max <= 0
        ):
            raise ConfigError("DCO frequency must stay positive over the code range")
        if self.cdr_gain < 0 or not 0 <= self.cdr_phase_step < self.ui_period / 4:
            raise ConfigError("CDR gain must be non-negative and the phase step below ui_period/4")
        if self.ui_count < 1:
            raise ConfigError("ui_count must be at least 1")
        if self.error_budget is not None and self.error_budget <= 0:
            raise ConfigError("error_budget must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "LinkConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown LinkConfig keys: {sorted(unknown)}")
        return cls(**doc)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "LinkConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **kw) -> "LinkConfig":
        return dataclasses.replace(self, **kw)


# transmitter


def tx_coeffs(tx_setting: int) -> tuple[float, float]:
    """Main and post-cursor weights for ``-tx_setting`` dB of de-emphasis."""
    if not 0 <= tx_setting < N_TX_SETTINGS:
        raise ConfigError(f"tx_setting must lie in 0..{N_TX_SETTINGS - 1}")
    r = 10.0 ** (-tx_setting / 20.0)
    return (1.0 + r) / 2.0, (1.0 - r) / 2.0


def tx_level(bit: int, prev_bit: int, tx_setting: int) -> float:
    c0, c1 = tx_coeffs(tx_setting)
    return c0 * (2 * bit - 1) - c1 * (2 * prev_bit - 1)


# DCO


class Dco:
    """Oscillator with period ``1 / (alpha + beta * code)``, evaluated through
    a PWL table over the code range (period stored in picoseconds)."""

    def __init__(
        self,
        alpha: float = DCO_ALPHA,
        beta: float = DCO_BETA,
        code_min: int = 0,
        code_max: int = 16383,
        tol_rel: float = 2e-7,
    ):
        if code_max <= code_min:
            raise ValueError("empty code range")
        self.alpha, self.beta = alpha, beta
        self.code_min, self.code_max = code_min, code_max
        codes = np.arange(code_min, code_max + 1, dtype=float)
        ps = self.exact_period(codes) * 1e12
        self.table, self.report = fit_pwl(
            (codes, ps), (code_min, code_max), tol_rel * float(ps.min()), label="dco"
        )

    def exact_period(self, code):
        return 1.0 / (self.alpha + self.beta * np.asarray(code, dtype=float))

    def clamp(self, code: int) -> int:
        return min(max(int(code), self.code_min), self.code_max)

    def period(self, code: int) -> float:
        """Period in seconds; codes outside the range clamp to its edges."""
        return float(self.table(float(self.clamp(code)))) * 1e-12

    def frequency(self, code: int) -> float:
        return 1.0 / self.period(code)

    def period_ticks(self, code: int, scale_exp: int = DEFAULT_TIME_EXP) -> int:
        return seconds_to_ticks(self.period(code), scale_exp)


_DCO_CACHE: dict[tuple, Dco] = {}


def dco_for(cfg: LinkConfig) -> Dco:
    key = (cfg.dco_alpha, cfg.dco_beta, cfg.dco_code_min, cfg.dco_code_max)
    if key not in _DCO_CACHE:
        _DCO_CACHE[key] = Dco(*key)
    return _DCO_CACHE[key]


def dco_period(code: int, dco: Dco | None = None) -> float:
    return (dco or dco_for(LinkConfig())).period(code)


# receiver


class Pd(enum.IntEnum):
    LATE = -1
    HOLD = 0
    EARLY = 1


def bbpd(prev_data: int, edge_sample, data: int) -> Pd:
    """Alexander phase detector on two data decisions and the edge sample
    between them. An edge sample that already shows the new bit means the
    clock is lagging, reported as ``EARLY`` (raise the frequency)."""
    if prev_data == data:
        return Pd.HOLD
    edge_bit = 1 if edge_sample > 0 else 0
    return Pd.EARLY if edge_bit == data else Pd.LATE


def dfe_apply(raw: float, decisions: Sequence[int], taps: Sequence[float]) -> float:
    """``raw - sum_k taps[k] * sign(decision k+1 back)``; decisions most recent first."""
    if len(decisions) < len(taps):
        raise ValueError("decision history shorter than the DFE")
    return raw - sum(t * (2 * d - 1) for t, d in zip(taps, decisions))


@dataclass
class RxState:
    dco_code: int
    code_min: int = 0
    code_max: int = 16383
    decisions: deque = field(default_factory=lambda: deque(maxlen=64))
    last_data: int | None = None
    last_edge: float | None = None


def cdr_update(state: RxState, pd: Pd, gain: int) -> int:
    """Integrate one detector decision into the saturating DCO code."""
    state.dco_code = min(max(state.dco_code + gain * int(pd), state.code_min), state.code_max)
    return state.dco_code


# channel family and engine construction

_ENGINE_CACHE: dict[tuple, Ade] = {}


def default_channel() -> StepResponse:
    return synth_channel_step()


def link_step(ctle: int, channel: StepResponse | None = None) -> StepResponse:
    ch = default_channel() if channel is None else channel
    return cascade_step(ch, ctle_setting(ctle), label=f"ctle{ctle}")


_STEP_CACHE: dict[int, StepResponse] = {}


def _default_step(ctle: int) -> StepResponse:
    if ctle not in _STEP_CACHE:
        _STEP_CACHE[ctle] = link_step(ctle)
    return _STEP_CACHE[ctle]


def build_link_ade(cfg: LinkConfig, F: StepResponse | None = None) -> Ade:
    """Engine for the configured CTLE setting; fixed point sized from
    ``cfg.error_budget`` unless that is ``None``. Cached per setting when
    the default channel is used."""
    key = None
    if F is None:
        key = (cfg.ctle_setting, cfg.tap_count, cfg.ui_period, cfg.tx_jitter,
               cfg.error_budget, cfg.fit_tol_rel)
        if key in _ENGINE_CACHE:
            return _ENGINE_CACHE[key]
        F = _default_step(cfg.ctle_setting)
    T, J = cfg.ui_period, cfg.tx_jitter
    if cfg.error_budget is None:
        tables = build_taps(F, cfg.tap_count, T, J, cfg.fit_tol_rel * F.swing)
        ade = Ade([tables], 1.0)
    else:
        rep = allocate(
            F, ErrorBudget(cfg.error_budget), T - J, 1.0, dt_max=T + J,
            n=cfg.tap_count, fit_tol_rel=cfg.fit_tol_rel,
        )
        ade = rep.build_ade()
    if key is not None:
        _ENGINE_CACHE[key] = ade
    return ade


def dfe_taps_from_pulse(F: StepResponse, ui: float, n_taps: int, cursor: float | None = None):
    """Post-cursor ISI of an isolated one-UI pulse at ``cursor + k*ui``.

    The main cursor defaults to the pulse peak. Returned values are for a
    +-1 symbol (the pulse of a full swing transition is twice that of a
    half step).
    """
    grid = np.arange(0.0, F.t_end, F.dt)
    p = F(grid) - F(grid - ui)
    c = grid[int(np.argmax(p))] if cursor is None else cursor
    return [float(F(c + k * ui) - F(c + (k - 1) * ui)) for k in range(1, n_taps + 1)]


class _AdeEngine:
    def __init__(self, ade: Ade, dt_min: float, dt_max: float):
        self.ade = ade
        self.h = ade.new_history(dt_min, dt_max)

    def push(self, ticks: int, x: float) -> None:
        self.h.push(ticks, x)

    def evaluate(self, ticks: int) -> float:
        return self.ade.evaluate(ticks, self.h)


# traces

TRACE_COLUMNS = ("time_ns", "channel_in", "ade_out", "sample", "decision", "dco_code",
                 "tx_edge", "rx_phase")


@dataclass(eq=False)
class Trace:
    """One record per emulation cycle.

    ``sample``/``decision`` hold the latest DFE output and slicer decision;
    ``rx_phase`` is 0 on data-sample cycles, 1 on edge-sample cycles and -1
    otherwise.
    """

    time_ticks: np.ndarray
    channel_in: np.ndarray
    ade_out: np.ndarray
    sample: np.ndarray
    decision: np.ndarray
    dco_code: np.ndarray
    tx_edge: np.ndarray
    rx_phase: np.ndarray
    events: list[tuple[int, float]]
    tx_bits: list[int]
    scale_exp: int = DEFAULT_TIME_EXP
    clamp_count: int = 0

    def __len__(self) -> int:
        return self.time_ticks.size

    @property
    def times(self) -> np.ndarray:
        return ticks_to_seconds(self.time_ticks, self.scale_exp)

    @property
    def data_mask(self) -> np.ndarray:
        return self.rx_phase == 0

    def event_seconds(self) -> list[tuple[float, float]]:
        return [(ticks_to_seconds(t, self.scale_exp), x) for t, x in self.events]

    def recovered_bits(self) -> np.ndarray:
        return self.decision[self.data_mask]

    def to_csv(self, path, comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                for line in comment.splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            ns = self.times * 1e9
            for i in range(len(self)):
                w.writerow([
                    repr(float(ns[i])), repr(float(self.channel_in[i])),
                    repr(float(self.ade_out[i])), repr(float(self.sample[i])),
                    int(self.decision[i]), int(self.dco_code[i]),
                    int(self.tx_edge[i]), int(self.rx_phase[i]),
                ])


def run_link(
    cfg: LinkConfig,
    *,
    engine: str = "ade",
    F: StepResponse | None = None,
    ade: Ade | None = None,
    pin_code: int | None = None,
) -> Trace:
    """Run the link for ``cfg.ui_count`` unit intervals.

    ``engine`` is ``"ade"`` (emulator) or ``"oracle"`` (exact superposition
    in the same closed loop). ``pin_code`` holds the DCO at one code and
    disables the CDR.
    """
    cfg.validate()
    se = DEFAULT_TIME_EXP
    T, J = cfg.ui_period, cfg.tx_jitter
    if engine == "ade":
        ade = ade if ade is not None else build_link_ade(cfg, F)
        eng = _AdeEngine(ade, T - J, T + J)
    elif engine == "oracle":
        eng = ExactEngine(F if F is not None else _default_step(cfg.ctle_setting), se)
    else:
        raise ValueError(f"unknown engine {engine!r}")

    dco = dco_for(cfg)
    code0 = cfg.dco_code_init if pin_code is None else pin_code
    state = RxState(dco.clamp(code0), cfg.dco_code_min, cfg.dco_code_max)
    tx = EmulatedClock.from_seconds(T, jitter=J, seed=cfg.jitter_seed, name="tx")
    rx_period = dco.period_ticks(state.dco_code, se)
    rx = EmulatedClock(
        rx_period,
        phases=2,
        first_edge=None if cfg.rx_first_edge is None else seconds_to_ticks(cfg.rx_first_edge, se),
        name="rx",
    )
    tm = TimeManager([tx, rx], se)
    prbs = Prbs(cfg.prbs_order, cfg.prbs_seed)
    c0, c1 = tx_coeffs(cfg.tx_setting)
    taps = list(cfg.dfe_taps)
    for _ in range(len(taps)):
        state.decisions.appendleft(0)

    clamps0 = getattr(getattr(eng, "ade", None), "clamp_count", 0)
    step_ticks = seconds_to_ticks(cfg.cdr_phase_step, se)
    t_stop = tx.next_edge + seconds_to_ticks(cfg.ui_count * T, se)
    rows: list[tuple] = []
    events: list[tuple[int, float]] = []
    bits: list[int] = []
    level, prev_bit = 0.0, 0
    sample, decision = 0.0, 0
    while True:
        cyc = tm.advance()
        if cyc.time >= t_stop:
            break
        tx_edge, rx_phase = 0, -1
        for ci, ph in cyc.edges:
            if ci == 0:
                bit = prbs.next_bit()
                level = c0 * (2 * bit - 1) - c1 * (2 * prev_bit - 1)
                prev_bit = bit
                bits.append(bit)
                events.append((cyc.time, level))
                eng.push(cyc.time, level)
                tx_edge = 1
            else:
                rx_phase = ph
        y = eng.evaluate(cyc.time)
        if rx_phase == 1:
            state.last_edge = y
        elif rx_phase == 0:
            sample = dfe_apply(y, state.decisions, taps) if taps else y
            decision = 1 if sample > 0 else 0
            if pin_code is None and state.last_data is not None and state.last_edge is not None:
                pd = bbpd(state.last_data, state.last_edge, decision)
                code = cdr_update(state, pd, cfg.cdr_gain)
                rx.set_period(dco.period_ticks(code, se))
                if step_ticks and pd:
                    rx.nudge(-int(pd) * step_ticks)
            state.last_data = decision
            state.decisions.appendleft(decision)
        rows.append((cyc.time, level, y, sample, decision, state.dco_code, tx_edge, rx_phase))

    if not rows:
        raise ValueError("run produced no cycles")
    cols = list(zip(*rows))
    return Trace(
        time_ticks=np.asarray(cols[0], dtype=np.int64),
        channel_in=np.asarray(cols[1]),
        ade_out=np.asarray(cols[2]),
        sample=np.asarray(cols[3]),
        decision=np.asarray(cols[4], dtype=np.int64),
        dco_code=np.asarray(cols[5], dtype=np.int64),
        tx_edge=np.asarray(cols[6], dtype=np.int8),
        rx_phase=np.asarray(cols[7], dtype=np.int8),
        events=events,
        tx_bits=bits,
        scale_exp=se,
        clamp_count=getattr(getattr(eng, "ade", None), "clamp_count", 0) - clamps0,
    )


# measurements


def measure_relative_error(a: Trace | np.ndarray, b: Trace | np.ndarray) -> float:
    """Worst-case error of ``a`` against reference ``b`` over the reference peak."""
    if isinstance(a, Trace) and isinstance(b, Trace):
        if len(a) != len(b) or not np.array_equal(a.time_ticks, b.time_ticks):
            raise ValueError("traces must share sample times")
        return relative_error(a.ade_out, b.ade_out)
    return relative_error(a, b)


def oracle_output(trace: Trace, F: StepResponse) -> np.ndarray:
    """Exact superposition of the trace's own stimulus at its cycle times."""
    return exact_superposition(F, trace.event_seconds(), trace.times)


def compare_with_oracle(trace: Trace, F: StepResponse) -> float:
    return relative_error(trace.ade_out, oracle_output(trace, F))


@dataclass
class Histogram:
    counts: np.ndarray
    edges: np.ndarray
    mean_pos: float
    mean_neg: float
    std_pos: float
    std_neg: float

    @property
    def std(self) -> float:
        """Mean of the two per-level deviations."""
        return 0.5 * (self.std_pos + self.std_neg)


def amplitude_histogram(values, bins: int = 64) -> Histogram:
    """Histogram with the samples split into two levels at zero."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no samples")
    counts, edges = np.histogram(v, bins=bins)
    pos, neg = v[v > 0], v[v <= 0]

    def stats(x):
        return (float(np.mean(x)), float(np.std(x))) if x.size else (math.nan, math.nan)

    mp, sp = stats(pos)
    mn, sn = stats(neg)
    return Histogram(counts, edges, mp, mn, sp, sn)


def trace_histogram(trace: Trace, signal: str = "sample", bins: int = 64, skip: float = 0.0):
    """Histogram of ``signal`` on data-sample cycles after ``skip`` seconds."""
    m = trace.data_mask & (trace.times >= skip)
    return amplitude_histogram(getattr(trace, signal)[m], bins)


def settling_time(trace: Trace, frac: float = 0.1, tail: float = 0.25) -> tuple[float, float]:
    """Time the DCO code enters and stays within ``frac`` of its total move.

    The settled value is the mean code over the final ``tail`` of the run.
    Returns ``(time_seconds, settled_code)``.
    """
    code = trace.dco_code.astype(float)
    k0 = int(len(code) * (1 - tail))
    final = float(np.mean(code[k0:]))
    band = frac * abs(final - code[0])
    outside = np.flatnonzero(np.abs(code - final) > band)
    idx = 0 if outside.size == 0 else outside[-1] + 1
    if idx >= len(code):
        raise ValueError("code never settles")
    return float(trace.times[idx] - trace.times[0]), final


def edges_per_ui(trace: Trace, t0: float, t1: float, ui: float = UI) -> float:
    """Granted clock edges per unit interval over ``[t0, t1)``."""
    m = (trace.times >= t0) & (trace.times < t1)
    n_edges = int(np.sum(trace.tx_edge[m])) + int(np.sum(trace.rx_phase[m] >= 0))
    return n_edges / ((t1 - t0) / ui)
