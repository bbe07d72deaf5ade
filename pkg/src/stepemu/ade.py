"""Analog dynamics engine: input history, truncated pulse-response sum and
the truncation / input-quantization error bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fixed import DEFAULT_TIME_EXP, FixedValue, TimePoint
from .pwl import PwlTable, fit_pwl, trim_domain
from .step import StepFamily, StepResponse, local_extrema


class HistoryError(ValueError):
    """An input step violates the history's ordering or spacing contract."""


def _ticks(t, scale_exp: int) -> int:
    if isinstance(t, TimePoint):
        if t.scale_exp != scale_exp:
            raise ValueError("time quantum differs from the history's")
        return t.mantissa
    return int(t)


class InputHistory:
    """The ``n`` most recent input steps, most recent first.

    Times are integer ticks of ``2**-scale_exp`` ns. Spacing between
    successive steps must lie in ``[dt_min, dt_max]`` (seconds) when those
    are given; a longer gap is accepted only with ``allow_long_gaps``.
    """

    def __init__(
        self,
        capacity: int,
        dt_min: float | None = None,
        dt_max: float | None = None,
        R: float | None = None,
        *,
        allow_long_gaps: bool = False,
        scale_exp: int = DEFAULT_TIME_EXP,
    ):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self.scale_exp = scale_exp
        self.R = R
        self.allow_long_gaps = allow_long_gaps
        q = 2.0**-scale_exp * 1e-9
        # tolerate the rounding of the bounds onto the tick grid
        self._min_ticks = None if dt_min is None else math.floor(dt_min / q + 1e-6)
        self._max_ticks = None if dt_max is None else math.ceil(dt_max / q - 1e-6)
        self.ticks = np.zeros(capacity, dtype=np.int64)
        self.values = np.zeros(capacity)
        self.count = 0

    def __len__(self) -> int:
        return self.count

    def push(self, t, x) -> None:
        tk = _ticks(t, self.scale_exp)
        xv = float(x.value if isinstance(x, FixedValue) else x)
        if self.R is not None and abs(xv) > self.R:
            raise HistoryError(f"|x| = {abs(xv)} exceeds the input bound {self.R}")
        if self.count:
            gap = tk - int(self.ticks[0])
            if gap <= 0:
                raise HistoryError("input times must strictly increase")
            if self._min_ticks is not None and gap < self._min_ticks:
                raise HistoryError(f"spacing {gap} ticks below the minimum {self._min_ticks}")
            if self._max_ticks is not None and gap > self._max_ticks and not self.allow_long_gaps:
                raise HistoryError(f"spacing {gap} ticks above the maximum {self._max_ticks}")
        self.ticks[1:] = self.ticks[:-1]
        self.values[1:] = self.values[:-1]
        self.ticks[0] = tk
        self.values[0] = xv
        self.count = min(self.count + 1, self.capacity)

    def entries(self) -> list[tuple[TimePoint, float]]:
        return [
            (TimePoint(int(self.ticks[j]), self.scale_exp), float(self.values[j]))
            for j in range(self.count)
        ]

    def copy(self) -> "InputHistory":
        h = InputHistory.__new__(InputHistory)
        h.__dict__.update(self.__dict__)
        h.ticks = self.ticks.copy()
        h.values = self.values.copy()
        return h


def push_input(h: InputHistory, t, x) -> None:
    h.push(t, x)


@dataclass(frozen=True)
class AdeTap:
    index: int
    table: PwlTable


class _Packed:
    """Tap tables of one setting laid out as padded arrays."""

    def __init__(self, tables: Sequence[PwlTable], quantized: bool):
        n = len(tables)
        m = max(t.n_segments for t in tables)
        self.t_start = np.array([t.t_start for t in tables])
        self.width = np.array([t.seg_width for t in tables])
        self.nseg = np.array([t.n_segments for t in tables])
        self.a = np.zeros((n, m))
        self.b = np.zeros((n, m))
        for j, t in enumerate(tables):
            a, b = t.coefficients(quantized)
            self.a[j, : a.size] = a
            self.b[j, : b.size] = b
        self.rows = np.arange(n)


class Ade:
    """Analog dynamics engine over one or more settings of tap tables.

    ``tap_tables[s][j-1]`` is the table of tap ``j`` for setting ``s``.
    With ``quantized=True`` the tables' fixed-point coefficients are used,
    and ``time_exps`` / ``value_exps`` (per tap, ``2**-w`` ns and ``2**-z``)
    floor the stored input times and values as hardware registers would.
    """

    def __init__(
        self,
        tap_tables: Sequence[Sequence[PwlTable]],
        R: float = 1.0,
        *,
        quantized: bool = False,
        time_exps: Sequence[int] | None = None,
        value_exps: Sequence[int] | None = None,
        scale_exp: int = DEFAULT_TIME_EXP,
    ):
        if not tap_tables or not tap_tables[0]:
            raise ValueError("need at least one setting with one tap")
        n = len(tap_tables[0])
        if any(len(ts) != n for ts in tap_tables):
            raise ValueError("all settings must have the same tap count")
        self.tap_tables = [list(ts) for ts in tap_tables]
        self.n = n
        self.R = R
        self.quantized = quantized
        self.scale_exp = scale_exp
        self._packs = [_Packed(ts, quantized) for ts in self.tap_tables]
        self.active_setting = 0
        self.clamp_count = 0
        self._q = 2.0**-scale_exp * 1e-9
        self.time_exps = None if time_exps is None else np.asarray(time_exps, dtype=np.int64)
        self.value_exps = None if value_exps is None else np.asarray(value_exps, dtype=float)
        if self.time_exps is not None:
            if self.time_exps.size != n:
                raise ValueError("one time exponent per tap")
            self._tshift = np.maximum(scale_exp - self.time_exps, 0)
        if self.value_exps is not None and self.value_exps.size != n:
            raise ValueError("one value exponent per tap")

    @property
    def quantum(self) -> float:
        """Seconds per time tick."""
        return self._q

    @property
    def n_settings(self) -> int:
        return len(self.tap_tables)

    @property
    def taps(self) -> list[AdeTap]:
        return [AdeTap(j + 1, t) for j, t in enumerate(self.tap_tables[self.active_setting])]

    def set_setting(self, code: int) -> None:
        if not 0 <= code < self.n_settings:
            raise ValueError(f"setting {code} outside 0..{self.n_settings - 1}")
        self.active_setting = code

    def new_history(self, dt_min=None, dt_max=None, **kw) -> InputHistory:
        return InputHistory(self.n, dt_min, dt_max, self.R, scale_exp=self.scale_exp, **kw)

    def tap_values(self, t, h: InputHistory) -> tuple[np.ndarray, np.ndarray]:
        """Per-tap step-response values ``F_j(t - t_j)`` and stored inputs."""
        k = min(len(h), self.n)
        if k == 0:
            return np.zeros(0), np.zeros(0)
        tk = _ticks(t, self.scale_exp)
        ticks = h.ticks[:k]
        if self.time_exps is not None:
            sh = self._tshift[:k]
            ticks = (ticks >> sh) << sh
        tau = (tk - ticks) * self._q
        x = h.values[:k]
        if self.value_exps is not None:
            z = self.value_exps[:k]
            x = np.ldexp(np.floor(np.ldexp(x, z.astype(int))), -z.astype(int))
        p = self._packs[self.active_setting]
        pos = (tau - p.t_start[:k]) / p.width[:k]
        raw = np.floor(pos).astype(np.int64)
        idx = np.clip(raw, 0, p.nseg[:k] - 1)
        self.clamp_count += int(np.count_nonzero(raw != idx))
        local = tau - p.t_start[:k] - idx * p.width[:k]
        rows = p.rows[:k]
        vals = p.a[rows, idx] + p.b[rows, idx] * local
        return vals, x

    def evaluate(self, t, h: InputHistory) -> float:
        """Truncated pulse-response sum at time ``t``.

        Each tap's table value is shared by two neighbouring pulse terms, so
        the sum reduces to ``sum_j F_j * (x_j - x_{j+1})`` with missing
        entries treated as zero input.
        """
        vals, x = self.tap_values(t, h)
        if vals.size == 0:
            return 0.0
        w = x.copy()
        w[:-1] -= x[1:]
        return float(vals @ w)


def evaluate(ade: Ade, t, h: InputHistory) -> float:
    return ade.evaluate(t, h)


def set_setting(ade: Ade, code: int) -> None:
    ade.set_setting(code)


def build_taps(
    F: StepResponse,
    n: int,
    T: float,
    J: float,
    tol_abs: float,
    *,
    max_segments: int = 2**14,
    continuous: bool = True,
) -> list[PwlTable]:
    """Trim and fit one table per tap for jitter-bounded input spacing."""
    tables = []
    for k in range(1, n + 1):
        lo, hi = trim_domain(k, T, J)
        table, _ = fit_pwl(
            F, (lo, hi), tol_abs, max_segments, continuous=continuous, label=f"tap{k}"
        )
        tables.append(table)
    return tables


def build_ade(
    family: StepFamily | StepResponse,
    n: int,
    T: float,
    J: float,
    R: float = 1.0,
    tol_rel: float = 1e-3,
    **kw,
) -> Ade:
    """Unquantized engine for every member of ``family``."""
    members = [family] if isinstance(family, StepResponse) else list(family)
    per_setting = [build_taps(F, n, T, J, tol_rel * F.swing) for F in members]
    return Ade(per_setting, R, **kw)


def truncation_bound(F: StepResponse, n: int, dt_min: float, R: float) -> float:
    """Bound on the output error from dropping inputs older than ``n`` steps.

    The neglected tail weights increments of ``F`` over disjoint intervals
    after ``(n-1)*dt_min``, so ``R`` times the total variation of ``F`` from
    there to its steady state bounds it.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    tau0 = (n - 1) * dt_min
    ext = local_extrema(F, tau0)
    pts = np.concatenate([[min(tau0, F.t_end)], ext])
    vals = np.append(F(pts), F.steady_state)
    return float(R * np.sum(np.abs(np.diff(vals))))


def choose_tap_count(F: StepResponse, dt_min: float, R: float, budget: float) -> int:
    """Fewest taps whose truncation bound fits ``budget``."""
    if budget <= 0:
        raise ValueError("budget must be positive")
    n_max = int(F.t_end / dt_min) + 1
    if truncation_bound(F, n_max, dt_min, R) > budget:
        raise ValueError("truncation budget not reachable within the step-response record")
    lo, hi = 1, n_max
    while lo < hi:
        mid = (lo + hi) // 2
        if truncation_bound(F, mid, dt_min, R) <= budget:
            hi = mid
        else:
            lo = mid + 1
    return lo


def bound_eT(
    tables: Sequence[PwlTable],
    time_exps: Sequence[int],
    R: float,
    time_unit: float | None = None,
) -> float:
    """Output error bound from flooring stored input times to ``2**-w_j``.

    ``2**-w_j`` is in ``time_unit`` (defaults to the tables' unit); slopes
    are the unquantized per-second slopes.
    """
    if not tables:
        return 0.0
    unit = tables[0].time_unit if time_unit is None else time_unit
    w = list(time_exps)
    s = [t.max_abs_slope() * unit for t in tables]
    return R * (2.0 ** -w[-1] * s[-1] + sum(2.0 ** (-wj + 1) * sj for wj, sj in zip(w[:-1], s[:-1])))


def range_spread(ri: tuple[float, float], rj: tuple[float, float]) -> float:
    """``max F_i - min F_j`` for tap ranges ``(min, max)``."""
    return ri[1] - rj[0]


def bound_eX(
    tables: Sequence[PwlTable], value_exps: Sequence[int], quantized: bool | None = None
) -> float:
    """Output error bound from flooring stored input values to ``2**-z_j``."""
    if not tables:
        return 0.0
    if quantized is None:
        quantized = all(t.is_quantized for t in tables)
    rng = [t.value_range(quantized) for t in tables]
    z = list(value_exps)
    total = 2.0 ** -z[0] * max(abs(rng[0][0]), abs(rng[0][1]))
    for j in range(1, len(tables)):
        d = max(range_spread(rng[j], rng[j - 1]), range_spread(rng[j - 1], rng[j]))
        total += 2.0 ** -z[j] * d
    return total
