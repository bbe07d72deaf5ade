"""Uniform-segment piecewise-linear lookup tables.

Tables hold one offset and one slope per segment, with a power-of-two
segment count and a single segment width, which is what lets hardware
select a segment from the upper bits of the lookup time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .fixed import TimePoint, mantissa_width
from .step import StepResponse

MIN_SEGMENTS = 2
MAX_SEGMENTS = 2**14
BRAM_MIN_SEGMENTS = 2**9


class PwlFitError(RuntimeError):
    """The requested tolerance could not be met within ``max_segments``."""

    def __init__(self, msg: str, table: "PwlTable", report: "FitReport"):
        super().__init__(msg)
        self.table = table
        self.report = report


@dataclass(frozen=True, eq=False)
class PwlTable:
    """Piecewise-linear table over ``[t_start, t_start + n*seg_width)``.

    ``offsets[i] + slopes[i] * (t - t_start - i*seg_width)`` on segment ``i``.
    Slopes are per unit of ``t`` (seconds for step responses). When
    quantized, ``c * 2**-u`` replaces the offsets and ``d * 2**-v`` the
    slopes, with slopes expressed per ``time_unit``.
    """

    t_start: float
    seg_width: float
    offsets: np.ndarray
    slopes: np.ndarray
    u: int | None = None
    v: int | None = None
    c: np.ndarray | None = None
    d: np.ndarray | None = None
    time_unit: float = 1.0
    label: str = ""

    def __post_init__(self):
        a = np.asarray(self.offsets, dtype=float)
        b = np.asarray(self.slopes, dtype=float)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("offsets and slopes must be 1-D and equal length")
        n = a.size
        if n < 1 or n & (n - 1):
            raise ValueError(f"segment count {n} is not a power of two")
        if not self.seg_width > 0:
            raise ValueError("segment width must be positive")
        object.__setattr__(self, "offsets", a)
        object.__setattr__(self, "slopes", b)
        for name in ("c", "d"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.asarray(val, dtype=np.int64))

    @property
    def n_segments(self) -> int:
        return self.offsets.size

    @property
    def t_stop(self) -> float:
        return self.t_start + self.n_segments * self.seg_width

    @property
    def domain(self) -> tuple[float, float]:
        return self.t_start, self.t_stop

    @property
    def is_quantized(self) -> bool:
        return self.c is not None

    def coefficients(self, quantized: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Offsets and per-unit-``t`` slopes, optionally the quantized ones."""
        if not quantized:
            return self.offsets, self.slopes
        if not self.is_quantized:
            raise ValueError("table has not been quantized")
        a = np.ldexp(self.c.astype(float), -self.u)
        b = np.ldexp(self.d.astype(float), -self.v) / self.time_unit
        return a, b

    def __call__(self, t, quantized: bool = False):
        return eval_pwl(self, t, quantized)

    def value_range(self, quantized: bool = False) -> tuple[float, float]:
        """Min and max of the table over its domain (segment end points)."""
        a, b = self.coefficients(quantized)
        ends = a + b * self.seg_width
        vals = np.concatenate([a, ends])
        return float(vals.min()), float(vals.max())

    def max_abs_slope(self, quantized: bool = False) -> float:
        return float(np.max(np.abs(self.coefficients(quantized)[1])))

    def storage_bits(self) -> int:
        if not self.is_quantized:
            raise ValueError("storage is only defined for quantized tables")
        return self.n_segments * (mantissa_width(self.c) + mantissa_width(self.d))

    def to_dict(self) -> dict:
        doc = {
            "label": self.label,
            "t_start": self.t_start,
            "seg_width": self.seg_width,
            "n_segments": self.n_segments,
            "time_unit": self.time_unit,
            "offsets": self.offsets.tolist(),
            "slopes": self.slopes.tolist(),
        }
        if self.is_quantized:
            doc.update(u=self.u, v=self.v, c=self.c.tolist(), d=self.d.tolist())
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "PwlTable":
        return cls(
            t_start=doc["t_start"],
            seg_width=doc["seg_width"],
            offsets=np.asarray(doc["offsets"], dtype=float),
            slopes=np.asarray(doc["slopes"], dtype=float),
            u=doc.get("u"),
            v=doc.get("v"),
            c=doc.get("c"),
            d=doc.get("d"),
            time_unit=doc.get("time_unit", 1.0),
            label=doc.get("label", ""),
        )


@dataclass(frozen=True)
class FitReport:
    max_abs_error: float
    n_segments: int
    iterations: int
    storage_bits: int = 0
    lp_error: float = float("nan")
    history: tuple = field(default=())  # (n_segments, error) per iteration

    @property
    def fits_bram_floor(self) -> bool:
        return self.n_segments >= BRAM_MIN_SEGMENTS


def _segment_index(table: PwlTable, t: np.ndarray):
    pos = (t - table.t_start) / table.seg_width
    raw = np.floor(pos).astype(np.int64)
    idx = np.clip(raw, 0, table.n_segments - 1)
    return idx, raw != idx


def eval_pwl(table: PwlTable, t, quantized: bool = False, return_clamped: bool = False):
    """Evaluate the table at ``t`` (seconds, array, or :class:`TimePoint`).

    Points outside the domain use the nearest end segment's line.
    """
    if isinstance(t, TimePoint):
        t = t.seconds
    t = np.asarray(t, dtype=float)
    a, b = table.coefficients(quantized)
    idx, clamped = _segment_index(table, t)
    local = t - table.t_start - idx * table.seg_width
    y = a[idx] + b[idx] * local
    if not y.ndim:
        y = float(y)
    if return_clamped:
        return y, clamped
    return y


def _sample_source(F) -> tuple[np.ndarray, np.ndarray, callable]:
    if isinstance(F, StepResponse):
        return F.times, F.samples, F
    x, y = (np.asarray(v, dtype=float) for v in F)
    if x.ndim != 1 or x.shape != y.shape or np.any(np.diff(x) <= 0):
        raise ValueError("sample source must be increasing x with matching y")

    def interp(t):
        return np.interp(t, x, y)

    return x, y, interp


def _minimax(pts, vals, lo, width, m, continuous):
    """L-infinity optimal PWL coefficients for a fixed uniform knot grid.

    Both the fitted table and the linear interpolant of the data are
    piecewise linear between ``pts`` (data samples plus knots), so
    constraining the error only at those points gives the exact optimum.
    """
    s_all = (pts - lo) / width
    seg = np.clip(np.floor(s_all).astype(np.int64), 0, m - 1)
    rows_seg = [seg]
    rows_s = [s_all - seg]
    rows_val = [vals]
    if not continuous:
        # a knot also closes the segment to its left
        on_knot = (np.abs(s_all - np.round(s_all)) < 1e-9) & (seg > 0) & (s_all < m - 0.5)
        rows_seg.append(seg[on_knot] - 1)
        rows_s.append(np.ones(on_knot.sum()))
        rows_val.append(vals[on_knot])
    seg = np.concatenate(rows_seg)
    s = np.concatenate(rows_s)
    v = np.concatenate(rows_val)
    r = seg.size
    if continuous:
        nv = m + 2  # knot values y_0..y_m, then error
        cols = np.concatenate([seg, seg + 1])
        coef = np.concatenate([1.0 - s, s])
    else:
        nv = 2 * m + 1  # offsets a_i, scaled slopes b_i*width, then error
        cols = np.concatenate([seg, m + seg])
        coef = np.concatenate([np.ones(r), s])
    rows = np.concatenate([np.arange(r), np.arange(r)])
    fit = sparse.csr_matrix((coef, (rows, cols)), shape=(r, nv))
    err_col = sparse.csr_matrix((np.ones(r), (np.arange(r), np.full(r, nv - 1))), shape=(r, nv))
    a_ub = sparse.vstack([fit - err_col, -fit - err_col]).tocsc()
    b_ub = np.concatenate([v, -v])
    cost = np.zeros(nv)
    cost[-1] = 1.0
    bounds = [(None, None)] * (nv - 1) + [(0, None)]
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"minimax LP failed: {res.message}")
    x = res.x
    if continuous:
        knots = x[: m + 1]
        offsets = knots[:-1]
        slopes = np.diff(knots) / width
    else:
        offsets = x[:m]
        slopes = x[m : 2 * m] / width
    return offsets, slopes, float(x[-1])


def dense_error(table: PwlTable, F, oversample: int = 100, quantized: bool = False) -> float:
    """Max ``|table - F|`` on a scan ``oversample`` times denser than the data."""
    x, _, f = _sample_source(F)
    lo, hi = table.domain
    inside = np.count_nonzero((x >= lo) & (x <= hi))
    n = oversample * max(inside, table.n_segments, 2) + 1
    knots = lo + table.seg_width * np.arange(table.n_segments + 1)
    pts = np.concatenate([np.linspace(lo, hi, n), x[(x >= lo) & (x <= hi)], knots])
    # right-closure of each segment, approached from the left
    left_lim = knots[1:] - 1e-9 * table.seg_width
    pts = np.concatenate([pts, left_lim])
    return float(np.max(np.abs(eval_pwl(table, pts, quantized) - f(pts))))


def fit_pwl(
    F,
    domain: Sequence[float],
    tol_abs: float,
    max_segments: int = MAX_SEGMENTS,
    *,
    continuous: bool = True,
    min_segments: int = MIN_SEGMENTS,
    oversample: int = 100,
    label: str = "",
) -> tuple[PwlTable, FitReport]:
    """Fit a uniform PWL table to ``F`` on ``domain``.

    Starts with ``min_segments`` and doubles until the dense-scan error is
    below ``tol_abs``. Each round solves the minimax fit for that grid as a
    linear program. ``F`` is a :class:`StepResponse` or an ``(x, y)`` pair
    of samples, linearly interpolated.
    """
    lo, hi = map(float, domain)
    if not hi > lo:
        raise ValueError("empty fit domain")
    if tol_abs <= 0:
        raise ValueError("tol_abs must be positive")
    if min_segments & (min_segments - 1) or max_segments & (max_segments - 1):
        raise ValueError("segment limits must be powers of two")
    x, _, f = _sample_source(F)
    inner = x[(x > lo) & (x < hi)]
    m = min_segments
    history = []
    best = None
    while True:
        width = (hi - lo) / m
        knots = lo + width * np.arange(m + 1)
        pts = np.unique(np.concatenate([inner, knots]))
        offsets, slopes, lp_err = _minimax(pts, f(pts), lo, width, m, continuous)
        table = PwlTable(lo, width, offsets, slopes, label=label)
        err = dense_error(table, F, oversample)
        history.append((m, err))
        if best is None or err <= best[2].max_abs_error:
            best = (table, None, FitReport(err, m, len(history), 0, lp_err, tuple(history)))
        if err < tol_abs:
            return table, FitReport(err, m, len(history), 0, lp_err, tuple(history))
        if m >= max_segments:
            table, _, rep = best
            rep = replace(rep, history=tuple(history), iterations=len(history))
            raise PwlFitError(
                f"tolerance {tol_abs:g} not reached with {m} segments (error {err:g})",
                table,
                rep,
            )
        m *= 2


def quantize_table(table: PwlTable, u: int, v: int, time_unit: float | None = None) -> PwlTable:
    """Round offsets to ``2**-u`` and slopes (per ``time_unit``) to ``2**-v``.

    Ties round away from zero, matching :func:`stepemu.fixed.quantize_round`.
    """
    unit = table.time_unit if time_unit is None else time_unit

    def rnd(x):
        return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)

    c = rnd(np.ldexp(table.offsets, u))
    d = rnd(np.ldexp(table.slopes * unit, v))
    return replace(table, u=int(u), v=int(v), c=c, d=d, time_unit=unit)


def _exps(tables, name):
    vals = [getattr(t, name) for t in tables]
    if any(x is None for x in vals):
        raise ValueError(f"every table needs its {name!r} exponent")
    return vals


def bound_eA(tables: Sequence[PwlTable], R: float) -> float:
    """Output error bound from offset quantization over taps ``1..n``."""
    if not tables:
        return 0.0
    u = _exps(tables, "u")
    return R * (2.0 ** (-u[-1] - 1) + sum(2.0 ** -uj for uj in u[:-1]))


def bound_eB(tables: Sequence[PwlTable], R: float) -> float:
    """Output error bound from slope quantization; widths in ``time_unit``."""
    if not tables:
        return 0.0
    v = _exps(tables, "v")
    w = [t.seg_width / t.time_unit for t in tables]
    return R * (
        2.0 ** (-v[-1] - 1) * w[-1] + sum(2.0 ** -vj * wj for vj, wj in zip(v[:-1], w[:-1]))
    )


def trim_domain(k: int, T_tx: float, J_tx: float) -> tuple[float, float]:
    """Lookup times tap ``k`` can see under bounded period jitter."""
    if k < 1:
        raise ValueError("tap index starts at 1")
    if not 0 <= J_tx < T_tx:
        raise ValueError("jitter must satisfy 0 <= J < T")
    return (k - 1) * (T_tx - J_tx), k * (T_tx + J_tx)


def trim_domain_gaussian(k: int, T_tx: float, sigma_tx: float) -> tuple[float, float]:
    """Six-sigma lookup window for tap ``k`` under Gaussian period jitter."""
    if k < 1:
        raise ValueError("tap index starts at 1")
    if sigma_tx < 0:
        raise ValueError("sigma must be non-negative")
    lo = (k - 1) * T_tx - 6.0 * sigma_tx * math.sqrt(k - 1)
    hi = k * T_tx + 6.0 * sigma_tx * math.sqrt(k)
    return max(lo, 0.0), hi
