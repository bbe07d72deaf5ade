"""Error-budget allocation: tap count, per-tap fixed-point exponents and
storage cost from a total output-error target."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ade import Ade, bound_eT, bound_eX, build_taps, choose_tap_count, truncation_bound
from .fixed import DEFAULT_TIME_EXP
from .pwl import PwlTable, bound_eA, bound_eB, quantize_table
from .step import StepResponse

HALF_TILE_BITS = 18 * 1024
TERMS = ("N", "A", "B", "T", "X")
MAX_EXP = 60


class BudgetError(ValueError):
    def __init__(self, msg: str, term: str):
        super().__init__(msg)
        self.term = term


@dataclass(frozen=True)
class ErrorBudget:
    """``total`` is a fraction of the output swing; ``en_share`` of it goes
    to truncation and the rest is split evenly over the four quantization
    terms."""

    total: float = 1e-3
    en_share: float = 0.6

    def __post_init__(self):
        if self.total <= 0:
            raise ValueError("total budget must be positive")
        if not 0 < self.en_share < 1:
            raise ValueError("en_share must lie in (0, 1)")

    def fractions(self) -> dict[str, float]:
        q = (1.0 - self.en_share) / 4.0
        return {"N": self.en_share, "A": q, "B": q, "T": q, "X": q}

    def shares(self, swing: float) -> dict[str, float]:
        return {k: f * self.total * swing for k, f in self.fractions().items()}


@dataclass
class BudgetReport:
    n: int
    u: list[int]
    v: list[int]
    w: list[int]
    z: list[int]
    tables: list[PwlTable] = field(repr=False)
    bits: list[int] = field(repr=False)
    shares: dict[str, float] = field(default_factory=dict)
    realized: dict[str, float] = field(default_factory=dict)
    swing: float = 1.0
    R: float = 1.0
    time_unit: float = 1e-9

    @property
    def total_bits(self) -> int:
        return int(sum(self.bits))

    @property
    def half_tiles(self) -> list[int]:
        return [max(1, math.ceil(b / HALF_TILE_BITS)) if b else 0 for b in self.bits]

    @property
    def within_shares(self) -> bool:
        return all(self.realized[k] <= self.shares[k] for k in TERMS)

    def build_ade(self, scale_exp: int = DEFAULT_TIME_EXP) -> Ade:
        """Fixed-point engine using these tables and exponents."""
        return Ade(
            [self.tables],
            self.R,
            quantized=True,
            time_exps=self.w,
            value_exps=self.z,
            scale_exp=scale_exp,
        )

    def to_dict(self, with_tables: bool = False) -> dict:
        doc = {
            "n": self.n,
            "u": self.u,
            "v": self.v,
            "w": self.w,
            "z": self.z,
            "bits": self.bits,
            "total_bits": self.total_bits,
            "half_tiles": self.half_tiles,
            "shares": self.shares,
            "realized": self.realized,
            "swing": self.swing,
            "R": self.R,
            "time_unit": self.time_unit,
        }
        if with_tables:
            doc["tables"] = [t.to_dict() for t in self.tables]
        return doc


def _exp_for(scale: float, share: float) -> int:
    """Smallest integer e >= 0 with ``scale * 2**-e <= share``."""
    if scale <= 0:
        return 0
    e = max(0, math.ceil(math.log2(scale / share)))
    while scale * 2.0**-e > share:
        e += 1
    if e > MAX_EXP:
        raise OverflowError
    return e


def _per_term(scales_body: Sequence[float], scale_last: float, share: float, n: int) -> list[int]:
    s = share / n
    return [_exp_for(x, s) for x in scales_body] + [_exp_for(scale_last, s)]


def output_swing(F: StepResponse, R: float) -> float:
    return R * float(np.max(np.abs(F.samples)))


def allocate(
    F: StepResponse,
    budget: ErrorBudget,
    dt_min: float,
    R: float = 1.0,
    *,
    dt_max: float | None = None,
    n: int | None = None,
    fit_tol_rel: float = 1e-3,
    time_unit: float = 1e-9,
    tables: Sequence[PwlTable] | None = None,
) -> BudgetReport:
    """Split ``budget`` over the five error terms and size every tap.

    The tap count comes from the truncation share (unless ``n`` is fixed);
    each quantization share is divided evenly over its ``n`` summation
    terms and each exponent is the smallest meeting its term. Realized
    bounds are recomputed from the quantized tables and checked.
    """
    dt_max = dt_min if dt_max is None else dt_max
    swing = output_swing(F, R)
    shares = budget.shares(swing)
    fixed_n = n is not None
    if n is None:
        try:
            n = choose_tap_count(F, dt_min, R, shares["N"])
        except ValueError as exc:
            raise BudgetError(f"e_N share {shares['N']:g} unreachable: {exc}", "N") from None
    if tables is None or len(tables) < n:
        T, J = (dt_min + dt_max) / 2, (dt_max - dt_min) / 2
        tables = build_taps(F, n, T, J, fit_tol_rel * F.swing)
    tables = list(tables[:n])

    try:
        u = _per_term([R] * (n - 1), R / 2, shares["A"], n)
        widths = [t.seg_width / time_unit for t in tables]
        v = _per_term([R * w for w in widths[:-1]], R * widths[-1] / 2, shares["B"], n)
        slopes = [t.max_abs_slope() * time_unit for t in tables]
        w = _per_term([2 * R * s for s in slopes[:-1]], R * slopes[-1], shares["T"], n)
    except OverflowError:
        raise BudgetError("quantization share too small for representable exponents", "A") from None
    qtables = [quantize_table(t, uj, vj, time_unit) for t, uj, vj in zip(tables, u, v)]
    rng = [t.value_range(True) for t in qtables]
    spreads = [max(abs(rng[0][0]), abs(rng[0][1]))]
    for j in range(1, n):
        spreads.append(max(rng[j][1] - rng[j - 1][0], rng[j - 1][1] - rng[j][0]))
    try:
        z = [_exp_for(s, shares["X"] / n) for s in spreads]
    except OverflowError:
        raise BudgetError("value quantization share too small", "X") from None

    realized = {
        "N": truncation_bound(F, n, dt_min, R),
        "A": bound_eA(qtables, R),
        "B": bound_eB(qtables, R),
        "T": bound_eT(tables, w, R, time_unit),
        "X": bound_eX(qtables, z),
    }
    report = BudgetReport(
        n=n,
        u=u,
        v=v,
        w=w,
        z=z,
        tables=qtables,
        bits=[t.storage_bits() for t in qtables],
        shares=shares,
        realized=realized,
        swing=swing,
        R=R,
        time_unit=time_unit,
    )
    for k in TERMS:
        # a caller-fixed n may overrun the truncation share; that is reported, not raised
        if k == "N" and fixed_n:
            continue
        if realized[k] > shares[k] * (1 + 1e-12):
            raise BudgetError(f"realized e_{k} {realized[k]:g} exceeds share {shares[k]:g}", k)
    return report


def sweep_eN_share(
    F: StepResponse,
    total: float,
    shares: Sequence[float],
    dt_min: float,
    R: float = 1.0,
    *,
    dt_max: float | None = None,
    fit_tol_rel: float = 1e-3,
) -> list[dict]:
    """Tap count and storage versus the fraction of ``total`` given to e_N."""
    reports = []
    cache: list[PwlTable] = []
    dt_max = dt_min if dt_max is None else dt_max
    for s in shares:
        b = ErrorBudget(total, s)
        n = choose_tap_count(F, dt_min, R, b.shares(output_swing(F, R))["N"])
        if len(cache) < n:
            T, J = (dt_min + dt_max) / 2, (dt_max - dt_min) / 2
            cache = build_taps(F, n, T, J, fit_tol_rel * F.swing)
        rep = allocate(F, b, dt_min, R, dt_max=dt_max, n=n, fit_tol_rel=fit_tol_rel, tables=cache)
        reports.append(
            {"en_share": s, "n": rep.n, "total_bits": rep.total_bits, "half_tiles": sum(rep.half_tiles)}
        )
    return reports


def storage_report(tables: Sequence[PwlTable]) -> dict:
    """Bits per quantized table and the 18 kb half-tiles each needs."""
    bits = [t.storage_bits() if t.n_segments else 0 for t in tables]
    tiles = [max(1, math.ceil(b / HALF_TILE_BITS)) if b else 0 for b in bits]
    return {"bits": bits, "total_bits": int(sum(bits)), "half_tiles": tiles}
