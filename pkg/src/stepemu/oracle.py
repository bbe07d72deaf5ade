"""Reference computations: exact pulse superposition and dense convolution."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .fixed import DEFAULT_TIME_EXP
from .step import StepResponse


@dataclass(frozen=True, eq=False)
class DenseTrace:
    dt: float
    samples: np.ndarray
    t0: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.samples))

    def __call__(self, t):
        return np.interp(t, self.times, self.samples)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "value"])
            for t, v in zip(self.times, self.samples):
                w.writerow([repr(float(t)), repr(float(v))])


def _events(events) -> tuple[np.ndarray, np.ndarray]:
    ev = np.asarray(events, dtype=float).reshape(-1, 2)
    t, x = ev[:, 0], ev[:, 1]
    if np.any(np.diff(t) <= 0):
        raise ValueError("event times must strictly increase")
    return t, x


def exact_superposition(F: StepResponse, events, t):
    """Output for a piecewise-constant input, summed over its whole history.

    ``events`` are ``(t_k, x_k)`` pairs in seconds: the input holds ``x_k``
    from ``t_k`` until the next event, and is zero before the first one.
    Steps older than the step-response record contribute ``F(t_end)`` each,
    so they are folded into one term.
    """
    tk, xk = _events(events)
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if tk.size == 0:
        out = np.zeros_like(t)
        return float(out[0]) if scalar else out
    dx = np.diff(np.concatenate([[0.0], xk]))
    f_end = float(F.samples[-1])
    # events with index < first_live have settled at time t
    first_live = np.searchsorted(tk, t - F.t_end, side="right")
    last = np.searchsorted(tk, t, side="right")  # events at or before t
    settled = np.where(first_live > 0, xk[np.maximum(first_live - 1, 0)], 0.0) * f_end
    width = int(np.max(last - first_live, initial=0))
    out = settled.copy()
    if width:
        cols = first_live[:, None] + np.arange(width)[None, :]
        live = cols < last[:, None]
        cols = np.minimum(cols, tk.size - 1)
        tau = t[:, None] - tk[cols]
        out += np.sum(np.where(live, dx[cols] * F(tau), 0.0), axis=1)
    return float(out[0]) if scalar else out


def dense_convolve(F: StepResponse, events, dt: float, t_end: float) -> DenseTrace:
    """Fixed-step reference: sampled input convolved with step increments.

    Event times are rounded to the grid; between grid points the input is
    constant, so weighting each cell's step-response increment by the
    input held over that cell is exact for on-grid events.
    """
    if dt > F.dt * (1 + 1e-12):
        raise ValueError("dense step must not exceed the step response's dt")
    tk, xk = _events(events)
    n = int(round(t_end / dt)) + 1
    grid = dt * np.arange(n)
    x = np.zeros(n)
    idx = np.rint(tk / dt).astype(np.int64)
    for i, (k, v) in enumerate(zip(idx, xk)):
        if k < n:
            stop = idx[i + 1] if i + 1 < idx.size else n
            x[k : min(stop, n)] = v
    Fg = F(grid)
    h = np.diff(Fg)  # integral of the impulse response over each cell
    y = Fg[0] * x
    y[1:] += fftconvolve(x, h)[: n - 1]
    return DenseTrace(dt, y)


@dataclass(frozen=True)
class ErrorReport:
    max_abs: float
    relative: float
    rms: float
    n: int


def compare(a_times, a_values, b) -> ErrorReport:
    """Error of sampled points ``a`` against ``b`` (a DenseTrace, or a
    ``(times, values)`` pair, linearly interpolated)."""
    at = np.asarray(a_times, dtype=float)
    av = np.asarray(a_values, dtype=float)
    if at.size == 0:
        raise ValueError("empty comparison")
    if isinstance(b, DenseTrace):
        bt = b.times
        bv = b(at)
    else:
        bt, bvals = (np.asarray(v, dtype=float) for v in b)
        if bt.size == 0:
            raise ValueError("empty comparison")
        bv = np.interp(at, bt, bvals)
    span = 1e-12 * max(abs(bt[0]), abs(bt[-1]), 1e-30)
    if at.min() < bt[0] - span or at.max() > bt[-1] + span:
        raise ValueError("sample times fall outside the reference span")
    err = av - bv
    peak = float(np.max(np.abs(bv)))
    max_abs = float(np.max(np.abs(err)))
    rel = max_abs / peak if peak > 0 else (0.0 if max_abs == 0 else math.inf)
    return ErrorReport(max_abs, rel, float(np.sqrt(np.mean(err**2))), int(at.size))


class ExactEngine:
    """Incremental exact superposition with the same push/evaluate shape as
    the emulator, for closed-loop reference runs."""

    def __init__(self, F: StepResponse, scale_exp: int = DEFAULT_TIME_EXP):
        self.F = F
        self._q = 2.0**-scale_exp * 1e-9
        self._span = int(math.ceil(F.t_end / self._q))
        self.t: list[int] = []
        self.dx: list[float] = []
        self.last_x = 0.0
        self.settled = 0.0  # input level of steps older than the record

    def push(self, ticks: int, x: float) -> None:
        self.t.append(int(ticks))
        self.dx.append(float(x) - self.last_x)
        self.last_x = float(x)

    def evaluate(self, ticks: int) -> float:
        # fold steps that have fully settled
        drop = 0
        while drop < len(self.t) and ticks - self.t[drop] >= self._span:
            self.settled += self.dx[drop]
            drop += 1
        if drop:
            del self.t[:drop], self.dx[:drop]
        y = self.settled * float(self.F.samples[-1])
        if self.t:
            tau = (ticks - np.asarray(self.t, dtype=np.int64)) * self._q
            live = tau >= 0
            y += float(np.sum(np.asarray(self.dx)[live] * self.F(tau[live])))
        return y


def relative_error(y_emu: Sequence[float], y_ref: Sequence[float]) -> float:
    """``max|y_emu - y_ref| / max|y_ref|``."""
    a = np.asarray(y_emu, dtype=float)
    b = np.asarray(y_ref, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty traces")
    if a.shape != b.shape:
        raise ValueError("traces must be aligned")
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))
