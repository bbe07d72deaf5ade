"""Step responses: CTLE and channel models, cascades, and the features the
error bounds need (local extrema, settling time)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi


class StepFormatError(ValueError):
    """A step-response CSV file could not be parsed or validated."""


@dataclass(frozen=True, eq=False)
class StepResponse:
    """Uniformly sampled step response ``F(k*dt)``, ``k = 0..M``.

    Between samples ``F`` is linearly interpolated; it is zero for negative
    time and holds its last sample beyond the record.
    """

    dt: float
    samples: np.ndarray
    steady_state: float | None = None
    label: str = ""

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or s.size < 2:
            raise ValueError("a step response needs at least two samples")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if self.steady_state is None:
            tail = max(1, int(math.ceil(0.01 * s.size)))
            object.__setattr__(self, "steady_state", float(np.mean(s[-tail:])))

    @property
    def n_samples(self) -> int:
        return self.samples.size

    @property
    def t_end(self) -> float:
        return self.dt * (self.samples.size - 1)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.samples.size)

    @property
    def swing(self) -> float:
        return float(np.max(self.samples) - np.min(np.append(self.samples, 0.0)))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        pos = t / self.dt
        idx = np.clip(np.floor(pos).astype(np.int64), 0, self.samples.size - 2)
        frac = np.clip(pos - idx, 0.0, 1.0)
        out = self.samples[idx] * (1.0 - frac) + self.samples[idx + 1] * frac
        out = np.where(t < 0, 0.0, out)
        return out if out.ndim else float(out)

    def settle_deviation(self) -> float:
        """Largest deviation of the final 1% of samples from steady state."""
        tail = max(1, int(math.ceil(0.01 * self.samples.size)))
        return float(np.max(np.abs(self.samples[-tail:] - self.steady_state)))

    def scaled(self, k: float) -> "StepResponse":
        return StepResponse(self.dt, k * self.samples, k * self.steady_state, self.label)


@dataclass(frozen=True)
class RationalTf:
    """``G (1 + s/wz) / ((1 + s/w1)(1 + s/w2))``, frequencies in rad/s."""

    gain: float
    wz: float
    w1: float
    w2: float

    def __post_init__(self):
        if min(self.wz, self.w1, self.w2) <= 0:
            raise ValueError("zero and pole frequencies must be positive")
        if self.w1 == self.w2:
            raise ValueError(
                "repeated pole is not supported; perturb one pole by 1 ppm"
            )

    def residues(self) -> tuple[float, float]:
        g, wz, w1, w2 = self.gain, self.wz, self.w1, self.w2
        r1 = -g * w2 * (wz - w1) / (wz * (w2 - w1))
        r2 = -g * w1 * (wz - w2) / (wz * (w1 - w2))
        return r1, r2

    def step(self, t):
        """Analytic unit-step response at ``t`` (seconds)."""
        t = np.asarray(t, dtype=float)
        r1, r2 = self.residues()
        tc = np.maximum(t, 0.0)
        y = self.gain + r1 * np.exp(-self.w1 * tc) + r2 * np.exp(-self.w2 * tc)
        return np.where(t < 0, 0.0, y)

    def step_integral(self, t):
        """Antiderivative of :meth:`step`, zero at ``t = 0``."""
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        r1, r2 = self.residues()
        return (
            self.gain * t
            + r1 / self.w1 * (1.0 - np.exp(-self.w1 * t))
            + r2 / self.w2 * (1.0 - np.exp(-self.w2 * t))
        )

    def response(self, freq_hz):
        s = 1j * TWO_PI * np.asarray(freq_hz, dtype=float)
        return self.gain * (1 + s / self.wz) / ((1 + s / self.w1) * (1 + s / self.w2))


@dataclass(frozen=True)
class StepFamily:
    """Step responses indexed by a setting code; all share ``dt`` and length."""

    entries: tuple[StepResponse, ...]
    settings: tuple = field(default=())

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ValueError("empty step family")
        dt, m = entries[0].dt, entries[0].n_samples
        for e in entries[1:]:
            if not math.isclose(e.dt, dt, rel_tol=1e-12) or e.n_samples != m:
                raise ValueError("family members must share dt and sample count")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, code: int) -> StepResponse:
        return self.entries[code]

    def __iter__(self):
        return iter(self.entries)


def ctle_step(tf: RationalTf, dt: float, t_end: float, label: str = "") -> StepResponse:
    """Sampled analytic step response of a CTLE transfer function."""
    fastest = max(tf.w1, tf.w2, tf.wz)
    if t_end < 10.0 / min(tf.w1, tf.w2):
        raise ValueError("t_end too short for the slowest pole to settle")
    if dt >= 0.1 / fastest:
        raise ValueError("dt too coarse for the fastest pole/zero")
    m = int(round(t_end / dt))
    t = dt * np.arange(m + 1)
    return StepResponse(dt, tf.step(t), steady_state=tf.gain, label=label)


def cascade_step(channel: StepResponse, ctle: RationalTf, label: str = "") -> StepResponse:
    """Step response of ``channel`` followed by ``ctle``.

    The channel step is treated as piecewise linear, so its derivative is
    piecewise constant; each cell is integrated exactly against the analytic
    CTLE step (the trapezoid limit of the same convolution, without its
    half-sample bias).
    """
    f = channel.samples
    if f.size < 2:
        raise ValueError("empty channel")
    dt = channel.dt
    m = f.size
    t = dt * np.arange(m)
    # cell average of the CTLE step over [t_j, t_j + dt]
    integ = ctle.step_integral(np.append(t, t[-1] + dt))
    cell = np.diff(integ) / dt
    slopes = np.diff(f)  # increment of F_ch over cell k -> k+1
    # y(t_m) = F_ch(0) * S(t_m) + sum_k slopes[k] * mean_{s in cell k} S(t_m - s)
    # the cell k -> k+1 seen from t_m covers CTLE times [t_m - t_{k+1}, t_m - t_k]
    conv = np.convolve(slopes, cell)[: m - 1]
    y = f[0] * ctle.step(t)
    y[1:] += conv
    return StepResponse(dt, y, label=label or channel.label)


def synth_channel_step(
    loss_pole: float = TWO_PI * 3e9,
    delay: float = 1e-9,
    reflection_amp: float = 0.1,
    reflection_delay: float = 3e-9,
    dt: float = 125e-12 / 64,
    t_end: float = 12e-9,
    label: str = "channel",
) -> StepResponse:
    """Single-pole lossy channel with one delayed reflection."""
    if loss_pole <= 0:
        raise ValueError("loss_pole must be positive")
    if not 0 <= reflection_amp < 1:
        raise ValueError("reflection_amp must lie in [0, 1)")
    if delay < 0 or reflection_delay < 0:
        raise ValueError("delays must be non-negative")
    t = dt * np.arange(int(round(t_end / dt)) + 1)

    def edge(t0):
        tau = t - t0
        return np.where(tau >= 0, 1.0 - np.exp(-loss_pole * np.maximum(tau, 0.0)), 0.0)

    y = edge(delay) + reflection_amp * edge(delay + reflection_delay)
    return StepResponse(dt, y, label=label)


def ctle_setting(
    code: int,
    n_settings: int = 16,
    f_zero_lo: float = 0.4e9,
    f_zero_hi: float = 2.0e9,
    gain_db: float = 0.0,
    f_pole1: float = 2e9,
    f_pole2: float = 8e9,
) -> RationalTf:
    """CTLE with its zero at setting ``code`` of ``n_settings`` linear steps."""
    if not 0 <= code < n_settings:
        raise ValueError(f"CTLE setting {code} outside 0..{n_settings - 1}")
    fz = f_zero_lo + (f_zero_hi - f_zero_lo) * code / max(n_settings - 1, 1)
    w1, w2 = TWO_PI * f_pole1, TWO_PI * f_pole2
    return RationalTf(10.0 ** (gain_db / 20.0), TWO_PI * fz, w1, w2)


def ctle_family(
    channel: StepResponse,
    n_settings: int = 16,
    gain_db: float = 0.0,
    **kwargs,
) -> StepFamily:
    """Cascade ``channel`` with every CTLE zero setting."""
    entries = []
    for code in range(n_settings):
        tf = ctle_setting(code, n_settings, gain_db=gain_db, **kwargs)
        entries.append(cascade_step(channel, tf, label=f"ctle{code}"))
    return StepFamily(tuple(entries), tuple(range(n_settings)))


def local_extrema(F: StepResponse, tau0: float) -> np.ndarray:
    """Times of the local extrema of ``F`` after ``tau0``, ending at ``t_end``.

    Extrema are sign changes of the first difference of the samples (flat
    runs are skipped). The final entry always stands for the steady state.
    """
    s = F.samples
    k0 = max(int(math.floor(tau0 / F.dt)) + 1, 0)
    out = []
    if k0 < s.size - 1:
        d = np.sign(np.diff(s[k0:]))
        nz = np.flatnonzero(d)
        if nz.size > 1:
            sd = d[nz]
            flips = np.flatnonzero(sd[1:] != sd[:-1])
            # extremum sits at the sample ending the last step of a run
            for i in flips:
                out.append(F.dt * (k0 + nz[i] + 1))
    t_end = F.t_end
    out = [t for t in out if tau0 < t < t_end]
    out.append(t_end)
    return np.asarray(out)


def settling_time(F: StepResponse, tol_fraction: float) -> float:
    """Earliest time after which ``F`` stays within ``tol_fraction`` of its
    steady state."""
    if not 0 < tol_fraction < 1:
        raise ValueError("tol_fraction must lie in (0, 1)")
    band = tol_fraction * abs(F.steady_state)
    bad = np.flatnonzero(np.abs(F.samples - F.steady_state) > band)
    if bad.size == 0:
        return 0.0
    if bad[-1] == F.samples.size - 1:
        raise ValueError("step response does not settle within the record")
    return F.dt * (bad[-1] + 1)


def save_step_csv(F: StepResponse, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_seconds", "value"])
        for k, v in enumerate(F.samples):
            w.writerow([repr(k * F.dt), repr(float(v))])


def load_step_csv(path, label: str | None = None, rel_tol: float = 1e-6) -> StepResponse:
    """Read a two-column ``time_seconds,value`` file with uniform spacing."""
    path = Path(path)
    times, values = [], []
    with open(path, newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh)):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                t, v = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if row_no == 0 and not times:
                    continue  # header
                raise StepFormatError(f"{path}: unparsable row {row_no}: {row!r}") from None
            times.append(t)
            values.append(v)
    if len(times) < 2:
        raise StepFormatError(f"{path}: need at least two rows")
    t = np.asarray(times)
    d = np.diff(t)
    if np.any(d <= 0):
        bad = int(np.flatnonzero(d <= 0)[0]) + 1
        raise StepFormatError(f"{path}: time not increasing at row {bad}")
    dt = (t[-1] - t[0]) / (t.size - 1)
    if abs(t[0]) > rel_tol * dt:
        raise StepFormatError(f"{path}: first sample must be at t = 0")
    err = np.abs(t - t[0] - dt * np.arange(t.size))
    if np.any(err > rel_tol * dt):
        bad = int(np.flatnonzero(err > rel_tol * dt)[0])
        raise StepFormatError(f"{path}: nonuniform spacing at row {bad}")
    return StepResponse(dt, np.asarray(values), label=label or path.stem)


def pulse_response(F: StepResponse, width: float, t) -> np.ndarray:
    """Response to a unit pulse of ``width`` starting at 0."""
    t = np.asarray(t, dtype=float)
    return F(t) - F(t - width)


def family_distinct(family: StepFamily, width: float) -> bool:
    """True when no two members produce the same pulse response."""
    t = family[0].times
    shapes = [pulse_response(F, width, t) for F in family]
    for i in range(len(shapes)):
        for j in range(i + 1, len(shapes)):
            if np.allclose(shapes[i], shapes[j]):
                return False
    return True

