"""scikit-learn style wrappers around the PWL fitter and the emulator."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .ade import Ade, build_taps
from .budget import ErrorBudget, allocate
from .pwl import eval_pwl, fit_pwl
from .step import StepResponse


def _column(X) -> np.ndarray:
    X = check_array(X, ensure_2d=True)
    if X.shape[1] != 1:
        raise ValueError(f"expected a single feature column, got {X.shape[1]}")
    return X[:, 0]


def _step_from_samples(t: np.ndarray, y: np.ndarray) -> StepResponse:
    if t.size < 2:
        raise ValueError("need at least two step-response samples")
    dt = float(t[1] - t[0])
    if abs(t[0]) > 1e-6 * dt or not np.allclose(np.diff(t), dt, rtol=1e-6, atol=0):
        raise ValueError("step-response samples must be uniform and start at t = 0")
    return StepResponse(dt, y)


class PwlRegressor(RegressorMixin, BaseEstimator):
    """Uniform piecewise-linear minimax fit of a 1-D function.

    Parameters
    ----------
    tol : float
        Target max error, relative to the peak-to-peak range of ``y``.
    max_segments : int
        Power-of-two cap on the segment count.
    continuous : bool
        Share knot values between neighbouring segments.
    domain : tuple or None
        Fit interval; defaults to the span of ``X``.
    """

    def __init__(self, tol=1e-3, max_segments=2**14, continuous=True, domain=None):
        self.tol = tol
        self.max_segments = max_segments
        self.continuous = continuous
        self.domain = domain

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_samples=2, y_numeric=True)
        if X.shape[1] != 1:
            raise ValueError(f"expected a single feature column, got {X.shape[1]}")
        x = X[:, 0]
        order = np.argsort(x, kind="stable")
        x, y = x[order], y[order]
        if np.any(np.diff(x) <= 0):
            raise ValueError("sample positions must be distinct")
        dom = (x[0], x[-1]) if self.domain is None else tuple(self.domain)
        scale = float(np.ptp(y)) or 1.0
        self.table_, self.report_ = fit_pwl(
            (x, y), dom, self.tol * scale, self.max_segments, continuous=self.continuous
        )
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "table_")
        return np.asarray(eval_pwl(self.table_, _column(X)), dtype=float)


class PulseResponseEmulator(BaseEstimator):
    """Truncated pulse-response emulator learned from a sampled step response.

    ``fit`` takes step-response sample times ``X`` (one column, uniform,
    from zero) and values ``y``. ``predict`` evaluates the response to a
    piecewise-constant input given as ``events`` rows ``(time, level)`` at
    query times ``X``, each at most one spacing after the latest event.

    Parameters
    ----------
    n_taps : int
        History length.
    ui : float
        Nominal spacing of input events, seconds.
    jitter : float
        Bound on the deviation of each spacing from ``ui``.
    tol : float
        Per-tap PWL tolerance relative to the step-response swing.
    error_budget : float or None
        When set, tables and registers are sized to this total error.
    input_bound : float
        Bound on ``|level|``.
    """

    def __init__(self, n_taps=85, ui=125e-12, jitter=0.0, tol=1e-3, error_budget=None,
                 input_bound=1.0):
        self.n_taps = n_taps
        self.ui = ui
        self.jitter = jitter
        self.tol = tol
        self.error_budget = error_budget
        self.input_bound = input_bound

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_samples=2, y_numeric=True)
        if X.shape[1] != 1:
            raise ValueError(f"expected a single feature column, got {X.shape[1]}")
        if self.n_taps < 1:
            raise ValueError("n_taps must be at least 1")
        if not 0 <= self.jitter < self.ui / 2:
            raise ValueError("jitter must lie in [0, ui/2)")
        F = _step_from_samples(X[:, 0], y)
        T, J, R = self.ui, self.jitter, self.input_bound
        if self.error_budget is None:
            self.engine_ = Ade([build_taps(F, self.n_taps, T, J, self.tol * F.swing)], R)
            self.budget_report_ = None
        else:
            rep = allocate(F, ErrorBudget(self.error_budget), T - J, R, dt_max=T + J,
                           n=self.n_taps, fit_tol_rel=self.tol)
            self.engine_ = rep.build_ade()
            self.budget_report_ = rep
        self.step_response_ = F
        self.n_features_in_ = 1
        return self

    def predict(self, X, events):
        """Output at times ``X`` for the input steps in ``events``."""
        check_is_fitted(self, "engine_")
        t = _column(X)
        ev = check_array(events, ensure_2d=True)
        if ev.shape[1] != 2:
            raise ValueError("events must be (time, level) rows")
        if np.any(np.diff(t) < 0):
            raise ValueError("query times must be non-decreasing")
        ade = self.engine_
        q = ade.quantum
        h = ade.new_history(self.ui - self.jitter, self.ui + self.jitter)
        ev_ticks = np.rint(ev[:, 0] / q).astype(np.int64)
        if t.size and ev_ticks.size and t[-1] > ev[-1, 0] + self.ui + self.jitter:
            raise ValueError("query times run past the last event's hold interval")
        out = np.empty(t.size)
        k = 0
        for i, ti in enumerate(np.rint(t / q).astype(np.int64)):
            while k < len(ev_ticks) and ev_ticks[k] <= ti:
                h.push(int(ev_ticks[k]), float(ev[k, 1]))
                k += 1
            out[i] = ade.evaluate(int(ti), h)
        return out
