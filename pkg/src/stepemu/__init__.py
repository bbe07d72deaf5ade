"""Event-driven emulation of digitally driven analog blocks from their
step responses, with a reference serial-link model built on top."""

from .ade import (
    Ade,
    HistoryError,
    InputHistory,
    bound_eT,
    bound_eX,
    build_ade,
    build_taps,
    choose_tap_count,
    truncation_bound,
)
from .budget import BudgetError, BudgetReport, ErrorBudget, allocate, storage_report, sweep_eN_share
from .fixed import FixedFormat, FixedValue, Interval, TimePoint, choose_format
from .link import LinkConfig, Trace, run_link
from .oracle import ExactEngine, dense_convolve, exact_superposition
from .pwl import PwlTable, bound_eA, bound_eB, eval_pwl, fit_pwl, quantize_table
from .step import StepFamily, StepResponse, cascade_step, ctle_family, synth_channel_step
from .timing import EmulatedClock, Lfsr, Prbs, TimeManager

__all__ = [
    "Ade", "HistoryError", "InputHistory", "bound_eT", "bound_eX", "build_ade", "build_taps",
    "choose_tap_count", "truncation_bound",
    "BudgetError", "BudgetReport", "ErrorBudget", "allocate", "storage_report", "sweep_eN_share",
    "FixedFormat", "FixedValue", "Interval", "TimePoint", "choose_format",
    "LinkConfig", "Trace", "run_link",
    "ExactEngine", "dense_convolve", "exact_superposition",
    "PwlTable", "bound_eA", "bound_eB", "eval_pwl", "fit_pwl", "quantize_table",
    "StepFamily", "StepResponse", "cascade_step", "ctle_family", "synth_channel_step",
    "EmulatedClock", "Lfsr", "Prbs", "TimeManager",
]
