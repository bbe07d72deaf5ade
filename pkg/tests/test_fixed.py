import math
import random

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from stepemu.fixed import (
    FixedFormat,
    FormatError,
    Interval,
    TimePoint,
    choose_format,
    format_for,
    interval_propagate,
    mantissa_width,
    quantize_round,
    quantize_trunc,
    seconds_to_ticks,
    ticks_to_seconds,
)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)
exps = st.integers(min_value=-8, max_value=40)


def test_round_examples():
    q = quantize_round(0.3, 4)
    assert q.mantissa == 5 and q.value == 0.3125
    assert abs(q.value - 0.3) <= 2**-5
    assert quantize_round(0.0, 17).mantissa == 0
    n = quantize_round(-0.3, 4)
    assert n.mantissa == -5 and n.value == -0.3125


def test_round_ties_away_from_zero():
    assert quantize_round(0.5, 0).mantissa == 1
    assert quantize_round(-0.5, 0).mantissa == -1
    assert quantize_round(2.5, 0).mantissa == 3


def test_trunc_examples():
    q = quantize_trunc(0.3, 4)
    assert q.mantissa == 4 and q.value == 0.25
    assert quantize_trunc(0.25, 4).value == 0.25
    n = quantize_trunc(-0.3, 4)
    assert n.mantissa == -5 and n.value == -0.3125


def test_width_overflow():
    assert quantize_round(0.9, 3, width=4).mantissa == 7
    with pytest.raises(FormatError):
        quantize_round(1.0, 3, width=4)  # mantissa 8 needs 5 signed bits
    with pytest.raises(FormatError):
        quantize_trunc(-1.1, 3, width=4)
    assert quantize_trunc(-1.0, 3, width=4).mantissa == -8


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        quantize_round(math.inf, 2)
    with pytest.raises(ValueError):
        quantize_trunc(math.nan, 2)


@given(finite, exps)
def test_round_error_bound(x, e):
    assume(abs(x) * 2.0**e < 2.0**50)
    assert abs(quantize_round(x, e).value - x) <= 2.0 ** (-e - 1) * (1 + 1e-12)


@given(finite, exps)
def test_trunc_error_bound(x, e):
    assume(abs(x) * 2.0**e < 2.0**50)
    q = quantize_trunc(x, e).value
    assert q <= x
    assert x - q <= 2.0**-e * (1 + 1e-12)


def test_timepoint_exact_and_ordered():
    a = TimePoint(5)
    b = TimePoint(3)
    assert (a - b).mantissa == 2 and (a + b).mantissa == 8 and (-a).mantissa == -5
    assert b < a
    assert sorted([a, b, TimePoint(4)]) == [b, TimePoint(4), a]
    with pytest.raises(ValueError):
        a - TimePoint(1, scale_exp=10)


def test_timepoint_conversions():
    t = TimePoint.from_seconds(125e-12)
    assert t.mantissa == 2**21  # 0.125 ns is exact on the 2^-24 ns grid
    assert t.ns == 0.125 and t.seconds == pytest.approx(125e-12, rel=1e-15)
    assert seconds_to_ticks(125e-12) == 2**21
    assert ticks_to_seconds(2**24) == pytest.approx(1e-9)


def test_interval_examples():
    assert Interval(1, 2) + Interval(3, 4) == Interval(4, 6)
    assert Interval(-1, 2) * Interval(-3, 4) == Interval(-6, 8)
    assert Interval(1, 2) - Interval(3, 4) == Interval(-3, -1)
    assert -Interval(1, 2) == Interval(-2, -1)
    with pytest.raises(ValueError):
        Interval(2, 1)


def _random_tree(r, depth, names):
    if depth == 0 or r.random() < 0.25:
        return r.choice(names)
    op = r.choice(["add", "sub", "mul", "neg"])
    if op == "neg":
        return ("neg", _random_tree(r, depth - 1, names))
    return (op, _random_tree(r, depth - 1, names), _random_tree(r, depth - 1, names))


def _eval(expr, vals):
    if isinstance(expr, str):
        return vals[expr]
    op, *args = expr
    v = [_eval(a, vals) for a in args]
    return {"add": lambda: v[0] + v[1], "sub": lambda: v[0] - v[1],
            "mul": lambda: v[0] * v[1], "neg": lambda: -v[0]}[op]()


def test_interval_propagation_encloses_samples():
    r = random.Random(7)
    for _ in range(20):
        env = {}
        for name in "abcd":
            lo = r.uniform(-3, 3)
            env[name] = Interval(lo, lo + r.uniform(0, 2))
        tree = _random_tree(r, 4, list(env))
        box = interval_propagate(tree, env)
        for _ in range(500):
            vals = {k: r.uniform(v.lo, v.hi) for k, v in env.items()}
            y = _eval(tree, vals)
            assert box.lo - 1e-9 <= y <= box.hi + 1e-9


def test_interval_propagate_errors():
    with pytest.raises(KeyError):
        interval_propagate("x", {})
    with pytest.raises(ValueError):
        interval_propagate(("pow", Interval(0, 1), Interval(0, 1)))


def test_choose_format_unit_range():
    fmt = choose_format(Interval(-1, 1), 1e-4)
    assert fmt.width == 15
    assert fmt.signed
    assert 2.0 ** (-fmt.frac_bits - 1) <= 1e-4 < 2.0 ** (-fmt.frac_bits)
    assert fmt.covers(Interval(-1, 1))


def test_choose_format_degenerate():
    fmt = choose_format(Interval(0, 0), 1e-3)
    assert fmt.width == 1 and fmt.frac_bits == 0 and fmt.int_bits == 0


def test_choose_format_enumerated():
    fmt = choose_format(Interval(-3.2, 3.2), 1e-3)
    f = 0
    while 2.0 ** (-f - 1) > 3.2e-3:
        f += 1
    assert fmt.frac_bits == f
    assert fmt.int_bits == 2


@given(st.floats(0.01, 1000), st.floats(1e-6, 0.1))
def test_choose_format_minimal_and_covering(mag, rel):
    rng = Interval(-mag, mag / 2)
    fmt = choose_format(rng, rel)
    assert fmt.covers(rng)
    assert 2.0 ** (-fmt.frac_bits - 1) <= rel * mag
    assert 2.0 ** (-fmt.frac_bits) > rel * mag
    assert not FixedFormat(fmt.signed, fmt.int_bits - 1, fmt.frac_bits).covers(rng) or fmt.int_bits == 0


@given(st.integers(-2000, 2000), st.integers(0, 2000), st.integers(0, 12))
def test_grid_endpoints_representable(lo_m, span, f):
    lo, hi = lo_m * 2.0**-f, (lo_m + span) * 2.0**-f
    fmt = format_for(Interval(lo, hi), f)
    for x in (lo, hi):
        m = x / fmt.lsb
        assert m == int(m) and fmt.min_value <= x <= fmt.max_value


def test_mantissa_width():
    assert mantissa_width([0]) == 1
    assert mantissa_width([-1]) == 1
    assert mantissa_width([1]) == 2
    assert mantissa_width([127, -128]) == 8
    assert mantissa_width([128]) == 9
