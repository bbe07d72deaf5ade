import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stepemu.step import (
    TWO_PI,
    RationalTf,
    StepFamily,
    StepFormatError,
    StepResponse,
    cascade_step,
    ctle_family,
    ctle_setting,
    ctle_step,
    family_distinct,
    load_step_csv,
    local_extrema,
    pulse_response,
    save_step_csv,
    settling_time,
    synth_channel_step,
)

from conftest import monotone_step, overshoot_step


def rk4_step_response(tf: RationalTf, t):
    """Integrate the controllable canonical form of the CTLE; time in ns."""
    ns = 1e-9
    g, wz, w1, w2 = tf.gain, tf.wz * ns, tf.w1 * ns, tf.w2 * ns
    b1, b0 = g * w1 * w2 / wz, g * w1 * w2
    a1, a0 = w1 + w2, w1 * w2

    def f(x):
        return np.array([x[1], -a0 * x[0] - a1 * x[1] + 1.0])

    tn = np.asarray(t) / ns
    h = 1e-4
    x = np.zeros(2)
    out = np.empty(tn.size)
    now = 0.0
    for i, target in enumerate(tn):
        while now < target - 1e-12:
            dt = min(h, target - now)
            k1 = f(x)
            k2 = f(x + dt / 2 * k1)
            k3 = f(x + dt / 2 * k2)
            k4 = f(x + dt * k3)
            x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            now += dt
        out[i] = b0 * x[0] + b1 * x[1]
    return out


@pytest.mark.parametrize("code", [0, 7, 15])
def test_ctle_step_matches_ode(code):
    tf = ctle_setting(code)
    F = ctle_step(tf, 1e-12, 2e-9)
    t = np.linspace(0, 2e-9, 41)
    ref = rk4_step_response(tf, t)
    # the response jumps at t = 0+ by g*w1*w2/(wz*...) terms; compare away from 0
    assert np.max(np.abs(F(t[1:]) - ref[1:])) < 1e-6


def test_ctle_initial_and_final_values():
    tf = RationalTf(2.0, TWO_PI * 1e9, TWO_PI * 3e9, TWO_PI * 9e9)
    assert float(tf.step(0.0)) == pytest.approx(0.0, abs=1e-12)
    assert float(tf.step(1e-6)) == pytest.approx(2.0)
    assert abs(tf.response(0.0)) == pytest.approx(2.0)


def test_pole_zero_cancellation():
    w1, w2 = TWO_PI * 2e9, TWO_PI * 7e9
    tf = RationalTf(1.5, w1, w1, w2)
    t = np.linspace(0, 3e-9, 200)
    np.testing.assert_allclose(tf.step(t), 1.5 * (1 - np.exp(-w2 * t)), atol=1e-12)


def test_repeated_pole_rejected():
    with pytest.raises(ValueError, match="perturb"):
        RationalTf(1.0, 1e9, 5e9, 5e9)


def test_ctle_step_guards():
    tf = ctle_setting(3)
    with pytest.raises(ValueError):
        ctle_step(tf, 1e-12, 1e-11)
    with pytest.raises(ValueError):
        ctle_step(tf, 1e-10, 5e-9)


def test_step_integral_derivative():
    tf = ctle_setting(5)
    t = np.linspace(1e-11, 2e-9, 50)
    h = 1e-15
    num = (tf.step_integral(t + h) - tf.step_integral(t - h)) / (2 * h)
    np.testing.assert_allclose(num, tf.step(t), rtol=1e-5, atol=1e-6)


def test_cascade_ramp_channel_exact():
    dt, a = 2e-12, 200e-12
    t = dt * np.arange(2001)
    ch = StepResponse(dt, np.minimum(t / a, 1.0))
    tf = ctle_setting(6)
    y = cascade_step(ch, tf)
    # ramp input over [0, a]: y(t) = (I(t) - I(t - min(t, a))) / a
    ref = (tf.step_integral(t) - tf.step_integral(t - np.minimum(t, a))) / a
    np.testing.assert_allclose(y.samples, ref, atol=1e-9)


def test_cascade_unit_channel_is_ctle():
    dt = 2e-12
    ch = StepResponse(dt, np.ones(1001))
    tf = ctle_setting(2)
    y = cascade_step(ch, tf)
    np.testing.assert_allclose(y.samples, tf.step(y.times), atol=1e-12)


def test_cascade_all_pass_limit(channel):
    w = TWO_PI * 2e9
    tf = RationalTf(1.0, w, w * (1 + 1e-9), TWO_PI * 1e15)
    y = cascade_step(channel, tf)
    assert np.max(np.abs(y.samples - channel.samples)) < 1e-3


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_cascade_linear(a, b):
    dt = 4e-12
    t = dt * np.arange(600)
    c1 = StepResponse(dt, 1 - np.exp(-t / 1e-10))
    c2 = StepResponse(dt, np.minimum(t / 4e-10, 1.0))
    tf = ctle_setting(9)
    mix = StepResponse(dt, a * c1.samples + b * c2.samples)
    lhs = cascade_step(mix, tf).samples
    rhs = a * cascade_step(c1, tf).samples + b * cascade_step(c2, tf).samples
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_synth_channel_shape():
    F = synth_channel_step()
    assert F(0.99e-9) == 0.0
    assert F.samples[-1] == pytest.approx(1.1, rel=1e-6)
    # before the reflection arrives the response approaches 1
    assert F(3.9e-9) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        synth_channel_step(reflection_amp=1.0)
    with pytest.raises(ValueError):
        synth_channel_step(loss_pole=0.0)


def test_ctle_family_distinct(channel):
    fam = ctle_family(channel)
    assert len(fam) == 16
    assert family_distinct(fam, 125e-12)
    with pytest.raises(ValueError):
        ctle_setting(16)


def test_family_rejects_mismatch():
    with pytest.raises(ValueError):
        StepFamily((StepResponse(1.0, [0, 1]), StepResponse(1.0, [0, 1, 1])))
    with pytest.raises(ValueError):
        StepFamily(())


def test_interpolation_and_hold():
    F = StepResponse(1.0, [0.0, 2.0, 4.0])
    assert F(-0.5) == 0.0
    assert F(0.5) == 1.0
    assert F(10.0) == 4.0


def test_local_extrema_damped_sinusoid():
    zeta, wn = 0.3, TWO_PI * 1e9
    F = overshoot_step(dt=1e-13, t_end=6e-9, zeta=zeta, wn=wn)
    wd = wn * math.sqrt(1 - zeta**2)
    ext = local_extrema(F, 0.0)
    expected = [k * math.pi / wd for k in range(1, 20) if k * math.pi / wd < F.t_end]
    assert ext[-1] == F.t_end
    found = ext[:-1]
    assert len(found) == len(expected)
    np.testing.assert_allclose(found, expected, atol=2e-13)


def test_local_extrema_monotone_only_end(mono):
    ext = local_extrema(mono, 0.0)
    assert list(ext) == [mono.t_end]
    later = local_extrema(overshoot_step(), 5e-9)
    assert np.all(later > 5e-9)


def test_settling_time_monotone():
    F = monotone_step(dt=1e-13, t_end=6e-9, tau=0.3e-9, delay=0.2e-9)
    expected = 0.2e-9 + 0.3e-9 * math.log(100)
    assert settling_time(F, 0.01) == pytest.approx(expected, abs=2e-13)


def test_settling_time_errors():
    F = StepResponse(1.0, np.linspace(0, 1, 10), steady_state=2.0)
    with pytest.raises(ValueError, match="settle"):
        settling_time(F, 0.01)
    with pytest.raises(ValueError):
        settling_time(F, 0.0)


def test_csv_round_trip(tmp_path, channel):
    p = tmp_path / "ch.csv"
    save_step_csv(channel, p)
    back = load_step_csv(p)
    assert back.dt == pytest.approx(channel.dt, rel=1e-12)
    np.testing.assert_array_equal(back.samples, channel.samples)


def test_csv_three_rows(tmp_path):
    p = tmp_path / "tiny.csv"
    p.write_text("time_seconds,value\n0,0\n1e-12,0.5\n2e-12,1\n")
    F = load_step_csv(p)
    assert F.n_samples == 3 and F.dt == pytest.approx(1e-12)


def test_csv_nonuniform_reports_row(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("time_seconds,value\n0,0\n1,0.1\n2,0.2\n3.5,0.3\n4,0.4\n")
    with pytest.raises(StepFormatError, match=r"bad\.csv.*row 3"):
        load_step_csv(p)


def test_csv_garbage(tmp_path):
    p = tmp_path / "junk.csv"
    p.write_text("time_seconds,value\n0,0\n1,abc\n")
    with pytest.raises(StepFormatError, match="junk.csv"):
        load_step_csv(p)
    q = tmp_path / "short.csv"
    q.write_text("0,1\n")
    with pytest.raises(StepFormatError):
        load_step_csv(q)


def test_pulse_response_is_step_difference(mono):
    t = np.linspace(0, 3e-9, 50)
    np.testing.assert_allclose(pulse_response(mono, 1e-10, t), mono(t) - mono(t - 1e-10))
