import json

import numpy as np
import pytest

from stepemu.link import (
    UI,
    ConfigError,
    Dco,
    LinkConfig,
    Pd,
    RxState,
    amplitude_histogram,
    bbpd,
    build_link_ade,
    cdr_update,
    compare_with_oracle,
    dco_period,
    dfe_apply,
    dfe_taps_from_pulse,
    edges_per_ui,
    link_step,
    measure_relative_error,
    run_link,
    trace_histogram,
    tx_coeffs,
    tx_level,
)
from stepemu.timing import Prbs, prbs_next

TICK = 2.0**-24 * 1e-9


def pulse_peak(F):
    grid = np.arange(0.0, F.t_end, F.dt)
    p = F(grid) - F(grid - UI)
    return float(grid[int(np.argmax(p))])


def test_prbs_determinism_and_balance():
    a, b = Prbs(15, 77), Prbs(15, 77)
    assert [prbs_next(a) for _ in range(1000)] == [prbs_next(b) for _ in range(1000)]
    gen = Prbs(7)
    bits = [gen.next_bit() for _ in range(127)]
    assert sum(bits) == 64
    assert gen.state == 0x7F


def test_tx_levels():
    assert tx_level(1, 0, 0) == 1.0 and tx_level(0, 1, 0) == -1.0
    assert tx_level(1, 1, 0) == 1.0
    for s in range(10):
        c0, c1 = tx_coeffs(s)
        assert c0 + c1 == pytest.approx(1.0)
        assert 20 * np.log10((c0 - c1) / (c0 + c1)) == pytest.approx(-s)
        assert abs(tx_level(1, 1, s)) == pytest.approx(c0 - c1)
        assert abs(tx_level(0, 0, s)) == pytest.approx(c0 - c1)
        assert abs(tx_level(1, 0, s)) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        tx_coeffs(10)


def test_dco_endpoints_and_fit():
    dco = Dco()
    assert dco.frequency(1000) == pytest.approx(7.6e9, rel=1e-6)
    assert dco.frequency(8192) == pytest.approx(8.0e9, rel=1e-6)
    assert dco.beta == pytest.approx(0.4e9 / 7192)
    assert dco.alpha == pytest.approx(7.6e9 - 1000 * 0.4e9 / 7192)
    codes = np.linspace(0, 16383, 200_001)
    exact = dco.exact_period(codes)
    approx = np.asarray(dco.table(codes)) * 1e-12
    assert np.max(np.abs(approx - exact) / exact) < 1e-4
    assert dco.period(-5) == dco.period(0)
    assert dco.period(10**6) == dco.period(16383)
    assert dco_period(8192) == pytest.approx(125e-12, rel=1e-6)
    assert dco.period_ticks(8192) == 2**21


def test_bbpd_truth_table():
    assert bbpd(0, +0.3, 1) is Pd.EARLY
    assert bbpd(0, -0.3, 1) is Pd.LATE
    assert bbpd(1, -0.3, 0) is Pd.EARLY
    assert bbpd(1, +0.3, 0) is Pd.LATE
    for d in (0, 1):
        for e in (-1.0, 1.0):
            assert bbpd(d, e, d) is Pd.HOLD


def test_dfe_examples():
    assert dfe_apply(0.4, [1, 0, 1], []) == 0.4
    assert dfe_apply(0.4, [1], [0.1]) == pytest.approx(0.3)
    assert dfe_apply(0.4, [0, 1], [0.1, 0.05]) == pytest.approx(0.4 + 0.1 - 0.05)
    with pytest.raises(ValueError):
        dfe_apply(0.0, [1], [0.1, 0.2])


def test_dfe_residual_isi_through_ade():
    F = link_step(8)
    cfg = LinkConfig(tx_jitter=0.0, ctle_setting=8)
    ade = build_link_ade(cfg)
    c = pulse_peak(F)
    taps = dfe_taps_from_pulse(F, UI, 2)
    ui_t = 2**21
    for k, tap in enumerate(taps, start=1):
        # one unit pulse inside an otherwise idle (zero) input stream
        t = int(round((c + k * UI) / TICK))
        h = ade.new_history()
        for i in range(-ade.n, t // ui_t + 1):
            h.push(i * ui_t, 1.0 if i == 0 else 0.0)
        isi = ade.evaluate(t, h)
        assert abs(tap) > 0.005
        assert abs(isi - tap) < 0.1 * abs(tap)


def test_cdr_update_examples():
    st = RxState(100, 0, 200)
    for i in range(10):
        cdr_update(st, Pd.EARLY if i % 2 == 0 else Pd.LATE, 5)
        assert 100 <= st.dco_code <= 105
    st = RxState(0, 0, 200)
    seq = [cdr_update(st, Pd.EARLY, 1) for _ in range(20)]
    assert seq == list(range(1, 21))
    assert cdr_update(RxState(199, 0, 200), Pd.EARLY, 5) == 200
    assert cdr_update(RxState(2, 0, 200), Pd.LATE, 5) == 0
    assert cdr_update(RxState(7, 0, 200), Pd.HOLD, 5) == 7


@pytest.fixture(scope="module")
def loopback():
    F = link_step(8)
    cfg = LinkConfig(tx_jitter=0.0, rx_first_edge=UI + pulse_peak(F), ui_count=512)
    return cfg, run_link(cfg, pin_code=8192)


def test_loopback_equivalence(loopback):
    _, tr = loopback
    rec = tr.recovered_bits()
    tx = np.asarray(tr.tx_bits)
    m = min(rec.size, tx.size)
    assert m > 500
    # sampling at the pulse peak after the first TX edge aligns decision k with bit k
    np.testing.assert_array_equal(rec[:m], tx[:m])


def test_trace_invariants(loopback):
    cfg, tr = loopback
    assert np.all(np.diff(tr.time_ticks) > 0)
    assert np.all((tr.tx_edge == 1) | (tr.rx_phase >= 0))
    t0 = tr.times[int(np.argmax(tr.rx_phase >= 0))]
    span = tr.times[-1] - t0
    assert edges_per_ui(tr, t0, tr.times[-1]) == pytest.approx(3.0, abs=3 / (span / UI))


def test_determinism():
    cfg = LinkConfig(ui_count=300, jitter_seed=5)
    a, b = run_link(cfg), run_link(cfg)
    for name in ("time_ticks", "ade_out", "sample", "decision", "dco_code"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    c = run_link(cfg.replace(jitter_seed=6))
    assert not np.array_equal(a.time_ticks, c.time_ticks)


def test_ade_tracks_oracle_short_run():
    cfg = LinkConfig(ui_count=256)
    tr = run_link(cfg)
    assert compare_with_oracle(tr, link_step(8)) < 0.015


def test_measure_relative_error():
    y = np.array([1.0, -2.0, 0.5])
    assert measure_relative_error(y, y) == 0.0
    assert measure_relative_error(y + 0.01, y) == pytest.approx(0.005)
    with pytest.raises(ValueError):
        measure_relative_error(np.array([]), np.array([]))


def test_histogram_noiseless():
    h = amplitude_histogram(np.array([1.0, -1.0] * 50))
    assert h.std_pos == 0 and h.std_neg == 0
    assert np.count_nonzero(h.counts) == 2
    assert h.mean_pos == 1.0 and h.mean_neg == -1.0
    with pytest.raises(ValueError):
        amplitude_histogram([])


def test_isi_std_grows_when_detuned():
    std = []
    for s in range(16):
        F = link_step(s)
        cfg = LinkConfig(ctle_setting=s, tx_jitter=0.0, rx_first_edge=UI + pulse_peak(F),
                         ui_count=512, error_budget=None)
        std.append(trace_histogram(run_link(cfg, pin_code=8192), skip=20e-9).std)
    best = int(np.argmin(std))
    assert 0 < best < 15
    assert all(np.diff(std[: best + 1]) < 0)
    assert all(np.diff(std[best:]) > 0)


def test_config_json_round_trip(tmp_path):
    cfg = LinkConfig(ctle_setting=3, dfe_taps=[0.1, -0.02], prbs_seed=9)
    p = tmp_path / "link.json"
    cfg.save(p)
    assert LinkConfig.load(p) == cfg
    doc = json.loads(p.read_text())
    doc["bogus"] = 1
    with pytest.raises(ConfigError, match="bogus"):
        LinkConfig.from_dict(doc)


@pytest.mark.parametrize(
    "kw",
    [
        {"tx_setting": 10},
        {"ctle_setting": -1},
        {"tx_jitter": 40e-12},
        {"dco_code_init": 20000},
        {"ui_count": 0},
        {"tap_count": 0},
        {"error_budget": 0.0},
        {"cdr_phase_step": 40e-12},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        LinkConfig(**kw)


def test_unknown_engine():
    with pytest.raises(ValueError):
        run_link(LinkConfig(ui_count=4), engine="spice")
