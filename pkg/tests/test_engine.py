from dataclasses import replace

import numpy as np
import pytest

from pemfreq import engine as en
from pemfreq import grid as gr
from pemfreq.aggregator import Regime
from pemfreq.errors import ConfigurationError, MetricError

from conftest import small_scenario


@pytest.fixture(scope="module")
def small():
    return small_scenario(4000)


@pytest.fixture(scope="module")
def small_sweep(small):
    prepared = en.prepare(small)
    return prepared, en.sweep(small, [0.0, 0.33, 0.67, 1.0], prepared)


def test_zero_disturbance_stays_quiet():
    s = small_scenario(40_000)
    s = replace(s, disturbance=replace(s.disturbance, magnitude_mw=0.0))
    res = en.run_scenario(s)
    assert np.max(np.abs(res.series.df)) < 1e-5
    assert res.series.n_interrupted.sum() == 0
    assert res.estimate.regime == Regime.DEADBAND and res.estimate.D_PEM == 0


def test_eta_zero_sheds_at_completion_rate(small_sweep):
    prepared, results = small_sweep
    ts = results[0].series
    blocked = np.flatnonzero(ts.df[:, 1] <= -0.02)
    rows = blocked[1:]
    assert ts.n_interrupted.sum() == 0
    assert np.all(ts.n_accepted[rows] == 0)
    assert np.array_equal(np.diff(ts.n_on)[rows - 1], -ts.n_completed[rows])
    xbar = prepared.aggregator.xbar_nominal()
    assert ts.n_completed[rows].mean() == pytest.approx(xbar, rel=0.35)


def test_sweep_is_monotone(small_sweep):
    _, results = small_sweep
    m = [r.metrics for r in results]
    for a, b in zip(m, m[1:]):
        assert abs(a.rocof_mhz_s) > abs(b.rocof_mhz_s)
        assert abs(a.nadir_mhz) > abs(b.nadir_mhz)
        assert abs(a.f_inf_mhz) > abs(b.f_inf_mhz)


def test_sweep_rows_share_warmup(small, small_sweep):
    prepared, results = small_sweep
    again = en.prepare(small)
    for name in ("temp", "age", "mode", "forced", "exc", "lock", "next_draw"):
        assert np.array_equal(getattr(prepared.fleet, name), getattr(again.fleet, name))
    k0 = int(round(small.disturbance.onset_s / small.dt))
    for r in results[1:]:
        assert np.array_equal(r.series.df[: k0 + 1], results[0].series.df[: k0 + 1])


def test_singleton_sweep_equals_run(small, small_sweep):
    prepared, results = small_sweep
    one = en.sweep(small.with_eta_max(0.67), [0.67], prepared)[0]
    direct = en.run_scenario(small.with_eta_max(0.67), prepared)
    assert replace(one.metrics, runtime_s=0) == replace(direct.metrics, runtime_s=0)
    assert replace(one.metrics, runtime_s=0) == replace(results[2].metrics, runtime_s=0)


def test_proportional_traces_align_before_onset(small_sweep):
    _, results = small_sweep
    k0 = 50
    for r in results:
        assert np.array_equal(r.series.df[: k0 + 1], r.proportional.df[: k0 + 1])


def test_proportional_zero_gain_is_plain_grid(small):
    ts = en.run_proportional_model(small, 0.0)
    state = gr.GridState.zeros(2, small.dt)
    for k in range(small.event_steps):
        load = small.disturbance.load_step(k * small.dt, 2)
        state = gr.swing_turbine_step(state, small.network, load, np.zeros(2), small.simulation.substeps)
    assert np.array_equal(ts.df[-1], state.freq)


def test_more_gain_means_smaller_steady_deviation(small):
    s = replace(small, horizon_s=60.0)
    f = [en.run_proportional_model(s, d).df[-10:, 1].mean() for d in (1000.0, 2000.0, 4000.0)]
    assert abs(f[0]) > abs(f[1]) > abs(f[2])
    with pytest.raises(ConfigurationError):
        en.run_proportional_model(s, -1.0)


def _synthetic(s, slope):
    ts = en.TimeSeries.allocate(s.event_steps + 1, 2, s.dt)
    ramp = np.clip(ts.t - s.disturbance.onset_s, 0, None) * slope
    ts.df[:] = ramp[:, None]
    return ts


def test_metrics_on_synthetic_ramp(small):
    ts = _synthetic(small, -0.1)
    m = en.compute_metrics(ts, ts, small)
    assert m.rocof_mhz_s == pytest.approx(-100.0)
    assert m.rmse_mhz == 0.0
    assert abs(m.f_inf_mhz) <= abs(m.nadir_mhz)


def test_metrics_reject_misaligned_or_short(small):
    ts = _synthetic(small, -0.1)
    short = en.TimeSeries.allocate(40, 2, small.dt)
    with pytest.raises(MetricError):
        en.compute_metrics(ts, short, small)
    with pytest.raises(MetricError):
        en.compute_metrics(short, short, small)


def test_no_pem_steady_state_matches_closed_form(small):
    s = replace(small, horizon_s=150.0)
    ts = en.run_proportional_model(s, 0.0)
    f_inf = ts.df[-10:, 1].mean()
    assert f_inf == pytest.approx(-gr.steady_state_deviation(500.0, 200.0, 1 / 5000), abs=5e-4)


def test_scenario_validation(small):
    with pytest.raises(ConfigurationError, match="horizon"):
        replace(small, horizon_s=10.0)
    with pytest.raises(ConfigurationError, match="warmup"):
        replace(small, warmup_s=60.0, simulation=replace(small.simulation, fast_init=False))
    with pytest.raises(ConfigurationError, match="P_ref"):
        replace(small, P_ref_mw=1e5)


def test_calibration_hits_target_rocof(small):
    S = en.calibrate_base_power(small, 104.0)
    s = replace(small, network=small.network.with_base_power(S))
    assert abs(en.baseline_rocof(s)) == pytest.approx(104.0, abs=0.05)


def test_assumption_policy_error(small):
    from pemfreq.errors import AssumptionViolation
    s = replace(small, simulation=replace(small.simulation, assumption_policy="error"))
    with pytest.raises(AssumptionViolation):
        en.run_scenario(s)


def test_event_optouts_are_negligible(small, small_sweep):
    _, results = small_sweep
    unit_mw = small.fleet.rated_power_kw * small.fleet.power_scale / 1000.0
    for r in results:
        assert r.metrics.optouts_event * unit_mw < 0.01 * abs(small.disturbance.magnitude_mw)
