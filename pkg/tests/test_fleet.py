import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pemfreq import fleet as fl
from pemfreq.errors import ConfigurationError

P = fl.FleetParams()
POLICY = fl.ControlPolicy.from_magnitudes(1.0, 0.02, 0.1)


def dev(mode=fl.Mode.STANDBY, timer=0.0, T=52.0, **kw):
    return fl.DeviceState(temperature=T, timer=timer, mode=mode, **kw)


def test_params_validation():
    assert P.n_bins == 1800
    with pytest.raises(ConfigurationError, match="t_min.*t_max"):
        fl.FleetParams(t_min=56.0)
    with pytest.raises(ConfigurationError, match="integer multiple"):
        fl.FleetParams(epoch_s=180.05)
    with pytest.raises(ConfigurationError):
        fl.FleetParams(rated_power_kw=0.0)


def test_policy_validation():
    assert POLICY.df_db == -0.02 and POLICY.df_max == -0.1
    with pytest.raises(ConfigurationError):
        fl.ControlPolicy(eta_max=1.5)
    with pytest.raises(ConfigurationError):
        fl.ControlPolicy(df_db=-0.2, df_max=-0.1)


def test_mu_cases():
    assert fl.mu_rate(P.t_max, P) == 0.0
    assert fl.mu_rate(P.t_min, P) == math.inf
    assert fl.mu_rate(P.t_set, P) == pytest.approx(1 / 180)


def test_request_probability_cases():
    assert fl.request_probability(P.t_max + 1, P) == 0.0
    assert fl.request_probability(P.t_min - 1, P) == 1.0
    assert fl.request_probability(P.t_set, P) == pytest.approx(1 - math.exp(-0.1 / 180), rel=1e-12)
    assert fl.request_probability(P.t_set, P) == pytest.approx(5.554e-4, rel=1e-3)


@given(st.floats(48.8001, 55.1999), st.floats(48.8001, 55.1999))
def test_request_probability_decreasing(a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    if hi - lo < 1e-6:
        return
    assert fl.request_probability(lo, P) > fl.request_probability(hi, P)


def test_timer_step():
    d = fl.timer_step(dev(fl.Mode.ON, 0.0), 0.1)
    assert d.mode == fl.Mode.ON and d.timer == pytest.approx(0.1)
    d = fl.timer_step(dev(fl.Mode.ON, 179.9), 0.1, 180.0)
    assert d.mode == fl.Mode.STANDBY and d.timer == 0 and d.switch == 0
    d = fl.timer_step(dev(), 0.1)
    assert d.mode == fl.Mode.STANDBY and d.timer == 0


def test_eta_examples():
    assert fl.eta(-0.010, POLICY) == 0.0
    assert fl.eta(-0.060, POLICY) == pytest.approx(0.5)
    assert fl.eta(-0.150, POLICY) == 1.0


@given(st.floats(0, 1), st.floats(-0.5, 0.1), st.floats(-0.5, 0.1))
def test_eta_properties(eta_max, a, b):
    pol = fl.ControlPolicy(eta_max, -0.02, -0.1)
    assert fl.eta(pol.df_db, pol) == 0.0
    assert fl.eta(pol.df_max, pol) == eta_max
    ea, eb = fl.eta(a, pol), fl.eta(b, pol)
    assert 0.0 <= ea <= eta_max
    # non-decreasing in the size of an under-frequency deviation
    if a <= b:
        assert ea >= eb - 1e-15
    if a > pol.df_db:
        assert ea == 0.0
    # piecewise linear with slope eta_max / 0.08 in the middle
    assert abs(ea - eb) <= eta_max / 0.08 * abs(a - b) + 1e-12


def test_local_control_examples():
    pol = fl.ControlPolicy(1.0, -0.02, -0.1)
    d, act = fl.local_control(dev(fl.Mode.ON, 170.0), -0.06, pol, P)
    assert act == fl.Action.INTERRUPT and d.mode == fl.Mode.INTERRUPTED and d.timer == 0
    d, act = fl.local_control(dev(fl.Mode.ON, 10.0), -0.06, pol, P)
    assert act == fl.Action.BLOCK_REQUESTS and d.mode == fl.Mode.ON
    # an INTERRUPTED device is released here instead, see the cooldown test
    for mode in (fl.Mode.STANDBY, fl.Mode.ON, fl.Mode.OPTED_OUT):
        start = dev(mode, 50.0 if mode == fl.Mode.ON else 0.0)
        d, act = fl.local_control(start, 0.0, pol, P)
        assert act == fl.Action.NONE and d == start


def test_interrupted_device_released_with_cooldown():
    d, _ = fl.local_control(dev(fl.Mode.ON, 170.0), -0.06, POLICY, P)
    d, act = fl.local_control(d, -0.03, POLICY, P)
    assert d.mode == fl.Mode.INTERRUPTED and act == fl.Action.BLOCK_REQUESTS
    d, act = fl.local_control(d, -0.01, POLICY, P)
    assert d.mode == fl.Mode.STANDBY and d.lockout_steps == P.n_bins


def test_packets_do_not_age_into_threshold_during_excursion():
    # 100 s old packet, eta 0.25 -> threshold 135 s; it must survive a long excursion
    d = dev(fl.Mode.ON, 100.0)
    for _ in range(500):
        d, act = fl.local_control(d, -0.04, POLICY, P)
        assert act != fl.Action.INTERRUPT
        d = fl.timer_step(d, P.dt_s, P.epoch_s)
    assert d.mode == fl.Mode.ON


def test_thermal_step_signs():
    no_loss = fl.FleetParams(loss_kw_per_c=0.0)
    on = fl.thermal_step(dev(fl.Mode.ON), 0.0, 0.1, no_loss)
    assert on.temperature > 52.0
    off = fl.thermal_step(dev(T=52.0), 0.0, 60.0, P)
    assert P.ambient_c < off.temperature < 52.0
    drawn = fl.thermal_step(dev(fl.Mode.ON), 0.1, 0.1, P)
    assert drawn.temperature < fl.thermal_step(dev(fl.Mode.ON), 0.0, 0.1, P).temperature
    with pytest.raises(ConfigurationError):
        fl.thermal_step(dev(), -1.0, 0.1, P)


def test_thermal_one_hour_energy_balance():
    no_loss = fl.FleetParams(loss_kw_per_c=0.0)
    d = fl.thermal_step(dev(fl.Mode.ON, T=40.0), 0.0, 3600.0, no_loss)
    assert d.temperature - 40.0 == pytest.approx(4.5 / 0.335, rel=1e-12)
    assert d.temperature - 40.0 == pytest.approx(13.4, abs=0.05)


def test_opt_out_rules():
    d = fl.opt_out_check(dev(fl.Mode.ON, 30.0, T=P.t_max + 0.1), P)
    assert d.mode == fl.Mode.OPTED_OUT and d.switch == 0 and d.timer == 0
    d = fl.opt_out_check(dev(T=P.t_min - 0.1), P)
    assert d.mode == fl.Mode.OPTED_OUT and d.forced_heating
    back = fl.opt_out_check(fl.DeviceState(temperature=P.t_set, mode=fl.Mode.OPTED_OUT, forced_heating=True), P)
    assert back.mode == fl.Mode.STANDBY and not back.forced_heating


def _fleet(n, n_on, seed=0, workers=1):
    return fl.Fleet.initialize(fl.FleetParams(n_devices=n), n_on, seed=seed, workers=workers)


def test_empty_fleet():
    f = _fleet(0, 0)
    _, req, intr, comp, p = fl.fleet_step(f, np.zeros(2), POLICY, 0)
    assert (req, intr, comp, p) == (0, 0, 0, 0.0)


def test_saturated_event_interrupts_everyone():
    f = _fleet(10, 10)
    p0 = f.mode_counts()["ON"] * 0.0045
    _, _, intr, _, p = fl.fleet_step(f, np.array([-0.2, -0.2]), POLICY, 0)
    assert intr == 10
    assert p0 - p == pytest.approx(10 * 0.0045)


def test_request_rate_matches_probability():
    n = 10_000
    f = _fleet(n, 0, seed=7)
    f.temp[:] = np.linspace(49.5, 54.5, n)
    expected = np.sum([fl.request_probability(t, f.params) for t in f.temp])
    steps = 50
    total = 0
    params = f.params
    for k in range(steps):
        res = f.step(k, np.zeros(2), POLICY, draws=False)
        total += int(res.requests.sum())
        f.temp[:] = np.linspace(49.5, 54.5, n)
        f.mode[:] = fl.Mode.STANDBY
    mean = total / steps
    sigma = math.sqrt(expected / steps)
    assert abs(mean - expected) < 3 * sigma
    assert params.n_devices == n


def _warm(seed=3, n=5000, steps=400):
    f = _fleet(n, n // 5, seed=seed)
    for k in range(steps):
        r = f.step(k, np.zeros(2), POLICY)
        f.activate(r.request_idx[: max(0, int(r.completions.sum()))])
    return f


def test_mode_partition_and_timer_bound():
    f = _warm()
    for k in range(400, 600):
        df = np.array([0.0, -0.03 - 0.05 * (k > 450)])
        r = f.step(k, df, POLICY)
        f.activate(r.request_idx[:3])
        assert sum(f.mode_counts().values()) == f.params.n_devices
        on = f.mode == fl.Mode.ON
        assert np.all((f.age[on] >= 0) & (f.age[on] < f.params.n_bins))
        assert np.all(f.age[~on] == 0)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(-0.3, -0.021))
def test_interruption_set_monotone_in_eta(e1, e2, df):
    lo, hi = sorted((e1, e2))
    base = _WARM.copy()
    sets = []
    for e in (lo, hi):
        f = base.copy()
        on_before = f.mode == fl.Mode.ON
        f.step(1000, np.array([df, df]), fl.ControlPolicy(e, -0.02, -0.1), draws=False)
        sets.append(on_before & (f.mode == fl.Mode.INTERRUPTED))
    assert not np.any(sets[0] & ~sets[1])


_WARM = _warm()


def test_no_reenergization_during_event():
    f = _WARM.copy()
    prev = f.mode_counts()["ON"]
    for k in range(1000, 1200):
        df = -0.025 - 0.0004 * (k - 1000)
        r = f.step(k, np.array([df, df]), fl.ControlPolicy(0.5, -0.02, -0.1), draws=False)
        assert r.request_idx.size == 0
        on = f.mode_counts()["ON"]
        assert on <= prev
        prev = on


@pytest.mark.parametrize("workers", [2, 3, 7])
def test_determinism_across_workers(workers):
    def trace(w):
        f = _WARM.copy()
        f.workers = w
        out = []
        for k in range(1000, 1100):
            df = -0.05 if k > 1050 else 0.0
            r = f.step(k, np.array([df, df]), POLICY)
            f.activate(r.request_idx[:2])
            out.append(r.counts.copy())
        return np.array(out), f.temp.copy()

    c1, t1 = trace(1)
    cw, tw = trace(workers)
    assert np.array_equal(c1, cw) and np.array_equal(t1, tw)


def test_timer_histogram_counts_on_devices():
    h = _WARM.timer_histogram()
    assert h.sum() == _WARM.mode_counts()["ON"]
