"""Warm-up and event phases of the coupled grid/fleet/aggregator loop, the
proportional comparator and the frequency-response metrics."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import aggregator as ag
from . import fleet as fl
from . import grid as gr
from .errors import AssumptionViolation, ConfigurationError, MetricError

CSV_COLUMNS = ("t", "df_area1_hz", "df_area2_hz", "dPg1_mw", "dPg2_mw", "p_pem_mw", "eta", "n_on",
               "n_interrupted", "n_completed", "n_requests", "n_accepted", "tie_flow_mw")


@dataclass(frozen=True)
class SimulationOptions:
    substeps: int = 4
    rocof_window_s: float = 0.5
    steady_window_s: float = 1.0
    # "disturbed", "coi" or a 0-based area index
    metric_area: str | int = "disturbed"
    fast_init: bool = False
    workers: int = 1
    noise_std_hz: float = 0.0
    # what to do when the uniform-histogram assumptions fail: ignore, warn or error
    assumption_policy: str = "warn"

    def __post_init__(self):
        if self.substeps < 1:
            raise ConfigurationError("simulation.substeps must be >= 1")
        if not self.rocof_window_s > 0 or not self.steady_window_s > 0:
            raise ConfigurationError("metric windows must be positive")
        if self.workers < 1:
            raise ConfigurationError("simulation.workers must be >= 1")
        if self.noise_std_hz < 0:
            raise ConfigurationError("simulation.noise_std must be >= 0")
        if self.assumption_policy not in ("ignore", "warn", "error"):
            raise ConfigurationError("simulation.assumption_policy must be ignore, warn or error")
        if not (isinstance(self.metric_area, int) or self.metric_area in ("disturbed", "coi")):
            raise ConfigurationError("simulation.metric_area must be 'disturbed', 'coi' or an area index")


@dataclass(frozen=True)
class OutputOptions:
    # seconds between histogram snapshots in the event phase, 0 disables them
    histogram_interval_s: float = 0.0
    display_bins: int = 10
    report_format: str = "md"

    def __post_init__(self):
        if self.histogram_interval_s < 0:
            raise ConfigurationError("output.histogram_interval must be >= 0")
        if self.display_bins < 1:
            raise ConfigurationError("output.display_bins must be >= 1")
        if self.report_format not in ("md", "csv"):
            raise ConfigurationError("output.format must be md or csv")


@dataclass(frozen=True)
class Scenario:
    network: gr.NetworkModel
    fleet: fl.FleetParams
    policy: fl.ControlPolicy
    disturbance: gr.Disturbance
    warmup_s: float = 360.0
    horizon_s: float = 20.0
    P_ref_mw: float = 400.0
    seed: int = 0
    simulation: SimulationOptions = field(default_factory=SimulationOptions)
    output: OutputOptions = field(default_factory=OutputOptions)
    # keys filled from defaults when parsed from a file; informational only
    defaulted: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        n = self.network.n_areas
        if len(self.fleet.area_shares) != n:
            raise ConfigurationError(f"fleet.area_shares has {len(self.fleet.area_shares)} entries for {n} areas")
        if not 0 <= self.disturbance.area < n:
            raise ConfigurationError(f"disturbance.area {self.disturbance.area} outside 0..{n - 1}")
        if not 0 <= self.disturbance.onset_s < self.horizon_s:
            raise ConfigurationError("disturbance.onset must lie within the event horizon")
        if self.horizon_s < self.disturbance.onset_s + 15.0:
            raise ConfigurationError("simulation.horizon must be at least disturbance.onset + 15 s")
        if self.warmup_s < 0:
            raise ConfigurationError("simulation.warmup must be >= 0")
        if not self.simulation.fast_init and 0 < self.warmup_s < self.fleet.epoch_s:
            raise ConfigurationError("simulation.warmup must cover at least one epoch (or use fast_init)")
        if self.P_ref_mw < 0:
            raise ConfigurationError("aggregator P_ref must be >= 0")
        if self.P_ref_mw > self.fleet.n_devices * self.fleet.unit_power_mw + 1e-9:
            raise ConfigurationError("P_ref exceeds the power of the whole fleet")
        ma = self.simulation.metric_area
        if isinstance(ma, int) and not 0 <= ma < n:
            raise ConfigurationError(f"simulation.metric_area {ma} outside 0..{n - 1}")

    @property
    def dt(self) -> float:
        return self.fleet.dt_s

    @property
    def warmup_steps(self) -> int:
        return 0 if self.simulation.fast_init else int(round(self.warmup_s / self.dt))

    @property
    def event_steps(self) -> int:
        return int(round(self.horizon_s / self.dt))

    @property
    def fleet_area(self) -> int:
        return int(np.argmax(self.fleet.area_shares))

    def with_eta_max(self, eta_max: float) -> "Scenario":
        return replace(self, policy=replace(self.policy, eta_max=eta_max))

    def subsampled(self, n_devices: int) -> "Scenario":
        return replace(self, fleet=self.fleet.subsample(n_devices))


@dataclass
class TimeSeries:
    """Event-phase trace on a uniform grid; row 0 is the pre-event state at t = 0."""

    t: np.ndarray
    df: np.ndarray          # (rows, areas) Hz
    dpg: np.ndarray         # (rows, areas) MW
    p_pem: np.ndarray       # MW, whole fleet
    eta: np.ndarray
    n_on: np.ndarray
    n_interrupted: np.ndarray
    n_completed: np.ndarray
    n_requests: np.ndarray
    n_accepted: np.ndarray
    tie_flow: np.ndarray    # MW on the first tie line, i -> j
    n_optout: np.ndarray = None
    dp_pem: np.ndarray = None   # (rows, areas) MW load change fed to the grid
    histograms: list = field(default_factory=list)

    @classmethod
    def allocate(cls, rows: int, n_areas: int, dt: float) -> "TimeSeries":
        z = np.zeros(rows)
        zi = np.zeros(rows, dtype=np.int64)
        return cls(np.arange(rows) * dt, np.zeros((rows, n_areas)), np.zeros((rows, n_areas)), z.copy(),
                   z.copy(), zi.copy(), zi.copy(), zi.copy(), zi.copy(), zi.copy(), z.copy(), zi.copy(),
                   np.zeros((rows, n_areas)))

    def frequency(self, which, net: gr.NetworkModel) -> np.ndarray:
        if which == "coi":
            return self.df @ net.inertia / net.inertia.sum()
        return self.df[:, which]

    def rows(self):
        n_areas = self.df.shape[1]
        for k in range(self.t.size):
            yield ([self.t[k]] + list(self.df[k]) + list(self.dpg[k])
                   + [self.p_pem[k], self.eta[k], self.n_on[k], self.n_interrupted[k], self.n_completed[k],
                      self.n_requests[k], self.n_accepted[k], self.tie_flow[k]]), n_areas

    def header(self) -> list[str]:
        n = self.df.shape[1]
        return (["t"] + [f"df_area{i + 1}_hz" for i in range(n)] + [f"dPg{i + 1}_mw" for i in range(n)]
                + list(CSV_COLUMNS[5:]))

    def to_csv(self, fh) -> None:
        fh.write(",".join(self.header()) + "\n")
        for row, _ in self.rows():
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10g}"


@dataclass(frozen=True)
class Metrics:
    eta_max: float
    rocof_mhz_s: float
    nadir_mhz: float
    f_inf_mhz: float
    D_est: float
    D_actual: float
    error_pct: float
    rmse_mhz: float
    regime: str
    interruptions: int
    optouts_event: int
    runtime_s: float = 0.0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class Prepared:
    """Fleet and aggregator state at the end of warm-up."""

    fleet: fl.Fleet
    aggregator: ag.Aggregator
    step: int
    runtime_s: float

    def copy(self) -> "Prepared":
        return Prepared(self.fleet.copy(), self.aggregator.copy(), self.step, self.runtime_s)


@dataclass
class RunResult:
    series: TimeSeries
    metrics: Metrics
    estimate: ag.DampingEstimate
    proportional: TimeSeries
    diagnostics: ag.AssumptionDiagnostics

    def __iter__(self):
        return iter((self.series, self.metrics, self.estimate))


def prepare(s: Scenario, on_step=None) -> Prepared:
    """Initialise the fleet at quasi-steady state and run the warm-up phase.

    ``on_step(step, fleet, aggregator)`` is called after every step.
    """
    t0 = time.perf_counter()
    ref_units = math.floor(s.P_ref_mw / s.fleet.unit_power_mw + 1e-9)
    fleet = fl.Fleet.initialize(s.fleet, ref_units, seed=s.seed, workers=s.simulation.workers)
    agg = ag.Aggregator.from_fleet(fleet, s.P_ref_mw, seed=s.seed)
    zero = np.zeros(s.network.n_areas)
    for k in range(s.warmup_steps):
        res = fleet.step(k, zero, s.policy, draws=True, noise_std=s.simulation.noise_std_hz)
        agg.step(fleet, res, zero, s.policy, k)
        if on_step is not None:
            on_step(k, fleet, agg)
    return Prepared(fleet, agg, s.warmup_steps, time.perf_counter() - t0)


def _tie_flow(state: gr.GridState, net: gr.NetworkModel) -> float:
    if not net.tie_lines:
        return 0.0
    i, j, b = net.tie_lines[0]
    return b * (state.theta[i] - state.theta[j])


def _event_loop(s: Scenario, pem_model) -> TimeSeries:
    """Shared grid loop; ``pem_model(k, df_sensed)`` returns per-area PEM load
    deviation (MW) and a dict of fleet counters for the row."""
    net = s.network
    n_steps = s.event_steps
    ts = TimeSeries.allocate(n_steps + 1, net.n_areas, s.dt)
    state = gr.GridState.zeros(net.n_areas, s.dt)
    for k in range(n_steps):
        t = k * s.dt
        sensed = state.freq.copy()
        dp_pem, row = pem_model(k, sensed)
        load = s.disturbance.load_step(t, net.n_areas)
        state = gr.swing_turbine_step(state, net, load, dp_pem, s.simulation.substeps)
        r = k + 1
        ts.df[r] = state.freq
        ts.dpg[r] = state.gen
        ts.tie_flow[r] = _tie_flow(state, net)
        ts.dp_pem[r] = dp_pem
        for key, value in row.items():
            getattr(ts, key)[r] = value
    return ts


def run_event(s: Scenario, prepared: Prepared, on_step=None):
    """Closed-loop event phase from a warm-up snapshot (the snapshot is not modified)."""
    p = prepared.copy()
    fleet, agg = p.fleet, p.aggregator
    unit = s.fleet.unit_power_mw
    n0 = fleet.n_on_by_area()
    fa = s.fleet_area
    onset_step = int(math.ceil(s.disturbance.onset_s / s.dt - 1e-9))
    hist_every = int(round(s.output.histogram_interval_s / s.dt)) if s.output.histogram_interval_s else 0
    frozen = {}
    snapshots = []

    def model(k, sensed):
        if k == onset_step:
            frozen["xbar"] = agg.xbar_nominal()
            frozen["hist"] = agg.histogram()
            frozen["window"] = list(agg.xbar_window)
        step = p.step + k
        draws = s.fleet.draws_during_event
        res = fleet.step(step, sensed, s.policy, draws=draws, noise_std=s.simulation.noise_std_hz)
        rec = agg.step(fleet, res, sensed, s.policy, step)
        if on_step is not None:
            on_step(step, fleet, agg)
        if hist_every and k % hist_every == 0:
            snapshots.append((k * s.dt, agg.histogram().rebin(s.output.display_bins)))
        dp = (rec.n_on - n0) * unit
        row = dict(p_pem=float(rec.n_on.sum()) * unit, eta=fl.eta(sensed[fa], s.policy),
                   n_on=int(rec.n_on.sum()), n_interrupted=int(res.interruptions.sum()),
                   n_completed=int(res.completions.sum()), n_requests=int(res.requests.sum()),
                   n_accepted=int(rec.accepted.sum()), n_optout=int(res.optouts.sum()))
        return dp, row

    ts = _event_loop(s, model)
    ts.p_pem[0] = float(n0.sum()) * unit
    ts.n_on[0] = int(n0.sum())
    ts.histograms = snapshots
    if "xbar" not in frozen:
        frozen.update(xbar=agg.xbar_nominal(), hist=agg.histogram(), window=list(agg.xbar_window))
    return ts, frozen


def run_proportional_model(s: Scenario, D_PEM: float, pre_event: TimeSeries | None = None) -> TimeSeries:
    """Grid driven by a latched proportional load ``D_PEM * (df - df_db)``
    placed where the fleet sits, instead of the device fleet.

    With ``pre_event`` the fleet's load changes before the disturbance are
    replayed, so both traces coincide up to the onset.
    """
    if D_PEM < 0:
        raise ConfigurationError("D_PEM must be >= 0")
    shares = np.asarray(s.fleet.area_shares) / np.sum(s.fleet.area_shares)
    db = s.policy.df_db
    latched = np.zeros(s.network.n_areas)
    base = s.P_ref_mw
    onset_step = int(math.ceil(s.disturbance.onset_s / s.dt - 1e-9))

    def model(k, sensed):
        if pre_event is not None and k < onset_step:
            dp = pre_event.dp_pem[k + 1].copy()
            return dp, dict(p_pem=base + float(dp.sum()))
        np.maximum(latched, np.maximum(db - sensed, 0.0), out=latched)
        dp = -D_PEM * shares * latched
        return dp, dict(p_pem=base + float(dp.sum()))

    ts = _event_loop(s, model)
    ts.p_pem[0] = base
    return ts


def metric_frequency(ts: TimeSeries, s: Scenario) -> np.ndarray:
    ma = s.simulation.metric_area
    if ma == "coi":
        return ts.frequency("coi", s.network)
    return ts.frequency(s.disturbance.area if ma == "disturbed" else ma, s.network)


def compute_metrics(full: TimeSeries, prop: TimeSeries, s: Scenario, estimate: ag.DampingEstimate | None = None,
                    runtime_s: float = 0.0) -> Metrics:
    """ROCOF over the configured window, nadir, steady deviation over the last
    ``steady_window_s``, actual damping and RMSE against the comparator."""
    if full.t.shape != prop.t.shape or not np.allclose(full.t, prop.t):
        raise MetricError("full and proportional traces are not on the same time grid")
    dt = s.dt
    onset = s.disturbance.onset_s
    k0 = int(round(onset / dt))
    kw = k0 + int(round(s.simulation.rocof_window_s / dt))
    if not 0 <= k0 < full.t.size or kw >= full.t.size:
        raise MetricError(f"disturbance at {onset} s falls outside the {full.t[-1]:.1f} s trace")
    f = metric_frequency(full, s)
    g = metric_frequency(prop, s)
    rocof = (f[kw] - f[k0]) / (full.t[kw] - full.t[k0])
    post = f[k0:]
    sign = -1.0 if s.disturbance.magnitude_mw < 0 else 1.0
    nadir = float(post.min() if sign < 0 else post.max())
    n_tail = max(1, int(round(s.simulation.steady_window_s / dt)))
    f_inf = float(f[-n_tail:].mean())
    dP = abs(s.disturbance.magnitude_mw)
    net = s.network
    D_act = gr.actual_pem_damping(abs(f_inf), dP, net.damping, net.droop, net.n_areas) if f_inf != 0 else math.nan
    D_est = estimate.D_PEM if estimate is not None else math.nan
    err = 100.0 * (D_est - D_act) / D_act if D_act > 0 and D_est > 0 else math.nan
    rmse = float(np.sqrt(np.mean((f[k0:] - g[k0:]) ** 2)))
    n_opt = int(full.n_optout[k0 + 1:].sum()) if full.n_optout is not None else 0
    return Metrics(
        eta_max=s.policy.eta_max, rocof_mhz_s=1e3 * rocof, nadir_mhz=1e3 * nadir, f_inf_mhz=1e3 * f_inf,
        D_est=D_est, D_actual=D_act, error_pct=err, rmse_mhz=1e3 * rmse,
        regime=estimate.regime.value if estimate is not None else "", interruptions=int(full.n_interrupted.sum()),
        optouts_event=n_opt, runtime_s=runtime_s,
    )


def _estimate(s: Scenario, ts: TimeSeries, frozen) -> tuple[ag.DampingEstimate, ag.AssumptionDiagnostics]:
    k0 = int(round(s.disturbance.onset_s / s.dt))
    f_fleet = ts.df[k0:, s.fleet_area]
    nadir = float(f_fleet.min())
    P_rate_kw = s.fleet.rated_power_kw * s.fleet.power_scale
    est = ag.damping_estimate_uniform(s.policy, P_rate_kw, s.fleet.n_bins, frozen["xbar"], nadir)
    diag = ag.assumption_monitor(frozen["hist"], frozen["window"], s.fleet.epoch_s,
                                 eta_nadir=fl.eta(nadir, s.policy), display_bins=s.output.display_bins)
    if s.simulation.fast_init and s.warmup_steps == 0:
        diag = replace(diag, violations=diag.violations + ("no warm-up: nominal mean bin taken from the initializer",))
    policy = s.simulation.assumption_policy
    if diag.violations and policy != "ignore":
        msg = "; ".join(diag.violations)
        if policy == "error":
            raise AssumptionViolation(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    return est.with_violations(diag.violations), diag


def run_scenario(s: Scenario, prepared: Prepared | None = None, on_step=None) -> RunResult:
    """Warm-up (unless a snapshot is given), closed-loop event, proportional
    comparator and metrics."""
    t0 = time.perf_counter()
    if prepared is None:
        prepared = prepare(s, on_step)
    ts, frozen = run_event(s, prepared, on_step)
    est, diag = _estimate(s, ts, frozen)
    prop = run_proportional_model(s, est.D_PEM, pre_event=ts)
    runtime = time.perf_counter() - t0
    return RunResult(ts, compute_metrics(ts, prop, s, est, runtime), est, prop, diag)


def sweep(s: Scenario, eta_values, prepared: Prepared | None = None) -> list[RunResult]:
    """One run per eta_max, all starting from the same warm-up snapshot."""
    eta_values = list(eta_values)
    if not eta_values:
        raise ConfigurationError("sweep needs at least one eta_max value")
    if prepared is None:
        prepared = prepare(s)
    return [run_scenario(s.with_eta_max(e), prepared) for e in eta_values]


def baseline_rocof(s: Scenario) -> float:
    """ROCOF (mHz/s) of the grid without any PEM response."""
    ts = run_proportional_model(s, 0.0)
    f = metric_frequency(ts, s)
    k0 = int(round(s.disturbance.onset_s / s.dt))
    kw = k0 + int(round(s.simulation.rocof_window_s / s.dt))
    return 1e3 * (f[kw] - f[k0]) / (ts.t[kw] - ts.t[k0])


def calibrate_base_power(s: Scenario, target_rocof_mhz_s: float = 104.0, lo: float = 1e3, hi: float = 1e6,
                         xtol: float = 1.0) -> float:
    """Per-area base power S (MW) giving the requested no-PEM ROCOF magnitude."""

    def gap(S):
        return abs(baseline_rocof(replace(s, network=s.network.with_base_power(S)))) - target_rocof_mhz_s

    if gap(lo) * gap(hi) > 0:
        raise ConfigurationError(f"target ROCOF {target_rocof_mhz_s} mHz/s not bracketed by S in [{lo}, {hi}] MW")
    return float(brentq(gap, lo, hi, xtol=xtol))
