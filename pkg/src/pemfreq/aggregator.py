"""Aggregator side of PEM: request acceptance, timer-histogram bookkeeping and
the uniform-histogram equivalent-damping estimate."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import fleet as fl
from . import rng
from .errors import ConfigurationError, PolicyConfigurationError

# packet completions are neglected when the event lasts under this many seconds
COMPLETION_NEGLECT_S = 30.0


@dataclass
class TimerHistogram:
    """Count of ON devices by packet age; ``bins[i]`` holds packets that are i steps old."""

    bins: np.ndarray

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.int64)
        if self.bins.ndim != 1:
            raise ConfigurationError("histogram must be one-dimensional")
        if np.any(self.bins < 0):
            raise ConfigurationError("histogram bins must be non-negative")

    @classmethod
    def empty(cls, n_bins: int) -> "TimerHistogram":
        return cls(np.zeros(n_bins, dtype=np.int64))

    @property
    def n_bins(self) -> int:
        return self.bins.size

    @property
    def total(self) -> int:
        return int(self.bins.sum())

    def rebin(self, n_display: int = 10) -> np.ndarray:
        """Coarse view for display (e.g. ten bins)."""
        edges = np.linspace(0, self.n_bins, n_display + 1).astype(int)
        return np.add.reduceat(self.bins, edges[:-1])


def histogram_step(x: TimerHistogram, accepted: int) -> tuple[TimerHistogram, int]:
    """Age every packet by one bin and insert ``accepted`` new packets in the
    first bin. Returns the new histogram and the packets leaving the last bin."""
    if accepted < 0:
        raise ConfigurationError("accepted count must be >= 0")
    b = x.bins
    if b.size == 0:
        return TimerHistogram(b.copy()), 0
    completions = int(b[-1])
    new = np.empty_like(b)
    new[1:] = b[:-1]
    new[0] = accepted
    return TimerHistogram(new), completions


def mean_bin(x: TimerHistogram) -> float:
    if x.n_bins == 0:
        return 0.0
    return x.total / x.n_bins


def accept_requests(requests: int, P_ref: float, P_current: float, P_rate: float) -> int:
    """Grant requests up to the headroom below ``P_ref``.

    ``P_ref`` and ``P_current`` are in MW, ``P_rate`` in kW per packet.
    """
    if requests < 0 or P_ref < 0 or P_current < 0 or not P_rate > 0:
        raise ConfigurationError("acceptance inputs must be non-negative with P_rate > 0")
    # small slack so that e.g. 450 MW / 4.5 kW is 100000 packets, not 99999
    headroom = math.floor((P_ref - P_current) * 1000.0 / P_rate + 1e-9)
    return int(min(requests, max(0, headroom)))


class Regime(Enum):
    DEADBAND = "deadband"
    LINEAR = "linear"
    SATURATED = "saturated"


@dataclass(frozen=True)
class DampingEstimate:
    D_PEM: float
    regime: Regime
    xbar_nom: float
    n_bins: int
    P_rate_kw: float
    policy: fl.ControlPolicy
    df_nadir: float
    violations: tuple[str, ...] = ()

    def with_violations(self, violations) -> "DampingEstimate":
        return DampingEstimate(self.D_PEM, self.regime, self.xbar_nom, self.n_bins, self.P_rate_kw,
                               self.policy, self.df_nadir, tuple(violations))


def damping_estimate_uniform(policy: fl.ControlPolicy, P_rate_kw: float, n_bins: int, xbar_nom: float,
                             df_nadir: float) -> DampingEstimate:
    """Equivalent damping (MW/Hz) of a fleet with a uniform timer histogram."""
    db, dmax = policy.df_db, policy.df_max
    if not db - dmax > 0:
        raise PolicyConfigurationError(f"df_db - df_max must be positive, got {db - dmax}")
    gain_mw = P_rate_kw / 1000.0 * policy.eta_max * n_bins * xbar_nom
    if df_nadir > db:
        d, regime = 0.0, Regime.DEADBAND
    elif df_nadir >= dmax:
        d, regime = gain_mw / (db - dmax), Regime.LINEAR
    else:
        d, regime = gain_mw / (db - df_nadir), Regime.SATURATED
    return DampingEstimate(d, regime, xbar_nom, n_bins, P_rate_kw, policy, df_nadir)


def pem_load_drop(x: TimerHistogram, eta: float, P_rate_kw: float) -> tuple[float, float]:
    """Load shed (MW) when a fraction ``eta`` of packets, oldest first, is
    interrupted. Returns ``(exact, uniform_approximation)``."""
    if not 0.0 <= eta <= 1.0:
        raise ConfigurationError(f"eta must lie in [0, 1], got {eta}")
    thr = fl.interrupt_age_threshold(eta, x.n_bins)
    exact = P_rate_kw / 1000.0 * float(x.bins[thr:].sum())
    approx = P_rate_kw / 1000.0 * eta * x.total
    return exact, approx


@dataclass(frozen=True)
class AssumptionDiagnostics:
    uniformity: float
    drift: float
    eta_threshold: float
    violations: tuple[str, ...]

    @property
    def eta_threshold_text(self) -> str:
        return f"eta > {self.eta_threshold:.3f}"


def assumption_monitor(x: TimerHistogram, history, epoch_s: float, eta_nadir: float | None = None,
                       uniformity_tol: float = 0.1, drift_tol: float = 0.05,
                       display_bins: int = 10) -> AssumptionDiagnostics:
    """Check the uniform-histogram assumptions behind the damping estimate.

    ``uniformity`` is the largest relative deviation of a display bin from the
    mean (Poisson noise makes single fine bins meaningless). ``drift`` is the
    relative range of the mean-bin ``history`` over the window supplied.
    """
    coarse = x.rebin(display_bins) if x.n_bins >= display_bins else x.bins
    m = coarse.mean() if coarse.size else 0.0
    uniformity = float(np.max(np.abs(coarse - m)) / m) if m > 0 else 0.0
    hist = np.asarray(list(history), dtype=float)
    drift = 0.0
    if hist.size and hist.mean() > 0:
        drift = float((hist.max() - hist.min()) / hist.mean())
    threshold = COMPLETION_NEGLECT_S / epoch_s
    violations = []
    if uniformity > uniformity_tol:
        violations.append(f"timer histogram not uniform (deviation {uniformity:.3f} > {uniformity_tol})")
    if drift > drift_tol:
        violations.append(f"mean bin drifts by {drift:.3f} > {drift_tol} over the window")
    if eta_nadir is not None and 0 < eta_nadir <= threshold:
        violations.append(f"eta at nadir {eta_nadir:.3f} does not exceed {threshold:.3f}; completions not negligible")
    return AssumptionDiagnostics(uniformity, drift, threshold, tuple(violations))


@dataclass
class StepRecord:
    accepted: np.ndarray
    interrupted: np.ndarray
    completions: np.ndarray
    n_on: np.ndarray


@dataclass
class Aggregator:
    """Per-area timer histograms kept in lock-step with the fleet.

    The aggregator knows the policy, so during an under-frequency excursion it
    removes the same packets the devices interrupt. Opted-out devices report
    their packet age when they leave.
    """

    params: fl.FleetParams
    P_ref: float
    seed: int = 0
    hist: np.ndarray = None
    excursion: np.ndarray = None
    xbar_window: deque = field(default=None, repr=False)

    def __post_init__(self):
        n_areas = len(self.params.area_shares)
        if self.hist is None:
            self.hist = np.zeros((n_areas, self.params.n_bins), dtype=np.int64)
        if self.excursion is None:
            self.excursion = np.full(n_areas, -1, dtype=np.int64)
        if self.xbar_window is None:
            self.xbar_window = deque(maxlen=self.params.n_bins)
        self.ref_units = math.floor(self.P_ref / self.params.unit_power_mw + 1e-9)

    @classmethod
    def from_fleet(cls, fleet: fl.Fleet, P_ref: float, seed: int = 0) -> "Aggregator":
        agg = cls(fleet.params, P_ref, seed)
        agg.hist = fleet.timer_histogram().astype(np.int64)
        return agg

    def copy(self) -> "Aggregator":
        return Aggregator(self.params, self.P_ref, self.seed, self.hist.copy(), self.excursion.copy(),
                          deque(self.xbar_window, maxlen=self.xbar_window.maxlen))

    def histogram(self, area: int | None = None) -> TimerHistogram:
        return TimerHistogram(self.hist.sum(axis=0) if area is None else self.hist[area])

    def mean_bin(self) -> float:
        return mean_bin(self.histogram())

    def xbar_nominal(self) -> float:
        """Mean bin averaged over the last epoch of history."""
        if not self.xbar_window:
            return self.mean_bin()
        return float(np.mean(self.xbar_window))

    def _mirror_control(self, df_area, policy: fl.ControlPolicy) -> np.ndarray:
        removed = np.zeros(self.hist.shape[0], dtype=np.int64)
        n_bins = self.params.n_bins
        for a, df in enumerate(df_area):
            if df > policy.df_db:
                self.excursion[a] = -1
                continue
            self.excursion[a] = self.excursion[a] + 1 if self.excursion[a] >= 0 else 0
            thr = fl.interrupt_age_threshold(fl.eta(df, policy), n_bins) + self.excursion[a]
            if thr < n_bins:
                removed[a] = self.hist[a, thr:].sum()
                self.hist[a, thr:] = 0
        return removed

    def step(self, fleet: fl.Fleet, res: fl.FleetStepResult, df_area, policy: fl.ControlPolicy,
             step: int) -> StepRecord:
        """Mirror the fleet step, accept requests and activate the winners."""
        self.hist -= res.optout_ages
        interrupted = self._mirror_control(df_area, policy)
        completions = self.hist[:, -1].copy()
        self.hist[:, 1:] = self.hist[:, :-1]
        self.hist[:, 0] = 0

        n_on = res.n_on.copy()
        idx = res.request_idx
        q = min(idx.size, max(0, self.ref_units - int(n_on.sum())))
        accepted = np.zeros_like(n_on)
        if q > 0:
            if q < idx.size:
                # rotate the sorted request list by a per-step offset so no device index is favoured
                off = int(rng.hash64(self.seed, 0, step, rng.ACCEPT_OFFSET) % np.uint64(idx.size))
                idx = np.concatenate((idx[off:], idx[:off]))[:q]
            fleet.activate(idx)
            accepted = np.bincount(fleet.area[idx], minlength=n_on.size).astype(np.int64)
            self.hist[:, 0] = accepted
            n_on += accepted
        self.xbar_window.append(self.mean_bin())
        return StepRecord(accepted, interrupted, completions, n_on)
