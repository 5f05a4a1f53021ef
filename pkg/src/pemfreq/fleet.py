"""Packetized water-heater fleet with the decentralized interruption law.

Per-device logic lives in small jitted scalar helpers. The public per-device
functions (``thermal_step``, ``local_control`` ...) and the vectorized
:class:`Fleet` kernel both call the same helpers.

Inside the fleet the packet timer is stored as an integer age in sample steps:
``t_n = age * dt``. A device accepted at step k has age 0 during step k and
completes once its age reaches ``n_p``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numba
import numpy as np

from . import rng
from .errors import ConfigurationError, DeviceFaultError

# kWh needed to heat one litre of water by one degree C
WATER_KWH_PER_L_C = 4.186 / 3600.0


class Mode(IntEnum):
    STANDBY = 0
    ON = 1
    INTERRUPTED = 2
    OPTED_OUT = 3


class Action(IntEnum):
    NONE = 0
    BLOCK_REQUESTS = 1
    INTERRUPT = 2


@dataclass(frozen=True)
class FleetParams:
    n_devices: int = 400_000
    rated_power_kw: float = 4.5
    epoch_s: float = 180.0
    dt_s: float = 0.1
    mttr_s: float = 180.0
    t_set: float = 52.0
    t_min: float = 48.8
    t_max: float = 55.2
    capacitance_kwh_per_c: float = 0.335
    loss_kw_per_c: float = 0.002
    ambient_c: float = 20.0
    inlet_c: float = 10.0
    draw_rate_per_h: float = 1.0
    draw_mean_l: float = 12.0
    draws_during_event: bool = False
    initial_spread_c: float = 1.5
    optout_hysteresis_c: float = 0.2
    # grid-facing MW weight of one device relative to its physical rating
    power_scale: float = 1.0
    area_shares: tuple[float, ...] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "area_shares", tuple(float(s) for s in self.area_shares))
        if self.n_devices < 0:
            raise ConfigurationError("fleet.n_devices must be >= 0")
        if not self.t_min < self.t_set < self.t_max:
            raise ConfigurationError(
                f"fleet temperatures must satisfy t_min < t_set < t_max, got "
                f"t_min={self.t_min}, t_set={self.t_set}, t_max={self.t_max}"
            )
        for name in ("rated_power_kw", "epoch_s", "dt_s", "mttr_s", "capacitance_kwh_per_c", "power_scale"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"fleet.{name} must be > 0")
        for name in ("loss_kw_per_c", "draw_rate_per_h", "draw_mean_l", "initial_spread_c", "optout_hysteresis_c"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"fleet.{name} must be >= 0")
        ratio = self.epoch_s / self.dt_s
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise ConfigurationError(
                f"fleet.epoch ({self.epoch_s} s) must be an integer multiple of fleet.dt ({self.dt_s} s)"
            )
        shares = np.asarray(self.area_shares)
        if shares.size == 0 or np.any(shares < 0) or not shares.sum() > 0:
            raise ConfigurationError("fleet.area_shares must be non-negative with a positive sum")

    @property
    def n_bins(self) -> int:
        return int(round(self.epoch_s / self.dt_s))

    @property
    def draw_log_q(self) -> float:
        """log of the per-step probability of no draw."""
        return -self.draw_rate_per_h / 3600.0 * self.dt_s

    @property
    def unit_power_mw(self) -> float:
        """Grid-facing power of one ON device, MW."""
        return self.rated_power_kw * self.power_scale / 1000.0

    def subsample(self, n_devices: int) -> "FleetParams":
        """Smaller fleet whose devices are up-weighted to keep fleet MW unchanged."""
        if n_devices <= 0:
            raise ConfigurationError("subsample size must be positive")
        scale = self.power_scale * self.n_devices / n_devices
        return replace(self, n_devices=n_devices, power_scale=scale)


@dataclass(frozen=True)
class ControlPolicy:
    """Under-frequency interruption law. Thresholds are signed deviations (Hz)."""

    eta_max: float = 1.0
    df_db: float = -0.02
    df_max: float = -0.1

    def __post_init__(self):
        if not 0.0 <= self.eta_max <= 1.0:
            raise ConfigurationError(f"policy.eta_max must lie in [0, 1], got {self.eta_max}")
        if not self.df_max < self.df_db < 0:
            raise ConfigurationError(
                f"policy thresholds must satisfy df_max < df_db < 0, got df_max={self.df_max}, df_db={self.df_db}"
            )

    @classmethod
    def from_magnitudes(cls, eta_max, deadband_hz, max_dev_hz) -> "ControlPolicy":
        return cls(eta_max=eta_max, df_db=-abs(deadband_hz), df_max=-abs(max_dev_hz))


@dataclass(frozen=True)
class DeviceState:
    temperature: float
    timer: float = 0.0
    mode: Mode = Mode.STANDBY
    rng_stream: int = 0
    forced_heating: bool = False
    # steps since the sensed frequency first crossed the dead-band, -1 outside an excursion
    excursion_steps: int = -1
    # steps left before a released device may request again
    lockout_steps: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def switch(self) -> int:
        return int(self.mode == Mode.ON)


# ---------------------------------------------------------------- scalar core


@numba.njit(cache=True)
def _mu(T, t_min, t_set, t_max, mttr):
    if T >= t_max:
        return 0.0
    if T <= t_min:
        return math.inf
    return (1.0 / mttr) * ((t_max - T) / (T - t_min)) * ((t_set - t_min) / (t_max - t_set))


@numba.njit(cache=True)
def _request_prob(T, t_min, t_set, t_max, mttr, dt):
    mu = _mu(T, t_min, t_set, t_max, mttr)
    if mu == math.inf:
        return 1.0
    x = mu * dt
    if x < 1e-2:
        # Taylor series of 1 - exp(-x); truncation error below 1e-13 relative
        return x * (1.0 - x / 2.0 * (1.0 - x / 3.0 * (1.0 - x / 4.0 * (1.0 - x / 5.0))))
    return -math.expm1(-x)


@numba.njit(cache=True)
def _eta(df, eta_max, df_db, df_max):
    if df > df_db:
        return 0.0
    if df < df_max:
        return eta_max
    return eta_max * ((df - df_db) / (df_max - df_db))


@numba.njit(cache=True)
def _interrupt_age(eta, n_bins):
    # packets whose onset age is >= this are interrupted; eta=0 gives n_bins (nobody)
    return int(math.ceil((1.0 - eta) * n_bins - 1e-9))


@numba.njit(cache=True)
def _thermal(T, heating, draw_l, dt, p_kw, cap, loss, ambient, inlet):
    T = T + dt / 3600.0 * (p_kw * heating - loss * (T - ambient)) / cap
    if draw_l > 0.0:
        frac = draw_l * WATER_KWH_PER_L_C / cap
        if frac > 1.0:
            frac = 1.0
        T = T - frac * (T - inlet)
    return T


@numba.njit(cache=True)
def _optout(mode, forced, age, T, t_min, t_max, hyst):
    """Returns (mode, forced, age, left_pem_while_on, activated).

    An opted-out device rejoins once it is ``hyst`` inside the comfort band,
    which stops it chattering across the bound it just crossed.
    """
    if mode == 1:
        if T > t_max:
            return 3, False, 0, True, True
        return mode, forced, age, False, False
    if mode == 3:
        if forced:
            if T < t_min + hyst:
                return 3, True, 0, False, False
            return 0, False, 0, False, False
        if T > t_max - hyst:
            return 3, False, 0, False, False
        return 0, False, 0, False, False
    if T < t_min:
        return 3, True, 0, False, True
    return mode, forced, age, False, False


@numba.njit(cache=True)
def _control(mode, age, exc, lock, df, eta_max, df_db, df_max, n_bins):
    """Returns (mode, age, exc, lock, action)."""
    if df > df_db:
        if mode == 2:
            mode = 0
            lock = n_bins
        return mode, age, -1, lock, 0
    exc = exc + 1 if exc >= 0 else 0
    action = 1
    if mode == 1:
        eta = _eta(df, eta_max, df_db, df_max)
        if age - exc >= _interrupt_age(eta, n_bins):
            return 2, 0, exc, lock, 2
    return mode, age, exc, lock, action


@numba.njit(cache=True)
def _timer(mode, age, n_bins):
    """Returns (mode, age, completed)."""
    if mode != 1:
        return mode, 0, False
    age += 1
    if age >= n_bins:
        return 0, 0, True
    return mode, age, False


# ---------------------------------------------------------------- per-device API


def mu_rate(T: float, params: FleetParams) -> float:
    """Request rate (1/s); ``math.inf`` means request with certainty."""
    return _mu(T, params.t_min, params.t_set, params.t_max, params.mttr_s)


def request_probability(T: float, params: FleetParams) -> float:
    return _request_prob(T, params.t_min, params.t_set, params.t_max, params.mttr_s, params.dt_s)


def eta(df: float, policy: ControlPolicy) -> float:
    return _eta(df, policy.eta_max, policy.df_db, policy.df_max)


def interrupt_age_threshold(eta_value: float, n_bins: int) -> int:
    """Smallest packet age (in steps) that gets interrupted at this eta."""
    return _interrupt_age(eta_value, n_bins)


def _age(d: DeviceState, dt: float) -> int:
    return int(round(d.timer / dt))


def timer_step(d: DeviceState, dt: float, epoch: float = 180.0) -> DeviceState:
    n_bins = int(round(epoch / dt))
    mode, age, _ = _timer(int(d.mode), _age(d, dt), n_bins)
    return replace(d, mode=Mode(mode), timer=age * dt)


def local_control(d: DeviceState, df: float, policy: ControlPolicy, params: FleetParams):
    """Apply the dead-band/interruption law to one device.

    Returns ``(new_state, Action)``. Packets are compared against the
    interruption threshold using their age at the start of the current
    excursion, so surviving packets do not drift into the threshold while the
    excursion lasts.
    """
    mode, age, exc, lock, action = _control(
        int(d.mode), _age(d, params.dt_s), d.excursion_steps, d.lockout_steps,
        df, policy.eta_max, policy.df_db, policy.df_max, params.n_bins,
    )
    new = replace(d, mode=Mode(mode), timer=age * params.dt_s, excursion_steps=exc, lockout_steps=lock)
    return new, Action(action)


def thermal_step(d: DeviceState, draw: float, dt: float, params: FleetParams) -> DeviceState:
    """Advance the one-node tank temperature. ``draw`` is the hot-water flow in L/s."""
    if draw < 0:
        raise ConfigurationError("draw rate must be >= 0")
    heating = 1.0 if (d.mode == Mode.ON or d.forced_heating) else 0.0
    T = _thermal(d.temperature, heating, draw * dt, dt, params.rated_power_kw, params.capacitance_kwh_per_c,
                 params.loss_kw_per_c, params.ambient_c, params.inlet_c)
    if not math.isfinite(T):
        raise DeviceFaultError(f"device {d.rng_stream}: non-finite temperature")
    return replace(d, temperature=T)


def opt_out_check(d: DeviceState, params: FleetParams) -> DeviceState:
    mode, forced, age, _, _ = _optout(int(d.mode), d.forced_heating, _age(d, params.dt_s),
                                      d.temperature, params.t_min, params.t_max, params.optout_hysteresis_c)
    return replace(d, mode=Mode(mode), forced_heating=bool(forced), timer=age * params.dt_s)


# ---------------------------------------------------------------- vectorized fleet

# columns of the per-area count matrix returned by the kernel
C_ON, C_INTERRUPTS, C_COMPLETIONS, C_REQUESTS, C_OPTOUTS, C_MODE_INTERRUPTED, C_MODE_OPTED_OUT, C_FORCED = range(8)
N_COUNTS = 8
NEVER = 1 << 62


@numba.njit(cache=True)
def _draw_gap(u, log_q):
    # whole steps until the next draw of a per-step Bernoulli(1 - exp(log_q)) process
    if log_q == 0.0:
        return NEVER
    return int(math.floor(math.log(1.0 - u) / log_q))


@numba.njit(cache=True)
def _init_draws(seed, n, log_q):
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _draw_gap(rng.uniform(seed, i, 0, rng.DRAW_EVENT), log_q)
    return out


@numba.njit(cache=True, nogil=True)
def _fleet_kernel(lo, hi, step, seed, df_area, noise_std,
                  eta_max, df_db, df_max, n_bins, dt,
                  t_min, t_set, t_max, mttr, p_kw, cap, loss, ambient, inlet, hyst,
                  log_q, draw_mean, draws_on,
                  temp, age, mode, forced, exc, lock, area, next_draw,
                  requests, counts, optout_ages):
    fault = -1
    for i in range(lo, hi):
        a = area[i]
        m = mode[i]
        fo = forced[i]
        ag = age[i]
        T = temp[i]

        heating = 1.0 if (m == 1 or fo) else 0.0
        draw = 0.0
        if step >= next_draw[i]:
            # draws due while they are switched off are skipped, not deferred
            if draws_on:
                draw = -draw_mean * math.log(1.0 - rng.uniform(seed, i, step, rng.DRAW_VOLUME))
            next_draw[i] = step + 1 + _draw_gap(rng.uniform(seed, i, step + 1, rng.DRAW_EVENT), log_q)
        T = _thermal(T, heating, draw, dt, p_kw, cap, loss, ambient, inlet)
        if not math.isfinite(T) and fault < 0:
            fault = i

        old_age = ag
        m, fo, ag, left_on, activated = _optout(m, fo, ag, T, t_min, t_max, hyst)
        if left_on:
            optout_ages[a, old_age] += 1
        if activated:
            counts[a, C_OPTOUTS] += 1

        df = df_area[a]
        if noise_std > 0.0:
            df += noise_std * rng.normal(seed, i, step)
        m, ag, ex, lk, action = _control(m, ag, exc[i], lock[i], df, eta_max, df_db, df_max, n_bins)
        if action == 2:
            counts[a, C_INTERRUPTS] += 1

        m, ag, completed = _timer(m, ag, n_bins)
        if completed:
            counts[a, C_COMPLETIONS] += 1

        req = 0
        if m == 0:
            if lk > 0:
                lk -= 1
            elif action == 0:
                p = _request_prob(T, t_min, t_set, t_max, mttr, dt)
                if rng.uniform(seed, i, step, rng.REQUEST) < p:
                    req = 1
                    counts[a, C_REQUESTS] += 1
        requests[i] = req

        if m == 1:
            counts[a, C_ON] += 1
        elif m == 2:
            counts[a, C_MODE_INTERRUPTED] += 1
        elif m == 3:
            counts[a, C_MODE_OPTED_OUT] += 1
            if fo:
                counts[a, C_FORCED] += 1

        temp[i] = T
        age[i] = ag
        mode[i] = m
        forced[i] = fo
        exc[i] = ex
        lock[i] = lk
    return fault


@dataclass
class FleetStepResult:
    """Aggregates of one fleet step, per area (before the aggregator accepts)."""

    counts: np.ndarray
    optout_ages: np.ndarray
    request_idx: np.ndarray

    @property
    def n_on(self):
        return self.counts[:, C_ON]

    @property
    def interruptions(self):
        return self.counts[:, C_INTERRUPTS]

    @property
    def completions(self):
        return self.counts[:, C_COMPLETIONS]

    @property
    def requests(self):
        return self.counts[:, C_REQUESTS]

    @property
    def optouts(self):
        return self.counts[:, C_OPTOUTS]


@dataclass
class Fleet:
    """Struct-of-arrays state for every device."""

    params: FleetParams
    temp: np.ndarray
    age: np.ndarray
    mode: np.ndarray
    forced: np.ndarray
    exc: np.ndarray
    lock: np.ndarray
    area: np.ndarray
    next_draw: np.ndarray
    seed: int = 0
    workers: int = 1
    _requests: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self._requests is None:
            self._requests = np.zeros(self.params.n_devices, dtype=np.uint8)

    @property
    def n_areas(self) -> int:
        return len(self.params.area_shares)

    @classmethod
    def initialize(cls, params: FleetParams, n_on: int, seed: int = 0, workers: int = 1) -> "Fleet":
        """Quasi-steady start: temperatures spread around the set-point and
        ``n_on`` randomly chosen devices ON with timers spread evenly over the
        bins."""
        n = params.n_devices
        if not 0 <= n_on <= n:
            raise ConfigurationError(f"cannot start {n_on} ON devices in a fleet of {n}")
        u = _init_uniforms(seed, n)
        spread = params.initial_spread_c
        lo = max(params.t_set - spread, params.t_min + 1e-6)
        hi = min(params.t_set + spread, params.t_max - 1e-6)
        temp = lo + (hi - lo) * u
        mode = np.zeros(n, dtype=np.int8)
        age = np.zeros(n, dtype=np.int32)
        on = np.random.default_rng(seed).permutation(n)[:n_on]
        mode[on] = Mode.ON
        age[on] = (np.arange(n_on, dtype=np.int64) * params.n_bins) // max(n_on, 1)
        shares = np.asarray(params.area_shares) / np.sum(params.area_shares)
        bounds = np.round(np.cumsum(shares) * n).astype(np.int64)
        area = np.searchsorted(bounds, np.arange(n), side="right").astype(np.int16)
        return cls(
            params=params, temp=temp, age=age, mode=mode,
            forced=np.zeros(n, dtype=np.bool_), exc=np.full(n, -1, dtype=np.int32),
            lock=np.zeros(n, dtype=np.int32), area=area, next_draw=_init_draws(seed, n, params.draw_log_q),
            seed=seed, workers=workers,
        )

    def copy(self) -> "Fleet":
        return Fleet(self.params, self.temp.copy(), self.age.copy(), self.mode.copy(), self.forced.copy(),
                     self.exc.copy(), self.lock.copy(), self.area.copy(), self.next_draw.copy(), self.seed,
                     self.workers)

    def n_on_by_area(self) -> np.ndarray:
        return np.bincount(self.area[self.mode == Mode.ON], minlength=self.n_areas)

    def step(self, step: int, df_area, policy: ControlPolicy, draws: bool = True,
             noise_std: float = 0.0) -> FleetStepResult:
        """Thermal, opt-out, local control, timer and request generation for
        every device. Accepted requests are applied afterwards with
        :meth:`activate`."""
        p = self.params
        df_area = np.ascontiguousarray(df_area, dtype=np.float64)
        if df_area.shape != (self.n_areas,):
            raise ConfigurationError(f"expected {self.n_areas} area frequencies, got {df_area.shape}")
        args = (step, self.seed, df_area, noise_std,
                policy.eta_max, policy.df_db, policy.df_max, p.n_bins, p.dt_s,
                p.t_min, p.t_set, p.t_max, p.mttr_s, p.rated_power_kw, p.capacitance_kwh_per_c,
                p.loss_kw_per_c, p.ambient_c, p.inlet_c, p.optout_hysteresis_c, p.draw_log_q, p.draw_mean_l, bool(draws),
                self.temp, self.age, self.mode, self.forced, self.exc, self.lock, self.area, self.next_draw,
                self._requests)
        n = p.n_devices
        chunks = _chunks(n, self.workers)
        outs = [(np.zeros((self.n_areas, N_COUNTS), np.int64), np.zeros((self.n_areas, p.n_bins), np.int64))
                for _ in chunks]

        def run(c):
            (lo, hi), (cnt, opt) = c
            return _fleet_kernel(lo, hi, *args, cnt, opt)

        if len(chunks) == 1:
            faults = [run((chunks[0], outs[0]))]
        else:
            with ThreadPoolExecutor(max_workers=len(chunks)) as ex:
                faults = list(ex.map(run, zip(chunks, outs)))
        bad = [f for f in faults if f >= 0]
        if bad:
            raise DeviceFaultError(f"device {min(bad)}: non-finite temperature at step {step}")
        counts = sum(o[0] for o in outs)
        optout = sum(o[1] for o in outs)
        if not isinstance(counts, np.ndarray):
            counts = np.zeros((self.n_areas, N_COUNTS), np.int64)
            optout = np.zeros((self.n_areas, p.n_bins), np.int64)
        return FleetStepResult(counts, optout, np.flatnonzero(self._requests))

    def activate(self, idx: np.ndarray) -> None:
        """Turn on devices whose requests were accepted (timer age 0)."""
        self.mode[idx] = Mode.ON
        self.age[idx] = 0

    def timer_histogram(self) -> np.ndarray:
        """Brute-force binning of ON devices by packet age, one row per area."""
        on = self.mode == Mode.ON
        n_bins = self.params.n_bins
        flat = self.area[on].astype(np.int64) * n_bins + self.age[on]
        return np.bincount(flat, minlength=self.n_areas * n_bins).reshape(self.n_areas, n_bins)

    def mode_counts(self) -> dict:
        c = np.bincount(self.mode, minlength=4)
        return {m.name: int(c[m]) for m in Mode}


def _chunks(n, workers):
    workers = max(1, int(workers))
    if n == 0:
        return [(0, 0)]
    edges = np.linspace(0, n, min(workers, n) + 1).astype(np.int64)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


@numba.njit(cache=True)
def _init_uniforms(seed, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = rng.uniform(seed, i, 0, rng.INIT_TEMPERATURE)
    return out


def fleet_step(fleet: Fleet, df_area, policy: ControlPolicy, step: int, draws: bool = True):
    """Advance a fleet one step with every request accepted.

    Convenience wrapper for standalone use; closed-loop runs go through the
    aggregator instead. Returns ``(fleet, requests, interruptions,
    completions, p_pem_mw)`` with counts summed over areas.
    """
    res = fleet.step(step, df_area, policy, draws=draws)
    fleet.activate(res.request_idx)
    p_pem = float(np.count_nonzero(fleet.mode == Mode.ON)) * fleet.params.unit_power_mw
    return (fleet, int(res.requests.sum()), int(res.interruptions.sum()),
            int(res.completions.sum()), p_pem)
