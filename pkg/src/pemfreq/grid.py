"""Multi-area swing and turbine-governor dynamics with DC tie-line coupling.

All frequency quantities are deviations in Hz. Inertia is therefore carried in
MW*s/Hz, damping in MW/Hz and droop in Hz/MW. Tie-line angles stay in radians,
so the angle derivative picks up the 2*pi factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, NumericalInstabilityError, UndefinedDampingError

NOMINAL_FREQUENCY_HZ = 60.0


@dataclass(frozen=True)
class AreaParams:
    """Aggregate generation/load constants of one control area.

    ``inertia_M`` is derived from ``H``, ``S`` and ``f0`` (M = 2*H*S/f0) so the
    two representations cannot disagree.
    """

    inertia_constant_H: float
    base_power_S: float
    damping_D: float
    droop_R: float
    turbine_tau: float
    f0: float = NOMINAL_FREQUENCY_HZ

    def __post_init__(self):
        for name in ("inertia_constant_H", "base_power_S", "damping_D", "droop_R", "turbine_tau", "f0"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"area parameter {name} must be finite and > 0, got {value!r}")

    @property
    def inertia_M(self) -> float:
        return 2.0 * self.inertia_constant_H * self.base_power_S / self.f0

    @classmethod
    def from_inertia(cls, inertia_M, inertia_constant_H=5.0, f0=NOMINAL_FREQUENCY_HZ, **kwargs) -> "AreaParams":
        """Build an area from M directly; S is back-computed."""
        base = inertia_M * f0 / (2.0 * inertia_constant_H)
        return cls(inertia_constant_H=inertia_constant_H, base_power_S=base, f0=f0, **kwargs)


@dataclass(frozen=True)
class NetworkModel:
    areas: tuple[AreaParams, ...]
    tie_lines: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "areas", tuple(self.areas))
        object.__setattr__(self, "tie_lines", tuple((int(i), int(j), float(b)) for i, j, b in self.tie_lines))
        n = len(self.areas)
        if n == 0:
            raise ConfigurationError("network needs at least one area")
        seen = set()
        for i, j, b in self.tie_lines:
            if not (0 <= i < n and 0 <= j < n):
                raise ConfigurationError(f"tie line ({i}, {j}) references a missing area")
            if i == j:
                raise ConfigurationError(f"tie line ({i}, {j}) is a self-loop")
            if not (math.isfinite(b) and b > 0):
                raise ConfigurationError(f"tie line ({i}, {j}) susceptance must be > 0, got {b!r}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ConfigurationError(f"tie line {key} listed more than once")
            seen.add(key)
        if not _connected(n, seen):
            raise ConfigurationError("network graph is not connected")

    @property
    def n_areas(self) -> int:
        return len(self.areas)

    @property
    def inertia(self) -> np.ndarray:
        return np.array([a.inertia_M for a in self.areas])

    @property
    def damping(self) -> np.ndarray:
        return np.array([a.damping_D for a in self.areas])

    @property
    def droop(self) -> np.ndarray:
        return np.array([a.droop_R for a in self.areas])

    @property
    def tau(self) -> np.ndarray:
        return np.array([a.turbine_tau for a in self.areas])

    def with_base_power(self, base_power_S: float) -> "NetworkModel":
        return replace(self, areas=tuple(replace(a, base_power_S=base_power_S) for a in self.areas))


def _connected(n, edges):
    if n == 1:
        return True
    adj = {k: set() for k in range(n)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    stack, seen = [0], {0}
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == n


@dataclass(frozen=True)
class Disturbance:
    """Load-side power step. Negative magnitude means generation is lost."""

    area: int
    magnitude_mw: float
    onset_s: float

    def load_step(self, t: float, n_areas: int) -> np.ndarray:
        out = np.zeros(n_areas)
        # a -500 MW generation loss is the same as +500 MW of load
        if t >= self.onset_s - 1e-9:
            out[self.area] = -self.magnitude_mw
        return out


@dataclass(frozen=True)
class GridState:
    theta: np.ndarray
    freq: np.ndarray
    gen: np.ndarray
    setpoint: np.ndarray
    k: int = 0
    dt: float = 0.1

    @classmethod
    def zeros(cls, n_areas: int, dt: float = 0.1) -> "GridState":
        z = np.zeros(n_areas)
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), 0, dt)

    @property
    def t(self) -> float:
        return self.k * self.dt


def _check_dims(state: GridState, net: NetworkModel, *arrays):
    n = net.n_areas
    for arr in (state.theta, state.freq, state.gen, state.setpoint, *arrays):
        if np.shape(arr) != (n,):
            raise ConfigurationError(f"expected per-area vectors of length {n}, got shape {np.shape(arr)}")


def tie_line_flows(state: GridState, net: NetworkModel) -> np.ndarray:
    """Net tie-line injection into each area, MW."""
    _check_dims(state, net)
    flows = np.zeros(net.n_areas)
    for i, j, b in net.tie_lines:
        p = b * (state.theta[i] - state.theta[j])
        flows[j] += p
        flows[i] -= p
    return flows


def swing_turbine_step(state: GridState, net: NetworkModel, load, pem, substeps: int = 1) -> GridState:
    """Advance the grid by one sample step ``state.dt`` with forward Euler.

    ``load`` and ``pem`` are per-area load changes in MW (positive = more
    load). The step is split into ``substeps`` equal Euler sub-steps.
    """
    load = np.asarray(load, dtype=float)
    pem = np.asarray(pem, dtype=float)
    _check_dims(state, net, load, pem)
    if not state.dt > 0:
        raise ConfigurationError(f"step must be positive, got {state.dt}")
    if not (np.all(np.isfinite(load)) and np.all(np.isfinite(pem))):
        raise ConfigurationError("load injections must be finite")
    m, d, r, tau = net.inertia, net.damping, net.droop, net.tau
    h = state.dt / substeps
    theta, f, pg, pset = state.theta.copy(), state.freq.copy(), state.gen.copy(), state.setpoint
    two_pi = 2.0 * math.pi
    # overflow is reported below as an instability, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(substeps):
            flows = np.zeros_like(theta)
            for i, j, b in net.tie_lines:
                p = b * (theta[i] - theta[j])
                flows[j] += p
                flows[i] -= p
            dtheta = two_pi * f
            dfreq = (pg - load - pem - d * f + flows) / m
            dgen = (pset - pg - f / r) / tau
            theta = theta + h * dtheta
            f = f + h * dfreq
            pg = pg + h * dgen
    new = GridState(theta, f, pg, pset.copy(), state.k + 1, state.dt)
    bad = ~(np.isfinite(theta) & np.isfinite(f) & np.isfinite(pg))
    if bad.any():
        area = int(np.flatnonzero(bad)[0])
        raise NumericalInstabilityError(f"non-finite state in area {area + 1} at step {new.k}")
    return new


def coi_frequency(freq, net: NetworkModel) -> float:
    """Inertia-weighted (centre-of-inertia) frequency deviation."""
    m = net.inertia
    return float(np.dot(m, freq) / m.sum())


def _stiffness(D, R, n_areas):
    D = np.broadcast_to(np.asarray(D, dtype=float), (n_areas,))
    R = np.broadcast_to(np.asarray(R, dtype=float), (n_areas,))
    if np.any(R <= 0):
        raise ConfigurationError("droop must be positive")
    return float(np.sum(D + 1.0 / R))


def steady_state_deviation(dP_G, D, R, D_PEM=0.0, n_areas: int = 2) -> float:
    """Steady-state frequency deviation magnitude (Hz) after a power imbalance.

    With scalar ``D``/``R`` every one of the ``n_areas`` areas is assumed identical.
    """
    denom = D_PEM + _stiffness(D, R, n_areas)
    if not denom > 0:
        raise ConfigurationError(f"non-positive total stiffness {denom}")
    return dP_G / denom


def actual_pem_damping(f_inf, dP_G, D, R, n_areas: int = 2) -> float:
    """Inverse of :func:`steady_state_deviation`: the PEM damping implied by a
    measured steady deviation."""
    if f_inf == 0:
        raise UndefinedDampingError("steady-state deviation is zero; damping undefined")
    return dP_G / f_inf - _stiffness(D, R, n_areas)


def initial_rocof(dP, net: NetworkModel) -> float:
    """Centre-of-inertia df/dt (Hz/s) right after a load step dP on a system at rest."""
    return -dP / float(net.inertia.sum())
