"""Scenario files: YAML documents whose physical values carry units.

A value such as ``"100 ms"`` or ``"1/5000 Hz/MW"`` is checked against the
dimension the key expects and converted to the unit used internally. Unknown
keys are rejected; omitted keys fall back to documented defaults and are
listed in ``Scenario.defaulted``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

import yaml

from . import fleet as fl
from . import grid as gr
from .engine import OutputOptions, Scenario, SimulationOptions
from .errors import ConfigurationError

SCHEMA_VERSION = 1

# unit -> (dimension, scale relative to the dimension's base unit)
UNITS = {
    "s": ("time", 1.0), "ms": ("time", 1e-3), "min": ("time", 60.0), "h": ("time", 3600.0),
    "Hz": ("frequency", 1.0), "mHz": ("frequency", 1e-3),
    "W": ("power", 1e-6), "kW": ("power", 1e-3), "MW": ("power", 1.0), "GW": ("power", 1e3),
    "MW/Hz": ("damping", 1.0), "GW/Hz": ("damping", 1e3),
    "Hz/MW": ("droop", 1.0), "mHz/MW": ("droop", 1e-3),
    "MW/rad": ("susceptance", 1.0),
    "degC": ("temperature", 1.0), "C": ("temperature", 1.0), "°C": ("temperature", 1.0),
    "kWh/degC": ("heat_capacity", 1.0), "kWh/C": ("heat_capacity", 1.0),
    "kW/degC": ("loss", 1.0), "W/degC": ("loss", 1e-3), "kW/C": ("loss", 1.0),
    "L": ("volume", 1.0),
    "1/h": ("rate", 1.0), "1/s": ("rate", 3600.0),
}

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_VALUE_RE = re.compile(rf"^\s*({_NUMBER})(?:\s*/\s*({_NUMBER}))?\s*(.*?)\s*$")


@dataclass(frozen=True)
class Field:
    kind: str               # a dimension name, or: count, fraction, bool, str, fractions, metric_area
    unit: str | None = None  # internal unit for dimensional kinds
    default: object = None
    required: bool = False


def _f(kind, unit=None, default=None):
    return Field(kind, unit, default, default is None)


AREA = {
    "H": _f("time", "s"), "S": _f("power", "MW"), "D": _f("damping", "MW/Hz"), "R": _f("droop", "Hz/MW"),
    "tau": _f("time", "s", 0.5), "f0": _f("frequency", "Hz", gr.NOMINAL_FREQUENCY_HZ),
}
TIE = {"from": _f("count"), "to": _f("count"), "B": _f("susceptance", "MW/rad", 2000.0)}

SECTIONS = {
    "fleet": {
        "n_devices": _f("count", None, 400_000),
        "rated_power": _f("power", "kW", 4.5),
        "epoch": _f("time", "s", 180.0),
        "dt": _f("time", "s", 0.1),
        "mttr": _f("time", "s", 180.0),
        "t_set": _f("temperature", "degC", 52.0),
        "t_min": _f("temperature", "degC", 48.8),
        "t_max": _f("temperature", "degC", 55.2),
        "capacitance": _f("heat_capacity", "kWh/degC", 0.335),
        "loss": _f("loss", "kW/degC", 0.002),
        "ambient": _f("temperature", "degC", 20.0),
        "inlet": _f("temperature", "degC", 10.0),
        "draw_rate": _f("rate", "1/h", 1.0),
        "draw_mean": _f("volume", "L", 12.0),
        "draws_during_event": _f("bool", None, False),
        "initial_spread": _f("temperature", "degC", 1.5),
        "optout_hysteresis": _f("temperature", "degC", 0.2),
        "power_scale": _f("fraction", None, 1.0),
        "area_shares": _f("fractions", None, (0.0, 1.0)),
    },
    "policy": {
        "eta_max": _f("fraction", None, 1.0),
        "deadband": _f("frequency", "Hz", 0.02),
        "max_deviation": _f("frequency", "Hz", 0.1),
    },
    "disturbance": {
        "area": _f("count"),
        "magnitude": _f("power", "MW"),
        "onset": _f("time", "s"),
    },
    "simulation": {
        "warmup": _f("time", "s", 360.0),
        "horizon": _f("time", "s", 20.0),
        "p_ref": _f("power", "MW", 400.0),
        "seed": _f("count", None, 0),
        "substeps": _f("count", None, 4),
        "rocof_window": _f("time", "s", 0.5),
        "steady_window": _f("time", "s", 1.0),
        "metric_area": _f("metric_area", None, "disturbed"),
        "fast_init": _f("bool", None, False),
        "workers": _f("count", None, 1),
        "sensor_noise": _f("frequency", "Hz", 0.0),
        "assumption_policy": _f("str", None, "warn"),
    },
    "output": {
        "histogram_interval": _f("time", "s", 0.0),
        "display_bins": _f("count", None, 10),
        "format": _f("str", None, "md"),
    },
}
TOP_LEVEL = ("version", "network", "fleet", "policy", "disturbance", "simulation", "output")


def parse_quantity(text, kind: str, unit: str, key: str) -> float:
    """Convert ``"<number>[/<number>] <unit>"`` to ``unit``."""
    if isinstance(text, bool) or not isinstance(text, (str, int, float)):
        raise ConfigurationError(f"{key}: expected a quantity with a unit, got {text!r}")
    m = _VALUE_RE.match(str(text))
    if not m:
        raise ConfigurationError(f"{key}: cannot parse quantity {text!r}")
    num, den, u = m.groups()
    if not u:
        raise ConfigurationError(f"{key}: missing unit (expected {kind}, e.g. '{unit}')")
    if u not in UNITS:
        raise ConfigurationError(f"{key}: unknown unit {u!r}")
    dim, scale = UNITS[u]
    if dim != kind:
        raise ConfigurationError(f"{key}: unit {u!r} is a {dim}, expected a {kind}")
    value = float(num) if den is None else float(Fraction(num) / Fraction(den))
    target = UNITS[unit][1]
    return value if scale == target else value * scale / target


def _number(text, key: str) -> float:
    if isinstance(text, bool):
        raise ConfigurationError(f"{key}: expected a number, got {text!r}")
    if isinstance(text, (int, float)):
        return float(text)
    m = _VALUE_RE.match(str(text))
    if not m or m.group(3):
        raise ConfigurationError(f"{key}: expected a dimensionless number, got {text!r}")
    num, den, _ = m.groups()
    return float(num) if den is None else float(Fraction(num) / Fraction(den))


def _convert(value, f: Field, key: str):
    k = f.kind
    if k == "count":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{key}: expected an integer, got {value!r}")
        return value
    if k == "fraction":
        return _number(value, key)
    if k == "fractions":
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{key}: expected a list of numbers")
        return tuple(_number(v, key) for v in value)
    if k == "bool":
        if not isinstance(value, bool):
            raise ConfigurationError(f"{key}: expected true or false, got {value!r}")
        return value
    if k == "str":
        if not isinstance(value, str):
            raise ConfigurationError(f"{key}: expected a string, got {value!r}")
        return value
    if k == "metric_area":
        if value in ("disturbed", "coi"):
            return value
        if isinstance(value, int) and not isinstance(value, bool):
            return value - 1
        raise ConfigurationError(f"{key}: expected 'disturbed', 'coi' or a 1-based area number")
    return parse_quantity(value, k, f.unit, key)


def _section(raw, name: str, fields: dict, defaulted: list) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{name}: expected a mapping")
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigurationError(f"{name}: unknown key(s) {', '.join(f'{name}.{u}' for u in unknown)}")
    out = {}
    for key, f in fields.items():
        full = f"{name}.{key}"
        if key in raw:
            out[key] = _convert(raw[key], f, full)
        elif f.required:
            raise ConfigurationError(f"missing required key {full}")
        else:
            out[key] = f.default
            defaulted.append(full)
    return out


def scenario_from_dict(doc) -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigurationError("scenario file must be a mapping")
    unknown = sorted(set(doc) - set(TOP_LEVEL))
    if unknown:
        raise ConfigurationError(f"unknown top-level key(s): {', '.join(unknown)}")
    if "version" not in doc:
        raise ConfigurationError("missing required key version")
    if doc["version"] != SCHEMA_VERSION:
        raise ConfigurationError(f"version: unsupported schema version {doc['version']!r} (expected {SCHEMA_VERSION})")
    defaulted: list[str] = []

    net_doc = doc.get("network")
    if not isinstance(net_doc, dict):
        raise ConfigurationError("missing required section network")
    unknown = sorted(set(net_doc) - {"areas", "tie_lines"})
    if unknown:
        raise ConfigurationError(f"network: unknown key(s) {', '.join('network.' + u for u in unknown)}")
    areas_doc = net_doc.get("areas")
    if not isinstance(areas_doc, list) or not areas_doc:
        raise ConfigurationError("network.areas must be a non-empty list")
    areas = []
    for i, a in enumerate(areas_doc):
        v = _section(a, f"network.areas[{i + 1}]", AREA, defaulted)
        try:
            areas.append(gr.AreaParams(inertia_constant_H=v["H"], base_power_S=v["S"], damping_D=v["D"],
                                       droop_R=v["R"], turbine_tau=v["tau"], f0=v["f0"]))
        except ConfigurationError as e:
            raise ConfigurationError(f"network.areas[{i + 1}]: {e}") from None
    ties = []
    for i, t in enumerate(net_doc.get("tie_lines") or []):
        v = _section(t, f"network.tie_lines[{i + 1}]", TIE, defaulted)
        ties.append((v["from"] - 1, v["to"] - 1, v["B"]))
    network = gr.NetworkModel(tuple(areas), tuple(ties))

    fv = _section(doc.get("fleet"), "fleet", SECTIONS["fleet"], defaulted)
    fleet = fl.FleetParams(
        n_devices=fv["n_devices"], rated_power_kw=fv["rated_power"], epoch_s=fv["epoch"], dt_s=fv["dt"],
        mttr_s=fv["mttr"], t_set=fv["t_set"], t_min=fv["t_min"], t_max=fv["t_max"],
        capacitance_kwh_per_c=fv["capacitance"], loss_kw_per_c=fv["loss"], ambient_c=fv["ambient"],
        inlet_c=fv["inlet"], draw_rate_per_h=fv["draw_rate"], draw_mean_l=fv["draw_mean"],
        draws_during_event=fv["draws_during_event"], initial_spread_c=fv["initial_spread"],
        optout_hysteresis_c=fv["optout_hysteresis"], power_scale=fv["power_scale"],
        area_shares=fv["area_shares"],
    )
    pv = _section(doc.get("policy"), "policy", SECTIONS["policy"], defaulted)
    policy = fl.ControlPolicy.from_magnitudes(pv["eta_max"], pv["deadband"], pv["max_deviation"])
    dv = _section(doc.get("disturbance"), "disturbance", SECTIONS["disturbance"], defaulted)
    disturbance = gr.Disturbance(dv["area"] - 1, dv["magnitude"], dv["onset"])
    sv = _section(doc.get("simulation"), "simulation", SECTIONS["simulation"], defaulted)
    sim = SimulationOptions(
        substeps=sv["substeps"], rocof_window_s=sv["rocof_window"], steady_window_s=sv["steady_window"],
        metric_area=sv["metric_area"], fast_init=sv["fast_init"], workers=sv["workers"],
        noise_std_hz=sv["sensor_noise"], assumption_policy=sv["assumption_policy"],
    )
    ov = _section(doc.get("output"), "output", SECTIONS["output"], defaulted)
    out = OutputOptions(histogram_interval_s=ov["histogram_interval"], display_bins=ov["display_bins"],
                        report_format=ov["format"])
    return Scenario(network, fleet, policy, disturbance, warmup_s=sv["warmup"], horizon_s=sv["horizon"],
                    P_ref_mw=sv["p_ref"], seed=sv["seed"], simulation=sim, output=out,
                    defaulted=tuple(defaulted))


def parse_scenario(path) -> Scenario:
    """Read and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigurationError(f"cannot read scenario {path}: {e}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"{path}: invalid YAML: {e}") from None
    return scenario_from_dict(doc)


def bundled_scenario_path(name: str = "tableIII.scenario") -> Path:
    return Path(str(resources.files("pemfreq") / "scenarios" / name))


def load_bundled(name: str = "tableIII.scenario") -> Scenario:
    return parse_scenario(bundled_scenario_path(name))


def _q(value: float, unit: str) -> str:
    return f"{value!r} {unit}"


def scenario_to_dict(s: Scenario) -> dict:
    """Fully explicit document; every value is written in its internal unit."""
    f, p, d, sim, out = s.fleet, s.policy, s.disturbance, s.simulation, s.output
    return {
        "version": SCHEMA_VERSION,
        "network": {
            "areas": [
                {"H": _q(a.inertia_constant_H, "s"), "S": _q(a.base_power_S, "MW"), "D": _q(a.damping_D, "MW/Hz"),
                 "R": _q(a.droop_R, "Hz/MW"), "tau": _q(a.turbine_tau, "s"), "f0": _q(a.f0, "Hz")}
                for a in s.network.areas
            ],
            "tie_lines": [{"from": i + 1, "to": j + 1, "B": _q(b, "MW/rad")} for i, j, b in s.network.tie_lines],
        },
        "fleet": {
            "n_devices": f.n_devices, "rated_power": _q(f.rated_power_kw, "kW"), "epoch": _q(f.epoch_s, "s"),
            "dt": _q(f.dt_s, "s"), "mttr": _q(f.mttr_s, "s"), "t_set": _q(f.t_set, "degC"),
            "t_min": _q(f.t_min, "degC"), "t_max": _q(f.t_max, "degC"),
            "capacitance": _q(f.capacitance_kwh_per_c, "kWh/degC"), "loss": _q(f.loss_kw_per_c, "kW/degC"),
            "ambient": _q(f.ambient_c, "degC"), "inlet": _q(f.inlet_c, "degC"),
            "draw_rate": _q(f.draw_rate_per_h, "1/h"), "draw_mean": _q(f.draw_mean_l, "L"),
            "draws_during_event": f.draws_during_event, "initial_spread": _q(f.initial_spread_c, "degC"),
            "optout_hysteresis": _q(f.optout_hysteresis_c, "degC"), "power_scale": f.power_scale,
            "area_shares": list(f.area_shares),
        },
        "policy": {"eta_max": p.eta_max, "deadband": _q(-p.df_db, "Hz"), "max_deviation": _q(-p.df_max, "Hz")},
        "disturbance": {"area": d.area + 1, "magnitude": _q(d.magnitude_mw, "MW"), "onset": _q(d.onset_s, "s")},
        "simulation": {
            "warmup": _q(s.warmup_s, "s"), "horizon": _q(s.horizon_s, "s"), "p_ref": _q(s.P_ref_mw, "MW"),
            "seed": s.seed, "substeps": sim.substeps, "rocof_window": _q(sim.rocof_window_s, "s"),
            "steady_window": _q(sim.steady_window_s, "s"),
            "metric_area": sim.metric_area if isinstance(sim.metric_area, str) else sim.metric_area + 1,
            "fast_init": sim.fast_init, "workers": sim.workers, "sensor_noise": _q(sim.noise_std_hz, "Hz"),
            "assumption_policy": sim.assumption_policy,
        },
        "output": {"histogram_interval": _q(out.histogram_interval_s, "s"), "display_bins": out.display_bins,
                   "format": out.report_format},
    }


def emit_scenario(s: Scenario, annotate_defaults: bool = True) -> str:
    """YAML text for ``s``; keys that were filled from defaults are listed in a header comment."""
    text = yaml.safe_dump(scenario_to_dict(s), sort_keys=False, allow_unicode=True)
    if not annotate_defaults or not s.defaulted:
        return text
    header = "".join(f"# defaulted: {k}\n" for k in s.defaulted)
    return header + text
