"""Tables and run reports."""
from __future__ import annotations

import io
import json
import math

from .engine import Metrics, Scenario
from .scenario import emit_scenario

RESPONSE_COLUMNS = ("eta_max", "ROCOF (mHz/s)", "nadir (mHz)", "steady dev. (mHz)")
DAMPING_COLUMNS = ("eta_max", "D_PEM est. (MW/Hz)", "D_PEM actual (MW/Hz)", "error (%)", "RMSE (mHz)", "regime")
# metrics written to machine-readable outputs; wall-clock time is left out so files are reproducible
RECORD_FIELDS = ("eta_max", "rocof_mhz_s", "nadir_mhz", "f_inf_mhz", "D_est", "D_actual", "error_pct", "rmse_mhz",
                 "regime", "interruptions", "optouts_event")


def _num(x, fmt="{:.1f}") -> str:
    if isinstance(x, float) and math.isnan(x):
        return "n/a"
    return fmt.format(x)


def _md(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def response_table_md(metrics: list[Metrics]) -> str:
    """Frequency-response magnitudes, one row per eta_max."""
    rows = [(f"{m.eta_max:.2f}", _num(abs(m.rocof_mhz_s), "{:.0f}"), _num(abs(m.nadir_mhz), "{:.0f}"),
             _num(abs(m.f_inf_mhz), "{:.0f}")) for m in metrics]
    return _md(RESPONSE_COLUMNS, rows)


def damping_table_md(metrics: list[Metrics]) -> str:
    rows = [(f"{m.eta_max:.2f}", _num(m.D_est, "{:.0f}"), _num(m.D_actual, "{:.0f}"), _num(m.error_pct),
             _num(m.rmse_mhz, "{:.2f}"), m.regime) for m in metrics]
    return _md(DAMPING_COLUMNS, rows)


def metrics_csv(metrics: list[Metrics]) -> str:
    buf = io.StringIO()
    buf.write(",".join(RECORD_FIELDS) + "\n")
    for m in metrics:
        buf.write(",".join(_cell(getattr(m, f)) for f in RECORD_FIELDS) + "\n")
    return buf.getvalue()


def _cell(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.10g}"
    return str(v)


def metrics_json(metrics: list[Metrics]) -> str:
    recs = [{f: (None if isinstance(getattr(m, f), float) and math.isnan(getattr(m, f)) else getattr(m, f))
             for f in RECORD_FIELDS} for m in metrics]
    return json.dumps(recs, indent=2) + "\n"


def metrics_from_json(text: str) -> list[Metrics]:
    out = []
    for rec in json.loads(text):
        vals = {k: (math.nan if v is None else v) for k, v in rec.items()}
        out.append(Metrics(**vals))
    return out


def run_report(s: Scenario, metrics: list[Metrics], fmt: str = "md", wall_s: float | None = None,
               notes: list[str] | None = None) -> str:
    """Human-readable (md) or tabular (csv) report with the full scenario echo."""
    if fmt == "csv":
        return metrics_csv(metrics)
    parts = ["# Run report", "", f"seed: {s.seed}", ""]
    if wall_s is not None:
        parts += [f"wall clock: {wall_s:.1f} s", ""]
    parts += ["## Frequency response", "", response_table_md(metrics), "## Damping estimate", "",
              damping_table_md(metrics)]
    if notes:
        parts += ["## Notes", ""] + [f"- {n}" for n in notes] + [""]
    parts += ["## Scenario", "", "```yaml", emit_scenario(s).rstrip(), "```", ""]
    return "\n".join(parts)
