"""Scenario configuration, orchestration and file output.

Configs are flat ``key = value`` text with ``#`` comments and dotted keys
(``grid.dx = 0.04``). Every key, its type and default is listed in
:data:`SCHEMA`; unknown keys are fatal. The manifest written next to the
results is itself a valid config (derived quantities are written as
comments), so a run can be repeated from its manifest alone.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__, diagnostics
from .errors import ConfigError, EntroflowError
from .explicit_scheme import admissible_dt, cfl_dt, cfl_margins, entropy_dt, run_explicit
from .grid import DensityField, Grid1D, gauss_cell_averages
from .implicit_scheme import ImplicitSolverConfig, compare_fields
from .lwr_av_models import DimensionalField, DimensionalParams, TrafficTrace, run_av, run_lwr
from .model_functions import ModelFunctions, make_tanh_model, make_traffic_model
from .svgplot import write_line_plot

log = logging.getLogger(__name__)

KINDS = ("academic", "traffic-av", "traffic-lwr", "compare-implicit", "sweep")
BASE_KINDS = KINDS[:-1]
IC_VARIANTS = ("quartic-bump", "congestion-belt", "table")


@dataclass(frozen=True)
class Key:
    type: str
    default: object = None
    doc: str = ""
    choices: tuple = ()


SCHEMA = {
    "kind": Key("choice", None, "scenario type", KINDS),
    "name": Key("str", "run", "label used in plots and the manifest"),
    # dimensionless model
    "model.h": Key("choice", "tanh", "speed map: tanh or traffic (inverse speed potential)", ("tanh", "traffic")),
    "model.c": Key("float", 1.0, "viscosity constant c > 0"),
    "model.R": Key("float", 2.0, "singular density R > 1"),
    "model.b": Key("float", 1.0, "speed range parameter b > 0 (b >= 1 for tanh)"),
    # dimensionless grid
    "grid.x0": Key("float", -1.0, "left edge of the grid"),
    "grid.dx": Key("float", 0.04, "cell width"),
    "grid.n": Key("int", 100, "number of cells"),
    # time stepping
    "time.T": Key("float", None, "horizon (dimensionless; hours for traffic kinds)"),
    "time.dt_policy": Key("choice", "auto", "auto: admissible step from time.M; fixed: time.dt", ("auto", "fixed")),
    "time.dt": Key("float", None, "fixed step (dt_policy = fixed)"),
    "time.safety": Key("float", 0.9, "safety factor on the admissible step"),
    "time.M": Key("float", None, "density bound used by the step-size rule (max(M, initial max))"),
    "time.adaptive_M": Key("bool", False, "recompute the admissible step from the current maximum every step"),
    "time.allow_cfl_violation": Key("bool", False, "accept a fixed dt above the positivity bound"),
    "time.stop_residual": Key("float", None, "stop once the asymptotic residual drops below this value"),
    # initial condition
    "ic.variant": Key("choice", "quartic-bump", "initial profile", IC_VARIANTS),
    "ic.eps1": Key("float", -0.52, "quartic bump left root"),
    "ic.eps2": Key("float", 2.52, "quartic bump right root"),
    "ic.amplitude": Key("float", 0.25, "quartic bump amplitude"),
    "ic.road_start": Key("float", 0.0, "belt profile: start of occupied road (km)"),
    "ic.road_end": Key("float", 4.0, "belt profile: end of occupied road (km)"),
    "ic.belt_start": Key("float", 1.5, "belt profile: start of congested plateau (km)"),
    "ic.belt_end": Key("float", 2.75, "belt profile: end of congested plateau (km)"),
    "ic.peak": Key("float", 55.0, "belt profile: plateau density (veh/km)"),
    "ic.shoulder_left": Key("float", 20.0, "belt profile: density between road start and belt (veh/km)"),
    "ic.shoulder_right": Key("float", 20.0, "belt profile: density between belt and road end (veh/km)"),
    "ic.ramp": Key("float", 0.25, "belt profile: width of each cosine ramp (km)"),
    "ic.values": Key("floats", None, "table: one value per cell"),
    # output
    "output.dir": Key("str", "out", "output directory"),
    "output.cadence": Key("float", None, "time between diagnostics rows (default T/100)"),
    "output.snapshots": Key("floats", None, "profile times (default 0, T/4, T/2, 3T/4, T)"),
    "output.plots": Key("bool", True, "write SVG plots"),
    "output.support_eps": Key("float", 1e-6, "support threshold for mean flow (veh/km)"),
    "output.check_entropy": Key("bool", True, "check E2 after every explicit step"),
    # implicit solver / comparison
    "implicit.tol": Key("float", 1e-10, "fixed-point tolerance"),
    "implicit.max_iters": Key("int", 500, "fixed-point iteration cap"),
    "implicit.damping": Key("float", 1.0, "relaxation weight in (0, 1]"),
    "compare.dt_explicit": Key("float", 1e-4, "explicit step of the comparison"),
    "compare.dt_implicit": Key("float", 1e-2, "implicit step (integer multiple of the explicit one)"),
    "compare.sample_every": Key("int", 1, "sample the difference every k implicit steps"),
    # traffic
    "traffic.v_star": Key("floats", (70.0,), "AV speed set-points (km/h)"),
    "traffic.v_max": Key("float", 110.0, "speed limit (km/h)"),
    "traffic.v_f": Key("float", 102.0, "LWR free-flow speed (km/h)"),
    "traffic.rho_c": Key("float", 33.3, "critical density (veh/km)"),
    "traffic.rho_max": Key("float", 180.0, "maximum density (veh/km)"),
    "traffic.rho_bar": Key("float", 31.0, "interaction density (veh/km)"),
    "traffic.a": Key("float", 2.34, "LWR speed exponent"),
    "traffic.r": Key("float", 1.0, "length scale (km)"),
    "traffic.c": Key("float", 40.0, "AV viscosity constant"),
    "traffic.samples": Key("int", 600, "trace samples over the horizon"),
    "traffic.baseline_lwr": Key("bool", False, "traffic-av: also run the LWR baseline"),
    "traffic.lwr_x0": Key("float", 0.0, "LWR road start (km)"),
    "traffic.lwr_x1": Key("float", 120.0, "LWR road end (km)"),
    "traffic.lwr_dx": Key("float", 0.05, "LWR cell width (km)"),
    "traffic.av_x0": Key("float", -4.0, "AV co-moving grid start (km at tau = 0)"),
    "traffic.av_x1": Key("float", 12.0, "AV co-moving grid end (km at tau = 0)"),
    "traffic.av_dx": Key("float", 0.05, "AV cell width (km)"),
    # sweeps
    "sweep.kind": Key("choice", "academic", "kind of every sweep member", BASE_KINDS),
    "sweep.key": Key("str", None, "key varied across members"),
    "sweep.values": Key("strs", None, "comma-separated values of sweep.key"),
}

REQUIRED = ("kind", "time.T")
REQUIRED_BY_KIND = {"sweep": ("sweep.key", "sweep.values")}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(key: str, raw: str):
    spec = SCHEMA[key]
    t = spec.type
    raw = raw.strip()
    try:
        if t == "float":
            return float(raw)
        if t == "int":
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if t == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError
        if t == "choice":
            if raw not in spec.choices:
                raise ConfigError(f"{key}: {raw!r} is not one of {', '.join(spec.choices)}")
            return raw
        if t == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if t == "strs":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        return raw
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {t}") from None


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(format_value(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated configuration.

    ``values`` maps every schema key to its effective value (defaults
    filled in); ``given`` lists the keys set explicitly.
    """

    values: dict
    given: frozenset = frozenset()

    @property
    def kind(self) -> str:
        return self.values["kind"]

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, overrides: dict) -> "ScenarioConfig":
        raw = {k: format_value(self.values[k]) for k in self.given}
        raw.update(overrides)
        return _build_config(raw)

    def manifest_lines(self) -> list:
        return [f"{k} = {format_value(v)}" for k, v in self.values.items() if v is not None]


def _split_lines(text: str) -> dict:
    raw, errors = {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append(f"line {lineno}: expected 'key = value', got {body!r}")
            continue
        k, v = body.split("=", 1)
        k = k.strip()
        if k in raw:
            errors.append(f"line {lineno}: duplicate key {k}")
        raw[k] = v.strip()
    if errors:
        raise ConfigError("; ".join(errors))
    return raw


def parse_config(text: str, overrides: Optional[dict] = None) -> ScenarioConfig:
    """Parse and validate a flat ``key = value`` document.

    Raises:
        ConfigError: unknown keys (all listed), missing required keys,
            unreadable values or a violated constraint (named).
    """
    raw = _split_lines(text)
    if overrides:
        raw.update(overrides)
    return _build_config(raw)


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path, overrides: Optional[dict] = None) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)


def _build_config(raw: dict) -> ScenarioConfig:
    unknown = sorted(k for k in raw if k not in SCHEMA)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    values = {k: spec.default for k, spec in SCHEMA.items()}
    for k, v in raw.items():
        values[k] = _convert(k, v)
    missing = [k for k in REQUIRED if values[k] is None]
    if values["kind"] is not None:
        missing += [k for k in REQUIRED_BY_KIND.get(values["kind"], ()) if values[k] is None]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    if values["kind"] == "traffic-av" and "ic.variant" not in raw:
        values["ic.variant"] = "congestion-belt"
    if values["kind"] == "traffic-lwr" and "ic.variant" not in raw:
        values["ic.variant"] = "congestion-belt"
    # a bare time.dt means a fixed step
    if "time.dt" in raw and "time.dt_policy" not in raw:
        values["time.dt_policy"] = "fixed"
    cfg = ScenarioConfig(values=values, given=frozenset(raw))
    validate(cfg)
    return cfg


def _require(ok: bool, constraint: str, detail: str = "") -> None:
    if not ok:
        raise ConfigError(f"constraint violated: {constraint}" + (f" ({detail})" if detail else ""))


def validate(cfg: ScenarioConfig) -> None:
    """Check every constraint relevant to ``cfg.kind``; raises ConfigError naming the first violation."""
    v = cfg.values
    kind = cfg.kind
    if kind == "sweep":
        key = v["sweep.key"]
        _require(key in SCHEMA and not key.startswith("sweep.") and key != "kind", "sweep.key is a scenario key",
                 f"got {key!r}")
        _require(len(v["sweep.values"]) >= 1, "len(sweep.values) >= 1")
        for val in v["sweep.values"]:
            member_config(cfg, val)
        return
    _require(v["time.T"] > 0, "time.T > 0", f"T = {v['time.T']}")
    _require(0 < v["time.safety"] <= 1, "0 < time.safety <= 1")
    if v["output.cadence"] is not None:
        _require(v["output.cadence"] > 0, "output.cadence > 0")
    _require(v["output.support_eps"] > 0, "output.support_eps > 0")
    if v["output.snapshots"] is not None:
        _require(all(0 <= s <= v["time.T"] for s in v["output.snapshots"]), "0 <= output.snapshots <= time.T")
    if kind in ("academic", "compare-implicit"):
        _require(v["grid.dx"] > 0, "grid.dx > 0", f"dx = {v['grid.dx']}")
        _require(v["grid.n"] >= 3, "grid.n >= 3")
        _require(v["model.c"] > 0, "model.c > 0")
        _require(v["model.R"] > 1, "model.R > 1")
        _require(v["model.b"] > 0, "model.b > 0")
        if v["model.h"] == "tanh":
            _require(v["model.b"] >= 1, "model.b >= 1 for the tanh speed map (|h| < 1 <= b keeps speeds in (-1, b))")
        if v["time.M"] is not None:
            _require(0 < v["time.M"] < v["model.R"], "0 < time.M < model.R")
        if v["time.dt"] is not None:
            _require(v["time.dt"] > 0, "time.dt > 0")
        if v["time.dt_policy"] == "fixed":
            _require(v["time.dt"] is not None, "time.dt given when time.dt_policy = fixed")
        if v["time.stop_residual"] is not None:
            _require(v["time.stop_residual"] > 0, "time.stop_residual > 0")
    if kind == "compare-implicit":
        de, di = v["compare.dt_explicit"], v["compare.dt_implicit"]
        _require(de > 0 and di > 0, "compare.dt_explicit > 0 and compare.dt_implicit > 0")
        k = di / de
        _require(k >= 1 - 1e-9 and abs(k - round(k)) <= 1e-9 * k, "compare.dt_implicit = k * compare.dt_explicit, k integer")
        _require(v["compare.sample_every"] >= 1, "compare.sample_every >= 1")
        try:
            implicit_config(cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if kind in ("traffic-av", "traffic-lwr"):
        _require(v["ic.variant"] != "quartic-bump", "traffic runs use a congestion-belt or table profile")
        _require(v["traffic.samples"] >= 1, "traffic.samples >= 1")
        _require(v["traffic.lwr_dx"] > 0, "traffic.lwr_dx > 0")
        _require(v["traffic.av_dx"] > 0, "traffic.av_dx > 0")
        _require(v["traffic.lwr_x1"] > v["traffic.lwr_x0"], "traffic.lwr_x1 > traffic.lwr_x0")
        _require(v["traffic.av_x1"] > v["traffic.av_x0"], "traffic.av_x1 > traffic.av_x0")
        if kind == "traffic-av":
            _require(len(v["traffic.v_star"]) >= 1, "len(traffic.v_star) >= 1")
        for vs in v["traffic.v_star"]:
            traffic_params(cfg, vs)
    if v["ic.variant"] == "quartic-bump":
        _require(v["ic.eps1"] < v["ic.eps2"], "ic.eps1 < ic.eps2")
        _require(v["ic.amplitude"] > 0, "ic.amplitude > 0")
    elif v["ic.variant"] == "congestion-belt":
        r = v["ic.ramp"]
        _require(r > 0, "ic.ramp > 0")
        _require(v["ic.road_start"] + r <= v["ic.belt_start"] - r, "ic.road_start + ic.ramp <= ic.belt_start - ic.ramp")
        _require(v["ic.belt_start"] < v["ic.belt_end"], "ic.belt_start < ic.belt_end")
        _require(v["ic.belt_end"] + r <= v["ic.road_end"] - r, "ic.belt_end + ic.ramp <= ic.road_end - ic.ramp")
        _require(v["ic.peak"] > 0, "ic.peak > 0")
        _require(v["ic.shoulder_left"] >= 0 and v["ic.shoulder_right"] >= 0, "ic shoulders >= 0")
    elif v["ic.variant"] == "table":
        _require(v["ic.values"] is not None, "ic.values given for the table profile")
        _require(all(x >= 0 for x in v["ic.values"]), "ic.values >= 0")


def member_config(cfg: ScenarioConfig, value: str) -> ScenarioConfig:
    """Sweep member: the sweep config with kind = sweep.kind and sweep.key = value."""
    raw = {k: format_value(cfg.values[k]) for k in cfg.given if not k.startswith("sweep.") and k != "kind"}
    raw["kind"] = cfg["sweep.kind"]
    raw[cfg["sweep.key"]] = value
    return _build_config(raw)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_model(cfg: ScenarioConfig) -> ModelFunctions:
    v = cfg.values
    try:
        if v["model.h"] == "tanh":
            return make_tanh_model(v["model.c"], v["model.R"], v["model.b"])
        return make_traffic_model(v["model.c"], v["model.R"], v["model.b"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_grid(cfg: ScenarioConfig) -> Grid1D:
    try:
        return Grid1D(cfg["grid.x0"], cfg["grid.dx"], cfg["grid.n"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def implicit_config(cfg: ScenarioConfig) -> ImplicitSolverConfig:
    return ImplicitSolverConfig(tol=cfg["implicit.tol"], max_iters=cfg["implicit.max_iters"],
                                damping=cfg["implicit.damping"])


def traffic_params(cfg: ScenarioConfig, v_star: float) -> DimensionalParams:
    v = cfg.values
    return DimensionalParams(v_star=float(v_star), v_max=v["traffic.v_max"], v_f=v["traffic.v_f"],
                             rho_c=v["traffic.rho_c"], rho_max=v["traffic.rho_max"], rho_bar=v["traffic.rho_bar"],
                             a=v["traffic.a"], r=v["traffic.r"], c=v["traffic.c"])


@dataclass(frozen=True)
class InitialCondition:
    """Initial profile descriptor.

    ``params`` holds (eps1, eps2, amplitude) for quartic-bump, the belt
    geometry for congestion-belt and ``values`` for table.
    """

    variant: str
    params: dict = dc_field(default_factory=dict)

    def profile(self) -> Optional[Callable[[np.ndarray], np.ndarray]]:
        if self.variant == "quartic-bump":
            return lambda x: quartic_bump(x, **self.params)
        if self.variant == "congestion-belt":
            return lambda x: congestion_belt(x, **self.params)
        return None


def quartic_bump(x, eps1: float, eps2: float, amplitude: float):
    """amplitude (x - eps1)^2 (x - eps2)^2 on (eps1, eps2), zero elsewhere."""
    x = np.asarray(x, dtype=float)
    inside = (x > eps1) & (x < eps2)
    return np.where(inside, amplitude * (x - eps1) ** 2 * (x - eps2) ** 2, 0.0)


def _cosine_ramp(x, x0, x1, y0, y1):
    u = np.clip((x - x0) / (x1 - x0), 0.0, 1.0)
    return y0 + (y1 - y0) * 0.5 * (1.0 - np.cos(np.pi * u))


def congestion_belt(x, road_start: float, road_end: float, belt_start: float, belt_end: float,
                    peak: float, shoulder_left: float, shoulder_right: float, ramp: float):
    """C^1 piecewise profile of a congested belt on a partly occupied road.

    Cosine ramps of width ``ramp`` rise from 0 at ``road_start`` to the left
    shoulder, from the shoulder to ``peak`` ending at ``belt_start``, and
    mirror that on the right, returning to 0 at ``road_end``.
    """
    x = np.asarray(x, dtype=float)
    mid = 0.5 * (belt_start + belt_end)
    left = np.where(x < belt_start - ramp,
                    _cosine_ramp(x, road_start, road_start + ramp, 0.0, shoulder_left),
                    _cosine_ramp(x, belt_start - ramp, belt_start, shoulder_left, peak))
    right = np.where(x > belt_end + ramp,
                     _cosine_ramp(x, road_end - ramp, road_end, shoulder_right, 0.0),
                     _cosine_ramp(x, belt_end, belt_end + ramp, peak, shoulder_right))
    out = np.where(x <= mid, left, right)
    return np.where((x >= road_start) & (x <= road_end), out, 0.0)


def initial_condition(cfg: ScenarioConfig) -> InitialCondition:
    v = cfg.values
    variant = v["ic.variant"]
    if variant == "quartic-bump":
        return InitialCondition(variant, {"eps1": v["ic.eps1"], "eps2": v["ic.eps2"], "amplitude": v["ic.amplitude"]})
    if variant == "congestion-belt":
        keys = ("road_start", "road_end", "belt_start", "belt_end", "peak", "shoulder_left", "shoulder_right", "ramp")
        return InitialCondition(variant, {k: v["ic." + k] for k in keys})
    return InitialCondition(variant, {"values": tuple(v["ic.values"])})


def build_initial(ic: InitialCondition, grid: Grid1D, upper: Optional[float] = None) -> DensityField:
    """Cell averages of the profile (5-point Gauss per cell), in the profile's own units.

    Raises:
        ConfigError: table length mismatch, or a value at or above ``upper``.
    """
    if ic.variant == "table":
        vals = np.asarray(ic.params["values"], dtype=float)
        if vals.shape != (grid.n,):
            raise ConfigError(f"ic.values has {vals.size} entries, grid has {grid.n} cells")
    else:
        vals = gauss_cell_averages(ic.profile(), grid)
    if np.any(vals < 0):
        raise ConfigError("initial profile has negative values")
    if upper is not None and vals.size and vals.max() >= upper:
        raise ConfigError(f"constraint violated: initial density < {upper:g} (max {vals.max():g})")
    return DensityField(grid, vals)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _f17(v) -> str:
    return format(float(v), ".17g")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_f17(x) if isinstance(x, (float, np.floating, int, np.integer)) and not isinstance(x, bool)
                        else x for x in row])


def read_csv(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    cols = {h: [] for h in header}
    for row in body:
        for h, x in zip(header, row):
            cols[h].append(x)
    return cols


def _time_tag(t: float) -> str:
    return format(float(t), ".6g")


def write_manifest(path, cfg: ScenarioConfig, derived: dict, status: str, error: Optional[str] = None) -> None:
    lines = [f"# entroflow {__version__} run manifest", f"# status = {status}"]
    if error:
        lines.append(f"# error = {error}")
    lines.append("")
    lines += cfg.manifest_lines()
    if derived:
        lines.append("")
        lines.append("# derived")
        lines += [f"# {k} = {format_value(v)}" for k, v in derived.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class RunOutcome:
    kind: str
    out_dir: Path
    summary: dict


# ---------------------------------------------------------------------------
# scenario drivers
# ---------------------------------------------------------------------------


def _snapshot_times(cfg: ScenarioConfig, T: float) -> tuple:
    if cfg["output.snapshots"] is not None:
        return tuple(cfg["output.snapshots"])
    return tuple(T * k / 4 for k in range(5))


def step_policy(cfg: ScenarioConfig, field: DensityField, mf: ModelFunctions) -> dict:
    """Effective dt, bound M and CFL margins, as recorded in the manifest."""
    M = max(field.max, cfg["time.M"] or 0.0)
    if M <= 0:
        M = min(1.0, 0.5 * mf.R)
    out = {"M_effective": M, "cfl_dt": cfl_dt(M, mf, field.dx), "entropy_dt": entropy_dt(M, mf, field.dx)}
    if cfg["time.dt_policy"] == "fixed":
        out["dt"] = cfg["time.dt"]
    else:
        out["dt"] = admissible_dt(M, mf, field.dx, cfg["time.safety"])
    out.update(cfl_margins(out["dt"], M, mf, field.dx))
    return out


def _run_academic(cfg: ScenarioConfig, out: Path) -> dict:
    mf = build_model(cfg)
    grid = build_grid(cfg)
    field = build_initial(initial_condition(cfg), grid, upper=mf.R)
    T = cfg["time.T"]
    policy = step_policy(cfg, field, mf)
    derived = dict(policy)
    fixed = cfg["time.dt_policy"] == "fixed"
    if not fixed and cfg["time.adaptive_M"]:
        derived["dt"] = "adaptive"

    E2_0 = diagnostics.energy_E2(field, mf)
    track = {"E2": E2_0, "E2_max_increase": 0.0, "rho_min": field.min, "rho_max": field.max}

    def observer(t, old, new, rep):
        track["rho_min"] = min(track["rho_min"], new.min)
        track["rho_max"] = max(track["rho_max"], rep.max_density)
        if cfg["output.check_entropy"]:
            e2 = diagnostics.energy_E2(new, mf)
            track["E2_max_increase"] = max(track["E2_max_increase"], e2 - track["E2"])
            track["E2"] = e2

    stop = None
    if cfg["time.stop_residual"] is not None:
        thr = cfg["time.stop_residual"]

        def stop(t, f):
            return diagnostics.prop7_residual(f, mf) < thr

    snaps = _snapshot_times(cfg, T)
    cadence = cfg["output.cadence"] or T / 100
    t0 = time.perf_counter()
    res = run_explicit(field, mf, T, dt=cfg["time.dt"] if fixed else None, M=cfg["time.M"],
                       safety=cfg["time.safety"], adaptive_M=cfg["time.adaptive_M"],
                       allow_cfl_violation=cfg["time.allow_cfl_violation"], cadence=cadence,
                       snapshot_times=snaps, observer=observer, stop=stop)
    elapsed = time.perf_counter() - t0

    write_csv(out / "diagnostics.csv", diagnostics.RECORD_FIELDS, [r.as_row() for r in res.records])
    for ts, f in sorted(res.snapshots.items()):
        w = diagnostics.speed_field(f, mf)
        write_csv(out / f"profiles_{_time_tag(ts)}.csv", ("x", "rho", "w"), zip(grid.centers, f.rho, w))

    recs = res.records
    m0 = recs[0].mass
    e1_increases = sum(1 for a, b in zip(recs, recs[1:]) if b.E1 > a.E1)
    derived.update({
        "steps": res.steps, "t_final": res.t, "runtime_s": round(elapsed, 3),
        "mass_rel_drift": abs(recs[-1].mass - m0) / m0 if m0 > 0 else 0.0,
        "rho_min_all_steps": track["rho_min"], "rho_max_all_steps": track["rho_max"],
        "E2_max_step_increase": track["E2_max_increase"] if cfg["output.check_entropy"] else "unchecked",
        "E1_increases_between_rows": e1_increases,
        "final_sup_residual": recs[-1].sup_residual,
    })
    if e1_increases:
        log.info("E1 increased between %d diagnostics rows (reported, not an error)", e1_increases)

    if cfg["output.plots"]:
        t = [r.t for r in recs]
        series = []
        if recs[0].E1 > 0:
            series.append(("ln E1/E1(0)", t, [math.log(r.E1 / recs[0].E1) if r.E1 > 0 else math.nan for r in recs]))
        if recs[0].E2 > 0:
            series.append(("ln E2/E2(0)", t, [math.log(r.E2 / recs[0].E2) if r.E2 > 0 else math.nan for r in recs]))
        write_line_plot(out / "plot_energy.svg", series, title=f"{cfg['name']}: energies", xlabel="t")
        write_line_plot(out / "plot_profiles.svg",
                        [(f"t={_time_tag(ts)}", grid.centers, f.rho) for ts, f in sorted(res.snapshots.items())],
                        title=f"{cfg['name']}: density", xlabel="x", ylabel="rho")
    derived["records"] = len(recs)
    return {"derived": derived, "records": [r.as_dict() for r in recs]}


def compare_runs(config: ScenarioConfig, dt_implicit: float, dt_explicit: float):
    """Explicit vs implicit run of ``config``'s initial field; see :func:`compare_fields`."""
    mf = build_model(config)
    field = build_initial(initial_condition(config), build_grid(config), upper=mf.R)
    return compare_fields(field, mf, config["time.T"], dt_implicit, dt_explicit, implicit_config(config),
                          sample_every=config["compare.sample_every"],
                          allow_cfl_violation=config["time.allow_cfl_violation"])


def _run_compare(cfg: ScenarioConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    cmp = compare_runs(cfg, cfg["compare.dt_implicit"], cfg["compare.dt_explicit"])
    write_csv(out / "difference.csv", ("t", "sup_drho", "sup_dw"), cmp.rows())
    if cfg["output.plots"]:
        write_line_plot(out / "plot_difference.svg",
                        [("sup|rho_imp - rho_exp|", cmp.t, cmp.sup_drho), ("sup|w_imp - w_exp|", cmp.t, cmp.sup_dw)],
                        title=f"{cfg['name']}: implicit dt={cfg['compare.dt_implicit']:g} vs explicit "
                              f"dt={cfg['compare.dt_explicit']:g}", xlabel="t")
    derived = {"max_picard_iterations": cmp.max_iterations, "samples": len(cmp.t),
               "runtime_s": round(time.perf_counter() - t0, 3),
               "sup_drho_max": float(cmp.sup_drho.max()), "sup_dw_max": float(cmp.sup_dw.max())}
    return {"derived": derived, "difference": cmp.rows()}


def _traffic_initial(cfg: ScenarioConfig, x0: float, x1: float, dx: float, p: DimensionalParams) -> DimensionalField:
    try:
        grid = Grid1D.spanning(x0, x1, dx)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    f = build_initial(initial_condition(cfg), grid, upper=p.rho_max)
    return DimensionalField(grid, f.rho)


def _trace_outputs(trace: TrafficTrace, cfg: ScenarioConfig, out: Path, label: str) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    eps = cfg["output.support_eps"]
    T = cfg["time.T"]
    flows = []
    for k, t in enumerate(trace.times):
        a, b = trace.support(k, eps)
        flows.append((float(t), a, b, diagnostics.support_averaged_flow(trace.edges, trace.densities[k],
                                                                        trace.speeds[k], eps)))
    write_csv(out / "flow.csv", ("t_h", "support_start_km", "support_end_km", "support_flow_veh_h"), flows)
    snaps = _snapshot_times(cfg, T)
    idx = sorted({int(np.argmin(np.abs(trace.times - s))) for s in snaps})
    for k in idx:
        write_csv(out / f"profiles_{_time_tag(trace.times[k])}.csv", ("xi", "rho_veh_km", "v_km_h"),
                  zip(trace.centers(k), trace.densities[k], trace.speeds[k]))
    if cfg["output.plots"]:
        write_line_plot(out / "plot_density.svg",
                        [(f"tau={_time_tag(trace.times[k])} h", trace.centers(k), trace.densities[k]) for k in idx],
                        title=f"{label}: density", xlabel="xi (km)", ylabel="veh/km")
        write_line_plot(out / "plot_speed.svg",
                        [(f"tau={_time_tag(trace.times[k])} h", trace.centers(k),
                          np.where(trace.densities[k] > eps, trace.speeds[k], np.nan)) for k in idx],
                        title=f"{label}: speed", xlabel="xi (km)", ylabel="km/h")
    a, b = trace.support(len(trace.times) - 1, eps)
    return {
        "mean_flow_veh_h": trace.mean_flow(eps),
        "mass0_veh": trace.meta["mass0"], "mass_final_veh": trace.meta["mass_final"],
        "support_start_km": a, "support_end_km": b,
        "max_density_veh_km": float(np.max(trace.densities[-1])), "steps": trace.steps,
    }


def _run_traffic(cfg: ScenarioConfig, out: Path) -> dict:
    T = cfg["time.T"]
    samples = cfg["traffic.samples"]
    rows, derived = [], {}
    t0 = time.perf_counter()
    v = cfg.values
    if cfg.kind == "traffic-av":
        for vs in v["traffic.v_star"]:
            p = traffic_params(cfg, vs)
            field = _traffic_initial(cfg, v["traffic.av_x0"], v["traffic.av_x1"], v["traffic.av_dx"], p)
            trace = run_av(field, p, T, samples=samples, safety=v["time.safety"])
            tag = f"av_v{vs:g}"
            info = _trace_outputs(trace, cfg, out / tag, f"AV v*={vs:g} km/h")
            rows.append(("av", vs, info))
            derived[f"{tag}.R"] = p.R
            derived[f"{tag}.b"] = p.b
    if cfg.kind == "traffic-lwr" or v["traffic.baseline_lwr"]:
        p = traffic_params(cfg, v["traffic.v_star"][0] if v["traffic.v_star"] else 70.0)
        field = _traffic_initial(cfg, v["traffic.lwr_x0"], v["traffic.lwr_x1"], v["traffic.lwr_dx"], p)
        trace = run_lwr(field, p, T, samples=samples, safety=v["time.safety"])
        info = _trace_outputs(trace, cfg, out / "lwr", "LWR")
        rows.append(("lwr", "", info))
    cols = ("mean_flow_veh_h", "mass0_veh", "mass_final_veh", "support_start_km", "support_end_km",
            "max_density_veh_km", "steps")
    write_csv(out / "mean_flow.csv", ("model", "v_star_km_h") + cols,
              [(m, vs) + tuple(info[c] for c in cols) for m, vs, info in rows])
    derived["runtime_s"] = round(time.perf_counter() - t0, 3)
    return {"derived": derived, "mean_flow": [{"model": m, "v_star": vs, **info} for m, vs, info in rows]}


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------


class SweepError(EntroflowError):
    """One or more sweep members failed; ``exit_code`` is the worst member code."""


def _sweep_workers(n: int) -> int:
    env = os.environ.get("ENTROFLOW_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigError(f"ENTROFLOW_THREADS must be a positive integer, got {env!r}") from None
    return max(1, min(n, cap))


def _member_job(args):
    cfg, out = args
    try:
        return run_scenario(cfg, out), None
    except EntroflowError as exc:
        return None, (type(exc).__name__, str(exc), exc.exit_code)


def _run_sweep(cfg: ScenarioConfig, out: Path) -> dict:
    key = cfg["sweep.key"]
    members = [(member_config(cfg, val), out / f"{key}={val}") for val in cfg["sweep.values"]]
    workers = _sweep_workers(len(members))
    if workers == 1:
        results = [_member_job(m) for m in members]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_member_job, members))
    derived = {"workers": workers}
    failures = []
    ok = []
    for val, (outcome, err) in zip(cfg["sweep.values"], results):
        derived[f"member.{val}"] = "OK" if err is None else f"FAILED: {err[1]}"
        if err is not None:
            failures.append(err)
        else:
            ok.append((val, outcome))
    if cfg["output.plots"] and ok and cfg["sweep.kind"] == "academic":
        series = []
        for val, outcome in ok:
            recs = outcome.summary["records"]
            if recs and recs[0]["E2"] > 0:
                series.append((f"{key}={val}", [r["t"] for r in recs],
                               [math.log(r["E2"] / recs[0]["E2"]) if r["E2"] > 0 else math.nan for r in recs]))
        write_line_plot(out / "plot_sweep_E2.svg", series, title="ln E2(t)/E2(0)", xlabel="t")
    summary = {"derived": derived, "members": {val: o.summary for val, o in ok}, "failures": failures}
    if failures:
        code = max(f[2] for f in failures)
        exc = SweepError(f"{len(failures)} of {len(members)} sweep members failed: "
                         + "; ".join(f"{n}: {m}" for n, m, _ in failures))
        exc.exit_code = code
        exc.summary = summary
        raise exc
    return summary


_DRIVERS = {
    "academic": _run_academic,
    "compare-implicit": _run_compare,
    "traffic-av": _run_traffic,
    "traffic-lwr": _run_traffic,
    "sweep": _run_sweep,
}


def run_scenario(cfg: ScenarioConfig, out_dir=None) -> RunOutcome:
    """Run ``cfg`` and write its outputs to ``out_dir`` (default ``output.dir``).

    The manifest is written on success and on failure; a failed run keeps
    whatever files it produced and re-raises the error after marking the
    manifest FAILED.
    """
    out = Path(out_dir if out_dir is not None else cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.txt"
    write_manifest(manifest, cfg, {}, "RUNNING")
    try:
        summary = _DRIVERS[cfg.kind](cfg, out)
    except SweepError as exc:
        write_manifest(manifest, cfg, exc.summary.get("derived", {}), "FAILED", str(exc))
        raise
    except EntroflowError as exc:
        write_manifest(manifest, cfg, {}, "FAILED", f"{type(exc).__name__}: {exc}")
        raise
    except ValueError as exc:
        write_manifest(manifest, cfg, {}, "FAILED", f"{type(exc).__name__}: {exc}")
        raise ConfigError(str(exc)) from exc
    write_manifest(manifest, cfg, summary.get("derived", {}), "OK")
    return RunOutcome(kind=cfg.kind, out_dir=out, summary=summary)
