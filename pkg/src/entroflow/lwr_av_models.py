"""Dimensional traffic layer: LWR by Godunov's method and the AV model.

Units are km, h, veh/km and km/h throughout. The AV model is advanced in
the co-moving dimensionless frame

    x = (xi - v* tau) / r,   t = v* tau / r,   rho = rho_tilde / rho_bar,
    v_tilde = v* (1 + w),

where it is exactly the degenerate heat equation handled by
:mod:`entroflow.explicit_scheme`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from . import diagnostics
from .errors import ConfigError, InvariantViolation, NegativeDensityError
from .explicit_scheme import DEFAULT_SAFETY, run_explicit
from .grid import DensityField, Grid1D
from .model_functions import ModelFunctions, make_traffic_model


@dataclass(frozen=True)
class DimensionalParams:
    """Road and controller parameters.

    Defaults are the single-lane motorway calibration with an AV speed
    set-point of 70 km/h.
    """

    v_star: float = 70.0
    v_max: float = 110.0
    v_f: float = 102.0
    rho_c: float = 33.3
    rho_max: float = 180.0
    rho_bar: float = 31.0
    a: float = 2.34
    r: float = 1.0
    c: float = 40.0

    def __post_init__(self):
        checks = [
            (self.v_star > 0, "v_star > 0"),
            (self.v_star < self.v_max, "v_star < v_max"),
            (self.v_f > 0, "v_f > 0"),
            (self.rho_c > 0, "rho_c > 0"),
            (self.rho_bar > 0, "rho_bar > 0"),
            (self.rho_bar < self.rho_max, "rho_bar < rho_max"),
            (self.a > 0, "a > 0"),
            (self.r > 0, "r > 0"),
            (self.c > 0, "c > 0"),
        ]
        for ok, name in checks:
            if not ok:
                raise ConfigError(f"traffic parameter constraint violated: {name}")

    @property
    def R(self) -> float:
        return self.rho_max / self.rho_bar

    @property
    def b(self) -> float:
        return (self.v_max - self.v_star) / self.v_star

    def model(self) -> ModelFunctions:
        return make_traffic_model(self.c, self.R, self.b)


@dataclass(frozen=True)
class DimensionalField:
    """Densities in veh/km on a grid over xi (km)."""

    grid: Grid1D
    rho_tilde: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho_tilde, dtype=float)
        if rho.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} cell values, got shape {rho.shape}")
        if rho.size and rho.min() < 0:
            raise NegativeDensityError(f"negative density {rho.min():.3e} veh/km")
        rho.setflags(write=False)
        object.__setattr__(self, "rho_tilde", rho)

    def mass(self) -> float:
        return self.grid.dx * math.fsum(self.rho_tilde)


# ---------------------------------------------------------------------------
# LWR
# ---------------------------------------------------------------------------


def lwr_speed(rho_tilde, p: DimensionalParams):
    """v_f exp(-(rho/rho_c)^a / a) in km/h."""
    rho = np.asarray(rho_tilde, dtype=float)
    if np.any(rho < 0):
        raise ValueError("lwr_speed: negative density")
    out = p.v_f * np.exp(-((rho / p.rho_c) ** p.a) / p.a)
    return float(out) if out.ndim == 0 else out


def lwr_flux(rho_tilde, p: DimensionalParams):
    """q(rho) = rho v(rho) in veh/h."""
    rho = np.asarray(rho_tilde, dtype=float)
    out = rho * np.asarray(lwr_speed(rho, p))
    return float(out) if out.ndim == 0 else out


def lwr_flux_derivative(rho_tilde, p: DimensionalParams):
    """q'(rho) = v(rho) (1 - (rho/rho_c)^a)."""
    rho = np.asarray(rho_tilde, dtype=float)
    out = np.asarray(lwr_speed(rho, p)) * (1.0 - (rho / p.rho_c) ** p.a)
    return float(out) if out.ndim == 0 else out


def lwr_flux_max(p: DimensionalParams) -> float:
    """Capacity q(rho_c) = rho_c v_f exp(-1/a)."""
    return p.rho_c * p.v_f * math.exp(-1.0 / p.a)


def godunov_flux(rho_L, rho_R, p: DimensionalParams):
    """Godunov flux of the unimodal LWR flux.

    q increases up to rho_c and decreases after it, so the extremum over
    the interval between the states reduces to demand/supply:
    F = min(q(min(rho_L, rho_c)), q(max(rho_R, rho_c))). This equals the
    minimum of q over [rho_L, rho_R] when rho_L <= rho_R and its maximum
    over [rho_R, rho_L] otherwise.
    """
    rl = np.asarray(rho_L, dtype=float)
    rr = np.asarray(rho_R, dtype=float)
    if np.any(rl < 0) or np.any(rr < 0):
        raise ValueError("godunov_flux: negative density")
    demand = np.asarray(lwr_flux(np.minimum(rl, p.rho_c), p))
    supply = np.asarray(lwr_flux(np.maximum(rr, p.rho_c), p))
    out = np.minimum(demand, supply)
    return float(out) if out.ndim == 0 else out


def lwr_inflection(p: DimensionalParams) -> float:
    """Density where q'' = 0, rho_c (1 + a)^(1/a); q' decreases up to it."""
    return p.rho_c * (1.0 + p.a) ** (1.0 / p.a)


def lwr_max_wave_speed(rho_tilde, p: DimensionalParams) -> float:
    """max |q'| over [min rho, max rho].

    q' has a single critical point (the inflection of q), so the maximum
    sits at an endpoint or there.
    """
    rho = np.asarray(rho_tilde, dtype=float)
    lo, hi = float(rho.min()), float(rho.max())
    cand = [lo, hi]
    infl = lwr_inflection(p)
    if lo < infl < hi:
        cand.append(infl)
    return float(np.max(np.abs(lwr_flux_derivative(np.array(cand), p))))


def lwr_dt(field: DimensionalField, p: DimensionalParams, safety: float = DEFAULT_SAFETY) -> float:
    """safety * dx / max |q'| (h). Uses v_f when the field is empty."""
    s = lwr_max_wave_speed(np.append(field.rho_tilde, 0.0), p)
    return safety * field.grid.dx / s


def step_lwr(field: DimensionalField, p: DimensionalParams, dt: float, boundary: str = "zero") -> DimensionalField:
    """One Godunov step.

    Args:
        boundary: "zero" treats the road beyond the grid as empty (inflow 0,
            free outflow); "hold" copies the edge cells into ghost cells,
            which keeps constant Riemann states at the ends.
    """
    rho = field.rho_tilde
    if boundary == "zero":
        ext = np.concatenate(([0.0], rho, [0.0]))
    elif boundary == "hold":
        ext = np.concatenate(([rho[0]], rho, [rho[-1]]))
    else:
        raise ValueError(f"unknown boundary mode {boundary!r}")
    F = np.asarray(godunov_flux(ext[:-1], ext[1:], p))
    new = rho + (dt / field.grid.dx) * (F[:-1] - F[1:])
    hi_attained = max(float(ext.max()), p.rho_c)
    if new.min() < -1e-12 * max(1.0, hi_attained) or new.max() > hi_attained * (1 + 1e-12):
        raise InvariantViolation(
            f"LWR step left the attained density range [0, {hi_attained:g}] (dt={dt:g} h); CFL violated"
        )
    return DimensionalField(field.grid, np.maximum(new, 0.0))


@dataclass
class TrafficTrace:
    """Density and speed samples of a dimensional run.

    ``edges`` are the cell edges in xi at tau = 0; ``offsets[k]`` is the
    shift of the grid at sample k (v* tau for the co-moving AV grid).
    """

    model: str
    times: np.ndarray
    edges: np.ndarray
    offsets: np.ndarray
    densities: list
    speeds: list
    steps: int = 0
    meta: dict = dc_field(default_factory=dict)

    def mean_flow(self, support_eps: float = 1e-6) -> float:
        return diagnostics.mean_flow(self.times, self.edges, self.densities, self.speeds, support_eps)

    def centers(self, k: int) -> np.ndarray:
        e = self.edges + self.offsets[k]
        return 0.5 * (e[:-1] + e[1:])

    def support(self, k: int, support_eps: float = 1e-6) -> Optional[tuple]:
        sup = diagnostics.support_interval(self.edges + self.offsets[k], self.densities[k], support_eps)
        return sup


def _sample_times(T: float, samples: int) -> np.ndarray:
    if samples < 1:
        raise ValueError("need at least one sample interval")
    return np.linspace(0.0, T, samples + 1)


def run_lwr(field: DimensionalField, p: DimensionalParams, T: float, *, samples: int = 600,
            safety: float = DEFAULT_SAFETY, dt: Optional[float] = None) -> TrafficTrace:
    """Integrate LWR to ``T`` hours, landing exactly on ``samples`` evenly spaced times."""
    times = _sample_times(T, samples)
    dens = [field.rho_tilde]
    speeds = [np.asarray(lwr_speed(field.rho_tilde, p))]
    m0 = field.mass()
    t = 0.0
    steps = 0
    for target in times[1:]:
        while t < target:
            h = dt if dt is not None else lwr_dt(field, p, safety)
            if h >= (target - t) * (1 - 1e-12):
                h = target - t
                t_next = target
            else:
                t_next = t + h
            field = step_lwr(field, p, h)
            t = t_next
            steps += 1
        dens.append(field.rho_tilde)
        speeds.append(np.asarray(lwr_speed(field.rho_tilde, p)))
    g = field.grid
    return TrafficTrace("lwr", times, g.edges, np.zeros_like(times), dens, speeds, steps=steps,
                        meta={"mass0": m0, "mass_final": field.mass()})


# ---------------------------------------------------------------------------
# AV model through the co-moving frame
# ---------------------------------------------------------------------------


def to_comoving(xi, tau, p: DimensionalParams):
    """x = (xi - v* tau) / r."""
    return (np.asarray(xi, dtype=float) - p.v_star * tau) / p.r


def from_comoving(x, tau, p: DimensionalParams):
    """xi = r x + v* tau."""
    return p.r * np.asarray(x, dtype=float) + p.v_star * tau


def to_dimensionless_time(tau, p: DimensionalParams):
    return p.v_star * np.asarray(tau, dtype=float) / p.r


def to_dimensional_time(t, p: DimensionalParams):
    return p.r * np.asarray(t, dtype=float) / p.v_star


def av_to_dimensionless(field: DimensionalField, p: DimensionalParams, tau: float = 0.0,
                        mf: Optional[ModelFunctions] = None):
    """Density field in the co-moving frame and the matching model bundle.

    Returns:
        (DensityField over x, ModelFunctions with c, R = rho_max/rho_bar,
        b = (v_max - v*)/v*)
    """
    if field.rho_tilde.max(initial=0.0) >= p.rho_max:
        raise InvariantViolation(f"density {field.rho_tilde.max():g} at or above rho_max = {p.rho_max:g}")
    g = field.grid
    grid = Grid1D(float(to_comoving(g.x0, tau, p)), g.dx / p.r, g.n)
    return DensityField(grid, field.rho_tilde / p.rho_bar), (mf or p.model())


def dimensional_from_av(field: DensityField, p: DimensionalParams, t: float) -> DimensionalField:
    """Map a co-moving dimensionless field at time t back to (xi, veh/km)."""
    tau = float(to_dimensional_time(t, p))
    g = field.grid
    grid = Grid1D(float(from_comoving(g.x0, tau, p)), g.dx * p.r, g.n)
    return DimensionalField(grid, field.rho * p.rho_bar)


def av_speed_field(field, p: DimensionalParams, mf: ModelFunctions) -> np.ndarray:
    """v_tilde_i = v* (1 + w_i), w_i the speed the scheme uses for cell i (km/h).

    ``field`` may be a DimensionalField or the co-moving DensityField.
    Cells with zero density get v*, since w = h(0) = 0 there.
    """
    if isinstance(field, DimensionalField):
        field, _ = av_to_dimensionless(field, p, mf=mf)
    w = diagnostics.speed_field(field, mf)
    w = np.where(field.rho > 0.0, w, 0.0)
    return p.v_star * (1.0 + w)


def run_av(field: DimensionalField, p: DimensionalParams, T: float, *, samples: int = 600,
           safety: float = DEFAULT_SAFETY, mf: Optional[ModelFunctions] = None) -> TrafficTrace:
    """Integrate the AV model to ``T`` hours.

    The co-moving grid starts on the xi grid of ``field``; dt follows the
    admissible explicit step for the current maximum density.
    """
    rho0, mf = av_to_dimensionless(field, p, mf=mf)
    t_end = float(to_dimensionless_time(T, p))
    t_samples = [float(to_dimensionless_time(tt, p)) for tt in _sample_times(T, samples)]
    res = run_explicit(rho0, mf, t_end, adaptive_M=True, safety=safety, snapshot_times=t_samples,
                       record_diagnostics=False)
    times = _sample_times(T, samples)
    dens, speeds = [], []
    for ts in t_samples:
        f = res.snapshots[ts]
        dens.append(f.rho * p.rho_bar)
        speeds.append(av_speed_field(f, p, mf))
    offsets = p.v_star * times
    edges = p.r * rho0.grid.edges
    return TrafficTrace("av", times, edges, offsets, dens, speeds, steps=res.steps,
                        meta={"mass0": field.mass(), "mass_final": p.rho_bar * p.r * diagnostics.mass(res.field),
                              "dt_min": res.dt_min, "dt_max": res.dt_max, "b": mf.b, "R": mf.R})
