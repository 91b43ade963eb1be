"""Conservative explicit scheme for the degenerate heat equation.

One step reads

    rho_i+ = rho_i + (dt/dx) (G_{i-1} - G_i),   G_i = rho_i h(-q_i),
    q_i = (Q'(rho_{i+1}) - Q'(rho_i)) / dx,

on a finite grid padded by empty cells. The flux G_i always carries the
left state rho_i; positivity and the bound rho <= M follow from the
nonlinear CFL rule in :func:`cfl_dt`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import diagnostics
from .errors import InvariantViolation, NegativeDensityError, SolverError, SupportAtBoundaryError
from .grid import DensityField, Grid1D
from .model_functions import ModelFunctions

log = logging.getLogger(__name__)

SUPPORT_TOL = 1e-12
NEGATIVE_TOL = -1e-14
DEFAULT_SAFETY = 0.9


@dataclass(frozen=True)
class StepReport:
    dt_used: float
    fluxes: np.ndarray
    max_density: float
    mass: float


def compute_q(field: DensityField, mf: ModelFunctions, i: int) -> float:
    """q_i = (Q'(rho_{i+1}) - Q'(rho_i)) / dx for 0 <= i <= n-2."""
    n = field.grid.n
    if not 0 <= i <= n - 2:
        raise IndexError(f"interface index {i} outside [0, {n - 2}]")
    r = field.rho
    return (float(mf.Qprime(r[i + 1])) - float(mf.Qprime(r[i]))) / field.dx


def check_support(rho: np.ndarray, width: int = 2) -> None:
    """Raise if mass sits in the boundary cells or the ``width`` cells next to them."""
    k = width + 1
    edge = np.concatenate([rho[:k], rho[-k:]])
    if np.any(edge > SUPPORT_TOL):
        raise SupportAtBoundaryError(
            f"density {float(np.max(edge)):.3e} within {width} cells of the domain boundary; enlarge the grid"
        )


def fluxes(rho: np.ndarray, mf: ModelFunctions, dx: float) -> np.ndarray:
    """G_i = rho_i h(-q_i) at the right interface of every cell."""
    q = diagnostics.interface_q(rho, mf, dx)
    return rho * np.asarray(mf.h(-q))


def step_explicit(field: DensityField, mf: ModelFunctions, dt: float, *, support_check: bool = True):
    """Advance ``field`` by one explicit step of size ``dt``.

    The step itself does not enforce the CFL bound (see :func:`cfl_dt`);
    a violated bound shows up as a :class:`NegativeDensityError`.

    Returns:
        (new DensityField, StepReport)
    """
    rho = field.rho
    if support_check:
        check_support(rho)
    G = fluxes(rho, mf, field.dx)
    inflow = np.concatenate(([0.0], G[:-1]))
    new = rho + (dt / field.dx) * (inflow - G)
    if not np.all(np.isfinite(new)):
        raise SolverError("explicit step produced non-finite densities")
    if new.min() < NEGATIVE_TOL:
        raise NegativeDensityError(f"density {new.min():.3e} < 0 after step dt={dt:g}; CFL bound violated")
    if new.max() >= mf.R - 1e-12:
        raise InvariantViolation(f"density {new.max():.6g} >= R = {mf.R:g} after step dt={dt:g}; CFL bound violated")
    out = field.with_rho(new)
    report = StepReport(dt_used=dt, fluxes=G, max_density=float(new.max()), mass=field.dx * math.fsum(new))
    return out, report


# ---------------------------------------------------------------------------
# step-size bounds
# ---------------------------------------------------------------------------


def cfl_dt(M: float, mf: ModelFunctions, dx: float) -> float:
    """Largest dt keeping every density in [0, M]:

        dt = dx^2 / (dx * b + 2 M ||h'|| max_{[0, M]} kappa)
    """
    if not 0 < M < mf.R:
        raise ValueError(f"need 0 < M < R, got M={M}, R={mf.R}")
    return dx * dx / (dx * mf.b + 2.0 * M * mf.h_prime_sup * mf.kappa_max(M))


def entropy_dt(M: float, mf: ModelFunctions, dx: float) -> float:
    """Largest dt with 1 >= dt * 4 M ||h'|| max kappa / dx^2 (inf when kappa vanishes)."""
    if not 0 < M < mf.R:
        raise ValueError(f"need 0 < M < R, got M={M}, R={mf.R}")
    k = mf.kappa_max(M)
    if k == 0.0:
        return math.inf
    return dx * dx / (4.0 * M * mf.h_prime_sup * k)


def admissible_dt(M: float, mf: ModelFunctions, dx: float, safety: float = DEFAULT_SAFETY) -> float:
    """safety * min(cfl_dt, entropy_dt)."""
    return safety * min(cfl_dt(M, mf, dx), entropy_dt(M, mf, dx))


def cfl_margins(dt: float, M: float, mf: ModelFunctions, dx: float) -> dict:
    """Slack in the two step-size hypotheses (non-negative means satisfied)."""
    k = mf.kappa_max(M)
    return {
        "positivity_margin": 1.0 - (dt / dx) * (mf.b + 2.0 * M * mf.h_prime_sup * k / dx),
        "entropy_margin": 1.0 - dt * 4.0 * M * mf.h_prime_sup * k / dx**2,
    }


# ---------------------------------------------------------------------------
# time marching
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    records: list
    field: DensityField
    t: float
    steps: int
    snapshots: dict = field(default_factory=dict)
    dt_min: float = math.inf
    dt_max: float = 0.0
    M: float = 0.0


Observer = Callable[[float, DensityField, DensityField, StepReport], None]


def march(
    field: DensityField,
    stepper: Callable[[DensityField, float], tuple],
    T: float,
    dt_rule: Callable[[DensityField], float],
    *,
    fixed: bool,
    recorder: Optional[Callable[[float, DensityField], object]] = None,
    cadence: Optional[float] = None,
    snapshot_times: Sequence[float] = (),
    observer: Optional[Observer] = None,
    stop: Optional[Callable[[float, DensityField], bool]] = None,
) -> RunResult:
    """Generic time loop shared by the explicit and implicit drivers.

    With ``fixed`` the step is constant and time is counted as k*dt; the
    horizon, cadence and snapshot times are rounded to whole steps. Otherwise
    ``dt_rule`` is evaluated every step and steps are shortened to land
    exactly on output times.
    """
    records = []
    snapshots = {}
    t = 0.0
    k = 0
    dt_min, dt_max = math.inf, 0.0
    if recorder is not None:
        records.append(recorder(0.0, field))
    if 0.0 in snapshot_times:
        snapshots[0.0] = field

    def emit(t_now, f, is_out, snap_key):
        if recorder is not None and is_out:
            records.append(recorder(t_now, f))
        if snap_key is not None:
            snapshots[snap_key] = f

    if fixed:
        dt = float(dt_rule(field))
        nsteps = max(1, round(T / dt))
        every = max(1, round(cadence / dt)) if cadence else None
        snap_steps = {max(0, round(s / dt)): s for s in snapshot_times}
        for k in range(1, nsteps + 1):
            new, rep = stepper(field, dt)
            t = k * dt
            if observer is not None:
                observer(t, field, new, rep)
            field = new
            emit(t, field, (every is not None and k % every == 0) or k == nsteps, snap_steps.get(k))
            if stop is not None and stop(t, field):
                if recorder is not None and records[-1].t != t:
                    records.append(recorder(t, field))
                break
        dt_min = dt_max = dt
    else:
        outs = set(s for s in snapshot_times if 0.0 < s <= T)
        cad_times = set()
        if cadence:
            m = int(math.floor(T / cadence + 1e-9))
            cad_times = {j * cadence for j in range(1, m + 1)}
        outs |= cad_times
        outs.add(T)
        targets = sorted(outs)
        snap_lookup = {s: s for s in snapshot_times}
        done = False
        for target in targets:
            while t < target:
                dt = float(dt_rule(field))
                if not dt > 0 or not math.isfinite(dt):
                    raise SolverError(f"step-size rule returned {dt}")
                rem = target - t
                if dt >= rem * (1.0 - 1e-12):
                    dt, t_next = rem, target
                else:
                    t_next = t + dt
                new, rep = stepper(field, dt)
                k += 1
                dt_min, dt_max = min(dt_min, dt), max(dt_max, dt)
                if observer is not None:
                    observer(t_next, field, new, rep)
                field, t = new, t_next
                if stop is not None and stop(t, field):
                    done = True
                    break
            if done:
                if recorder is not None:
                    records.append(recorder(t, field))
                break
            emit(t, field, target in cad_times or target == T, snap_lookup.get(target))
    return RunResult(records=records, field=field, t=t, steps=k, snapshots=snapshots, dt_min=dt_min, dt_max=dt_max)


def run_explicit(
    field: DensityField,
    mf: ModelFunctions,
    T: float,
    *,
    dt: Optional[float] = None,
    M: Optional[float] = None,
    safety: float = DEFAULT_SAFETY,
    adaptive_M: bool = False,
    allow_cfl_violation: bool = False,
    cadence: Optional[float] = None,
    snapshot_times: Sequence[float] = (),
    observer: Optional[Observer] = None,
    stop: Optional[Callable[[float, DensityField], bool]] = None,
    record_diagnostics: bool = True,
) -> RunResult:
    """Integrate from t = 0 to ``T`` with the explicit scheme.

    Args:
        field: initial densities, zero near both boundaries, below R.
        dt: fixed step; when None the step is ``admissible_dt`` for the
            current bound M (``adaptive_M``) or the initial one.
        M: density bound; the effective bound is max(M, initial max).
        allow_cfl_violation: accept a fixed ``dt`` above the positivity
            bound instead of raising.
        cadence: time between diagnostics records (records are always
            written at t = 0 and t = T).
        observer: called after every step with (t, old, new, report).
        stop: early-exit predicate evaluated after every step.
    """
    M_eff = max(field.max, M or 0.0)
    if not M_eff < mf.R:
        raise ValueError(f"initial density bound {M_eff} is not below R = {mf.R}")
    if M_eff <= 0.0:
        M_eff = min(1.0, 0.5 * mf.R)
    check_support(field.rho)

    if dt is not None:
        margins = cfl_margins(dt, M_eff, mf, field.dx)
        if margins["positivity_margin"] < 0:
            msg = f"dt = {dt:g} exceeds the positivity bound {cfl_dt(M_eff, mf, field.dx):g} for M = {M_eff:g}"
            if not allow_cfl_violation:
                raise ValueError(msg)
            log.warning(msg)
        dt_rule = lambda f: dt  # noqa: E731
        fixed = True
    elif adaptive_M:
        def dt_rule(f):
            m = f.max
            return admissible_dt(m, mf, f.dx, safety) if m > 0 else safety * f.dx / mf.b
        fixed = False
    else:
        dt0 = admissible_dt(M_eff, mf, field.dx, safety)
        dt_rule = lambda f: dt0  # noqa: E731
        fixed = True

    def stepper(f, h):
        return step_explicit(f, mf, h)

    recorder = (lambda t, f: diagnostics.record(t, f, mf)) if record_diagnostics else None
    res = march(field, stepper, T, dt_rule, fixed=fixed, recorder=recorder, cadence=cadence,
                snapshot_times=snapshot_times, observer=observer, stop=stop)
    res.M = M_eff
    return res
