"""Implicit counterpart of the explicit scheme, solved by damped Picard iteration.

A step solves

    rho+_i = rho_i + (dt/dx) (G+_{i-1} - G+_i),   G+_i = rho+_i h(-q+_i),

where q+ is built from the new densities. With the right-hand side map
Phi(r) = rho + (dt/dx) (G_{i-1}(r) - G_i(r)), the iteration is
r <- (1 - damping) r + damping Phi(r), started from r = rho.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import diagnostics
from .errors import NegativeDensityError, SolverError
from .explicit_scheme import NEGATIVE_TOL, check_support, fluxes, run_explicit, march
from .grid import DensityField
from .model_functions import ModelFunctions

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImplicitSolverConfig:
    """Fixed-point controls.

    Attributes:
        tol: sup-norm bound on the fixed-point residual |r - Phi(r)|.
        max_iters: iteration cap; hitting it raises SolverError.
        damping: relaxation weight in (0, 1].
    """

    tol: float = 1e-10
    max_iters: int = 500
    damping: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"implicit.tol > 0 violated (tol = {self.tol})")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"implicit.max_iters >= 1 violated (max_iters = {self.max_iters})")
        if not 0 < self.damping <= 1:
            raise ValueError(f"0 < implicit.damping <= 1 violated (damping = {self.damping})")


@dataclass(frozen=True)
class ImplicitStepInfo:
    iterations: int
    residual: float


def _rhs(rho_old: np.ndarray, r: np.ndarray, mf: ModelFunctions, ratio: float, dx: float) -> np.ndarray:
    G = fluxes(r, mf, dx)
    inflow = np.concatenate(([0.0], G[:-1]))
    return rho_old + ratio * (inflow - G)


def step_implicit_info(field: DensityField, mf: ModelFunctions, dt: float,
                       cfg: ImplicitSolverConfig = ImplicitSolverConfig(), *,
                       support_check: bool = True):
    """Like :func:`step_implicit` but also returns an :class:`ImplicitStepInfo`."""
    if not dt > 0:
        raise ValueError(f"dt > 0 violated (dt = {dt})")
    rho = field.rho
    if support_check:
        check_support(rho)
    dx = field.dx
    ratio = dt / dx
    r = np.array(rho, dtype=float)
    upper = mf.R - 1e-12
    res = math.inf
    for it in range(1, cfg.max_iters + 1):
        phi = _rhs(rho, r, mf, ratio, dx)
        res = float(np.max(np.abs(phi - r)))
        if not math.isfinite(res):
            raise SolverError(f"implicit iteration produced non-finite values at dt={dt:g}")
        if res <= cfg.tol:
            r = phi
            break
        r = phi if cfg.damping == 1.0 else (1.0 - cfg.damping) * r + cfg.damping * phi
        lo, hi = float(r.min()), float(r.max())
        if lo < NEGATIVE_TOL:
            raise NegativeDensityError(
                f"implicit iterate {it} has density {lo:.3e} < 0 at dt={dt:g}; try a smaller dt or damping"
            )
        if hi >= upper:
            raise SolverError(f"implicit iterate {it} reached density {hi:.6g} >= R = {mf.R}; try a smaller dt")
    else:
        raise SolverError(
            f"implicit step did not converge in {cfg.max_iters} iterations (residual {res:.3e} > tol {cfg.tol:g}) "
            f"at dt={dt:g}; reduce dt or the damping factor"
        )
    if r.min() < NEGATIVE_TOL:
        raise NegativeDensityError(f"implicit solution has density {r.min():.3e} < 0 at dt={dt:g}")
    return field.with_rho(r), ImplicitStepInfo(iterations=it, residual=res)


def step_implicit(field: DensityField, mf: ModelFunctions, dt: float,
                  cfg: ImplicitSolverConfig = ImplicitSolverConfig()) -> DensityField:
    """One implicit step; raises SolverError when the fixed point is not reached."""
    return step_implicit_info(field, mf, dt, cfg)[0]


def run_implicit(field: DensityField, mf: ModelFunctions, T: float, dt: float,
                 cfg: ImplicitSolverConfig = ImplicitSolverConfig(), *,
                 cadence: Optional[float] = None, snapshot_times: Sequence[float] = (),
                 observer=None, record_diagnostics: bool = True):
    """Fixed-step implicit run from 0 to T (same result layout as run_explicit)."""
    check_support(field.rho)
    stats = {"max_iterations": 0}

    def stepper(f, h):
        new, info = step_implicit_info(f, mf, h, cfg)
        stats["max_iterations"] = max(stats["max_iterations"], info.iterations)
        return new, None

    recorder = (lambda t, f: diagnostics.record(t, f, mf)) if record_diagnostics else None
    res = march(field, stepper, T, lambda f: dt, fixed=True, recorder=recorder, cadence=cadence,
                snapshot_times=snapshot_times, observer=observer)
    res.M = field.max
    res.max_iterations = stats["max_iterations"]
    return res


@dataclass
class Comparison:
    t: np.ndarray
    sup_drho: np.ndarray
    sup_dw: np.ndarray
    max_iterations: int = 0

    def rows(self):
        return list(zip(self.t.tolist(), self.sup_drho.tolist(), self.sup_dw.tolist()))


def compare_fields(field: DensityField, mf: ModelFunctions, T: float, dt_implicit: float, dt_explicit: float,
                   cfg: ImplicitSolverConfig = ImplicitSolverConfig(), *, sample_every: int = 1,
                   allow_cfl_violation: bool = False) -> Comparison:
    """Run both schemes from ``field`` and sample sup-norm differences at shared times.

    Samples are taken every ``sample_every`` implicit steps, including t = 0.
    The explicit step must divide the implicit one.
    """
    ratio = dt_implicit / dt_explicit
    k = round(ratio)
    if k < 1 or abs(ratio - k) > 1e-9 * ratio:
        raise ValueError(f"dt_implicit = {dt_implicit:g} is not an integer multiple of dt_explicit = {dt_explicit:g}")
    n_imp = max(1, round(T / dt_implicit))
    every = k * sample_every

    counts = {"exp": 0, "imp": 0}
    exp_samples = {0: (field.rho, diagnostics.speed_field(field, mf))}

    def exp_obs(t, old, new, rep):
        counts["exp"] += 1
        if counts["exp"] % every == 0:
            exp_samples[counts["exp"] // k] = (new.rho, diagnostics.speed_field(new, mf))

    run_explicit(field, mf, n_imp * dt_implicit, dt=dt_explicit, observer=exp_obs,
                 allow_cfl_violation=allow_cfl_violation, record_diagnostics=False)

    imp_samples = {0: (field.rho, diagnostics.speed_field(field, mf))}

    def imp_obs(t, old, new, rep):
        counts["imp"] += 1
        if counts["imp"] % sample_every == 0:
            imp_samples[counts["imp"]] = (new.rho, diagnostics.speed_field(new, mf))

    res = run_implicit(field, mf, n_imp * dt_implicit, dt_implicit, cfg, observer=imp_obs, record_diagnostics=False)

    steps = sorted(set(exp_samples) & set(imp_samples))
    t = np.array([s * dt_implicit for s in steps])
    drho = np.array([np.max(np.abs(imp_samples[s][0] - exp_samples[s][0])) for s in steps])
    dw = np.array([np.max(np.abs(imp_samples[s][1] - exp_samples[s][1])) for s in steps])
    return Comparison(t=t, sup_drho=drho, sup_dw=dw, max_iterations=res.max_iterations)
