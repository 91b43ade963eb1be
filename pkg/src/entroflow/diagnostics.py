"""Measurement functionals on density fields and runs.

Mass, the kinetic and potential energies E1/E2, the asymptotic residual
sup_i rho_i |Q'(rho_i) - Q'(rho_{i+1})|, the weak-form residuals of a
stored run against a test function, and the traffic mean-flow metric.

All spatial sums treat cells beyond the grid as empty, matching the
stepping code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import SolverError
from .grid import DensityField, Grid1D
from .model_functions import ModelFunctions

RECORD_FIELDS = ("t", "mass", "E1", "E2", "sup_residual", "rho_min", "rho_max")


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass: float
    E1: float
    E2: float
    sup_residual: float
    rho_min: float
    rho_max: float

    def as_row(self) -> tuple:
        return tuple(getattr(self, k) for k in RECORD_FIELDS)

    def as_dict(self) -> dict:
        return asdict(self)


def _padded(rho: np.ndarray) -> np.ndarray:
    return np.append(rho, 0.0)


def mass(field: DensityField) -> float:
    """dx * sum(rho), summed with correct rounding (math.fsum)."""
    return field.dx * math.fsum(field.rho)


def interface_q(rho: np.ndarray, mf: ModelFunctions, dx: float, Qp: Optional[np.ndarray] = None) -> np.ndarray:
    """q_i = (Q'(rho_{i+1}) - Q'(rho_i)) / dx for every cell i (rho_n = 0)."""
    if Qp is None:
        Qp = np.asarray(mf.Qprime(rho))
    Qpp = _padded(Qp)
    return (Qpp[1:] - Qpp[:-1]) / dx


def speed_field(field: DensityField, mf: ModelFunctions) -> np.ndarray:
    """w_i = h(-q_i), the cell speeds used by the scheme."""
    q = interface_q(field.rho, mf, field.dx)
    return np.asarray(mf.h(-q))


def energy_E1(field: DensityField, mf: ModelFunctions) -> float:
    """dx * sum rho_i H(-kappa(rho_i) (rho_{i+1} - rho_i) / dx).

    Forward difference on the same stencil as q_i, in the kappa * rho_x
    form. Reporting quantity only; no discrete monotonicity is claimed.
    """
    rho = field.rho
    grad = np.diff(_padded(rho)) / field.dx
    arg = -np.asarray(mf.kappa(rho)) * grad
    vals = rho * np.asarray(mf.H(arg))
    return field.dx * math.fsum(vals)


def energy_E2(field: DensityField, mf: ModelFunctions) -> float:
    """dx * sum Q(rho_i)."""
    return field.dx * math.fsum(np.asarray(mf.Q(field.rho)))


def prop7_residual(field: DensityField, mf: ModelFunctions) -> float:
    """sup_i rho_i |Q'(rho_i) - Q'(rho_{i+1})|; tends to 0 as the scheme equilibrates."""
    rho = field.rho
    Qpp = _padded(np.asarray(mf.Qprime(rho)))
    return float(np.max(rho * np.abs(Qpp[:-1] - Qpp[1:])))


def record(t: float, field: DensityField, mf: ModelFunctions) -> DiagnosticsRecord:
    return DiagnosticsRecord(
        t=float(t),
        mass=mass(field),
        E1=energy_E1(field, mf),
        E2=energy_E2(field, mf),
        sup_residual=prop7_residual(field, mf),
        rho_min=field.min,
        rho_max=field.max,
    )


# ---------------------------------------------------------------------------
# weak-form residuals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported phi(t, x) with analytic partial derivatives.

    ``t_support`` and ``x_support`` are closed intervals containing the
    support; they let the residual accumulation skip empty cells.
    """

    __test__ = False  # not a pytest class

    phi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    phi_t: Callable[[np.ndarray, np.ndarray], np.ndarray]
    phi_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    t_support: tuple
    x_support: tuple


def _bump(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = np.abs(u) < 1.0
    out[m] = np.exp(-1.0 / (1.0 - u[m] ** 2))
    return out


def _bump_prime(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = np.abs(u) < 1.0
    um = u[m]
    d = 1.0 - um**2
    out[m] = np.exp(-1.0 / d) * (-2.0 * um / d**2)
    return out


def bump_test_function(t0: float, sigma_t: float, x0: float, sigma_x: float) -> TestFunction:
    """phi(t, x) = B((t-t0)/sigma_t) * B((x-x0)/sigma_x), B(u) = exp(-1/(1-u^2)) on |u| < 1."""

    def phi(t, x):
        return _bump((t - t0) / sigma_t) * _bump((x - x0) / sigma_x)

    def phi_t(t, x):
        return _bump_prime((t - t0) / sigma_t) / sigma_t * _bump((x - x0) / sigma_x)

    def phi_x(t, x):
        return _bump((t - t0) / sigma_t) * _bump_prime((x - x0) / sigma_x) / sigma_x

    return TestFunction(phi, phi_t, phi_x, (t0 - sigma_t, t0 + sigma_t), (x0 - sigma_x, x0 + sigma_x))


_G3_X, _G3_W = np.polynomial.legendre.leggauss(3)


class WeakResidualAccumulator:
    """Streams a run step by step and accumulates the two weak-form integrals.

        r1 = | int int rho (w phi_x + phi_t) dx dt + int phi(0, x) rho0(x) dx |
        r2 = | int int (phi beta(w) - phi_x Q'(rho)) dx dt |

    rho and w are the piecewise-constant reconstructions (cell i, step k
    holds rho_i^k, w_i^k on [x_i, x_{i+1}) x [t_k, t_{k+1})); every cell
    integral of phi and its derivatives uses tensor 3-point Gauss. beta(w_i)
    is taken as -q_i, the value the scheme defines it to be.
    """

    def __init__(self, phi: TestFunction, grid: Grid1D, mf: ModelFunctions,
                 rho0: Optional[Callable[[np.ndarray], np.ndarray]] = None):
        self.phi = phi
        self.grid = grid
        self.mf = mf
        self.rho0 = rho0
        xa, xb = phi.x_support
        if xa < grid.x0 or xb > grid.x1:
            raise ValueError(f"test function x-support [{xa}, {xb}] exceeds the grid [{grid.x0}, {grid.x1}]")
        edges = grid.edges
        lo = max(0, int(np.searchsorted(edges, xa, side="right")) - 1)
        hi = min(grid.n, int(np.searchsorted(edges, xb, side="left")) + 1)
        self._cells = slice(lo, hi)
        left = edges[lo:hi]
        self._xq = left[:, None] + 0.5 * grid.dx * (1.0 + _G3_X[None, :])
        self._int1 = 0.0
        self._int2 = 0.0
        self._initial = None
        self._t_end = 0.0

    def add_step(self, t: float, dt: float, rho: np.ndarray, w: Optional[np.ndarray] = None) -> None:
        """Account for the slab [t, t + dt) on which the field equals ``rho``."""
        if self._initial is None:
            self._initial = self._initial_term(rho)
        self._t_end = t + dt
        ta, tb = self.phi.t_support
        if t + dt <= ta or t >= tb:
            return
        s = self._cells
        rho_full = np.asarray(rho, dtype=float)
        Qp = np.asarray(self.mf.Qprime(rho_full))
        q = interface_q(rho_full, self.mf, self.grid.dx, Qp=Qp)
        if w is None:
            w = np.asarray(self.mf.h(-q))
        r, ww, beta_w, qp = rho_full[s], np.asarray(w)[s], -q[s], Qp[s]

        tq = t + 0.5 * dt * (1.0 + _G3_X)
        T = tq[:, None, None]
        X = self._xq[None, :, :]
        cell = 0.25 * dt * self.grid.dx
        wts = _G3_W[:, None, None] * _G3_W[None, None, :]
        I_phi = cell * np.sum(wts * self.phi.phi(T, X), axis=(0, 2))
        I_phit = cell * np.sum(wts * self.phi.phi_t(T, X), axis=(0, 2))
        I_phix = cell * np.sum(wts * self.phi.phi_x(T, X), axis=(0, 2))

        self._int1 += math.fsum(r * (ww * I_phix + I_phit))
        self._int2 += math.fsum(I_phi * beta_w - I_phix * qp)

    def _initial_term(self, rho_first: np.ndarray) -> float:
        # int phi(0, x) rho0(x) dx, exact rho0 when available
        X = self._xq
        vals_phi = self.phi.phi(np.zeros_like(X), X)
        if self.rho0 is not None:
            dens = np.asarray(self.rho0(X), dtype=float)
            cellint = 0.5 * self.grid.dx * np.sum(_G3_W[None, :] * vals_phi * dens, axis=1)
        else:
            cellint = 0.5 * self.grid.dx * (vals_phi @ _G3_W) * np.asarray(rho_first)[self._cells]
        return math.fsum(cellint)

    def residuals(self) -> tuple:
        if self._initial is None:
            return 0.0, 0.0
        tb = self.phi.t_support[1]
        if self._t_end < tb:
            raise ValueError(f"run ends at t = {self._t_end}, before the test-function support ends ({tb})")
        return abs(self._int1 + self._initial), abs(self._int2)


def weak_residuals(history: Iterable[tuple], phi: TestFunction, grid: Grid1D, mf: ModelFunctions,
                   rho0: Optional[Callable] = None) -> tuple:
    """(r1, r2) for a stored run given as (t_k, dt_k, rho^k[, w^k]) tuples."""
    acc = WeakResidualAccumulator(phi, grid, mf, rho0=rho0)
    for item in history:
        acc.add_step(*item)
    return acc.residuals()


# ---------------------------------------------------------------------------
# traffic mean flow
# ---------------------------------------------------------------------------


def support_interval(edges: np.ndarray, density: np.ndarray, support_eps: float) -> Optional[tuple]:
    """Smallest [a, b] made of whole cells that contains every cell above ``support_eps``."""
    idx = np.flatnonzero(np.asarray(density) > support_eps)
    if idx.size == 0:
        return None
    return float(edges[idx[0]]), float(edges[idx[-1] + 1])


def support_averaged_flow(edges: np.ndarray, density: np.ndarray, speed: np.ndarray, support_eps: float) -> float:
    """(1 / (b - a)) * int_a^b rho v dxi over the detected support."""
    sup = support_interval(edges, density, support_eps)
    if sup is None:
        raise SolverError("mean flow: empty support")
    idx = np.flatnonzero(np.asarray(density) > support_eps)
    i0, i1 = idx[0], idx[-1] + 1
    widths = np.diff(edges)[i0:i1]
    flux = np.asarray(density)[i0:i1] * np.asarray(speed)[i0:i1] * widths
    return math.fsum(flux) / (sup[1] - sup[0])


def mean_flow(times: Sequence[float], edges: np.ndarray, densities: Sequence[np.ndarray],
              speeds: Sequence[np.ndarray], support_eps: float = 1e-6) -> float:
    """Time average (trapezoid rule) of the support-averaged flow rho*v.

    ``times`` must start at 0 and end at the horizon T. Units follow the
    inputs (veh/km and km/h give veh/h).
    """
    times = np.asarray(times, dtype=float)
    if times.size < 2 or not times[-1] > times[0]:
        raise ValueError("mean flow needs at least two increasing sample times")
    vals = np.array([support_averaged_flow(edges, d, v, support_eps) for d, v in zip(densities, speeds)])
    return float(np.trapezoid(vals, times) / (times[-1] - times[0]))
