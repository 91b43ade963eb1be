"""Constitutive functions of the degenerate heat equation.

    rho_t + (rho * h(-kappa(rho) * rho_x))_x = 0

A :class:`ModelFunctions` bundle carries the speed map ``h`` (and its
inverse ``beta``), the viscosity ``kappa`` and the two potentials

    Qprime(rho) = int_1^rho kappa(tau) dtau
    Q(rho)      = int_1^rho (rho - tau) kappa(tau) dtau

together with the parameters ``c``, ``R``, ``b`` and ``h_prime_sup``
(the sup-norm of h', needed by the step-size bounds).

Two bundles are provided: :func:`make_tanh_model` (h = tanh) and
:func:`make_traffic_model` (h = inverse of the automated-vehicle speed
potential). :func:`make_custom_model` wraps plain user functions and falls
back to quadrature for every potential.

All callables accept scalars or numpy arrays and return the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize, special

from .errors import SolverError

ArrayFn = Callable[[np.ndarray], np.ndarray]

# Densities this close to R are treated as singular.
SINGULAR_MARGIN = 1e-12
# Endpoint clamping used when bracketing the inverse of beta.
ENDPOINT_CLAMP = 1e-14

_GL16_X, _GL16_W = np.polynomial.legendre.leggauss(16)


def _out(x: np.ndarray):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class ModelFunctions:
    """Immutable bundle of the scalar functions of one model.

    Attributes:
        h: speed deviation map, R -> (-1, b), increasing with h(0) = 0.
        h_prime: derivative of ``h``.
        kappa: viscosity on [0, R), zero on [0, 1].
        Q: potential density, zero on [0, 1].
        Qprime: derivative of ``Q``, equal to the antiderivative of ``kappa`` from 1.
        beta: inverse of ``h`` on (-1, b).
        H: antiderivative of ``h`` from 0 (kinetic-energy density).
        c, R, b: model parameters.
        h_prime_sup: sup of ``h_prime`` over the real line.
        name: short label used in manifests.
        mu: dynamic viscosity for the traffic bundle (kappa = mu / rho**2), else None.
        kappa_monotone: when True the max of kappa on [0, M] is kappa(M).
    """

    h: ArrayFn
    h_prime: ArrayFn
    kappa: ArrayFn
    Q: ArrayFn
    Qprime: ArrayFn
    beta: ArrayFn
    H: ArrayFn
    c: float
    R: float
    b: float
    h_prime_sup: float
    name: str = "custom"
    mu: Optional[ArrayFn] = field(default=None, compare=False)
    kappa_monotone: bool = True

    def kappa_max(self, M: float) -> float:
        """max of kappa over [0, M]."""
        if M <= 1.0:
            return 0.0
        if self.kappa_monotone:
            return float(self.kappa(M))
        grid = np.linspace(0.0, M, 4001)
        return float(np.max(self.kappa(grid)))

    def describe(self) -> dict:
        return {
            "model": self.name,
            "c": self.c,
            "R": self.R,
            "b": self.b,
            "h_prime_sup": self.h_prime_sup,
        }


def _check_params(c: float, R: float, b: float) -> None:
    if not c > 0:
        raise ValueError(f"c must be > 0, got {c}")
    if not R > 1:
        raise ValueError(f"R must be > 1, got {R}")
    if not b > 0:
        raise ValueError(f"b must be > 0, got {b}")


def _guard_density(rho: np.ndarray, R: float) -> None:
    if np.any(rho >= R - SINGULAR_MARGIN):
        worst = float(np.max(rho))
        raise ValueError(f"density {worst!r} is at or above the singular value R - 1e-12 (R = {R})")


def _potentials(kappa_offset: ArrayFn, qprime_closed: ArrayFn, q_closed: ArrayFn, R: float, near_one: float):
    """Build vectorized Q', Q from closed forms.

    The closed forms cancel catastrophically as rho -> 1+, so within
    ``near_one`` of 1 both integrals are taken by 16-point Gauss-Legendre
    instead. With ``near_one`` at most half the distance to the nearest
    pole of kappa the rule is exact to rounding. ``kappa_offset(u)`` is
    kappa at 1 + u, so the nodes never round through tau - 1.
    """

    def _split(rho, closed, weight):
        rho = np.asarray(rho, dtype=float)
        _guard_density(rho, R)
        out = np.zeros_like(rho)
        eps = rho - 1.0
        far = eps >= near_one
        near = (eps > 0.0) & ~far
        if np.any(far):
            out[far] = closed(rho[far])
        if np.any(near):
            e = eps[near]
            half = 0.5 * e
            u = half[:, None] * (1.0 + _GL16_X)
            vals = weight(u, e[:, None]) * kappa_offset(u)
            # row sums rather than matmul, so a batch reproduces scalar calls bit for bit
            out[near] = half * (vals * _GL16_W).sum(axis=1)
        return _out(out)

    def Qprime(rho):
        return _split(rho, qprime_closed, lambda u, e: 1.0)

    def Q(rho):
        return _split(rho, q_closed, lambda u, e: e - u)

    return Q, Qprime


# ---------------------------------------------------------------------------
# tanh bundle
# ---------------------------------------------------------------------------


def _ln_cosh(s):
    s = np.abs(np.asarray(s, dtype=float))
    return _out(s + np.log1p(np.exp(-2.0 * s)) - math.log(2.0))


def make_tanh_model(c: float, R: float, b: float = 1.0) -> ModelFunctions:
    """Academic bundle: h = tanh, kappa = c (rho-1)^2 / (R-rho) above 1.

    ``b`` bounds the range of h from above; since tanh maps onto (-1, 1),
    values below 1 are rejected.
    """
    _check_params(c, R, b)
    if b < 1.0:
        raise ValueError(f"tanh has range (-1, 1), so b must be >= 1, got {b}")
    c, R, b = float(c), float(R), float(b)
    D = R - 1.0

    def kappa_raw(rho):
        return c * (rho - 1.0) ** 2 / (R - rho)

    def kappa_offset(u):
        return c * u * u / (D - u)

    def kappa(rho):
        rho = np.asarray(rho, dtype=float)
        _guard_density(rho, R)
        out = np.zeros_like(rho)
        m = rho > 1.0
        out[m] = kappa_raw(rho[m])
        return _out(out)

    def qprime_closed(rho):
        lg = np.log(D / (R - rho))
        return c * (D * D * lg - 2.0 * D * (rho - 1.0) + 0.5 * (D * D - (R - rho) ** 2))

    def q_closed(rho):
        # closed form for the quadratic-over-linear viscosity
        poly = (rho * rho + rho + 1.0) / 3.0 + (R - rho) * (rho + 2.0 * R + 1.0) / 2.0 + rho - 2.0 * R
        return c * ((rho - 1.0) * poly + D * D * (rho - R) * np.log(D / (R - rho)))

    # kappa's only pole is at R
    Q, Qprime = _potentials(kappa_offset, qprime_closed, q_closed, R, near_one=0.5 * D)

    def h(s):
        return _out(np.tanh(np.asarray(s, dtype=float)))

    def h_prime(s):
        t = np.tanh(np.asarray(s, dtype=float))
        return _out(1.0 - t * t)

    def beta(w):
        return _out(np.arctanh(np.asarray(w, dtype=float)))

    return ModelFunctions(
        h=h, h_prime=h_prime, kappa=kappa, Q=Q, Qprime=Qprime, beta=beta, H=_ln_cosh,
        c=c, R=R, b=b, h_prime_sup=1.0, name="tanh",
    )


# ---------------------------------------------------------------------------
# traffic bundle
# ---------------------------------------------------------------------------


def traffic_q(w, b: float):
    """Weight q(w) = beta'(w) of the automated-vehicle speed potential."""
    w = np.asarray(w, dtype=float)
    return _out((1.0 + b) ** 2 * (2.0 * b + (b - 1.0) * w) / (2.0 * (b - w) ** 2 * (1.0 + w) ** 2))


def traffic_beta(w, b: float):
    """Speed potential beta(w) = int_0^w q(s) ds on (-1, b)."""
    w = np.asarray(w, dtype=float)
    val = 0.5 * (b + 1.0) * (w * (b + 1.0) / ((w + 1.0) * (b - w)) + np.log1p(w) - np.log1p(-w / b))
    return _out(val)


def _traffic_beta_integral(w, b: float):
    # int_0^w beta(v) dv, obtained by partial fractions
    w = np.asarray(w, dtype=float)
    return 0.5 * (b + 1.0) * w * (np.log1p(w) - np.log1p(-w / b))


def _polish_small(beta: ArrayFn, dbeta: ArrayFn, w: np.ndarray, s: np.ndarray, b: float) -> np.ndarray:
    """One Newton step taken directly in w for |w| small.

    The logistic coordinate only resolves w to ~1e-16 absolute, so tiny
    roots would otherwise carry a large relative error.
    """
    small = np.abs(w) < 0.25 * min(1.0, b)
    if not np.any(small):
        return w
    ws = w[small]
    out = w.copy()
    out[small] = ws - (beta(ws) - s[small]) / dbeta(ws)
    return out


def invert_beta(
    beta: ArrayFn,
    s,
    b: float,
    dbeta: Optional[ArrayFn] = None,
    rtol: float = 1e-12,
    max_iter: int = 500,
):
    """Solve beta(w) = s for w in (-1, b), elementwise.

    ``beta`` must be increasing on (-1, b) with beta(0) = 0 and range the
    whole real line. The search runs in the logistic coordinate y with
    w = -1 + (b+1) * expit(y), on the residual asinh(beta(w)) - asinh(s),
    which is close to linear in y even where beta blows up. A bracket is
    grown geometrically from the preimage of w = 0 (steps 1, 2, 4, ... in
    y, clamped to 1e-14 from either endpoint of (-1, b)); the root is then
    polished by Newton steps on ``dbeta`` that fall back to bisection
    whenever they leave the bracket. Without ``dbeta`` pure bisection is
    used.

    Converged entries satisfy ``|beta(w) - s| <= rtol * max(1, |s|)`` or
    have a bracket collapsed to rounding. Values of s beyond the clamped
    endpoints return the clamped endpoint.

    Raises:
        SolverError: if ``max_iter`` passes do not converge (malformed beta).
    """
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if not np.all(np.isfinite(s_arr)):
        raise SolverError("invert_beta: non-finite argument")
    w = np.zeros_like(s_arr)
    idx = np.flatnonzero(s_arr != 0.0)
    if idx.size == 0:
        return _out(w.reshape(np.shape(s)))

    span = b + 1.0
    y_min = special.logit(ENDPOINT_CLAMP / span)
    y_max = special.logit(1.0 - ENDPOINT_CLAMP / span)
    y_zero = special.logit(1.0 / span)

    def w_of(y):
        return -1.0 + span * special.expit(y)

    ss = s_arr[idx]
    target = np.arcsinh(ss)
    tol = rtol * np.maximum(1.0, np.abs(ss))
    sign = np.where(ss > 0, 1.0, -1.0)

    def resid(y, j):
        return np.arcsinh(beta(w_of(y))) - target[j]

    # y_zero is short of every root; expand from it
    lo = np.where(sign > 0, y_zero, y_min)
    hi = np.where(sign > 0, y_max, y_zero)
    open_ = np.ones(ss.size, dtype=bool)
    for k in range(max_iter):
        j = np.flatnonzero(open_)
        if j.size == 0:
            break
        cand = np.clip(y_zero + sign[j] * 2.0**k, y_min, y_max)
        f = resid(cand, j)
        passed = sign[j] * f >= 0.0
        up = sign[j] > 0
        # short candidates tighten the inner bound, passing ones close the bracket
        lo[j[up & ~passed]] = cand[up & ~passed]
        hi[j[up & passed]] = cand[up & passed]
        hi[j[~up & ~passed]] = cand[~up & ~passed]
        lo[j[~up & passed]] = cand[~up & passed]
        open_[j[passed]] = False
        stuck = ~passed & ((cand == y_min) | (cand == y_max))
        if np.any(stuck):
            js = j[stuck]
            lo[js] = hi[js] = cand[stuck]
            open_[js] = False
    else:
        raise SolverError("invert_beta: could not bracket the root (is beta onto the real line?)")

    y = 0.5 * (lo + hi)
    active = np.ones(ss.size, dtype=bool)
    for _ in range(max_iter):
        j = np.flatnonzero(active)
        if j.size == 0:
            break
        yj = y[j]
        wj = w_of(yj)
        bj = beta(wj)
        err = bj - ss[j]
        wlo, whi = w_of(lo[j]), w_of(hi[j])
        done = (np.abs(err) <= tol[j]) | (whi - wlo <= 4.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(wj)))
        neg = err < 0
        lo[j[neg]] = yj[neg]
        hi[j[~neg]] = yj[~neg]
        if dbeta is not None:
            sig = special.expit(yj)
            slope = dbeta(wj) * span * sig * (1.0 - sig) / np.sqrt(1.0 + bj * bj)
            with np.errstate(divide="ignore", invalid="ignore"):
                yn = yj - (np.arcsinh(bj) - target[j]) / slope
        else:
            yn = np.full_like(yj, np.nan)
        lj, hj = lo[j], hi[j]
        bad = ~((yn > lj) & (yn < hj))
        yn = np.where(bad, 0.5 * (lj + hj), yn)
        y[j] = np.where(done, yj, yn)
        active[j[done]] = False
    else:
        raise SolverError(f"invert_beta: no convergence within {max_iter} iterations")

    w[idx] = w_of(y) if dbeta is None else _polish_small(beta, dbeta, w_of(y), ss, b)
    return _out(w.reshape(np.shape(s)))


class TabulatedInverse:
    """Fast inverse of beta: tabulated first guess, Newton polish, robust fallback.

    The map y -> asinh(beta(w(y))) (same logistic coordinate as
    :func:`invert_beta`) is tabulated once on a uniform y grid. A query
    interpolates the table for y, takes up to ``newton_steps`` Newton
    steps and accepts entries meeting the :func:`invert_beta` tolerance;
    anything left over goes through :func:`invert_beta`.
    """

    def __init__(self, beta: ArrayFn, dbeta: ArrayFn, b: float, size: int = 4097,
                 newton_steps: int = 3, rtol: float = 1e-12):
        self.beta, self.dbeta, self.b = beta, dbeta, float(b)
        self.span = self.b + 1.0
        self.rtol = rtol
        self.newton_steps = newton_steps
        y_min = special.logit(ENDPOINT_CLAMP / self.span)
        y_max = special.logit(1.0 - ENDPOINT_CLAMP / self.span)
        self._y = np.linspace(y_min, y_max, size)
        self._u = np.arcsinh(beta(self._w(self._y)))
        # rounding may flatten the table next to the endpoints, never reverse it
        if not (np.all(np.isfinite(self._u)) and np.all(np.diff(self._u) >= 0)):
            raise SolverError("beta is not increasing on its tabulation grid")

    def _w(self, y):
        return -1.0 + self.span * special.expit(y)

    def __call__(self, s):
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        w = np.zeros_like(s_arr)
        idx = np.flatnonzero(s_arr != 0.0)
        if idx.size:
            ss = s_arr[idx]
            target = np.arcsinh(ss)
            tol = self.rtol * np.maximum(1.0, np.abs(ss))
            inside = (target > self._u[0]) & (target < self._u[-1])
            y = np.interp(target, self._u, self._y)
            done = ~inside
            wy = self._w(y)
            for _ in range(self.newton_steps):
                bj = self.beta(wy)
                done |= np.abs(bj - ss) <= tol
                if done.all():
                    break
                sig = special.expit(y)
                slope = self.dbeta(wy) * self.span * sig * (1.0 - sig) / np.sqrt(1.0 + bj * bj)
                y = np.where(done, y, y - (np.arcsinh(bj) - target) / slope)
                wy = self._w(y)
            else:
                done |= np.abs(self.beta(wy) - ss) <= tol
            # outside the table the clamped endpoint is the answer, as in invert_beta
            wy = np.where(target <= self._u[0], self._w(self._y[0]), wy)
            wy = np.where(target >= self._u[-1], self._w(self._y[-1]), wy)
            w[idx] = _polish_small(self.beta, self.dbeta, wy, ss, self.b)
            rest = np.flatnonzero(~done)
            if rest.size:
                w[idx[rest]] = invert_beta(self.beta, ss[rest], self.b, dbeta=self.dbeta, rtol=self.rtol)
        return _out(w.reshape(np.shape(s)))


def _traffic_h_prime_sup(b: float) -> float:
    """1 / min q over (-1, b), by golden-section search.

    q blows up at both endpoints, so (-1+, 0, b-) is a valid bracket.
    """
    lo, hi = -1.0 + 1e-9, b - 1e-9

    def qf(w):
        return traffic_q(w, b)

    if not (qf(0.0) < qf(lo) and qf(0.0) < qf(hi)):
        raise SolverError("traffic model: q has no interior minimum bracket")
    res = optimize.minimize_scalar(qf, bracket=(lo, 0.0, hi), method="golden", tol=1e-10)
    if not res.success or not (lo < res.x < hi):
        raise SolverError(f"traffic model: golden-section on q failed ({res.message})")
    return 1.0 / float(res.fun)


def make_traffic_model(c: float, R: float, b: float) -> ModelFunctions:
    """Automated-vehicle bundle in dimensionless variables.

    beta is the closed-form speed potential and h its numerical inverse.
    The dynamic viscosity is mu(rho) = c (rho-1)^2/(R-rho) above 1, and
    the viscosity entering the heat equation is kappa = mu / rho**2.
    """
    _check_params(c, R, b)
    c, R, b = float(c), float(R), float(b)
    D = R - 1.0
    A = (1.0 - 2.0 * R) / R**2
    B = 1.0 / R
    C = D * D / R**2

    def mu_raw(rho):
        return c * (rho - 1.0) ** 2 / (R - rho)

    def kappa_raw(rho):
        return mu_raw(rho) / (rho * rho)

    def kappa_offset(u):
        return c * u * u / ((D - u) * (1.0 + u) ** 2)

    def _masked(raw):
        def fn(rho):
            rho = np.asarray(rho, dtype=float)
            _guard_density(rho, R)
            out = np.zeros_like(rho)
            m = rho > 1.0
            out[m] = raw(rho[m])
            return _out(out)

        return fn

    def qprime_closed(rho):
        L = np.log(D / (R - rho))
        return c * (A * np.log(rho) + B * (1.0 - 1.0 / rho) + C * L)

    def q_closed(rho):
        L = np.log(D / (R - rho))
        lr = np.log(rho)
        first = rho * (A * lr + B * (1.0 - 1.0 / rho) + C * L)
        moment = (A - C) * (rho - 1.0) + B * lr + C * R * L
        return c * (first - moment)

    # poles at 0 and R
    Q, Qprime = _potentials(kappa_offset, qprime_closed, q_closed, R, near_one=0.5 * min(1.0, D))

    def beta(w):
        return traffic_beta(w, b)

    def dbeta(w):
        return traffic_q(w, b)

    inverse = TabulatedInverse(beta, dbeta, b)

    def h(s):
        return inverse(s)

    def h_prime(s):
        return _out(1.0 / np.asarray(traffic_q(h(s), b)))

    def H(s):
        s = np.asarray(s, dtype=float)
        w = np.asarray(h(s))
        return _out(s * w - _traffic_beta_integral(w, b))

    return ModelFunctions(
        h=h, h_prime=h_prime, kappa=_masked(kappa_raw), Q=Q, Qprime=Qprime, beta=beta, H=H,
        c=c, R=R, b=b, h_prime_sup=_traffic_h_prime_sup(b), name="traffic", mu=_masked(mu_raw),
    )


# ---------------------------------------------------------------------------
# plug-in bundle and quadrature oracles
# ---------------------------------------------------------------------------


def quadrature_Q(kappa: Callable[[float], float], rho: float, R: Optional[float] = None) -> float:
    """Q(rho) = int_1^rho (rho - tau) kappa(tau) dtau by adaptive quadrature.

    Independent of any closed form; used as the reference for them.
    """
    rho = float(rho)
    if R is not None and rho >= R:
        raise ValueError(f"rho = {rho} must be below R = {R}")
    if rho <= 1.0:
        return 0.0
    val, _ = integrate.quad(lambda t: (rho - t) * float(kappa(t)), 1.0, rho, epsabs=1e-12, epsrel=1e-12, limit=200)
    return float(val)


def quadrature_Qprime(kappa: Callable[[float], float], rho: float, R: Optional[float] = None) -> float:
    """Q'(rho) = int_1^rho kappa(tau) dtau by adaptive quadrature."""
    rho = float(rho)
    if R is not None and rho >= R:
        raise ValueError(f"rho = {rho} must be below R = {R}")
    if rho <= 1.0:
        return 0.0
    val, _ = integrate.quad(lambda t: float(kappa(t)), 1.0, rho, epsabs=1e-12, epsrel=1e-12, limit=200)
    return float(val)


def make_custom_model(
    h: Callable[[float], float],
    kappa: Callable[[float], float],
    *,
    c: float,
    R: float,
    b: float,
    h_prime: Optional[Callable[[float], float]] = None,
    beta: Optional[Callable[[float], float]] = None,
    h_prime_sup: Optional[float] = None,
    kappa_monotone: bool = False,
) -> ModelFunctions:
    """Wrap plain scalar functions into a bundle.

    Q, Q', H come from adaptive quadrature, h' from central differences
    and beta from bisection on h unless supplied. Slow; intended for
    experiments with other constitutive laws, not for production runs.
    """
    _check_params(c, R, b)

    def vec(fn):
        def wrapped(x):
            x = np.asarray(x, dtype=float)
            return _out(np.vectorize(lambda v: float(fn(v)), otypes=[float])(x))

        return wrapped

    if h_prime is None:
        def h_prime(s, _h=h):
            step = 1e-6 * max(1.0, abs(s))
            return (_h(s + step) - _h(s - step)) / (2.0 * step)

    if beta is None:
        def beta(w, _h=h):
            # h is increasing and onto (-1, b): bracket beta(w) by expansion
            lo, hi = -1.0, 1.0
            while _h(lo) > w:
                lo *= 2.0
            while _h(hi) < w:
                hi *= 2.0
            return optimize.brentq(lambda s: _h(s) - w, lo, hi, xtol=1e-14)

    if h_prime_sup is None:
        grid = np.linspace(-50.0, 50.0, 20001)
        h_prime_sup = float(np.max(vec(h_prime)(grid)))

    def kappa_s(rho):
        return 0.0 if rho <= 1.0 else float(kappa(rho))

    def Q_s(rho):
        return quadrature_Q(kappa_s, rho, R)

    def Qp_s(rho):
        return quadrature_Qprime(kappa_s, rho, R)

    def H_s(s):
        return integrate.quad(lambda u: float(h(u)), 0.0, float(s), epsabs=1e-13, epsrel=1e-12)[0]

    return ModelFunctions(
        h=vec(h), h_prime=vec(h_prime), kappa=vec(kappa_s), Q=vec(Q_s), Qprime=vec(Qp_s), beta=vec(beta),
        H=vec(H_s), c=float(c), R=float(R), b=float(b), h_prime_sup=float(h_prime_sup), name="custom",
        kappa_monotone=kappa_monotone,
    )
