"""Independent reference implementations used by the tests.

None of these share code with the package: each recomputes a quantity from
its definition with a different method (adaptive quadrature, root
bracketing, brute-force search, explicit loops).
"""

import math

import mpmath as mp
import numpy as np
from scipy import integrate, optimize


def kappa_tanh(rho, c, R):
    return 0.0 if rho <= 1.0 else c * (rho - 1.0) ** 2 / (R - rho)


def kappa_traffic(rho, c, R):
    return 0.0 if rho <= 1.0 else c * (rho - 1.0) ** 2 / (R - rho) / rho**2


def Qprime_quad(kappa, rho):
    if rho <= 1.0:
        return 0.0
    return integrate.quad(kappa, 1.0, rho, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def Q_quad(kappa, rho):
    if rho <= 1.0:
        return 0.0
    return integrate.quad(lambda t: (rho - t) * kappa(t), 1.0, rho, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def Q_tanh_closed(rho, c, R):
    """Closed form of int_1^rho (rho - t) c (t-1)^2 / (R-t) dt, derived by hand.

    With u = t - 1 and D = R - 1, (t-1)^2/(R-t) = -u - D + D^2/(D - u).
    The terms cancel to O(e^4) near rho = 1, so the sum is taken in 50-digit
    arithmetic.
    """
    if rho <= 1.0:
        return 0.0
    mp.mp.dps = 50
    D = mp.mpf(R) - 1
    e = mp.mpf(rho) - 1
    # int_0^e (e - u) (-u - D + D^2/(D-u)) du
    poly = -(e**3) / 6.0 - D * e**2 / 2.0
    # int_0^e (e - u) D^2/(D - u) du; write e - u = (D - u) - (D - e)
    log_part = D**2 * (e - (D - e) * mp.log(D / (D - e)))
    return float(c * (poly + log_part))


def beta_traffic(w, b):
    return (b + 1) / 2 * (w * (b + 1) / ((w + 1) * (b - w)) + math.log(1 + w) - math.log(1 - w / b))


def h_traffic_brentq(s, b):
    """beta^{-1}(s) by Brent's method on (-1, b)."""
    if s == 0.0:
        return 0.0
    lo, hi = -1.0 + 1e-15, b * (1 - 1e-15)
    return optimize.brentq(lambda w: beta_traffic(w, b) - s, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)


def quartic_mass(eps1, eps2, amp):
    """int amp (x-eps1)^2 (x-eps2)^2 dx over (eps1, eps2) = amp L^5 / 30."""
    L = eps2 - eps1
    return amp * L**5 / 30.0


def energy_E1_loop(rho, dx, kappa, H):
    total = 0.0
    n = len(rho)
    for i in range(n):
        nxt = rho[i + 1] if i + 1 < n else 0.0
        total += rho[i] * H(-kappa(rho[i]) * (nxt - rho[i]) / dx)
    return dx * total


def lwr_q(rho, vf=102.0, rho_c=33.3, a=2.34):
    return rho * vf * np.exp(-((np.asarray(rho) / rho_c) ** a) / a)


def godunov_bruteforce(rl, rr, npts=100001, **kw):
    u = np.linspace(min(rl, rr), max(rl, rr), npts)
    q = lwr_q(u, **kw)
    return float(q.min()) if rl <= rr else float(q.max())


def riemann_exact(rl, rr, xi, tau, npts=200001, **kw):
    """Entropy solution of the LWR Riemann problem at xi / tau.

    Uses the variational characterisation: rho(s) minimises q(u) - s u over
    [rl, rr] when rl <= rr and maximises it over [rr, rl] otherwise.
    """
    u = np.linspace(min(rl, rr), max(rl, rr), npts)
    q = lwr_q(u, **kw)
    out = np.empty(len(xi))
    for k, x in enumerate(xi):
        s = x / tau
        vals = q - s * u
        out[k] = u[np.argmin(vals)] if rl <= rr else u[np.argmax(vals)]
    return out
