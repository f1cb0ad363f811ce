"""Constants of the critical ONNG variance bound and Gilbert variance coefficients."""

from __future__ import annotations

import math

import numpy as np

from .errors import ArgumentError, IntegrationError, NumericError
from .geometry import ball_intersection_fraction, reg_inc_beta, unit_ball_volume
from .quadrature import IntegrationResult, adaptive_quad, gk15, to_unit_interval

C1_CLOSED_FORM = (2.5 - math.sqrt(2.0)) * math.pi - 2.0 * math.sqrt(2.0)
BETA1_TABLE = {3: 0.203, 4: 0.175, 5: 0.150, 6: 0.128, 7: 0.110, 8: 0.094, 9: 0.081}
THETA_SPLIT = 0.32


def g_function(u):
    """g(u) = (pi/2) u^2 + (1 - u^2) arctan(u) - u, for u >= 0."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0):
        raise ArgumentError("g_function needs u >= 0")
    # the closed form cancels like u^2 * eps for large u; there we use the
    # convergent expansion g = pi/2 + sum_m (-1)^m 4m / (4m^2 - 1) u^(1-2m)
    big = u_arr > _G_SWITCH
    safe = np.where(big, 1.0, u_arr)
    direct = 0.5 * math.pi * safe**2 + (1.0 - safe**2) * np.arctan(safe) - safe
    inv = 1.0 / np.where(big, u_arr, _G_SWITCH)
    inv2 = inv * inv
    tail = np.zeros_like(inv)
    for m in range(_G_TERMS, 0, -1):
        tail = tail * inv2 + (-1) ** m * 4.0 * m / (4.0 * m * m - 1.0)
    series = 0.5 * math.pi + inv * tail
    out = np.where(big, series, direct)
    return float(out) if np.ndim(u) == 0 else out


_G_SWITCH = 4.0
_G_TERMS = 16  # truncation error below 4^-32


# ---------------------------------------------------------------------------
# c(d) by nested adaptive quadrature
# ---------------------------------------------------------------------------

def _c_integrand(r: float, a: np.ndarray, d: int) -> np.ndarray:
    """(d^2/2) r^(d-1) a^(-d/2-1) (1/q1 - 1/q2) with q1 = 1 + a^d - |B(0,1) ∩ B(r e1, a)|/kappa_d."""
    q2 = 1.0 + a**d
    overlap = ball_intersection_fraction(r, 1.0, a, d)
    if np.any(overlap < 0.0):
        raise NumericError("c(d) integrand became negative")
    # 1/q1 - 1/q2 written without the cancellation for small a
    diff = overlap / ((q2 - overlap) * q2)
    return 0.5 * d * d * r ** (d - 1) * a ** (-0.5 * d - 1.0) * diff


def _inner_c(r: float, d: int, rel_tol: float) -> tuple:
    """∫_0^r integrand da, with a = r v^2 to tame the a -> 0 behaviour."""

    def h(v):
        a = r * v * v
        return _c_integrand(r, a, d) * 2.0 * r * v

    bps = []
    vb2 = abs(1.0 - r) / r
    if 0.0 < vb2 < 1.0:
        bps.append(math.sqrt(vb2))
    res = adaptive_quad(h, 0.0, 1.0, abs_tol=1e-300, rel_tol=rel_tol, limit=200, breakpoints=bps, strict=False)
    return res


def c_constant(d: int, tol: float = 1e-8, limit: int = 200) -> IntegrationResult:
    """The dimensional constant c(d) of the critical ONNG variance bound.

    The outer r-range is split at 1 and the tail [1, ∞) mapped to [0, 1).
    Inner integrals are run at a relative tolerance well below ``tol`` and
    their errors are folded into the reported estimate.
    """
    if int(d) != d or not 1 <= d <= 6:
        raise ArgumentError("c_constant supports 1 <= d <= 6")
    d = int(d)
    inner_rel = 1e-3 * tol
    evals = [0]
    inner_err = [0.0]

    def outer(r_values):
        out = np.empty(len(r_values))
        for k, r in enumerate(r_values):
            if r <= 0.0:
                out[k] = 0.0
                continue
            res = _inner_c(float(r), d, inner_rel)
            evals[0] += res.evaluations
            inner_err[0] = max(inner_err[0], res.abs_error_estimate / max(abs(res.value), 1e-300))
            out[k] = res.value
        return out

    pieces = []
    try:
        pieces.append(adaptive_quad(outer, 0.0, 1.0, abs_tol=0.5 * tol, limit=limit))
        pieces.append(adaptive_quad(to_unit_interval(outer, 1.0), 0.0, 1.0, abs_tol=0.5 * tol, limit=limit))
    except IntegrationError as exc:
        done = sum(p.value for p in pieces) + (exc.partial.value if exc.partial else 0.0)
        raise IntegrationError(f"c({d}) did not converge: {exc}", IntegrationResult(done, math.inf, evals[0])) from exc
    value = math.fsum(p.value for p in pieces)
    err = sum(p.abs_error_estimate for p in pieces) + inner_err[0] * abs(value)
    return IntegrationResult(value, err, evals[0] + sum(p.evaluations for p in pieces))


# ---------------------------------------------------------------------------
# bound route for d >= 3
# ---------------------------------------------------------------------------

def beta1(d: int) -> float:
    """Step-function upper bound for the auxiliary constant, 3 <= d <= 9."""
    if int(d) != d or not 3 <= d <= 9:
        raise ArgumentError("beta1 is tabulated for 3 <= d <= 9")
    a = 0.5 * (d + 1)
    i = np.arange(1, 21)
    heights = g_function((2.0 - (i - 1) / 10.0) ** (0.5 * d))
    mass = reg_inc_beta(i / 40.0, a, a) - reg_inc_beta((i - 1) / 40.0, a, a)
    return float(np.dot(heights, mass))


def beta2(d: int, theta: float = THETA_SPLIT) -> float:
    """pi/2 * (I_theta((d+1)/2, (d+1)/2) + 2^(d-1) (1 - 2 theta)^d), for d >= 3."""
    if int(d) != d or d < 3:
        raise ArgumentError("beta2 needs an integer d >= 3")
    a = 0.5 * (d + 1)
    return 0.5 * math.pi * (reg_inc_beta(theta, a, a) + 2.0 ** (d - 1) * (1.0 - 2.0 * theta) ** d)


def critical_coefficient(d: int, c_value: float) -> float:
    """d (1 - pi/2 + c(d)); positive values give the t^d log t^d lower bound."""
    return d * (1.0 - 0.5 * math.pi + c_value)


# ---------------------------------------------------------------------------
# Gilbert graph
# ---------------------------------------------------------------------------

def gilbert_variance_coeffs(d: int, alpha: float) -> dict:
    """Leading coefficients of Var L_t = (s1 t^2 eps^(2a+d) + s2 t^3 eps^(2a+2d)) |W| (1 + O(eps))."""
    if not alpha > -0.5 * d:
        raise ArgumentError("need alpha > -d/2")
    kappa = unit_ball_volume(d)
    sigma1 = d * kappa / (2.0 * (d + 2.0 * alpha))
    sigma2 = (d * kappa) ** 2 / (alpha + d) ** 2
    return {"sigma1": sigma1, "sigma2": sigma2}


def gilbert_variance_asymptotic(d: int, alpha: float, t: float, epsilon: float, window_volume: float) -> float:
    s = gilbert_variance_coeffs(d, alpha)
    return (
        s["sigma1"] * t**2 * epsilon ** (2 * alpha + d) + s["sigma2"] * t**3 * epsilon ** (2 * alpha + 2 * d)
    ) * window_volume


# ---------------------------------------------------------------------------
# exact finite-window Gilbert moments on the unit square
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _square_reach(x: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Distance from x in [0,1]^2 to the boundary along direction phi."""
    c, s = np.cos(phi), np.sin(phi)
    with np.errstate(divide="ignore"):
        tx = np.where(c > 0, (1.0 - x[0]) / c, np.where(c < 0, -x[0] / c, np.inf))
        ty = np.where(s > 0, (1.0 - x[1]) / s, np.where(s < 0, -x[1] / s, np.inf))
    return np.minimum(tx, ty)


def _gilbert_local_mass(x: np.ndarray, epsilon: float, power: float) -> float:
    """∫_{B(x,eps) ∩ [0,1]^2} |x - y|^power dy, by polar Gauss-Legendre on smooth pieces."""
    walls = (1.0 - x[0], x[1] * 1.0, x[0], 1.0 - x[1])  # directions 0, -pi/2, pi, pi/2
    bps = [0.0, 2.0 * math.pi]
    corners = [(1.0, 1.0), (0.0, 1.0), (0.0, 0.0), (1.0, 0.0)]
    for cx, cy in corners:
        bps.append(math.atan2(cy - x[1], cx - x[0]) % (2.0 * math.pi))
    for w, centre in zip(walls, (0.0, -0.5 * math.pi, math.pi, 0.5 * math.pi)):
        if w < epsilon:
            half = math.acos(max(-1.0, min(1.0, w / epsilon)))
            bps.extend([(centre - half) % (2.0 * math.pi), (centre + half) % (2.0 * math.pi)])
    bps = np.unique(np.array(bps))
    lo, hi = bps[:-1], bps[1:]
    keep = hi - lo > 1e-15
    lo, hi = lo[keep], hi[keep]
    half = 0.5 * (hi - lo)
    phi = (0.5 * (hi + lo))[:, None] + half[:, None] * _GL_NODES[None, :]
    reach = np.minimum(_square_reach(x, phi), epsilon)
    vals = reach ** (power + 2.0) / (power + 2.0)
    return float(np.sum(half[:, None] * _GL_WEIGHTS[None, :] * vals))


def gilbert_exact_moments_unit_square(alpha: float, t: float, epsilon: float, tol: float = 1e-9) -> dict:
    """Exact mean and variance of L_t = sum |e|^alpha over the Gilbert graph of a
    Poisson process of intensity t on [0,1]^2, boundary effects included.

    mean = t^2/2 ∫∫ 1{|x-y|<eps}|x-y|^alpha, and
    var  = t^2/2 ∫∫ 1{|x-y|<eps}|x-y|^(2 alpha) + t^3 ∫ h(x)^2 dx with
    h(x) = ∫ 1{|x-y|<eps}|x-y|^alpha dy. Needs 0 < eps <= 1/2.
    """
    if not 0 < epsilon <= 0.5:
        raise ArgumentError("epsilon must lie in (0, 1/2]")
    if not alpha > -1.0:
        raise ArgumentError("need alpha > -1 for the planar pair integrals")

    def pair_integral(power):
        # ∫_{|z|<eps} |z|^power (1-|z1|)(1-|z2|) dz in polar coordinates
        e = epsilon
        return (
            2.0 * math.pi * e ** (power + 2) / (power + 2)
            - 8.0 * e ** (power + 3) / (power + 3)
            + 2.0 * e ** (power + 4) / (power + 4)
        )

    mean = 0.5 * t**2 * pair_integral(alpha)
    first = 0.5 * t**2 * pair_integral(2.0 * alpha)

    def inner(x1):
        def f(x2_values):
            return np.array([_gilbert_local_mass(np.array([x1, x2]), epsilon, alpha) ** 2 for x2 in x2_values])

        bps = [epsilon]
        if x1 < epsilon:
            bps.append(math.sqrt(epsilon**2 - x1**2))
        return adaptive_quad(f, 0.0, 0.5, abs_tol=tol, limit=200, breakpoints=bps).value

    def outer(x1_values):
        return np.array([inner(float(x1)) for x1 in x1_values])

    # fourfold symmetry of the square
    quarter = adaptive_quad(outer, 0.0, 0.5, abs_tol=tol, limit=200, breakpoints=[epsilon])
    second = t**3 * 4.0 * quarter.value
    return {"mean": mean, "var": first + second, "var_pairs": first, "var_local": second}
