"""Globally adaptive Gauss-Kronrod (7/15) quadrature, 1-D and nested 2-D."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import IntegrationError

# Kronrod 15-point abscissae on [-1, 1] (nonnegative half) and weights;
# the Gauss 7-point rule uses every other node.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])  # 15 nodes, ascending
_KW = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GW = np.zeros(15)
_GW[1:14:2] = np.concatenate([_WG[:-1], _WG[::-1]])


@dataclass(frozen=True)
class IntegrationResult:
    value: float
    abs_error_estimate: float
    evaluations: int


def gk15(f: Callable[[np.ndarray], np.ndarray], a: float, b: float):
    """One Kronrod panel on [a, b]: (estimate, |K15 - G7|)."""
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    y = np.asarray(f(mid + half * _NODES), dtype=float)
    k = half * float(np.dot(_KW, y))
    g = half * float(np.dot(_GW, y))
    return k, abs(k - g)


def adaptive_quad(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    abs_tol: float = 1e-10,
    rel_tol: float = 0.0,
    limit: int = 200,
    breakpoints: Sequence[float] = (),
    strict: bool = True,
) -> IntegrationResult:
    """Integrate a vectorized ``f`` over the finite interval [a, b].

    Subdivides the panel with the largest error estimate until the summed
    error drops below ``max(abs_tol, rel_tol * |I|)`` or ``limit`` panels
    exist. With ``strict`` a non-converged run raises
    :class:`IntegrationError` carrying the partial result.
    """
    pts = sorted({float(a), float(b), *(float(p) for p in breakpoints if a < p < b)})
    heap = []
    total = err = 0.0
    evals = 0
    for lo, hi in zip(pts[:-1], pts[1:]):
        v, e = gk15(f, lo, hi)
        evals += 15
        total += v
        err += e
        heapq.heappush(heap, (-e, lo, hi, v))
    while err > max(abs_tol, rel_tol * abs(total)) and len(heap) < limit:
        neg_e, lo, hi, v = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            heapq.heappush(heap, (neg_e, lo, hi, v))
            break
        v1, e1 = gk15(f, lo, mid)
        v2, e2 = gk15(f, mid, hi)
        evals += 30
        total += v1 + v2 - v
        err += e1 + e2 + neg_e
        heapq.heappush(heap, (-e1, lo, mid, v1))
        heapq.heappush(heap, (-e2, mid, hi, v2))
    # re-sum to shed accumulated rounding from the running updates
    total = math.fsum(item[3] for item in heap)
    err = math.fsum(-item[0] for item in heap)
    result = IntegrationResult(total, err, evals)
    if not math.isfinite(total):
        raise IntegrationError("integral is not finite", result)
    if strict and err > max(abs_tol, rel_tol * abs(total)):
        raise IntegrationError(
            f"tolerance not reached with {len(heap)} panels (error {err:.3g})", result
        )
    return result


def to_unit_interval(f: Callable[[np.ndarray], np.ndarray], start: float = 0.0):
    """Map ∫_start^∞ f(r) dr onto ∫_0^1 via r = start + u/(1-u)."""

    def g(u):
        u = np.asarray(u, dtype=float)
        one_minus = 1.0 - u
        r = start + u / one_minus
        return f(r) / one_minus**2

    return g
