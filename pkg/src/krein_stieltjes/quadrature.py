"""Numerical integration engines.

Three layers, all built on composite Gauss-Legendre panels plus a
tanh-sinh rule for integrable endpoint singularities:

* ``pv_integrate``     Cauchy principal-value integrals by singularity
                       subtraction (closed-form log term + regular remainder).
* ``integrate_improper`` integrals over half-lines and the whole real line,
                       with tail mapping, a divergence heuristic, and a
                       lobe-summation mode for oscillatory integrands.
* low-level helpers (``adaptive_gauss``, ``tanh_sinh``) reused by the
  transform and verification modules.

All integrands must accept and return numpy arrays; scalar-only callables
can be adapted with :func:`ensure_vectorized`.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import DomainError

logger = logging.getLogger(__name__)

Integrand = Callable[[np.ndarray], np.ndarray]

# Tail handling for [X, inf) via the map x = 1/s; blocks [X, 2X] are scanned
# until either a mapped closing integral converges or growth is flagged.
_BLOCK_LIMIT = 48
_GROWTH_RUN = 40

# tanh-sinh nodes closer to an endpoint than this (relative to the interval
# half-width) are dropped; for an |x - a|^alpha singularity with alpha > -0.95
# the truncated mass is below 1e-12.
_TS_OFFSET_FLOOR = 1e-280


@dataclass(frozen=True)
class PVParams:
    """Knobs for the principal-value engine.

    ``excision_radius`` is the half-width of the symmetric window around the
    singularity that is integrated in paired form; ``None`` selects
    ``1e-3 * max(1, |t|)`` at call time.  ``tail_cutoff`` bounds the finite
    part when an infinite domain is decomposed by the caller; ``None`` lets
    the caller adapt it.
    """

    excision_radius: float | None = None
    panel_order: int = 32
    tail_cutoff: float | None = None
    target_rel_tol: float = 1e-9

    def __post_init__(self):
        if self.excision_radius is not None and self.excision_radius <= 0:
            raise DomainError("excision_radius must be positive")
        if self.panel_order < 8:
            raise DomainError("panel_order must be at least 8")
        if self.tail_cutoff is not None and self.tail_cutoff <= 0:
            raise DomainError("tail_cutoff must be positive")
        if self.target_rel_tol <= 0:
            raise DomainError("target_rel_tol must be positive")

    def resolve_excision(self, t: float) -> float:
        if self.excision_radius is not None:
            return self.excision_radius
        return 1e-3 * max(1.0, abs(t))


@dataclass(frozen=True)
class QuadResult:
    """Value of an integral together with an honest error estimate.

    ``converged`` means the estimate met the requested tolerance;
    ``diverged`` flags integrals detected as growing without bound, which is
    distinct from mere non-convergence.
    """

    value: float
    abs_error_estimate: float
    converged: bool
    diverged: bool = False


def ensure_vectorized(f: Callable) -> Integrand:
    """Wrap ``f`` so it maps ndarray -> ndarray, vectorizing if needed."""
    def probe(x: np.ndarray) -> np.ndarray:
        out = f(x)
        return np.asarray(out, dtype=float)

    test = np.array([0.5, 1.5])
    try:
        with np.errstate(all="ignore"):
            out = probe(test)
        if out.shape == test.shape:
            return probe
    except Exception:
        pass
    vec = np.vectorize(lambda xi: float(f(xi)), otypes=[float])
    return lambda x: vec(np.asarray(x, dtype=float))


@lru_cache(maxsize=None)
def _leggauss(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return nodes, weights


def fixed_gauss(f: Integrand, a: float, b: float, order: int = 32) -> float:
    """Single Gauss-Legendre panel on [a, b]."""
    nodes, weights = _leggauss(order)
    half = 0.5 * (b - a)
    x = 0.5 * (a + b) + half * nodes
    with np.errstate(all="ignore"):
        y = np.asarray(f(x), dtype=float)
    return half * float(np.dot(weights, y))


def _panel(f: Integrand, a: float, b: float, order: int) -> tuple[float, float]:
    """Panel value at full order plus an error estimate from a lower order."""
    hi = fixed_gauss(f, a, b, order)
    lo = fixed_gauss(f, a, b, max(8, order // 2))
    return hi, abs(hi - lo)


def adaptive_gauss(
    f: Integrand,
    a: float,
    b: float,
    rel_tol: float = 1e-9,
    abs_tol: float = 0.0,
    order: int = 32,
    max_panels: int = 2000,
    breakpoints: Sequence[float] | None = None,
) -> tuple[float, float, bool]:
    """Globally adaptive composite Gauss-Legendre on a finite interval.

    Splits the panel with the largest error estimate until the summed
    estimate drops below ``max(rel_tol * |value|, abs_tol)``.  Optional
    ``breakpoints`` seed the initial panel edges (they are clipped to the
    interval).  Returns ``(value, error_estimate, converged)``.
    """
    if not (a < b):
        if a == b:
            return 0.0, 0.0, True
        raise DomainError("empty interval: a must be < b")

    edges = [a, b]
    if breakpoints:
        interior = sorted({float(p) for p in breakpoints if a < p < b})
        edges = [a, *interior, b]

    heap: list[tuple[float, float, float, float]] = []
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, err = _panel(f, lo, hi, order)
        total += val
        heapq.heappush(heap, (-err, lo, hi, val))

    n_panels = len(heap)
    while True:
        err_total = -sum(item[0] for item in heap)
        if err_total <= max(rel_tol * abs(total), abs_tol):
            return total, err_total, True
        if n_panels >= max_panels:
            logger.debug("adaptive_gauss: panel limit hit on [%g, %g]", a, b)
            return total, err_total, False
        neg_err, lo, hi, val = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            # interval no longer splittable at double precision
            heapq.heappush(heap, (0.0, lo, hi, val))
            continue
        v1, e1 = _panel(f, lo, mid, order)
        v2, e2 = _panel(f, mid, hi, order)
        total += v1 + v2 - val
        heapq.heappush(heap, (-e1, lo, mid, v1))
        heapq.heappush(heap, (-e2, mid, hi, v2))
        n_panels += 1


@lru_cache(maxsize=64)
def _tanh_sinh_nodes(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid abscissas (offsets from the near endpoint) and weights.

    Level 0 uses step h = 0.5; level L adds points at odd multiples of
    h = 0.5 / 2**L.  Offsets and weights are for the map onto [-1, 1] and
    are relative to the interval half-width.
    """
    h = 0.5 / 2.0 ** level
    if level == 0:
        k = np.arange(-14 / h, 14 / h + 1)
        t = k * h
    else:
        k = np.arange(-14 / h - 1, 14 / h + 1)
        t = (2 * k + 1) * h
        t = t[np.abs(t) <= 14.0]
    u = 0.5 * np.pi * np.sinh(t)
    # offset from the endpoint nearest the node: 1 - tanh(|u|), stably.
    off = 2.0 * np.exp(-2.0 * np.abs(u)) / (1.0 + np.exp(-2.0 * np.abs(u)))
    weight = 0.5 * np.pi * np.cosh(t) / np.cosh(u) ** 2
    keep = (off > _TS_OFFSET_FLOOR) & (weight > 1e-300)
    signed_off = np.where(t >= 0, off, -off)[keep]
    return signed_off, weight[keep]


def tanh_sinh(
    f: Integrand,
    a: float,
    b: float,
    rel_tol: float = 1e-9,
    abs_tol: float = 0.0,
    max_level: int = 10,
) -> tuple[float, float, bool]:
    """Tanh-sinh quadrature on [a, b], safe for endpoint singularities.

    Nodes never touch the endpoints; non-finite integrand values at extreme
    nodes are treated as zero (their true contribution is negligible for
    integrable singularities).  Returns ``(value, error_estimate, converged)``.
    """
    if not (a < b):
        if a == b:
            return 0.0, 0.0, True
        raise DomainError("empty interval: a must be < b")
    half = 0.5 * (b - a)

    def level_sum(level: int) -> float:
        signed_off, weight = _tanh_sinh_nodes(level)
        x = np.where(signed_off >= 0, b - half * signed_off, a - half * signed_off)
        with np.errstate(all="ignore"):
            y = np.asarray(f(x), dtype=float)
        y = np.where(np.isfinite(y), y, 0.0)
        return half * float(np.dot(weight, y))

    h = 0.5
    value = h * level_sum(0)
    prev = math.inf
    for level in range(1, max_level + 1):
        h *= 0.5
        new = h * level_sum(level)
        prev, value = value, 0.5 * value + new
        err = abs(value - prev)
        if err <= max(rel_tol * abs(value), abs_tol, 1e-15 * abs(value)):
            return value, max(err, abs(value) * 1e-15), True
    err = abs(value - prev)
    return value, err, err <= max(rel_tol * abs(value), abs_tol)


def pv_integrate(
    g: Integrand,
    t: float,
    a: float,
    b: float,
    params: PVParams | None = None,
    singular_endpoints: tuple[bool, bool] = (False, False),
) -> QuadResult:
    """Principal value of ``int_a^b g(x) / (t - x) dx``.

    For interior ``t`` the integrand is split as ``g(t) + (g(x) - g(t))``:
    the first part has the closed form ``g(t) * ln|(t - a) / (b - t)|`` and
    the remainder is regular.  The remainder over the symmetric window
    ``|x - t| <= delta`` is folded into paired form
    ``(g(t - s) - g(t + s)) / s``, which cancels the subtraction constant
    exactly.  For ``t`` outside [a, b] this is an ordinary integral.

    ``singular_endpoints`` marks integrable singularities of ``g`` at ``a``
    or ``b``; those edge panels use the tanh-sinh rule.
    """
    params = params or PVParams()
    if not (a < b):
        raise DomainError("empty interval: a must be < b")
    if t == a or t == b:
        raise DomainError("principal-value point sits on the domain boundary")
    g = ensure_vectorized(g)
    rel = params.target_rel_tol
    order = params.panel_order

    def piece(lo: float, hi: float, func: Integrand,
              singular: tuple[bool, bool]) -> tuple[float, float, bool]:
        if hi <= lo:
            return 0.0, 0.0, True
        if singular[0] or singular[1]:
            if singular[0] and singular[1]:
                mid = 0.5 * (lo + hi)
                v1, e1, c1 = tanh_sinh(func, lo, mid, rel)
                v2, e2, c2 = tanh_sinh(func, mid, hi, rel)
                return v1 + v2, e1 + e2, c1 and c2
            return tanh_sinh(func, lo, hi, rel)
        return adaptive_gauss(func, lo, hi, rel, order=order)

    if t < a or t > b:
        def outside(x):
            return g(x) / (t - x)
        val, err, ok = piece(a, b, outside, singular_endpoints)
        return QuadResult(val, err, ok and err <= rel * max(1.0, abs(val)))

    gt = float(np.asarray(g(np.array([t], dtype=float)))[0])
    if not math.isfinite(gt):
        raise DomainError("g is not finite at the principal-value point")

    delta = params.resolve_excision(t)
    delta = min(delta, 0.5 * (t - a), 0.5 * (b - t))

    closed = gt * math.log(abs((t - a) / (b - t)))

    def remainder(x):
        return (g(x) - gt) / (t - x)

    def paired(s):
        return (g(t - s) - g(t + s)) / s

    # geometric edges grade panels toward the window without deep recursion
    def graded(frm: float, to: float) -> list[float]:
        span = abs(to - frm)
        if span <= 0:
            return []
        pts, step = [], delta
        while step < span:
            pts.append(to - math.copysign(step, to - frm))
            step *= 4.0
        return pts

    core_val, core_err, core_ok = adaptive_gauss(paired, 0.0, delta, rel, order=order)
    left_val, left_err, left_ok = (0.0, 0.0, True)
    if t - delta > a:
        if singular_endpoints[0]:
            left_val, left_err, left_ok = tanh_sinh(remainder, a, t - delta, rel)
        else:
            left_val, left_err, left_ok = adaptive_gauss(
                remainder, a, t - delta, rel, order=order,
                breakpoints=graded(a, t - delta))
    right_val, right_err, right_ok = (0.0, 0.0, True)
    if b > t + delta:
        if singular_endpoints[1]:
            right_val, right_err, right_ok = tanh_sinh(remainder, t + delta, b, rel)
        else:
            right_val, right_err, right_ok = adaptive_gauss(
                remainder, t + delta, b, rel, order=order,
                breakpoints=graded(b, t + delta))

    value = closed + core_val + left_val + right_val
    err = core_err + left_err + right_err + 4e-16 * (abs(closed) + abs(value))
    ok = core_ok and left_ok and right_ok and err <= rel * max(1.0, abs(value))
    return QuadResult(value, err, ok)


def _mapped_tail(g: Integrand, cutoff: float, rel_tol: float,
                 abs_tol: float) -> tuple[float, float, bool]:
    """``int_cutoff^inf g`` via x = 1/s on (0, 1/cutoff]."""
    def mapped(s):
        with np.errstate(all="ignore"):
            out = g(1.0 / s) / s ** 2
        return np.where(np.isfinite(out), out, 0.0)

    return tanh_sinh(mapped, 0.0, 1.0 / cutoff, rel_tol, abs_tol)


def _fit_log_slope(values: Sequence[float]) -> float:
    y = np.log(np.maximum(np.abs(values), 1e-300))
    x = np.arange(len(y), dtype=float)
    return float(np.polyfit(x, y, 1)[0])


def _halfline_plain(g: Integrand, rel_tol: float, abs_tol: float,
                    singular_origin: bool) -> QuadResult:
    if singular_origin:
        head, head_err, head_ok = tanh_sinh(g, 0.0, 1.0, rel_tol, 0.1 * abs_tol)
    else:
        head, head_err, head_ok = adaptive_gauss(g, 0.0, 1.0, rel_tol,
                                                 abs_tol=0.1 * abs_tol)
    total, err_total = head, head_err
    ok = head_ok

    blocks: list[float] = []
    grow_run = 0
    lo = 1.0
    for j in range(_BLOCK_LIMIT):
        hi = 2.0 * lo
        bval, berr, bok = adaptive_gauss(g, lo, hi, rel_tol, abs_tol=0.1 * abs_tol)
        total += bval
        err_total += berr
        ok = ok and bok
        blocks.append(bval)
        if len(blocks) >= 2 and abs(blocks[-1]) >= abs(blocks[-2]) * 0.999:
            grow_run += 1
        else:
            grow_run = 0
        if grow_run >= _GROWTH_RUN:
            logger.debug("improper integral flagged divergent after %d blocks", j + 1)
            return QuadResult(total, abs(bval), False, diverged=True)

        scale = max(1.0, abs(total))
        decreasing = len(blocks) >= 2 and abs(blocks[-1]) < abs(blocks[-2])
        tiny = abs(bval) <= max(0.05 * rel_tol * scale, 0.5 * abs_tol)
        if decreasing or tiny:
            tval, terr, tok = _mapped_tail(g, hi, rel_tol, 0.1 * abs_tol)
            budget = max(rel_tol * max(1.0, abs(total + tval)), abs_tol)
            if tok and terr <= 0.5 * budget:
                total += tval
                err_total += terr
                converged = ok and err_total <= max(
                    rel_tol * max(1.0, abs(total)), abs_tol)
                return QuadResult(total, err_total, converged)
        lo = hi

    slope = _fit_log_slope(blocks[-8:])
    if slope > 0.05:
        return QuadResult(total, abs(blocks[-1]), False, diverged=True)
    return QuadResult(total, err_total + abs(blocks[-1]), False)


def _averaged_limit(partials: np.ndarray) -> tuple[float, float]:
    """Iterated-averaging (Euler) acceleration of a partial-sum sequence."""
    row = partials.astype(float)
    last = row[-1]
    prev_last = row[-2] if len(row) > 1 else last
    while len(row) > 1:
        row = 0.5 * (row[1:] + row[:-1])
        prev_last, last = last, row[-1]
    return float(last), abs(last - prev_last)


def _halfline_oscillatory(g: Integrand, rel_tol: float, abs_tol: float,
                          singular_origin: bool,
                          sign_changes: Iterator[float],
                          max_lobes: int = 600) -> QuadResult:
    try:
        z = float(next(sign_changes))
    except StopIteration:
        return _halfline_plain(g, rel_tol, abs_tol, singular_origin)

    if singular_origin:
        head, head_err, head_ok = tanh_sinh(g, 0.0, z, rel_tol, 0.1 * abs_tol)
    else:
        head, head_err, head_ok = adaptive_gauss(g, 0.0, z, rel_tol,
                                                 abs_tol=0.1 * abs_tol)
    lobes: list[float] = []
    err_total = head_err
    ok = head_ok
    small_run = 0
    exhausted = False
    for _ in range(max_lobes):
        try:
            z_next = float(next(sign_changes))
        except StopIteration:
            exhausted = True
            break
        lval, lerr, lok = adaptive_gauss(g, z, z_next, rel_tol,
                                         abs_tol=0.02 * abs_tol)
        lobes.append(lval)
        err_total += lerr
        ok = ok and lok
        z = z_next
        scale = max(1.0, abs(head) + abs(sum(lobes)))
        if abs(lval) <= max(0.02 * rel_tol * scale, 0.2 * abs_tol):
            small_run += 1
            if small_run >= 3:
                break
        else:
            small_run = 0

    lobe_sum = float(sum(lobes))
    if exhausted or small_run >= 3:
        tval, terr, tok = _mapped_tail(g, z, rel_tol, 0.1 * abs_tol)
        if tok:
            value = head + lobe_sum + tval
            err_total += terr
        else:
            value = head + lobe_sum
            err_total += 3.0 * abs(lobes[-1]) if lobes else 0.0
        converged = ok and err_total <= max(rel_tol * max(1.0, abs(value)), abs_tol)
        return QuadResult(value, err_total, converged)

    # slow lobe decay: accelerate the alternating partial sums
    partials = head + np.cumsum(lobes)
    accel, accel_err = _averaged_limit(partials[-64:])
    raw_tail = abs(lobes[-1])
    if accel_err < raw_tail:
        value, tail_err = accel, accel_err
    else:
        value, tail_err = float(partials[-1]), raw_tail
    err_total += 2.0 * tail_err
    converged = ok and err_total <= max(rel_tol * max(1.0, abs(value)), abs_tol)
    return QuadResult(value, err_total, converged)


def integrate_improper(
    g: Callable,
    domain,
    target_rel_tol: float = 1e-9,
    *,
    abs_tol: float = 0.0,
    singular_origin: bool = False,
    sign_changes: Iterable[float] | Iterator[float] | None = None,
) -> QuadResult:
    """Integrate ``g`` over a half-line or the whole real line.

    ``domain`` is either a :class:`~krein_stieltjes.density.Support` value or
    one of the strings ``"real"`` / ``"positive"``.  Real-line integrals are
    folded onto the half-line as ``g(x) + g(-x)``.  The far tail is mapped
    through ``x = 1/s``; growth across doubling cutoffs raises the
    ``diverged`` flag on the result.

    ``sign_changes``, when given, must yield the increasing positive
    abscissas where the (folded) integrand changes sign; integration then
    proceeds lobe by lobe with acceleration of the alternating partial sums.
    """
    kind = getattr(domain, "value", domain)
    if kind not in ("real", "positive"):
        raise DomainError(f"unsupported integration domain: {domain!r}")
    g = ensure_vectorized(g)
    if kind == "real":
        base = g
        def folded(x):
            return base(x) + base(-x)
        h = folded
    else:
        h = g

    if sign_changes is not None:
        return _halfline_oscillatory(h, target_rel_tol, abs_tol,
                                     singular_origin, iter(sign_changes))
    return _halfline_plain(h, target_rel_tol, abs_tol, singular_origin)
