"""Means, Student-t confidence intervals and paired t-tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

_CF_EPS = 1e-15
_CF_TINY = 1e-300
_CF_MAX_ITERS = 500


@dataclass(frozen=True)
class PairedComparison:
    name_a: str
    name_b: str
    mean_a: float
    mean_b: float
    diff: float  # mean of a - b
    ci_lo: float
    ci_hi: float
    p_value: float
    t_stat: float
    n: int


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the regularized incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITERS + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _CF_TINY if abs(d) < _CF_TINY else d
        c = 1.0 + aa / c
        c = _CF_TINY if abs(c) < _CF_TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _CF_TINY if abs(d) < _CF_TINY else d
        c = 1.0 + aa / c
        c = _CF_TINY if abs(c) < _CF_TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0 <= x <= 1:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0 or x == 1:
        return float(x)
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    # the fraction converges fast on the side of the mean
    if x < (a + 1) / (a + b + 2):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, dof: float) -> float:
    """Upper tail P(T > t) of Student's t with ``dof`` degrees of freedom."""
    if dof <= 0:
        raise ValueError("dof must be positive")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    t2 = t * t
    if t2 < dof:
        # near zero dof / (dof + t^2) rounds to 1; use the complementary argument
        tail = 0.5 - 0.5 * betainc(0.5, dof / 2.0, t2 / (dof + t2))
    else:
        tail = 0.5 * betainc(dof / 2.0, 0.5, dof / (dof + t2))
    return tail if t >= 0 else 1.0 - tail


def t_cdf(t: float, dof: float) -> float:
    return 1.0 - t_sf(t, dof)


def t_ppf(q: float, dof: float) -> float:
    """Quantile of Student's t, by bisection on the CDF."""
    if not 0 < q < 1:
        raise ValueError(f"q must be in (0, 1), got {q}")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return -t_ppf(1.0 - q, dof)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, dof) < q:
        lo, hi = hi, hi * 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, dof) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def _mean_sd(xs: Sequence[float]) -> tuple[float, float]:
    n = len(xs)
    mean = math.fsum(xs) / n
    var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1)
    return mean, math.sqrt(var)


def mean_ci95(samples: Sequence[float]) -> tuple[float, float, float]:
    """``(mean, lo, hi)`` of the two-sided 95% Student-t interval."""
    xs = [float(x) for x in samples]
    if len(xs) < 2:
        raise ValueError(f"need at least 2 samples for a confidence interval, got {len(xs)}")
    mean, sd = _mean_sd(xs)
    half = t_ppf(0.975, len(xs) - 1) * sd / math.sqrt(len(xs))
    return mean, mean - half, mean + half


def paired_ttest(a: Sequence[float], b: Sequence[float], name_a: str = "a", name_b: str = "b") -> PairedComparison:
    """Two-sided paired t-test on ``a - b``.

    Zero-variance differences give p = 1 when they are all zero and p = 0
    otherwise.
    """
    if len(a) != len(b):
        raise ValueError(f"paired samples differ in length: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise ValueError(f"paired t-test needs at least 2 pairs, got {len(a)}")
    diffs = [float(x) - float(y) for x, y in zip(a, b)]
    n = len(diffs)
    mean, sd = _mean_sd(diffs)
    _, lo, hi = mean_ci95(diffs)
    if sd == 0:
        t_stat = 0.0 if mean == 0 else math.copysign(math.inf, mean)
        p = 1.0 if mean == 0 else 0.0
    else:
        t_stat = mean / (sd / math.sqrt(n))
        p = min(1.0, 2.0 * t_sf(abs(t_stat), n - 1))
    return PairedComparison(
        name_a, name_b, math.fsum(a) / n, math.fsum(b) / n, mean, lo, hi, p, t_stat, n
    )
