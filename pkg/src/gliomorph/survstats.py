"""Right-censored survival statistics.

Conventions shared by every estimator here: an event and a censoring at the
same time are ordered event first, so the censored subject is still at risk
at that time. Times are in months.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .errors import ValidationError
from .volio import SurvivalRecord, survival_arrays

Z_95 = 1.96


# ---------------------------------------------------------------------------
# Special functions


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def chisq_sf(x: float, df: int = 1) -> float:
    """Upper tail of the chi-square distribution (regularized upper incomplete gamma)."""
    if x < 0:
        raise ValidationError("chi-square statistic must be non-negative")
    return float(special.gammaincc(df / 2.0, x / 2.0))


# ---------------------------------------------------------------------------
# Survival curves


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    """Right-continuous step function; S(t) = 1 before the first time."""

    times: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if times.shape != probs.shape or times.ndim != 1:
            raise ValidationError("times and probs must be 1-D arrays of equal length")
        if times.size and (np.any(np.diff(times) <= 0) or times[0] <= 0):
            raise ValidationError("curve times must be positive and strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "probs", probs)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        pos = np.searchsorted(self.times, t, side="right") - 1
        padded = np.concatenate([[1.0], self.probs])
        out = padded[pos + 1]
        return float(out) if out.ndim == 0 else out

    def __eq__(self, other):
        if not isinstance(other, SurvivalCurve):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.probs, other.probs)

    __hash__ = None

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "probs": self.probs.tolist()}


def km_arrays(time: np.ndarray, event: np.ndarray) -> SurvivalCurve:
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    if time.size == 0:
        raise ValidationError("Kaplan-Meier needs at least one record")
    uniq, inverse, counts = np.unique(time, return_inverse=True, return_counts=True)
    at_risk = len(time) - np.cumsum(counts) + counts
    deaths = np.bincount(inverse, weights=event, minlength=len(uniq))
    keep = deaths > 0
    factors = 1.0 - deaths[keep] / at_risk[keep]
    return SurvivalCurve(uniq[keep], np.cumprod(factors))


def km_curve(records: Sequence[SurvivalRecord]) -> SurvivalCurve:
    """Kaplan-Meier product-limit estimate."""
    return km_arrays(*survival_arrays(records))


def median_from_curve(curve: SurvivalCurve) -> float | None:
    hit = np.nonzero(curve.probs <= 0.5)[0]
    return float(curve.times[hit[0]]) if hit.size else None


def median_survival(records: Sequence[SurvivalRecord]) -> float | None:
    """Smallest time at which the KM curve is <= 0.5, or None if it never gets there."""
    return median_from_curve(km_curve(records))


def rmst(curve: SurvivalCurve, t_max: float) -> float:
    """Area under the step curve on [0, t_max]."""
    if not t_max > 0:
        raise ValidationError("t_max must be positive")
    inside = curve.times < t_max
    knots = np.concatenate([[0.0], curve.times[inside], [t_max]])
    heights = np.concatenate([[1.0], curve.probs[inside]])
    return float(np.sum(heights * np.diff(knots)))


# ---------------------------------------------------------------------------
# Log-rank test


@dataclass(frozen=True)
class LogRankResult:
    chi2: float
    p: float
    degenerate: bool = False


def logrank_arrays(time: np.ndarray, event: np.ndarray, in_a: np.ndarray) -> LogRankResult:
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    in_a = np.asarray(in_a, dtype=bool)
    if in_a.all() or not in_a.any():
        raise ValidationError("both log-rank groups must be non-empty")
    event_times = np.unique(time[event])
    if event_times.size == 0:
        return LogRankResult(0.0, 1.0, True)

    def at_risk(t):
        s = np.sort(t)
        return (len(s) - np.searchsorted(s, event_times, side="left")).astype(np.int64)

    def deaths(t):
        s = np.sort(t)
        hi = np.searchsorted(s, event_times, side="right")
        lo = np.searchsorted(s, event_times, side="left")
        return (hi - lo).astype(np.int64)

    n, d = at_risk(time), deaths(time[event])
    n_a, d_a = at_risk(time[in_a]), deaths(time[event & in_a])
    n_b = n - n_a
    # Integer numerators keep the statistic exactly symmetric in the groups.
    o_minus_e = np.sum((d_a * n - n_a * d) / n)
    multi = n > 1
    var = np.sum(
        (n_a * n_b)[multi] * (d * (n - d))[multi] / ((n * n)[multi] * (n - 1)[multi]).astype(float)
    )
    if not var > 0:
        return LogRankResult(0.0, 1.0, True)
    chi2 = float(o_minus_e * o_minus_e / var)
    return LogRankResult(chi2, chisq_sf(chi2, 1))


def logrank(a: Sequence[SurvivalRecord], b: Sequence[SurvivalRecord]) -> LogRankResult:
    """Two-group log-rank test; ``degenerate`` is set when the variance is zero."""
    if not a or not b:
        raise ValidationError("both log-rank groups must be non-empty")
    ta, ea = survival_arrays(a)
    tb, eb = survival_arrays(b)
    group = np.concatenate([np.ones(len(ta), bool), np.zeros(len(tb), bool)])
    return logrank_arrays(np.concatenate([ta, tb]), np.concatenate([ea, eb]), group)


# ---------------------------------------------------------------------------
# Univariate Cox proportional hazards


@dataclass(frozen=True)
class CoxFit:
    beta: float
    se: float
    z: float
    p: float
    hr: float
    ci_low: float
    ci_high: float
    converged: bool
    iterations: int
    flag: str | None = None


class _RiskSets:
    """Breslow risk-set bookkeeping for one (time, event) sample."""

    def __init__(self, time: np.ndarray, event: np.ndarray):
        order = np.argsort(time, kind="stable")
        self.order = order
        sorted_time = time[order]
        ev_pos = np.nonzero(event[order])[0]
        self.event_pos = ev_pos
        # Risk set of an event at t: everyone with time >= t (ties included).
        self.start = np.searchsorted(sorted_time, sorted_time[ev_pos], side="left")

    def evaluate(self, beta: float, x_sorted: np.ndarray) -> tuple[float, float, float]:
        eta = beta * x_sorted
        shift = eta.max()
        w = np.exp(eta - shift)
        s0 = np.cumsum(w[::-1])[::-1][self.start]
        s1 = np.cumsum((w * x_sorted)[::-1])[::-1][self.start]
        s2 = np.cumsum((w * x_sorted * x_sorted)[::-1])[::-1][self.start]
        xe = x_sorted[self.event_pos]
        loglik = float(np.sum(eta[self.event_pos] - shift - np.log(s0)))
        mean = s1 / s0
        score = float(np.sum(xe - mean))
        info = float(np.sum(s2 / s0 - mean * mean))
        return loglik, score, info


def cox_partial_loglik(beta: float, x, time, event) -> tuple[float, float, float]:
    """Breslow log partial likelihood, its derivative and the observed information."""
    x = np.asarray(x, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    rs = _RiskSets(time, event)
    return rs.evaluate(beta, x[rs.order])


def _exp(v: float) -> float:
    return math.exp(v) if v < 709.0 else math.inf


def _wald(beta, info, converged, iterations, flag) -> CoxFit:
    se = 1.0 / math.sqrt(info) if info > 0 else math.inf
    z = beta / se
    p = min(1.0, 2.0 * normal_sf(abs(z)))
    return CoxFit(
        beta=beta,
        se=se,
        z=z,
        p=p,
        hr=_exp(beta),
        ci_low=_exp(beta - Z_95 * se),
        ci_high=_exp(beta + Z_95 * se),
        converged=converged,
        iterations=iterations,
        flag=flag,
    )


def cox_fit_arrays(
    x: np.ndarray,
    time: np.ndarray,
    event: np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 50,
    max_abs_beta: float = 20.0,
) -> CoxFit:
    x = np.asarray(x, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    if x.shape != time.shape:
        raise ValidationError("covariate length does not match the records")
    if not np.all(np.isfinite(x)):
        raise ValidationError("covariate must be finite")
    if not event.any():
        raise ValidationError("Cox fit needs at least one event")
    if np.all(x == x[0]):
        return CoxFit(0.0, math.inf, 0.0, 1.0, 1.0, 0.0, math.inf, True, 0, "no variation")

    rs = _RiskSets(time, event)
    xs = x[rs.order]
    xs = xs - xs.mean()
    beta = 0.0
    loglik, score, info = rs.evaluate(beta, xs)
    for iteration in range(1, max_iter + 1):
        if not info > 0:
            return _wald(beta, info, False, iteration, "singular information")
        step = score / info
        new_beta = beta + step
        new = rs.evaluate(new_beta, xs)
        halvings = 0
        while new[0] < loglik and halvings < 60:
            step /= 2.0
            new_beta = beta + step
            new = rs.evaluate(new_beta, xs)
            halvings += 1
        delta_ll = new[0] - loglik
        beta, (loglik, score, info) = new_beta, new
        if abs(beta) > max_abs_beta:
            return _wald(beta, info, False, iteration, "monotone likelihood")
        if abs(step) < tol or abs(delta_ll) < tol:
            return _wald(beta, info, True, iteration, None)
    return _wald(beta, info, False, max_iter, "iteration limit")


def cox_univariate(x, records: Sequence[SurvivalRecord]) -> CoxFit:
    """Univariate Cox PH fit (Breslow ties, Newton-Raphson, Wald inference)."""
    time, event = survival_arrays(records)
    return cox_fit_arrays(np.asarray(x, dtype=float), time, event)


# ---------------------------------------------------------------------------
# Concordance


def c_index_arrays(pred, time, event) -> float | None:
    pred = np.asarray(pred, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    if not (pred.shape == time.shape == event.shape):
        raise ValidationError("predictions and records differ in length")
    earlier = time[:, None] < time[None, :]
    tied = (time[:, None] == time[None, :]) & ~event[None, :]
    comparable = event[:, None] & (earlier | tied)
    n_pairs = int(np.count_nonzero(comparable))
    if n_pairs == 0:
        return None
    concordant = int(np.count_nonzero(comparable & (pred[:, None] < pred[None, :])))
    ties = int(np.count_nonzero(comparable & (pred[:, None] == pred[None, :])))
    return (concordant + 0.5 * ties) / n_pairs


def c_index(pred, records: Sequence[SurvivalRecord]) -> float | None:
    """Harrell's C for predicted survival times; None when no pair is comparable.

    A pair is concordant when the subject with the earlier event has the
    shorter predicted survival. Prediction ties count one half.
    """
    time, event = survival_arrays(records)
    return c_index_arrays(pred, time, event)
