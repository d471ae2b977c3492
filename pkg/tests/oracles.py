"""Deliberately naive reference implementations used only by the tests.

Nothing here shares code with the package: borders come from binary erosion,
distances from dense all-pairs matrices, statistics from explicit loops.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, ndimage

FACE = ndimage.generate_binary_structure(3, 1)


def border_points(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    inner = ndimage.binary_erosion(mask, structure=FACE, border_value=0)
    return np.argwhere(mask & ~inner)


def all_pairs(p: np.ndarray, q: np.ndarray, spacing) -> np.ndarray:
    sp = np.asarray(spacing, dtype=float)
    d = (p[:, None, :] - q[None, :, :]) * sp
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def hd95_bruteforce(mask_a, mask_b, spacing=(1.0, 1.0, 1.0)) -> float:
    pa, pb = border_points(mask_a), border_points(mask_b)
    dist = all_pairs(pa, pb, spacing)
    pooled = np.sort(np.concatenate([dist.min(axis=1), dist.min(axis=0)]))
    n = len(pooled)
    rank = (95 * n + 99) // 100
    return float(pooled[rank - 1])


def random_blob(rng, shape=(32, 32, 32), n_balls=None) -> np.ndarray:
    """Union of a few random balls and boxes; never empty."""
    grid = np.indices(shape)
    mask = np.zeros(shape, dtype=bool)
    for _ in range(n_balls or rng.integers(1, 4)):
        c = rng.uniform(4, np.array(shape) - 4)
        if rng.random() < 0.5:
            r = rng.uniform(1.5, 7)
            mask |= sum((g - ci) ** 2 for g, ci in zip(grid, c)) <= r * r
        else:
            half = rng.integers(1, 6, 3)
            lo = np.maximum(c.astype(int) - half, 0)
            hi = c.astype(int) + half + 1
            mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = True
    if not mask.any():
        mask[tuple(s // 2 for s in shape)] = True
    return mask


# ---------------------------------------------------------------------------
# Survival


def breslow_loglik(beta, x, time, event) -> float:
    total = 0.0
    for i in range(len(time)):
        if not event[i]:
            continue
        denom = sum(math.exp(beta * x[j]) for j in range(len(time)) if time[j] >= time[i])
        total += beta * x[i] - math.log(denom)
    return total


def cox_beta_search(x, time, event, lo=-10.0, hi=10.0) -> float:
    """Grid scan then golden-section refinement of the partial likelihood."""
    grid = np.linspace(lo, hi, 401)
    vals = [breslow_loglik(b, x, time, event) for b in grid]
    k = int(np.argmax(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = breslow_loglik(c, x, time, event), breslow_loglik(d, x, time, event)
    while b - a > 1e-9:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = breslow_loglik(c, x, time, event)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = breslow_loglik(d, x, time, event)
    return (a + b) / 2


def c_index_pairs(pred, time, event):
    num = den = 0.0
    n = len(time)
    for i in range(n):
        for j in range(n):
            if i == j or not event[i]:
                continue
            if time[i] < time[j] or (time[i] == time[j] and not event[j]):
                den += 1
                if pred[i] < pred[j]:
                    num += 1
                elif pred[i] == pred[j]:
                    num += 0.5
    return None if den == 0 else num / den


def km_loop(time, event):
    times, probs, s = [], [], 1.0
    for t in sorted(set(time)):
        d = sum(1 for ti, ei in zip(time, event) if ti == t and ei)
        n = sum(1 for ti in time if ti >= t)
        if d:
            s *= 1 - d / n
            times.append(t)
            probs.append(s)
    return times, probs


def logrank_loop(time, event, group):
    o_e = var = 0.0
    for t in sorted({ti for ti, ei in zip(time, event) if ei}):
        n = sum(1 for ti in time if ti >= t)
        n1 = sum(1 for ti, g in zip(time, group) if ti >= t and g)
        d = sum(1 for ti, ei in zip(time, event) if ti == t and ei)
        d1 = sum(1 for ti, ei, g in zip(time, event, group) if ti == t and ei and g)
        o_e += d1 - d * n1 / n
        if n > 1:
            var += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1)
    return o_e * o_e / var


def chisq_sf_quad(x, df=1):
    """Upper tail by direct integration of the density over [x, x + 600]."""
    k = df / 2.0
    pdf = lambda u: u ** (k - 1) * math.exp(-u / 2) / (2 ** k * math.gamma(k))
    return integrate.quad(pdf, x, x + 600.0, epsabs=0.0, epsrel=1e-12, limit=500)[0]


def normal_cdf_quad(z):
    pdf = lambda u: math.exp(-u * u / 2) / math.sqrt(2 * math.pi)
    return integrate.quad(pdf, -np.inf, z)[0]


def rmst_dense(curve_fn, t_max, n=200_001):
    t = np.linspace(0, t_max, n)
    mid = (t[:-1] + t[1:]) / 2
    return float(np.sum(curve_fn(mid) * np.diff(t)))
