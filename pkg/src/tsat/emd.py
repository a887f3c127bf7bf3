"""Empirical mode decomposition by Huang sifting.

A series is split into oscillatory intrinsic mode functions (IMFs) plus a
slowly varying residual so that ``sum(imfs) + residual == x`` up to rounding.
Envelopes are natural cubic splines through the local extrema, with the two
extrema nearest each boundary mirrored about that boundary before fitting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import DataError, DegenerateSignalError, ParameterError

logger = logging.getLogger(__name__)

MIN_LENGTH = 8
DEFAULT_SD_THRESHOLD = 0.2
DEFAULT_MAX_ITER = 100
DEFAULT_K = 4


@dataclass(frozen=True)
class Series:
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < MIN_LENGTH:
            raise DataError(f"series {self.name!r} needs at least {MIN_LENGTH} samples")
        if not np.all(np.isfinite(values)):
            raise DataError(f"series {self.name!r} contains non-finite values")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class ImfDecomposition:
    imfs: np.ndarray  # (K, L)
    residual: np.ndarray  # (L,)
    sift_iterations: tuple = field(default=())

    @property
    def n_imfs(self):
        return self.imfs.shape[0]

    def reconstruct(self):
        return self.imfs.sum(axis=0) + self.residual


def find_extrema(x):
    """Indices of strict local maxima and minima.

    A plateau of equal values counts once, at its midpoint (rounded down).
    Runs touching either end of the signal are never extrema.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < 3:
        return np.array([], dtype=int), np.array([], dtype=int)
    change = np.flatnonzero(np.diff(x) != 0)
    starts = np.concatenate(([0], change + 1))
    ends = np.concatenate((change, [x.size - 1]))
    vals = x[starts]
    if vals.size < 3:
        return np.array([], dtype=int), np.array([], dtype=int)
    mid, left, right = vals[1:-1], vals[:-2], vals[2:]
    centers = (starts[1:-1] + ends[1:-1]) // 2
    maxima = centers[(mid > left) & (mid > right)]
    minima = centers[(mid < left) & (mid < right)]
    return maxima, minima


def count_zero_crossings(x):
    s = np.sign(np.asarray(x, dtype=np.float64))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def is_imf(x):
    maxima, minima = find_extrema(x)
    return abs(count_zero_crossings(x) - (maxima.size + minima.size)) <= 1


def natural_cubic_spline(knots, values, points):
    """Evaluate the natural cubic spline through ``(knots, values)`` at ``points``."""
    xk = np.asarray(knots, dtype=np.float64)
    yk = np.asarray(values, dtype=np.float64)
    n = xk.size
    if n < 2:
        raise DegenerateSignalError("a spline needs at least two knots")
    h = np.diff(xk)
    second = np.zeros(n)
    if n > 2:
        slope = np.diff(yk) / h
        rhs = 6.0 * np.diff(slope)
        banded = np.zeros((3, n - 2))
        banded[0, 1:] = h[1:-1]
        banded[1] = 2.0 * (h[:-1] + h[1:])
        banded[2, :-1] = h[1:-1]
        second[1:-1] = solve_banded((1, 1), banded, rhs)
    t = np.asarray(points, dtype=np.float64)
    i = np.clip(np.searchsorted(xk, t, side="right") - 1, 0, n - 2)
    hi = h[i]
    a = xk[i + 1] - t
    b = t - xk[i]
    return (second[i] * a ** 3 / (6.0 * hi) + second[i + 1] * b ** 3 / (6.0 * hi)
            + (yk[i] / hi - second[i] * hi / 6.0) * a
            + (yk[i + 1] / hi - second[i + 1] * hi / 6.0) * b)


def spline_envelope(extrema_idx, extrema_val, length):
    """Spline envelope through extrema, evaluated at ``0..length-1``.

    If the outermost extremum is not already on the boundary, the two extrema
    closest to that boundary are mirrored across it so the spline interpolates
    rather than extrapolates near the ends.
    """
    idx = np.asarray(extrema_idx, dtype=np.float64)
    val = np.asarray(extrema_val, dtype=np.float64)
    if idx.size == 0:
        raise DegenerateSignalError("no extrema to build an envelope from")
    last = float(length - 1)
    knots, vals = [idx], [val]
    if idx[0] > 0:
        knots.insert(0, -idx[:2][::-1])
        vals.insert(0, val[:2][::-1])
    if idx[-1] < last:
        knots.append(2.0 * last - idx[-2:][::-1])
        vals.append(val[-2:][::-1])
    knots = np.concatenate(knots)
    vals = np.concatenate(vals)
    if knots.size < 2:
        raise DegenerateSignalError("fewer than two extrema after boundary extension")
    return natural_cubic_spline(knots, vals, np.arange(length, dtype=np.float64))


def _sift(x, sd_threshold, max_iter, check_imf):
    h = np.array(x, dtype=np.float64)
    n = h.size
    done = 0
    for it in range(max_iter):
        maxima, minima = find_extrema(h)
        try:
            upper = spline_envelope(maxima, h[maxima], n)
            lower = spline_envelope(minima, h[minima], n)
        except DegenerateSignalError:
            if it == 0:
                raise
            logger.debug("sifting lost its extrema after %d iterations", it)
            break
        h_new = h - 0.5 * (upper + lower)
        denom = np.sum(h * h)
        sd = np.sum((h - h_new) ** 2) / denom if denom > 0 else 0.0
        h = h_new
        done = it + 1
        if sd < sd_threshold and (not check_imf or is_imf(h)):
            break
    return h, done


def sift(x, sd_threshold=DEFAULT_SD_THRESHOLD, max_iter=DEFAULT_MAX_ITER, check_imf=False):
    """Extract one IMF candidate from ``x``.

    Iterates ``h <- h - mean(upper, lower)`` until the Cauchy ratio
    ``sum((h_prev - h)**2) / sum(h_prev**2)`` drops below ``sd_threshold`` or
    ``max_iter`` iterations ran. With ``check_imf`` the loop also insists that
    zero-crossing and extremum counts differ by at most one before stopping.
    """
    h, _ = _sift(x, sd_threshold, max_iter, check_imf)
    return h


def _n_extrema(x):
    maxima, minima = find_extrema(x)
    return maxima.size + minima.size


def decompose(x, k_max=DEFAULT_K, sd_threshold=DEFAULT_SD_THRESHOLD, max_iter=DEFAULT_MAX_ITER):
    """Split ``x`` (array or :class:`Series`) into at most ``k_max`` IMFs and a residual."""
    if k_max < 1:
        raise ParameterError("k_max must be at least 1")
    values = x.values if isinstance(x, Series) else Series(x).values
    residual = values.copy()
    imfs, iterations = [], []
    while len(imfs) < k_max and _n_extrema(residual) >= 3:
        try:
            imf, n_iter = _sift(residual, sd_threshold, max_iter, check_imf=True)
        except DegenerateSignalError:
            break
        imfs.append(imf)
        iterations.append(n_iter)
        residual = residual - imf
    stacked = np.array(imfs) if imfs else np.zeros((0, values.size))
    return ImfDecomposition(stacked, residual, tuple(iterations))


def pad_to_k(d: ImfDecomposition, k: int) -> ImfDecomposition:
    """Force exactly ``k`` IMF slots: zero-fill missing ones, fold extras into the residual."""
    if k <= 0:
        raise ParameterError("K must be positive")
    n, length = d.imfs.shape
    if n == k:
        return d
    if n < k:
        imfs = np.vstack([d.imfs, np.zeros((k - n, length))])
        iters = d.sift_iterations + (0,) * (k - n)
        return ImfDecomposition(imfs, d.residual.copy(), iters)
    residual = d.residual.copy()
    for extra in d.imfs[k:]:
        residual = residual + extra
    return ImfDecomposition(d.imfs[:k].copy(), residual, d.sift_iterations[:k])
