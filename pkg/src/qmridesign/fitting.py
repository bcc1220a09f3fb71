"""Segmented bi-exponential parameter estimation.

Stage 1 fits the tissue compartment: ordinary least squares on
(b, ln S) over the measurements at b >= high_b_threshold gives the
diffusivity d (negative slope) and the extrapolated log-intercept.
Stage 2 anchors s0 on the mean of the b = 0 measurements and reads the
perfusion fraction off the intercept: f = 1 - exp(intercept)/s0.
Stage 3 recovers d_star from the full residual by a bounded 1-D search:
a 200-point log-spaced grid scan followed by golden-section refinement,
which is deterministic and immune to local minima.

Protocols whose high-b segment is deficient (fewer than two distinct
b-values at or above the threshold) are handled in two tiers: if at least
one measurement sits at or above the threshold, the threshold is relaxed
to the two largest distinct positive b-values so clustered designs still
produce informative (if biased) estimates; if no measurement reaches the
threshold at all, a sentinel result with every estimate at its lower
bound is returned. Either tier sets the ``high_b_deficient`` flag, so
degenerate protocols always yield defined, poor feature vectors instead
of errors.

All estimators operate on (n_subjects, n_acquisitions) matrices; the
scalar API is the n = 1 case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FitBounds",
    "FitResult",
    "HighBDeficientError",
    "NoB0Error",
    "fit_high_b",
    "estimate_s0_f",
    "fit_dstar",
    "segmented_fit",
    "segmented_fit_batch",
    "fit_dataset",
]

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class HighBDeficientError(ValueError):
    """Fewer than two distinct qualifying b-values in the high-b segment."""


class NoB0Error(ValueError):
    """The acquisition contains no b = 0 measurement."""


@dataclass(frozen=True)
class FitBounds:
    """Estimator bounds and segmentation threshold.

    The diffusivity clamp range and the d_star search ceiling bracket all
    modeled tissue classes with wide margins. ``high_b_threshold`` is the
    b-value (s/mm^2) above which the perfusion compartment is treated as
    fully decayed.
    """

    d_min: float = 1.0e-5
    d_max: float = 5.0e-3
    dstar_max: float = 0.5
    high_b_threshold: float = 200.0
    grid_points: int = 200
    refine_rel_tol: float = 1.0e-6


DEFAULT_BOUNDS = FitBounds()


@dataclass(frozen=True)
class FitResult:
    """Estimates plus flags recording every clamp or fallback that fired."""

    s0_est: float
    f_est: float
    d_est: float
    dstar_est: float
    high_b_deficient: bool = False
    f_clamped: bool = False
    dstar_at_bound: bool = False

    def feature_vector(self) -> np.ndarray:
        return np.array([self.s0_est, self.f_est, self.d_est, self.dstar_est])


def _loglinear_batch(signals: np.ndarray, b_values: np.ndarray, column_mask: np.ndarray):
    """Per-row weighted OLS of ln(signal) on b over the masked columns.

    Non-positive signals get zero weight. Returns (slope, intercept, ok)
    where ok is False for rows whose qualifying measurements do not span
    two distinct b-values.
    """
    w = column_mask[None, :] & (signals > 0.0)
    safe = np.where(signals > 0.0, signals, 1.0)
    y = np.where(w, np.log(safe), 0.0)
    bw = np.where(w, b_values[None, :], 0.0)

    n_w = w.sum(axis=1)
    ok = n_w >= 2
    n_safe = np.maximum(n_w, 1)
    b_mean = bw.sum(axis=1) / n_safe
    y_mean = y.sum(axis=1) / n_safe
    b_cent = np.where(w, b_values[None, :] - b_mean[:, None], 0.0)
    s_bb = (b_cent**2).sum(axis=1)
    s_by = (b_cent * (y - y_mean[:, None]) * w).sum(axis=1)

    ok = ok & (s_bb > 0.0)  # s_bb == 0 iff all qualifying b coincide
    slope = np.where(ok, s_by / np.where(s_bb > 0.0, s_bb, 1.0), 0.0)
    intercept = y_mean - slope * b_mean
    return slope, intercept, ok


def fit_high_b(
    signals,
    b_values,
    threshold: float = DEFAULT_BOUNDS.high_b_threshold,
    bounds: FitBounds = DEFAULT_BOUNDS,
):
    """Mono-exponential log-linear fit over the b >= threshold segment.

    Returns (d_est, intercept) with d_est = -slope clamped to
    [bounds.d_min, bounds.d_max] and intercept the fitted ln(signal) at
    b = 0. Raises HighBDeficientError when fewer than two measurements
    with distinct b-values (and positive signal) qualify.
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    b_values = np.asarray(b_values, dtype=float)
    mask = b_values >= threshold
    slope, intercept, ok = _loglinear_batch(signals, b_values, mask)
    if not ok.all():
        raise HighBDeficientError(
            f"need >= 2 measurements with distinct b >= {threshold:g} and positive "
            f"signal; qualifying b-values: {sorted(np.unique(b_values[mask]))}"
        )
    d_est = np.clip(-slope, bounds.d_min, bounds.d_max)
    if d_est.shape == (1,):
        return float(d_est[0]), float(intercept[0])
    return d_est, intercept


def estimate_s0_f(signals, b_values, intercept):
    """s0 from the mean of b = 0 measurements; f from the high-b intercept.

    f = 1 - exp(intercept)/s0, clamped to [0, 1]. Returns
    (s0_est, f_est, f_clamped). Raises NoB0Error if no b = 0 measurement
    exists (prevented upstream by the protocol invariant).
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    b_values = np.asarray(b_values, dtype=float)
    b0 = b_values == 0.0
    if not b0.any():
        raise NoB0Error("acquisition has no b = 0 measurement")
    s0_est = signals[:, b0].mean(axis=1)
    intercept = np.atleast_1d(np.asarray(intercept, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        f_raw = np.where(s0_est > 0.0, 1.0 - np.exp(intercept) / s0_est, 0.0)
    f_est = np.clip(f_raw, 0.0, 1.0)
    f_clamped = f_raw != f_est
    if s0_est.shape == (1,):
        return float(s0_est[0]), float(f_est[0]), bool(f_clamped[0])
    return s0_est, f_est, f_clamped


def _dstar_sse(residual: np.ndarray, amplitude: np.ndarray, b_values: np.ndarray, dstar: np.ndarray):
    """Sum-of-squares misfit of the perfusion term for candidate d_star values."""
    model = amplitude[:, None] * np.exp(-b_values[None, :] * dstar[:, None])
    return ((residual - model) ** 2).sum(axis=1)


def fit_dstar(
    signals,
    b_values,
    s0_est,
    f_est,
    d_est,
    bounds: FitBounds = DEFAULT_BOUNDS,
):
    """Pseudo-diffusivity from the residual after removing the tissue term.

    Minimizes sum_b [S_b - s0*((1-f) e^(-b d) + f e^(-b dstar))]^2 over
    dstar in [d_est, bounds.dstar_max] by a log-spaced grid scan plus
    golden-section refinement. Subjects with f_est <= 0 return d_est with
    the boundary flag set. Returns (dstar_est, at_bound).
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    b_values = np.asarray(b_values, dtype=float)
    s0 = np.atleast_1d(np.asarray(s0_est, dtype=float))
    f = np.atleast_1d(np.asarray(f_est, dtype=float))
    d = np.atleast_1d(np.asarray(d_est, dtype=float))
    n = signals.shape[0]

    tissue = s0[:, None] * (1.0 - f)[:, None] * np.exp(-b_values[None, :] * d[:, None])
    residual = signals - tissue
    amplitude = s0 * f

    lo = np.log(d)
    hi = np.log(np.full(n, bounds.dstar_max))
    # grid scan in log space, then bracket the argmin for refinement
    steps = np.linspace(0.0, 1.0, bounds.grid_points)
    grid = np.exp(lo[:, None] + (hi - lo)[:, None] * steps[None, :])
    sse = np.empty((n, bounds.grid_points))
    for j in range(bounds.grid_points):
        sse[:, j] = _dstar_sse(residual, amplitude, b_values, grid[:, j])
    best = sse.argmin(axis=1)
    left = grid[np.arange(n), np.maximum(best - 1, 0)]
    right = grid[np.arange(n), np.minimum(best + 1, bounds.grid_points - 1)]

    a, b = left.copy(), right.copy()
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1 = _dstar_sse(residual, amplitude, b_values, x1)
    f2 = _dstar_sse(residual, amplitude, b_values, x2)
    for _ in range(200):
        # freeze converged rows so results do not depend on batch company
        active = (b - a) > bounds.refine_rel_tol * np.maximum(0.5 * (a + b), bounds.d_min)
        if not active.any():
            break
        shrink_left = active & (f1 > f2)  # minimum lies in [x1, b]
        shrink_right = active & ~shrink_left
        a = np.where(shrink_left, x1, a)
        b = np.where(shrink_right, x2, b)
        x1 = np.where(active, b - _GOLDEN * (b - a), x1)
        x2 = np.where(active, a + _GOLDEN * (b - a), x2)
        f1 = np.where(active, _dstar_sse(residual, amplitude, b_values, x1), f1)
        f2 = np.where(active, _dstar_sse(residual, amplitude, b_values, x2), f2)

    dstar = np.clip(0.5 * (a + b), d, bounds.dstar_max)
    inactive = f <= 0.0
    dstar = np.where(inactive, d, dstar)

    edge_tol = 10.0 * bounds.refine_rel_tol
    at_lower = (dstar - d) <= edge_tol * np.maximum(dstar, bounds.d_min)
    at_upper = (bounds.dstar_max - dstar) <= edge_tol * bounds.dstar_max
    at_bound = inactive | at_lower | at_upper

    if dstar.shape == (1,):
        return float(dstar[0]), bool(at_bound[0])
    return dstar, at_bound


def _effective_threshold(b_values: np.ndarray, threshold: float):
    """Segmentation threshold actually usable for this set of b-values.

    Returns (threshold, deficient_flag) or (None, True) when even the
    relaxed segment cannot span two distinct b-values. The relaxation to
    the two largest distinct positive b-values only applies when at least
    one measurement reaches the nominal threshold; designs confined
    entirely below it stay sentinel cases.
    """
    high = np.unique(b_values[b_values >= threshold])
    if len(high) >= 2:
        return threshold, False
    if len(high) == 0:
        return None, True
    positive = np.unique(b_values[b_values > 0.0])
    if len(positive) < 2:
        return None, True
    return float(positive[-2]), True


def segmented_fit_batch(
    signals: np.ndarray,
    b_values,
    bounds: FitBounds = DEFAULT_BOUNDS,
):
    """Full segmented fit for a (n_subjects, n_acquisitions) signal matrix.

    Returns (features, flags): features is (n, 4) in the order
    (s0, f, d, d_star); flags is (n, 3) boolean columns
    (high_b_deficient, f_clamped, dstar_at_bound). Fit failures never
    raise; they produce sentinel rows (every estimate at its lower bound)
    with the deficiency flag set.
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    b_values = np.asarray(b_values, dtype=float)
    if not (b_values == 0.0).any():
        raise NoB0Error("acquisition has no b = 0 measurement")
    n = signals.shape[0]

    features = np.tile([0.0, 0.0, bounds.d_min, bounds.d_min], (n, 1))
    flags = np.zeros((n, 3), dtype=bool)

    threshold, deficient = _effective_threshold(b_values, bounds.high_b_threshold)
    if threshold is None:
        flags[:, 0] = True
        return features, flags

    mask = b_values >= threshold
    slope, intercept, ok = _loglinear_batch(signals, b_values, mask)
    d_est = np.clip(-slope, bounds.d_min, bounds.d_max)

    s0_est, f_est, f_clamped = estimate_s0_f(signals, b_values, intercept)
    s0_est = np.atleast_1d(s0_est)
    f_est = np.atleast_1d(f_est)
    f_clamped = np.atleast_1d(f_clamped)
    dstar_est, at_bound = fit_dstar(signals, b_values, s0_est, f_est, d_est, bounds)
    dstar_est = np.atleast_1d(dstar_est)
    at_bound = np.atleast_1d(at_bound)

    features[ok, 0] = s0_est[ok]
    features[ok, 1] = f_est[ok]
    features[ok, 2] = d_est[ok]
    features[ok, 3] = dstar_est[ok]
    flags[:, 0] = deficient | ~ok
    flags[ok, 1] = f_clamped[ok]
    flags[ok, 2] = at_bound[ok]
    return features, flags


def segmented_fit(signals, b_values, bounds: FitBounds = DEFAULT_BOUNDS) -> FitResult:
    """Segmented fit for a single subject's signal vector."""
    features, flags = segmented_fit_batch(np.atleast_2d(signals), b_values, bounds)
    return FitResult(
        s0_est=float(features[0, 0]),
        f_est=float(features[0, 1]),
        d_est=float(features[0, 2]),
        dstar_est=float(features[0, 3]),
        high_b_deficient=bool(flags[0, 0]),
        f_clamped=bool(flags[0, 1]),
        dstar_at_bound=bool(flags[0, 2]),
    )


def fit_dataset(dataset, bounds: FitBounds = DEFAULT_BOUNDS):
    """Fit every subject of a dataset in place; returns the dataset."""
    features, flags = segmented_fit_batch(dataset.signals, dataset.b_values, bounds)
    dataset.features = features
    dataset.fit_flags = flags
    return dataset

