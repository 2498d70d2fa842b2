"""
Error metrics, residual Gaussianity checks and spectral summaries.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps
from scipy import stats

from gplfm.errors import DataError, DegenerateInputError
from gplfm.results import ResidualReport

LOGGER = logging.getLogger(__name__)

KS_SIGNIFICANCE = 1e-3
KS_MC_SAMPLES = 9999
# simulated values held in memory per batch
KS_BATCH_VALUES = 2**22
PSD_SEGMENT = 1024


def _pair(y_true, y_est) -> tuple[np.ndarray, np.ndarray]:
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_est = np.asarray(y_est, dtype=float).ravel()
    if y_true.shape != y_est.shape:
        raise DataError(f"series lengths differ: {y_true.size} vs {y_est.size}")
    if y_true.size < 2:
        raise DataError("need at least two samples")
    return y_true, y_est


def nmse(y_true, y_est) -> float:
    """Normalised mean square error in percent: 100 / (N var[y]) Σ (y - ŷ)²."""
    y_true, y_est = _pair(y_true, y_est)
    variance = float(np.var(y_true))
    if variance <= 0:
        raise DegenerateInputError("NMSE is undefined for a constant reference signal")
    return float(100.0 * np.mean((y_true - y_est) ** 2) / variance)


def rmse(y_true, y_est) -> float:
    y_true, y_est = _pair(y_true, y_est)
    return float(np.sqrt(np.mean((y_true - y_est) ** 2)))


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    reject: bool


def _ks_normal_statistic(x, axis=-1):
    """KS distance between each sample and the normal fitted to it, along `axis`."""
    x = np.moveaxis(np.asarray(x, dtype=float), axis, -1)
    n = x.shape[-1]
    standard = (x - x.mean(axis=-1, keepdims=True)) / x.std(axis=-1, ddof=1, keepdims=True)
    cdf = stats.norm.cdf(np.sort(standard, axis=-1))
    rank = np.arange(1, n + 1)
    return np.maximum(np.max(rank / n - cdf, axis=-1), np.max(cdf - (rank - 1) / n, axis=-1))


def ks_gaussian_test(
    residuals,
    significance: float = KS_SIGNIFICANCE,
    n_mc_samples: int = KS_MC_SAMPLES,
    seed: int | None = 0,
) -> KsResult:
    """
    Kolmogorov-Smirnov test of normality with the mean and variance estimated from the sample.

    The null distribution of the statistic is simulated with both parameters refitted to every
    simulated sample (the Lilliefors construction), so p-values are uniform under the null.
    The smallest attainable p-value is 1 / (n_mc_samples + 1).
    """
    residuals = np.asarray(residuals, dtype=float).ravel()
    if residuals.size < 20:
        raise DataError(f"KS test needs at least 20 residuals, got {residuals.size}")
    if not float(np.std(residuals, ddof=1)) > 0:
        raise DegenerateInputError("residuals have zero spread; KS test is undefined")
    rng = np.random.default_rng(seed)
    result = stats.monte_carlo_test(
        residuals,
        rng.standard_normal,
        _ks_normal_statistic,
        vectorized=True,
        n_resamples=n_mc_samples,
        batch=max(1, KS_BATCH_VALUES // residuals.size),
        alternative="greater",
    )
    p_value = float(result.pvalue)
    return KsResult(float(result.statistic), p_value, p_value < significance)


def periodogram(signal, fs: float, segment: int = PSD_SEGMENT) -> tuple[np.ndarray, np.ndarray]:
    """Welch PSD estimate: Hann-windowed segments with 50% overlap, one-sided density."""
    if not fs > 0:
        raise DataError(f"sample rate must be positive, got {fs}")
    signal = np.asarray(signal, dtype=float).ravel()
    nperseg = min(segment, signal.size)
    frequencies, power = sps.welch(
        signal,
        fs=fs,
        window="hann",
        nperseg=nperseg,
        noverlap=nperseg // 2,
        detrend=False,
        scaling="density",
    )
    return frequencies, np.clip(power, 0.0, None)


def residual_report(y_true, y_est, fs: float, segment: int = PSD_SEGMENT) -> ResidualReport:
    y_true, y_est = _pair(y_true, y_est)
    residual = y_true - y_est
    ks = ks_gaussian_test(residual)
    frequencies, power = periodogram(residual, fs, segment)
    return ResidualReport(
        nmse=nmse(y_true, y_est),
        ks_statistic=ks.statistic,
        ks_p_value=ks.p_value,
        ks_reject=ks.reject,
        residual=residual.tolist(),
        frequencies=frequencies.tolist(),
        power=power.tolist(),
    )
