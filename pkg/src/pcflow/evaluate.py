"""Statistical comparison of generated and historical scenario sets.

Covers a Gaussian kernel density estimate of the pooled values, a
two-sample Kolmogorov-Smirnov test, a Welch power spectral density, the
cumulative-explained-variance table, and per-time-step marginal moments.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import pca as pca_mod
from .dataio import ScenarioSet
from .errors import DataError, UsageError

KDE_GRID_POINTS = 512
CEV_THRESHOLDS = (0.99, 0.999, 0.9999, 1.0)


# kernel density estimation ---------------------------------------------------

def silverman_bandwidth(samples):
    """h = 0.9 * min(std, IQR/1.34) * n^(-1/5)."""
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    std = samples.std()
    q75, q25 = np.percentile(samples, [75, 25])
    spread = min(std, (q75 - q25) / 1.34)
    if spread <= 0:
        raise DataError("degenerate sample (zero spread): give a bandwidth explicitly")
    return 0.9 * spread * n ** (-0.2)


def kde_pdf(samples, grid, bandwidth=None):
    """Gaussian-kernel density estimate of the samples at the grid points."""
    samples = np.asarray(samples, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float)
    if len(samples) < 2:
        raise DataError("KDE needs at least 2 samples")
    if bandwidth is None:
        bandwidth = silverman_bandwidth(samples)
    elif bandwidth <= 0:
        raise UsageError("bandwidth must be positive")
    z = (grid[:, None] - samples[None, :]) / bandwidth
    kernels = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return kernels.mean(axis=1) / bandwidth


def kde_grid(samples, bandwidth=None, points=KDE_GRID_POINTS):
    """Uniform evaluation grid spanning [min - 3h, max + 3h]."""
    samples = np.asarray(samples, dtype=float).ravel()
    if bandwidth is None:
        bandwidth = silverman_bandwidth(samples)
    return np.linspace(samples.min() - 3 * bandwidth, samples.max() + 3 * bandwidth, points)


# Kolmogorov-Smirnov -----------------------------------------------------------

def ks_statistic(a, b):
    """Supremum gap between the two empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if len(a) == 0 or len(b) == 0:
        raise DataError("KS test needs non-empty samples")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / len(a)
    cdf_b = np.searchsorted(b, pooled, side="right") / len(b)
    return float(np.max(np.abs(cdf_a - cdf_b)))


def kolmogorov_survival(lam, max_terms=100, tol=1e-12):
    """Q(lambda) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lambda^2), clipped to [0,1]."""
    if lam <= 0:
        return 1.0
    total = 0.0
    for k in range(1, max_terms + 1):
        term = 2.0 * (-1.0) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam)
        total += term
        if abs(term) < tol:
            break
    return min(max(total, 0.0), 1.0)


def ks_exact_p_value(n_a, n_b, statistic):
    """Exact permutation p-value for untied samples by lattice-path counting.

    Counts the monotone paths through the merged sample order whose running
    ECDF gap stays below the observed statistic; every path is equally
    likely under the permutation null.
    """
    ways = np.zeros((n_a + 1, n_b + 1))
    ways[0, 0] = 1.0
    for i in range(n_a + 1):
        for j in range(n_b + 1):
            if i == 0 and j == 0:
                continue
            if abs(i / n_a - j / n_b) >= statistic - 1e-12:
                continue
            ways[i, j] = (ways[i - 1, j] if i else 0.0) + (ways[i, j - 1] if j else 0.0)
    return 1.0 - ways[n_a, n_b] / math.comb(n_a + n_b, n_a)


KS_EXACT_MAX_N = 100


def ks_two_sample(a, b):
    """Two-sample KS statistic and p-value.

    Small untied samples (total size <= KS_EXACT_MAX_N) get the exact
    permutation p-value; otherwise the Kolmogorov limiting distribution is
    evaluated at the effective sample size n_a n_b / (n_a + n_b).
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    stat = ks_statistic(a, b)
    pooled = np.concatenate([a, b])
    if len(pooled) <= KS_EXACT_MAX_N and len(np.unique(pooled)) == len(pooled):
        return stat, ks_exact_p_value(len(a), len(b), stat)
    n_eff = len(a) * len(b) / (len(a) + len(b))
    p_value = kolmogorov_survival(math.sqrt(n_eff) * stat)
    return stat, p_value


# Welch power spectral density -------------------------------------------------

def _window(name, length):
    if name == "hann":
        n = np.arange(length)
        return 0.5 - 0.5 * np.cos(2.0 * math.pi * n / length)
    if name in ("rect", "rectangular", "boxcar"):
        return np.ones(length)
    raise UsageError(f"unknown window {name!r}")


def periodogram(signal, sample_rate, window=None):
    """One-sided periodogram normalized by window energy and sample rate."""
    signal = np.asarray(signal, dtype=float)
    n = len(signal)
    if window is None:
        window = np.ones(n)
    spectrum = np.fft.rfft(signal * window)
    power = np.abs(spectrum) ** 2 / (sample_rate * np.sum(window ** 2))
    power[1:] *= 2.0
    if n % 2 == 0:
        power[-1] /= 2.0  # Nyquist bin is not duplicated
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    return freqs, power


def welch_psd(scenario_set: ScenarioSet, segment_length=None, overlap_fraction=0.5,
              window="hann"):
    """Mean Welch PSD over all scenarios, frequencies in cycles per hour."""
    data = scenario_set.data
    d = data.shape[1]
    if segment_length is None:
        segment_length = max(d // 2, 2)
    if segment_length > d:
        raise UsageError(f"segment_length {segment_length} exceeds period length {d}")
    if not 0.0 <= overlap_fraction <= 0.9:
        raise UsageError("overlap_fraction must lie in [0, 0.9]")
    step = max(int(round(segment_length * (1.0 - overlap_fraction))), 1)
    starts = range(0, d - segment_length + 1, step)
    win = _window(window, segment_length) if isinstance(window, str) else np.asarray(window)
    sample_rate = 60.0 / scenario_set.interval_minutes  # samples per hour

    freqs = np.fft.rfftfreq(segment_length, d=1.0 / sample_rate)
    mean_power = np.zeros_like(freqs)
    for row in data:
        seg_power = np.zeros_like(freqs)
        for start in starts:
            _, power = periodogram(row[start: start + segment_length], sample_rate, win)
            seg_power += power
        mean_power += seg_power / len(starts)
    return freqs, mean_power / data.shape[0]


# component counts and marginals -----------------------------------------------

def cev_report(decomposition, thresholds=CEV_THRESHOLDS):
    """Component count needed for each explained-variance threshold."""
    return pca_mod.cev_table(decomposition, thresholds)


def marginal_stats(scenario_set: ScenarioSet, start_minute=0, end_minute=None):
    """Column-wise mean and unbiased variance over a clock-time window.

    The window is inclusive on both ends; ``end_minute`` defaults to the end
    of the day.
    """
    interval = scenario_set.interval_minutes
    d = scenario_set.period_length
    if end_minute is None:
        end_minute = (d - 1) * interval
    if not 0 <= start_minute <= end_minute < 24 * 60:
        raise UsageError("clock window must lie within the day")
    minutes = np.arange(d) * interval
    cols = np.nonzero((minutes >= start_minute) & (minutes <= end_minute))[0]
    if len(cols) == 0:
        raise UsageError("clock window selects no time steps")
    block = scenario_set.data[:, cols]
    return minutes[cols], block.mean(axis=0), block.var(axis=0, ddof=1)


# report -----------------------------------------------------------------------

@dataclass
class EvalReport:
    kde_grid: np.ndarray
    kde_historical: np.ndarray
    kde_generated: np.ndarray
    ks_statistic: float
    ks_p_value: float
    psd_freqs: np.ndarray
    psd_historical: np.ndarray
    psd_generated: np.ndarray
    cev_historical: dict
    marginal_minutes: np.ndarray
    marginal_mean_historical: np.ndarray
    marginal_var_historical: np.ndarray
    marginal_mean_generated: np.ndarray
    marginal_var_generated: np.ndarray
    options: dict


def evaluate_sets(historical: ScenarioSet, generated: ScenarioSet,
                  bandwidth=None, segment_length=None, overlap_fraction=0.5,
                  window="hann", marginal_window=(0, 240)) -> EvalReport:
    """Run the full comparison suite on two scenario sets."""
    if historical.period_length != generated.period_length:
        raise UsageError("sets must have equal period length")
    hist_pool = historical.data.ravel()
    gen_pool = generated.data.ravel()

    h = bandwidth if bandwidth is not None else silverman_bandwidth(hist_pool)
    lo = min(hist_pool.min(), gen_pool.min()) - 3 * h
    hi = max(hist_pool.max(), gen_pool.max()) + 3 * h
    grid = np.linspace(lo, hi, KDE_GRID_POINTS)

    stat, p_value = ks_two_sample(hist_pool, gen_pool)
    freqs, psd_hist = welch_psd(historical, segment_length, overlap_fraction, window)
    _, psd_gen = welch_psd(generated, segment_length, overlap_fraction, window)
    minutes, m_hist, v_hist = marginal_stats(historical, *marginal_window)
    _, m_gen, v_gen = marginal_stats(generated, *marginal_window)

    return EvalReport(
        kde_grid=grid,
        kde_historical=kde_pdf(hist_pool, grid, h),
        kde_generated=kde_pdf(gen_pool, grid, h),
        ks_statistic=stat,
        ks_p_value=p_value,
        psd_freqs=freqs,
        psd_historical=psd_hist,
        psd_generated=psd_gen,
        cev_historical=cev_report(pca_mod.fit(historical)),
        marginal_minutes=minutes,
        marginal_mean_historical=m_hist,
        marginal_var_historical=v_hist,
        marginal_mean_generated=m_gen,
        marginal_var_generated=v_gen,
        options={
            "kde_bandwidth": h,
            "welch_window": window if isinstance(window, str) else "custom",
            "welch_overlap": overlap_fraction,
            "welch_segment_length": segment_length,
            "ks_pooling": "all time steps of all scenarios flattened",
        },
    )


def write_report(report: EvalReport, out_dir, header_comment=None):
    """Emit the report as CSV files plus a human-readable summary."""
    os.makedirs(out_dir, exist_ok=True)

    def _open(name):
        fh = open(os.path.join(out_dir, name), "w", encoding="utf-8")
        if header_comment:
            fh.write(f"# {header_comment}\n")
        return fh

    with _open("kde.csv") as fh:
        fh.write("value,density_historical,density_generated\n")
        for g, dh, dg in zip(report.kde_grid, report.kde_historical, report.kde_generated):
            fh.write(f"{float(g)!r},{float(dh)!r},{float(dg)!r}\n")
    with _open("psd.csv") as fh:
        fh.write("frequency_per_hour,power_historical,power_generated\n")
        for f, ph, pg in zip(report.psd_freqs, report.psd_historical, report.psd_generated):
            fh.write(f"{float(f)!r},{float(ph)!r},{float(pg)!r}\n")
    with _open("ks.txt") as fh:
        fh.write(f"statistic={report.ks_statistic!r}\n")
        fh.write(f"p_value={report.ks_p_value!r}\n")
    with _open("cev.csv") as fh:
        fh.write("threshold,components\n")
        for threshold, m in report.cev_historical.items():
            fh.write(f"{threshold},{m}\n")
    with _open("marginals.csv") as fh:
        fh.write("minute,mean_historical,var_historical,mean_generated,var_generated\n")
        rows = zip(report.marginal_minutes, report.marginal_mean_historical,
                   report.marginal_var_historical, report.marginal_mean_generated,
                   report.marginal_var_generated)
        for minute, mh, vh, mg, vg in rows:
            fh.write(f"{int(minute)},{float(mh)!r},{float(vh)!r},"
                     f"{float(mg)!r},{float(vg)!r}\n")
    with _open("summary.txt") as fh:
        fh.write("scenario evaluation summary\n")
        fh.write("===========================\n")
        for key, val in report.options.items():
            fh.write(f"{key}: {val}\n")
        fh.write(f"KS statistic: {report.ks_statistic:.6g}\n")
        fh.write(f"KS p-value: {report.ks_p_value:.6g}\n")
        fh.write("CEV components (historical): "
                 + ", ".join(f"{t:g} -> {m}" for t, m in report.cev_historical.items())
                 + "\n")
