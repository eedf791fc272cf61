"""Tests for KDE, KS test, Welch PSD, CEV report, and marginal statistics."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcflow import dataio, evaluate, pca
from pcflow.errors import DataError, UsageError


def make_set(data, interval_minutes=None):
    data = np.asarray(data, dtype=float)
    if interval_minutes is None:
        interval_minutes = (24 * 60) // data.shape[1]
    return dataio.ScenarioSet(data=data, period_length=data.shape[1],
                              interval_minutes=interval_minutes)


# KDE --------------------------------------------------------------------


def test_kde_two_identical_points_hand_value():
    dens = evaluate.kde_pdf([0.0, 0.0], np.array([0.0]), bandwidth=1.0)
    assert dens[0] == pytest.approx(1.0 / math.sqrt(2 * math.pi), abs=1e-6)


def test_kde_two_point_hand_value():
    dens = evaluate.kde_pdf([-1.0, 1.0], np.array([0.0]), bandwidth=1.0)
    assert dens[0] == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi), abs=1e-6)


def test_kde_integrates_to_one():
    rng = np.random.default_rng(0)
    samples = rng.normal(3.0, 2.0, 500)
    grid = evaluate.kde_grid(samples)
    dens = evaluate.kde_pdf(samples, grid)
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)


def test_kde_single_sample_rejected():
    with pytest.raises(DataError):
        evaluate.kde_pdf([1.0], np.array([0.0]), bandwidth=1.0)


def test_kde_degenerate_sample_needs_bandwidth():
    with pytest.raises(DataError, match="bandwidth"):
        evaluate.kde_pdf([2.0, 2.0, 2.0], np.array([0.0]))


def test_silverman_formula():
    rng = np.random.default_rng(1)
    samples = rng.normal(size=200)
    q75, q25 = np.percentile(samples, [75, 25])
    want = 0.9 * min(samples.std(), (q75 - q25) / 1.34) * 200 ** -0.2
    assert evaluate.silverman_bandwidth(samples) == pytest.approx(want)


# KS test ----------------------------------------------------------------


def brute_force_ks(a, b):
    """Enumerate ECDF gaps at every sample point."""
    best = 0.0
    for t in np.concatenate([a, b]):
        gap = abs(np.mean(a <= t) - np.mean(b <= t))
        best = max(best, gap)
    return best


def test_ks_identical_samples():
    stat, p = evaluate.ks_two_sample([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert stat == 0.0
    assert p == 1.0


def test_ks_disjoint_supports():
    stat, _ = evaluate.ks_two_sample([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
    assert stat == 1.0


def test_ks_hand_example():
    stat, _ = evaluate.ks_two_sample([1.0, 2.0], [1.5, 2.5])
    assert stat == 0.5


def test_ks_matches_brute_force_enumeration():
    rng = np.random.default_rng(2)
    for _ in range(200):
        na, nb = rng.integers(1, 12, size=2)
        a = np.round(rng.normal(size=na), 1)  # coarse values force ties
        b = np.round(rng.normal(size=nb), 1)
        stat, _ = evaluate.ks_two_sample(a, b)
        assert stat == pytest.approx(brute_force_ks(a, b), abs=1e-12)


def permutation_p_value(a, b):
    """Exact p-value: all splits of the pooled sample into sizes (|a|, |b|)."""
    pooled = np.concatenate([a, b])
    observed = evaluate.ks_statistic(a, b)
    n = len(pooled)
    count = 0
    total = 0
    for idx in itertools.combinations(range(n), len(a)):
        mask = np.zeros(n, dtype=bool)
        mask[list(idx)] = True
        stat = evaluate.ks_statistic(pooled[mask], pooled[~mask])
        count += stat >= observed - 1e-12
        total += 1
    return count / total


def test_ks_p_value_close_to_permutation_oracle():
    rng = np.random.default_rng(3)
    for trial in range(8):
        na = int(rng.integers(5, 10))
        nb = int(rng.integers(5, 10))
        a = rng.normal(0, 1, na)
        b = rng.normal(0.5 * (trial % 3), 1, nb)
        _, p_asym = evaluate.ks_two_sample(a, b)
        p_exact = permutation_p_value(a, b)
        assert abs(p_asym - p_exact) <= 0.05


def test_ks_symmetry():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=30), rng.normal(1, 2, size=20)
    assert evaluate.ks_two_sample(a, b) == evaluate.ks_two_sample(b, a)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31))
def test_ks_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=15)
    b = rng.normal(0.3, 1.2, size=12)
    stat, _ = evaluate.ks_two_sample(a, b)
    stat2, _ = evaluate.ks_two_sample(np.exp(a), np.exp(b))
    assert stat == pytest.approx(stat2, abs=1e-12)


def test_kolmogorov_survival_limits():
    assert evaluate.kolmogorov_survival(0.0) == 1.0
    assert evaluate.kolmogorov_survival(10.0) == pytest.approx(0.0, abs=1e-12)
    # classic table value Q(1.0) ~ 0.27
    assert evaluate.kolmogorov_survival(1.0) == pytest.approx(0.26999967, abs=1e-6)


# Welch PSD --------------------------------------------------------------


def test_constant_signal_all_power_at_dc():
    scenario_set = make_set(np.ones((3, 32)), interval_minutes=15)
    freqs, power = evaluate.welch_psd(scenario_set, segment_length=32, window="rect")
    assert freqs[0] == 0.0
    assert power[0] > 0
    assert np.all(power[1:] <= 1e-20 * power[0])


def test_sinusoid_peak_at_expected_bin():
    # 1 cycle / 12 h sampled 96 x 15 min -> bin at 1/12 cycles per hour
    t = np.arange(96) * 15 / 60.0  # hours
    signal = np.cos(2 * np.pi * t / 12.0)
    scenario_set = make_set(signal[None, :].repeat(2, axis=0), interval_minutes=15)
    freqs, power = evaluate.welch_psd(scenario_set, segment_length=96, window="rect")
    assert freqs[np.argmax(power)] == pytest.approx(1.0 / 12.0)


def test_welch_single_segment_rect_equals_periodogram():
    rng = np.random.default_rng(5)
    data = rng.standard_normal((4, 64))
    scenario_set = make_set(data, interval_minutes=15)
    freqs, power = evaluate.welch_psd(scenario_set, segment_length=64, window="rect")
    direct = np.zeros_like(power)
    for row in data:
        f, p = evaluate.periodogram(row, 4.0)
        direct += p
    direct /= 4
    assert np.allclose(freqs, f)
    assert np.allclose(power, direct, rtol=1e-10)


def test_periodogram_parseval():
    # total power x bin width = biased variance + DC mean-square term
    rng = np.random.default_rng(6)
    signal = rng.standard_normal(64)
    fs = 4.0
    freqs, power = evaluate.periodogram(signal, fs)
    bin_width = fs / 64
    total = power.sum() * bin_width
    assert total == pytest.approx(np.mean(signal**2), rel=1e-6)


def test_white_noise_psd_is_flat():
    rng = np.random.default_rng(7)
    scenario_set = make_set(rng.standard_normal((400, 64)), interval_minutes=15)
    freqs, power = evaluate.welch_psd(scenario_set, segment_length=32,
                                      overlap_fraction=0.5)
    # expected two-sided-folded level: variance / sample rate x 2
    expected = 2.0 / 4.0
    interior = power[1:-1]
    assert np.abs(interior - expected).max() < 3 * expected / math.sqrt(400)


def test_welch_argument_validation():
    scenario_set = make_set(np.ones((2, 16)))
    with pytest.raises(UsageError, match="segment_length"):
        evaluate.welch_psd(scenario_set, segment_length=17)
    with pytest.raises(UsageError, match="overlap"):
        evaluate.welch_psd(scenario_set, overlap_fraction=0.95)
    with pytest.raises(UsageError, match="window"):
        evaluate.welch_psd(scenario_set, window="hamming")


# CEV + marginals --------------------------------------------------------


def test_cev_report_delegates_to_pca():
    rng = np.random.default_rng(8)
    data = rng.standard_normal((50, 6))
    dec = pca.fit(data)
    table = evaluate.cev_report(dec)
    assert set(table) == {0.99, 0.999, 0.9999, 1.0}
    assert table == pca.cev_table(dec, tuple(table))


def test_marginal_stats_all_zero_columns():
    data = np.zeros((5, 24))
    data[:, 8:16] = np.random.default_rng(9).uniform(size=(5, 8))
    scenario_set = make_set(data, interval_minutes=60)
    minutes, mean, var = evaluate.marginal_stats(scenario_set, 0, 240)
    assert np.array_equal(minutes, np.arange(5) * 60)
    assert np.array_equal(mean, np.zeros(5))
    assert np.array_equal(var, np.zeros(5))


def test_marginal_stats_two_point_variance():
    scenario_set = make_set(np.array([[0.0, 0.0], [1.0, 1.0]]))
    _, mean, var = evaluate.marginal_stats(scenario_set)
    assert np.array_equal(mean, [0.5, 0.5])
    assert np.array_equal(var, [0.5, 0.5])  # unbiased, ddof=1


def test_marginal_stats_matches_brute_force():
    rng = np.random.default_rng(10)
    data = rng.uniform(size=(7, 24))
    scenario_set = make_set(data, interval_minutes=60)
    minutes, mean, var = evaluate.marginal_stats(scenario_set, 120, 300)
    cols = [c for c in range(24) if 120 <= c * 60 <= 300]
    for i, c in enumerate(cols):
        col = data[:, c]
        assert mean[i] == col.mean()
        assert var[i] == col.var(ddof=1)


def test_marginal_stats_window_validation():
    scenario_set = make_set(np.ones((2, 24)), interval_minutes=60)
    with pytest.raises(UsageError):
        evaluate.marginal_stats(scenario_set, 300, 120)
    with pytest.raises(UsageError):
        evaluate.marginal_stats(scenario_set, 0, 25 * 60)


# full report ------------------------------------------------------------


def test_evaluate_sets_and_write_report(tmp_path):
    rng = np.random.default_rng(11)
    hist = make_set(rng.uniform(size=(30, 24)), interval_minutes=60)
    gen = make_set(rng.uniform(size=(40, 24)), interval_minutes=60)
    report = evaluate.evaluate_sets(hist, gen)
    assert 0.0 <= report.ks_statistic <= 1.0
    assert 0.0 <= report.ks_p_value <= 1.0
    assert np.all(report.kde_historical >= 0)
    assert np.all(np.diff(report.psd_freqs) > 0)
    out = tmp_path / "report"
    evaluate.write_report(report, out)
    for name in ("kde.csv", "psd.csv", "ks.txt", "cev.csv", "marginals.csv", "summary.txt"):
        assert (out / name).exists()
    # CSV values parse back as floats
    for line in (out / "kde.csv").read_text().splitlines()[1:3]:
        assert len([float(v) for v in line.split(",")]) == 3


def test_evaluate_sets_identical_inputs():
    rng = np.random.default_rng(12)
    hist = make_set(rng.uniform(size=(20, 24)), interval_minutes=60)
    report = evaluate.evaluate_sets(hist, hist)
    assert report.ks_statistic == 0.0
    assert report.ks_p_value == 1.0
    assert np.array_equal(report.psd_historical, report.psd_generated)


def test_evaluate_sets_dimension_mismatch():
    a = make_set(np.ones((3, 24)) * np.arange(24), interval_minutes=60)
    b = make_set(np.ones((3, 12)) * np.arange(12), interval_minutes=120)
    with pytest.raises(UsageError):
        evaluate.evaluate_sets(a, b)
