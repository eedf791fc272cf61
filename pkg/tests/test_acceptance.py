"""Acceptance gate: one test per release criterion.

Each test prints a single PASS/FAIL line (bypassing pytest capture) so the
gate's verdict is readable straight from the run output.
"""

import itertools
import math
import os
import time

import numpy as np
import pytest

from pcflow import cli, dataio, evaluate, pca, toy
from pcflow.flow import FlowModel, Standardizer, build_flow
from pcflow.train import TrainConfig, fit_fsnf, fit_pcf


def announce(capsys, number, name, ok, detail=""):
    with capsys.disabled():
        verdict = "PASS" if ok else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        print(f"[acceptance {number}] {name}: {verdict}{suffix}")
    assert ok, f"criterion {number} ({name}) failed: {detail}"


# 1. isometry & injective-correction invariance --------------------------


def test_criterion_1_isometry_and_invariance(capsys):
    rng = np.random.default_rng(10)
    start = time.perf_counter()
    worst_orth = 0.0
    worst_corr = 0.0
    for _ in range(50):
        d = int(rng.integers(2, 97))
        n = int(rng.integers(d + 1, 501)) if d < 500 else 500
        data = rng.standard_normal((n, d)) * rng.uniform(0.1, 10.0, size=d)
        dec = pca.fit(data)
        if rng.uniform() < 0.5:
            pmap = pca.truncate(dec, cev_threshold=float(rng.uniform(0.9, 1.0)))
        else:
            pmap = pca.truncate(dec, n_components=int(rng.integers(1, d + 1)))
        gram = pmap.components.T @ pmap.components
        worst_orth = max(worst_orth,
                         np.abs(gram - np.eye(pmap.n_components)).max())
        sign, logabsdet = np.linalg.slogdet(gram)
        worst_corr = max(worst_corr, abs(-0.5 * logabsdet))
        assert sign == 1.0
    elapsed = time.perf_counter() - start
    ok = worst_orth <= 1e-10 and worst_corr <= 1e-10 and elapsed < 30.0
    announce(capsys, 1, "PCA isometry and zero log-det correction", ok,
             f"orth {worst_orth:.2e}, corr {worst_corr:.2e}, {elapsed:.1f}s")


# 2. flow correctness: roundtrip, log-det, gradients ---------------------


def finite_difference(fun, arrays, eps=1e-6):
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            hi = fun()
            arr[idx] = orig - eps
            lo = fun()
            arr[idx] = orig
            g[idx] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def random_model(rng, dim):
    std = Standardizer(shift=rng.standard_normal(dim),
                       scale=rng.uniform(0.5, 2.0, size=dim))
    model = build_flow(dim, n_layers=int(rng.integers(2, 5)),
                       hidden_dims=(dim + 1, dim),
                       seed=int(rng.integers(0, 2**31)), standardizer=std)
    # nudge parameters off their init so scales and shifts are nontrivial
    for p in model.parameters():
        p += 0.3 * rng.standard_normal(p.shape)
    return model


def forward_map(model, z):
    u = z[None, :]
    logdet = 0.0
    for layer in model.layers:
        u, ld = layer.forward(u)
        logdet += float(ld[0])
    x = model.standardizer.destandardize(u)
    logdet += float(np.sum(np.log(model.standardizer.scale)))
    return x[0], logdet


def test_criterion_2_flow_roundtrip_logdet_gradients(capsys):
    rng = np.random.default_rng(20)
    start = time.perf_counter()
    worst_round = 0.0
    worst_logdet = 0.0
    for _ in range(20):
        dim = int(rng.integers(2, 9))
        model = random_model(rng, dim)
        z = rng.standard_normal((32, dim))
        x = z
        for layer in model.layers:
            x, _ = layer.forward(x)
        back = x
        for layer in reversed(model.layers):
            back, _ = layer.inverse(back)
        worst_round = max(worst_round, np.abs(back - z).max())

        z0 = rng.standard_normal(dim)
        _, analytic = forward_map(model, z0)
        eps = 1e-6
        jac = np.zeros((dim, dim))
        for j in range(dim):
            step = np.zeros(dim)
            step[j] = eps
            hi, _ = forward_map(model, z0 + step)
            lo, _ = forward_map(model, z0 - step)
            jac[:, j] = (hi - lo) / (2 * eps)
        _, numeric = np.linalg.slogdet(jac)
        worst_logdet = max(worst_logdet,
                           abs(analytic - numeric) / max(abs(numeric), 1.0))

    worst_grad = 0.0
    for _ in range(6):
        dim = int(rng.integers(2, 7))
        model = random_model(rng, dim)
        batch = rng.standard_normal((5, dim))
        _, grads = model.nll_and_grads(batch)
        params = model.parameters()
        fd = finite_difference(
            lambda: -float(np.mean(model.log_prob(batch))), params)
        for g, f in zip(grads, fd):
            denom = max(np.abs(f).max(), 1.0)
            worst_grad = max(worst_grad, np.abs(g - f).max() / denom)
    elapsed = time.perf_counter() - start
    ok = (worst_round <= 1e-8 and worst_logdet <= 1e-4
          and worst_grad <= 1e-4 and elapsed < 120.0)
    announce(capsys, 2, "flow roundtrip, log-det, gradients", ok,
             f"round {worst_round:.1e}, logdet {worst_logdet:.1e}, "
             f"grad {worst_grad:.1e}, {elapsed:.1f}s")


# 3. density normalization of a trained 2-dim flow -----------------------


def test_criterion_3_density_normalization(capsys):
    train = toy.make_toy_set("kite2d", 600, seed=30)
    val = toy.make_toy_set("kite2d", 150, seed=31)
    model, _ = fit_fsnf(train, val,
                        config=TrainConfig(epochs=30, seed=30,
                                           early_stop_patience=50))
    axis = np.linspace(-10.0, 10.0, 601)
    xs, ys = np.meshgrid(axis, axis, indexing="ij")
    grid = np.column_stack([xs.ravel(), ys.ravel()])
    dens = np.exp(model.log_prob(grid)).reshape(xs.shape)
    integral = np.trapezoid(np.trapezoid(dens, axis, axis=1), axis)
    ok = abs(integral - 1.0) <= 1e-2
    announce(capsys, 3, "trained 2-dim density integrates to 1", ok,
             f"integral {integral:.5f}")


# 4. toy reproduction: PCF stays on the curve, FSNF smears ---------------


def toy_config(seed):
    return TrainConfig(epochs=600, early_stop_patience=15, seed=seed)


def test_criterion_4_toy_manifold_reproduction(capsys):
    start = time.perf_counter()
    results = []
    ok = True
    for seed in range(3):
        full = toy.make_toy_set("curve1d", 2000, seed=seed)
        train, val = dataio.split(full, 0.2, seed=seed)

        pcf, _ = fit_pcf(train, val, cev_target=0.99, config=toy_config(seed))
        pcf_frac = toy.fraction_on_curve(pcf.sample_array(2000, seed + 2))

        fsnf, log = fit_fsnf(train, val, config=toy_config(seed))
        fsnf_frac = toy.fraction_on_curve(fsnf.sample_array(2000, seed + 2))
        signature = (len(log.train_nll) - 1 - log.best_epoch >= 10
                     or min(log.train_nll) < -50.0)

        kite_full = toy.make_toy_set("kite2d", 2000, seed=seed)
        ktrain, kval = dataio.split(kite_full, 0.2, seed=seed)
        _, klog = fit_fsnf(ktrain, kval, config=toy_config(seed))
        best = min(klog.val_nll)
        window = np.mean(klog.val_nll[-10:])
        stable = best > 0 and window <= 1.05 * best

        ok = ok and pcf_frac >= 0.95 and fsnf_frac < 0.95 and signature and stable
        results.append(f"s{seed}: pcf {pcf_frac:.3f} fsnf {fsnf_frac:.3f} "
                       f"sig {signature} kite {window / best:.3f}")
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 600.0
    announce(capsys, 4, "toy curve1d/kite2d behavior", ok,
             "; ".join(results) + f", {elapsed:.0f}s")


# 5. statistics oracles --------------------------------------------------


def test_criterion_5_statistics_oracles(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(50)
    ok = True

    for _ in range(200):
        na, nb = rng.integers(1, 12, size=2)
        a = np.round(rng.normal(size=na), 1)
        b = np.round(rng.normal(size=nb), 1)
        stat = evaluate.ks_statistic(a, b)
        brute = max(abs(np.mean(a <= t) - np.mean(b <= t))
                    for t in np.concatenate([a, b]))
        ok = ok and abs(stat - brute) <= 1e-12

    worst_p = 0.0
    for trial in range(6):
        na = int(rng.integers(4, 9))
        nb = int(rng.integers(4, 9))
        a = rng.normal(0, 1, na)
        b = rng.normal(0.4 * trial, 1, nb)
        _, p = evaluate.ks_two_sample(a, b)
        pooled = np.concatenate([a, b])
        observed = evaluate.ks_statistic(a, b)
        hits = total = 0
        for idx in itertools.combinations(range(na + nb), na):
            mask = np.zeros(na + nb, dtype=bool)
            mask[list(idx)] = True
            hits += evaluate.ks_statistic(pooled[mask], pooled[~mask]) \
                >= observed - 1e-12
            total += 1
        worst_p = max(worst_p, abs(p - hits / total))
    ok = ok and worst_p <= 0.05

    data = rng.standard_normal((4, 64))
    scen = dataio.ScenarioSet(data=data, period_length=64, interval_minutes=15)
    freqs, power = evaluate.welch_psd(scen, segment_length=64, window="rect")
    direct = np.mean([evaluate.periodogram(row, 4.0)[1] for row in data], axis=0)
    ok = ok and np.allclose(power, direct, rtol=1e-10)

    samples = rng.normal(2.0, 1.5, 400)
    grid = evaluate.kde_grid(samples)
    integral = np.trapezoid(evaluate.kde_pdf(samples, grid), grid)
    ok = ok and abs(integral - 1.0) <= 1e-3
    gauss_peak = 1.0 / math.sqrt(2 * math.pi)
    ok = ok and abs(evaluate.kde_pdf([0.0, 0.0], np.array([0.0]),
                                     bandwidth=1.0)[0] - gauss_peak) <= 1e-6
    ok = ok and abs(evaluate.kde_pdf([-1.0, 1.0], np.array([0.0]),
                                     bandwidth=1.0)[0]
                    - math.exp(-0.5) * gauss_peak) <= 1e-6
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 60.0
    announce(capsys, 5, "KS/Welch/KDE against oracles", ok,
             f"p gap {worst_p:.3f}, kde integral {integral:.5f}, {elapsed:.1f}s")


# 6. CEV component-count reproduction ------------------------------------

GERMAN_EXPECTED = {
    "pv": (3, 6, 16, 62),
    "wind": (6, 10, 44, 96),
    "load": (5, 16, 63, 96),
}
CEV_THRESHOLDS = (0.99, 0.999, 0.9999, 1.0)


def hadamard8():
    h = np.array([[1.0]])
    for _ in range(3):
        h = np.block([[h, h], [h, -h]])
    return h / math.sqrt(8.0)


def test_criterion_6_cev_component_counts(capsys):
    data_dir = os.environ.get("PCFLOW_GERMAN_DATA")
    if data_dir:
        ok = True
        details = []
        for name, expected in GERMAN_EXPECTED.items():
            scen = dataio.load_scenarios(os.path.join(data_dir, f"{name}.csv"))
            table = evaluate.cev_report(pca.fit(scen))
            got = tuple(table[t] for t in CEV_THRESHOLDS)
            ok = ok and all(abs(g - e) <= 1 for g, e in zip(got, expected))
            details.append(f"{name} {got}")
        announce(capsys, 6, "CEV counts on German data", ok, "; ".join(details))
        return

    # surrogate: variance planted exactly along orthonormal directions
    ratios = np.array([0.95, 0.042, 0.005, 0.0025, 0.00045,
                       0.00004, 0.00001, 0.0])
    directions = hadamard8()
    rows = []
    for j in range(8):
        v = math.sqrt(ratios[j]) * directions[:, j]
        rows.extend([v, -v])
    table = evaluate.cev_report(pca.fit(np.array(rows)))
    got = tuple(table[t] for t in CEV_THRESHOLDS)
    ok = got == (2, 4, 5, 7)
    announce(capsys, 6, "CEV counts on planted-spectrum surrogate", ok,
             f"got {got}, want (2, 4, 5, 7); German data absent")


# 7. end-to-end night-column property ------------------------------------


def test_criterion_7_night_columns(capsys):
    start = time.perf_counter()
    night = np.r_[0:6, 18:24]
    ok = True
    details = []
    for seed in range(3):
        full = toy.make_pv_like(1000, seed=seed)
        train, val = dataio.split(full, 0.2, seed=seed)
        config = TrainConfig(epochs=60, seed=seed)

        pcf, _ = fit_pcf(train, val, cev_target=0.99, config=config)
        pcf_cols = pcf.sample_array(500, seed + 2)[:, night]
        pcf_mean = np.abs(pcf_cols.mean(axis=0)).max()
        pcf_var = pcf_cols.var(axis=0, ddof=1).max()

        fsnf, _ = fit_fsnf(train, val, config=config)
        fsnf_var = fsnf.sample_array(500, seed + 2)[:, night].var(axis=0,
                                                                 ddof=1).max()

        ok = ok and pcf_mean <= 1e-8 and pcf_var <= 1e-8 and fsnf_var > 1e-6
        details.append(f"s{seed}: pcf {max(pcf_mean, pcf_var):.1e} "
                       f"fsnf {fsnf_var:.1e}")
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 600.0
    announce(capsys, 7, "PCF keeps night columns exactly zero", ok,
             "; ".join(details) + f", {elapsed:.0f}s")


# 8. byte-for-byte determinism -------------------------------------------


def test_criterion_8_determinism(capsys, tmp_path):
    scen = toy.make_pv_like(80, seed=8)
    data_path = tmp_path / "scenarios.csv"
    dataio.save_scenarios(scen, data_path)
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["train", "--data", str(data_path), "--mode", "pcf",
                         "--cev", "0.99", "--epochs", "8", "--seed", "4",
                         "--out-dir", str(out), "--no-timestamp"]) == 0
        sout = tmp_path / ("s" + name)
        assert cli.main(["sample", "--model", str(out / "model.pcf"),
                         "--n", "50", "--seed", "9",
                         "--out-dir", str(sout), "--no-timestamp"]) == 0
        outputs.append((out / "model.pcf", out / "trainlog.csv",
                        sout / "samples.csv"))
    ok = all(a.read_bytes() == b.read_bytes()
             for a, b in zip(outputs[0], outputs[1]))
    announce(capsys, 8, "byte-identical models, logs, samples", ok)
