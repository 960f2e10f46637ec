import math

import numpy as np
import pytest
from scipy.special import erfc

from ctdsat.scaling import (ETA_BIN_WIDTH, HardnessRecord,
                            collapse_fit, eta_histogram, fit_beta, fit_gamma,
                            gaussian_fit, hardness_ensemble, mean_hardness,
                            records_from_jsonl, records_to_jsonl, rho_fraction,
                            sigma_scaling, susceptibility)


def fake_records(etas, alpha=3.0, n=50, k=3):
    return [HardnessRecord(alpha=alpha, n=n, m=int(alpha * n), k=k,
                           formula_hash=f"{i:016x}", index=i, seed=1,
                           kappa=10 ** (-e * math.log10(n)), eta=float(e),
                           r2=0.99, stderr=1e-3, censored=0, launched=1000)
            for i, e in enumerate(etas)]


class TestHistogram:
    def test_normalization(self):
        rng = np.random.default_rng(0)
        recs = fake_records(rng.normal(0.5, 0.1, size=2000))
        edges, density = eta_histogram(recs)
        width = edges[1] - edges[0]
        assert width == pytest.approx(ETA_BIN_WIDTH)
        assert abs(float(np.sum(density) * width) - 1.0) < 1e-12

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            eta_histogram([])

    def test_rho_consistent_with_histogram_tail(self):
        rng = np.random.default_rng(1)
        etas = rng.normal(0.5, 0.1, size=4000)
        recs = fake_records(etas)
        edges, density = eta_histogram(recs)
        width = edges[1] - edges[0]
        rho = rho_fraction(recs)[0]["rho"]
        # 0.5 is a bin edge, so the histogram tail mass equals rho exactly
        # up to one bin of boundary mass
        tail = float(np.sum(density[edges[:-1] >= 0.5]) * width)
        assert abs(rho - tail) <= density.max() * width


class TestTables:
    def test_mean_and_rho_trivial(self):
        recs = fake_records([0.3] * 60)
        mrows = mean_hardness(recs)
        assert mrows[0]["mean_eta"] == pytest.approx(0.3)
        assert rho_fraction(recs)[0]["rho"] == 0.0

    def test_rho_half(self):
        recs = fake_records([0.4] * 50 + [0.6] * 50)
        assert rho_fraction(recs)[0]["rho"] == 0.5

    def test_undersized_point_excluded(self):
        recs = fake_records([0.4] * 10)
        assert mean_hardness(recs) == []
        assert mean_hardness(recs, min_count=5) != []


def synthetic_rho_rows(nu=0.5, alpha_chi=3.28, b=0.5, y0=0.17, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for n in (40, 50, 75, 100, 300):
        for alpha in np.arange(2.5, 4.2001, 0.1):
            z = (alpha - alpha_chi) / alpha_chi
            rho = b * erfc(-(n ** nu) * z - y0)
            rho *= 1.0 + noise * rng.standard_normal()
            rows.append({"alpha": float(alpha), "n": n, "rho": float(rho)})
    return rows


class TestCollapse:
    def test_recovers_planted_exponent_with_noise(self):
        fit = collapse_fit(synthetic_rho_rows(noise=0.01, seed=3))
        assert abs(fit.nu - 0.5) <= 0.05
        assert abs(fit.b - 0.5) <= 0.05
        assert abs(fit.y0 - 0.17) <= 0.05
        assert abs(fit.alpha_chi - 3.28) <= 0.05

    def test_noise_free_residual_tiny(self):
        fit = collapse_fit(synthetic_rho_rows())
        assert fit.residual < 1e-8

    def test_single_n_rejected(self):
        rows = [r for r in synthetic_rho_rows() if r["n"] == 50]
        with pytest.raises(ValueError):
            collapse_fit(rows)


class TestSusceptibility:
    def test_linear_input_exact(self):
        rows = [{"alpha": a, "n": 50, "mean_eta": 0.1 * a, "stderr": 0.0,
                 "sigma": 0.0, "count": 100}
                for a in np.arange(2.5, 4.01, 0.1)]
        chi = susceptibility(rows, 0.1)
        for row in chi:
            assert row["chi"] == pytest.approx(0.1, rel=1e-9)

    def test_non_uniform_grid_rejected(self):
        rows = [{"alpha": a, "n": 50, "mean_eta": 0.1 * a}
                for a in (2.5, 2.6, 2.8)]
        with pytest.raises(ValueError):
            susceptibility(rows, 0.1)

    def test_gamma_recovery(self):
        rng = np.random.default_rng(7)
        alpha_chi = 3.28
        rows = []
        for alpha in np.arange(2.5, 4.2001, 0.1):
            z = (alpha - alpha_chi) / alpha_chi
            if abs(z) < 1e-6:
                continue
            chi = abs(z) ** -0.67 * (1.0 + 0.01 * rng.standard_normal())
            rows.append({"alpha": float(alpha), "n": 100, "chi": chi})
        fit = fit_gamma(rows, alpha_chi)
        assert abs(fit.exponent - 0.67) <= 0.03


class TestGaussianFit:
    def test_recovers_synthetic_histogram(self):
        rng = np.random.default_rng(5)
        recs = fake_records(rng.normal(0.5, 0.05, size=10_000))
        edges, density = eta_histogram(recs)
        fit = gaussian_fit(edges, density)
        assert abs(fit.mean - 0.5) / 0.5 < 0.05
        assert abs(fit.sigma - 0.05) / 0.05 < 0.05
        assert abs(fit.amplitude - 1.0) < 0.05

    def test_too_few_occupied_bins(self):
        recs = fake_records([0.5] * 100)
        edges, density = eta_histogram(recs)
        with pytest.raises(ValueError):
            gaussian_fit(edges, density)


class TestSigmaScaling:
    def test_planted_slopes(self):
        nu, gamma = 0.5, 0.67
        sigma_rows = [(n, 0.8 * n ** -nu) for n in (40, 50, 75, 100, 200)]
        gap_rows = [(z, 0.5 + 0.3 * abs(z) ** (1 - gamma)) for z in
                    (0.02, 0.05, 0.1, 0.2, 0.3)]
        out = sigma_scaling(sigma_rows, gap_rows)
        assert out["sigma_vs_n_slope"] == pytest.approx(-nu, abs=1e-6)
        assert out["gap_vs_z_slope"] == pytest.approx(1 - gamma, abs=1e-6)


class TestBeta:
    def test_exact_inverse_power(self):
        data = [(n, [1.0 / n] * 5) for n in (50, 100, 200, 400)]
        fit = fit_beta(data)
        assert fit.exponent == pytest.approx(1.0, abs=1e-9)

    def test_noisy_recovery(self):
        rng = np.random.default_rng(11)
        data = []
        for n in (50, 100, 200, 400, 800):
            kappas = 3.0 * n ** -1.6 * (1.0 + 0.05 * rng.standard_normal(200))
            data.append((n, kappas.tolist()))
        fit = fit_beta(data)
        assert abs(fit.exponent - 1.6) <= 0.1

    def test_needs_three_sizes(self):
        with pytest.raises(ValueError):
            fit_beta([(50, [0.1]), (100, [0.05])])


class TestEnsemblePipeline:
    def test_small_ensemble_and_jsonl_round_trip(self):
        sample = hardness_ensemble(3.0, 20, j=4, seed=77, n_traj=400,
                                   min_points=100, workers=2)
        assert len(sample.records) == 4
        for rec in sample.records:
            assert rec.n == 20 and rec.launched == 400
            assert rec.eta == -math.log10(rec.kappa) / math.log10(20)
        text = records_to_jsonl(sample)
        back = records_from_jsonl(text)
        assert back == sample.records
        assert records_to_jsonl(back) == text

    def test_worker_invariance(self):
        a = hardness_ensemble(2.5, 15, j=3, seed=5, n_traj=300, min_points=80,
                              workers=1)
        b = hardness_ensemble(2.5, 15, j=3, seed=5, n_traj=300, min_points=80,
                              workers=2)
        assert records_to_jsonl(a) == records_to_jsonl(b)
