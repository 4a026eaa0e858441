"""Measurement simulation, reconstruction, metrics, and CHSH checks."""

import numpy as np
import pytest

from fransonsim.qcore import (
    DensityMatrix,
    PHI_PLUS_KET,
    fidelity_to,
    random_state,
    trace_distance,
)
from fransonsim.tomo import (
    ChshAngles,
    CountData,
    DEFAULT_CHSH_ANGLES,
    MeasurementSetting,
    MetricsReport,
    PartySetting,
    analytic_counts,
    chsh_value,
    counts_from_csv,
    counts_to_csv,
    expected_probabilities,
    linear_inversion,
    mle_reconstruct,
    monte_carlo_metrics,
    projector,
    setting_projectors,
    simulate_counts,
    standard_settings,
)

SETTINGS = standard_settings()


def s_formula(p):
    # closed form for the tilted Bell ket at the default analyzer angles
    return np.sqrt(2.0) * (1.0 + 2.0 * np.sqrt(p * (1.0 - p)))


def tilted_bell(p):
    ket = np.array([np.sqrt(p), 0.0, 0.0, np.sqrt(1.0 - p)])
    return DensityMatrix.pure(ket)


class TestProjectors:
    def test_single_party_eigenstates(self):
        """The six analyzer settings project onto the expected states."""
        cases = {
            (0.0, False): np.diag([1.0, 0.0]),
            (np.pi / 2, False): np.diag([0.0, 1.0]),
            (np.pi / 4, False): np.full((2, 2), 0.5),
            (3 * np.pi / 4, False): np.array([[0.5, -0.5], [-0.5, 0.5]]),
            (np.pi / 4, True): np.array([[0.5, 0.5j], [-0.5j, 0.5]]),
            (3 * np.pi / 4, True): np.array([[0.5, -0.5j], [0.5j, 0.5]]),
        }
        for (theta, qwp), want in cases.items():
            setting = MeasurementSetting(
                PartySetting(theta, qwp_in=qwp), PartySetting(0.0)
            )
            np.testing.assert_allclose(projector(setting, "A"), want, atol=1e-12)

    def test_projectors_are_rank_one(self):
        """Each analyzer projector is idempotent with unit trace."""
        rng = np.random.default_rng(79)
        for _ in range(100):
            setting = MeasurementSetting(
                PartySetting(rng.uniform(0, np.pi), rng.uniform() < 0.5,
                             rng.uniform(0, np.pi)),
                PartySetting(0.0),
            )
            pi = projector(setting, "A")
            np.testing.assert_allclose(pi @ pi, pi, atol=1e-12)
            assert np.trace(pi).real == pytest.approx(1.0, abs=1e-12)

    def test_standard_settings_layout(self):
        """36 pairwise settings, ordered with party B fastest."""
        assert len(SETTINGS) == 36
        first = SETTINGS[0]
        assert first.party_a.polarizer_angle == pytest.approx(0.0)
        assert first.party_b.polarizer_angle == pytest.approx(0.0)
        # setting 1 changes party B only
        second = SETTINGS[1]
        assert second.party_a.polarizer_angle == pytest.approx(0.0)
        assert second.party_b.polarizer_angle != pytest.approx(0.0)

    def test_design_matrix_has_full_rank(self):
        """The 36 joint projectors span the full operator space."""
        pis = setting_projectors(SETTINGS)
        design = pis.reshape(36, 16)
        assert np.linalg.matrix_rank(design, tol=1e-10) == 16

    def test_expected_probabilities_sum_within_bases(self):
        """The four projectors of one local basis pair resolve identity."""
        rho = random_state(2, kind="mixed", seed=5)
        probs = expected_probabilities(rho, SETTINGS)
        # H/V x H/V: settings (H,H), (H,V), (V,H), (V,V)
        idx = [0, 1, 6, 7]
        assert sum(probs[i] for i in idx) == pytest.approx(1.0, abs=1e-10)


class TestCounting:
    def test_analytic_counts_are_exact_expectations(self):
        """Analytic mode stores pairs x probability with no rounding."""
        rho = tilted_bell(0.3)
        data = analytic_counts(rho, SETTINGS, 1000)
        np.testing.assert_allclose(
            data.counts, 1000.0 * expected_probabilities(rho, SETTINGS), atol=1e-12
        )

    def test_sampled_counts_match_poisson_moments(self):
        """Sampled counts track the expected mean within five sigma."""
        rho = tilted_bell(0.5)
        pairs = 1_000_000
        data = simulate_counts(rho, SETTINGS, pairs, seed=3)
        means = pairs * expected_probabilities(rho, SETTINGS)
        for count, mean in zip(data.counts, means):
            if mean > 0:
                assert abs(count - mean) < 5.0 * np.sqrt(mean) + 5.0

    def test_same_seed_reproduces_counts(self):
        """Counting is deterministic in the seed."""
        rho = tilted_bell(0.4)
        a = simulate_counts(rho, SETTINGS, 10_000, seed=11)
        b = simulate_counts(rho, SETTINGS, 10_000, seed=11)
        c = simulate_counts(rho, SETTINGS, 10_000, seed=12)
        np.testing.assert_array_equal(a.counts, b.counts)
        assert not np.array_equal(a.counts, c.counts)

    def test_count_data_validation(self):
        """Negative counts and length mismatches are refused."""
        with pytest.raises(ValueError, match="negative"):
            CountData(SETTINGS, np.full(36, -1.0), 100)
        with pytest.raises(ValueError, match="36"):
            CountData(SETTINGS, np.ones(35), 100)

    def test_csv_round_trip(self):
        """Counts and settings survive the CSV format."""
        rho = tilted_bell(0.2)
        data = simulate_counts(rho, SETTINGS, 5_000, seed=17)
        path = "/tmp/fransonsim_counts_test.csv"
        counts_to_csv(data, path)
        again = counts_from_csv(path, pairs_per_setting=5_000)
        np.testing.assert_array_equal(again.counts, data.counts)
        # angles are stored in degrees to six decimals
        for s1, s2 in zip(data.settings, again.settings):
            assert s1.party_a.polarizer_angle == pytest.approx(
                s2.party_a.polarizer_angle, abs=1e-7
            )
            assert s1.party_a.qwp_in == s2.party_a.qwp_in
            assert s1.party_b.qwp_in == s2.party_b.qwp_in


class TestLinearInversion:
    def test_exact_on_noiseless_data(self):
        """Linear inversion inverts analytic counts exactly, 100 seeds."""
        for seed in range(100):
            rho = random_state(2, kind="mixed", seed=seed)
            data = analytic_counts(rho, SETTINGS, 10_000)
            recon = linear_inversion(data)
            assert trace_distance(recon.rho, rho) < 1e-9

    def test_projects_noisy_estimates_to_physical(self):
        """Sampled-count reconstructions remain valid density matrices."""
        rho = tilted_bell(0.5)
        for seed in range(20):
            data = simulate_counts(rho, SETTINGS, 500, seed=seed)
            recon = linear_inversion(data)
            eigs = np.linalg.eigvalsh(recon.rho.data)
            assert eigs.min() > -1e-10
            assert np.trace(recon.rho.data).real == pytest.approx(1.0, abs=1e-10)

    def test_rejects_rank_deficient_designs(self):
        """A degenerate setting list cannot be inverted."""
        settings = tuple(SETTINGS[:1]) * 36
        data = CountData(settings, np.ones(36), 100)
        with pytest.raises(ValueError, match="span"):
            linear_inversion(data)


class TestMle:
    def test_loglike_never_decreases(self):
        """Fixed-point iterations monotonically improve the likelihood."""
        rho = tilted_bell(0.5)
        for seed in range(20):
            data = simulate_counts(rho, SETTINGS, 2_000, seed=seed)
            recon = mle_reconstruct(data)
            hist = np.asarray(recon.loglike_history)
            assert hist.size >= 2
            # allow only float-roundoff backsliding
            assert np.all(np.diff(hist) >= -1e-6 * np.abs(hist[:-1]))

    def test_converges_on_well_conditioned_data(self):
        """Convergence flag and iteration budget behave as documented."""
        rho = tilted_bell(0.5)
        data = simulate_counts(rho, SETTINGS, 10_000, seed=2)
        recon = mle_reconstruct(data)
        assert recon.converged
        assert 0 < recon.iterations <= 10_000
        assert recon.method == "mle"

    def test_estimate_improves_with_pairs(self):
        """Median distance to the truth shrinks as counts grow."""
        rho = tilted_bell(0.5)
        medians = []
        for pairs in (1_000, 10_000, 100_000):
            dists = []
            for seed in range(9):
                data = simulate_counts(rho, SETTINGS, pairs, seed=seed)
                dists.append(trace_distance(mle_reconstruct(data).rho, rho))
            medians.append(np.median(dists))
        assert medians[0] > medians[1] > medians[2]

    def test_estimates_are_physical(self):
        """MLE output is PSD with unit trace."""
        rho = tilted_bell(0.3)
        for seed in range(10):
            data = simulate_counts(rho, SETTINGS, 3_000, seed=seed)
            recon = mle_reconstruct(data)
            assert np.linalg.eigvalsh(recon.rho.data).min() > -1e-10
            assert np.trace(recon.rho.data).real == pytest.approx(1.0, abs=1e-10)

    def test_iteration_budget_is_respected(self):
        """A tiny budget stops early and reports non-convergence."""
        rho = tilted_bell(0.5)
        data = simulate_counts(rho, SETTINGS, 2_000, seed=1)
        recon = mle_reconstruct(data, max_iter=3)
        assert recon.iterations == 3
        assert not recon.converged

    def test_parameter_validation(self):
        """Non-positive tolerances and budgets are refused."""
        rho = tilted_bell(0.5)
        data = analytic_counts(rho, SETTINGS, 100)
        with pytest.raises(ValueError, match="tol"):
            mle_reconstruct(data, tol=0.0)
        with pytest.raises(ValueError, match="max_iter"):
            mle_reconstruct(data, max_iter=0)


class TestChsh:
    def test_tilted_bell_closed_form(self):
        """S follows sqrt(2)(1 + 2 sqrt(p(1-p))) at the default angles."""
        for p in (0.0, 0.1, 0.25, 0.4, 0.5):
            assert chsh_value(tilted_bell(p)) == pytest.approx(
                s_formula(p), abs=1e-10
            )

    def test_dephased_bell_scales_with_visibility(self):
        """Dephasing the Bell state scales S to sqrt(2)(1 + V)."""
        for v in (0.0, 0.5, 0.979, 1.0):
            bell = np.outer(PHI_PLUS_KET, PHI_PLUS_KET)
            rho = DensityMatrix(
                v * bell + (1.0 - v) * np.diag([0.5, 0.0, 0.0, 0.5])
            )
            assert chsh_value(rho) == pytest.approx(
                np.sqrt(2.0) * (1.0 + v), abs=1e-10
            )

    def test_separable_states_respect_classical_bound(self):
        """Random separable mixtures stay below |S| = 2."""
        rng = np.random.default_rng(83)
        for _ in range(500):
            terms = rng.integers(1, 5)
            weights = rng.dirichlet(np.ones(terms))
            rho = np.zeros((4, 4), dtype=complex)
            for w in weights:
                ka = rng.normal(size=2) + 1j * rng.normal(size=2)
                kb = rng.normal(size=2) + 1j * rng.normal(size=2)
                ket = np.kron(ka / np.linalg.norm(ka), kb / np.linalg.norm(kb))
                rho += w * np.outer(ket, ket.conj())
            assert abs(chsh_value(DensityMatrix(rho))) <= 2.0 + 1e-10

    def test_all_states_respect_quantum_bound(self):
        """No physical state exceeds 2 sqrt(2)."""
        for seed in range(1000):
            rho = random_state(2, kind="mixed" if seed % 2 else "pure", seed=seed)
            assert abs(chsh_value(rho)) <= 2.0 * np.sqrt(2.0) + 1e-10

    def test_custom_angles(self):
        """Explicit default angles reproduce the default result."""
        rho = tilted_bell(0.5)
        angles = ChshAngles(0.0, np.pi / 4, np.pi / 8, 3 * np.pi / 8)
        assert chsh_value(rho, angles) == pytest.approx(chsh_value(rho), abs=1e-12)
        assert DEFAULT_CHSH_ANGLES.alpha == pytest.approx(0.0)

    def test_misaligned_angles_lose_violation(self):
        """Measuring along a single shared axis cannot violate the bound."""
        rho = tilted_bell(0.5)
        aligned = ChshAngles(0.0, 0.0, 0.0, 0.0)
        assert abs(chsh_value(rho, aligned)) <= 2.0 + 1e-10


class TestMonteCarloMetrics:
    def test_analytic_mode_has_zero_sigma(self):
        """Without resampling the spread collapses to exactly zero."""
        rho = tilted_bell(0.5)
        data = analytic_counts(rho, SETTINGS, 10_000)
        report = monte_carlo_metrics(
            data, n_samples=10, seed=0, method="linear", resample=False
        )
        assert report.fidelity_sigma == 0.0
        assert report.concurrence_sigma == 0.0
        assert report.purity_sigma == 0.0
        assert report.s_value_sigma == 0.0
        assert report.fidelity == pytest.approx(1.0, abs=1e-9)

    def test_sampled_mode_reports_spread(self):
        """Poisson resampling produces a nonzero, finite spread."""
        rho = tilted_bell(0.5)
        data = simulate_counts(rho, SETTINGS, 2_000, seed=7)
        report = monte_carlo_metrics(data, n_samples=40, seed=1, method="linear")
        assert report.fidelity_sigma > 0.0
        assert report.s_value_sigma > 0.0
        assert report.n_samples == 40
        assert report.n_failed == 0

    def test_point_values_come_from_original_counts(self):
        """Reported point metrics are the original-data reconstruction."""
        rho = tilted_bell(0.5)
        data = simulate_counts(rho, SETTINGS, 2_000, seed=9)
        recon = linear_inversion(data)
        report = monte_carlo_metrics(
            data, n_samples=20, seed=1, method="linear", point_result=recon
        )
        assert report.fidelity == pytest.approx(
            fidelity_to(recon.rho, PHI_PLUS_KET), abs=1e-12
        )

    def test_seed_determinism(self):
        """The bootstrap is reproducible from its seed."""
        rho = tilted_bell(0.5)
        data = simulate_counts(rho, SETTINGS, 2_000, seed=5)
        a = monte_carlo_metrics(data, n_samples=20, seed=4, method="linear")
        b = monte_carlo_metrics(data, n_samples=20, seed=4, method="linear")
        assert a.fidelity_sigma == b.fidelity_sigma
        assert a.s_value == b.s_value

    def test_too_few_samples_rejected(self):
        """Fewer than 10 bootstrap samples is a configuration error."""
        rho = tilted_bell(0.5)
        data = analytic_counts(rho, SETTINGS, 100)
        with pytest.raises(ValueError, match="n_samples"):
            monte_carlo_metrics(data, n_samples=5, seed=0, method="linear")

    def test_pervasive_failures_raise(self):
        """If most bootstrap samples fail, the run aborts loudly."""
        # valid point estimate, but every resampled reconstruction is
        # underdetermined because the setting list is degenerate
        good = analytic_counts(tilted_bell(0.5), SETTINGS, 100)
        point = linear_inversion(good)
        settings = tuple(SETTINGS[:1]) * 36
        data = CountData(settings, np.full(36, 50.0), 100)
        with pytest.raises(RuntimeError, match="fail"):
            monte_carlo_metrics(
                data, n_samples=10, seed=0, method="linear", point_result=point
            )

    def test_report_validation(self):
        """Out-of-range metric values are refused."""
        with pytest.raises(ValueError, match="fidelity"):
            MetricsReport(
                fidelity=1.5, fidelity_sigma=0.0,
                concurrence=0.0, concurrence_sigma=0.0,
                purity=0.5, purity_sigma=0.0,
                s_value=2.0, s_value_sigma=0.0,
                n_samples=10, n_failed=0,
            )

    def test_as_dict_round_trip(self):
        """Report serialization carries every metric and spread."""
        rho = tilted_bell(0.5)
        data = analytic_counts(rho, SETTINGS, 100)
        report = monte_carlo_metrics(
            data, n_samples=10, seed=0, method="linear", resample=False
        )
        d = report.as_dict()
        for key in ("fidelity", "concurrence", "purity", "s_value"):
            assert key in d and key + "_sigma" in d
        # analytic mode runs no bootstrap samples at all
        assert d["n_samples"] == 0
        assert d["n_failed"] == 0
