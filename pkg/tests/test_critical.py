import numpy as np
import pytest
from scipy.stats import norm

from cmselect import (
    BootstrapDraws,
    DomainError,
    MissingTable,
    MomentSample,
    RmsTables,
    SelectionVector,
    StatisticKind,
    TooManyDegenerate,
    cms_critical_value,
    gms_asymptotic,
    gms_bootstrap,
    rms_hook,
    rsw_test,
    run_test,
    summarize,
    upper_quantile,
)
from cmselect.critical import (
    MODE_ASYMPTOTIC,
    MODE_BOOTSTRAP,
    asymptotic_draws,
    min_off_diagonal,
    rsw_critical_value,
)
from cmselect.selection import KappaSchedule
from cmselect.streams import substream


def normal_sample(n, j, seed, shift=0.0):
    rng = np.random.default_rng(seed)
    return MomentSample(rng.standard_normal((n, j)) + shift)


def zeros_selection(j):
    return SelectionVector(np.zeros(j), source="phi1")


def omit_all_selection(j):
    return SelectionVector(np.full(j, np.inf), source="phi1")


class TestUpperQuantile:
    def test_right_continuous_inverse_on_small_sets(self):
        draws = np.array([5.0, 1.0, 3.0, 2.0, 4.0, 8.0, 7.0, 6.0])
        # ceil(0.5 * 8) = 4th smallest
        assert upper_quantile(draws, 0.5) == 4.0
        assert upper_quantile(draws, 0.95) == 8.0
        assert upper_quantile(draws, 1.0) == 8.0
        assert upper_quantile(draws, 0.125) == 1.0

    def test_monotone_in_level(self):
        rng = np.random.default_rng(0)
        draws = rng.standard_normal(523)
        levels = np.linspace(0.05, 1.0, 40)
        values = [upper_quantile(draws, lv) for lv in levels]
        assert np.all(np.diff(values) >= 0)

    def test_level_domain(self):
        with pytest.raises(DomainError):
            upper_quantile(np.array([1.0]), 0.0)


class TestAsymptotic:
    def test_all_omitted_gives_zero(self):
        sample = normal_sample(60, 3, 1)
        report = gms_asymptotic(
            summarize(sample), omit_all_selection(3), StatisticKind.MMM, 0.05, 500, seed=0
        )
        assert report.value == 0.0

    def test_analytic_one_dimensional_quantile(self):
        # P(min(0, Z)^2 <= x) = Phi(sqrt(x)); 0.95 quantile is z_{0.95}^2
        rng = substream(0, 2)
        draws = asymptotic_draws(np.eye(1), zeros_selection(1), StatisticKind.MMM, 10**6, rng)
        simulated = upper_quantile(draws, 0.95)
        assert simulated == pytest.approx(norm.ppf(0.95) ** 2, abs=0.02)

    def test_seed_determinism(self):
        sample = normal_sample(80, 2, 3)
        summary = summarize(sample)
        a = gms_asymptotic(summary, zeros_selection(2), StatisticKind.AQLR, 0.05, 2000, seed=9)
        b = gms_asymptotic(summary, zeros_selection(2), StatisticKind.AQLR, 0.05, 2000, seed=9)
        assert a.value == b.value

    def test_needs_enough_draws(self):
        sample = normal_sample(40, 2, 4)
        with pytest.raises(DomainError):
            gms_asymptotic(summarize(sample), zeros_selection(2), StatisticKind.MMM, 0.05, 50, seed=0)


def nested_selection_pair(rng, j):
    base = np.where(rng.random(j) < 0.4, np.inf, rng.uniform(0, 2, j))
    higher = np.where(rng.random(j) < 0.3, np.inf, base + rng.uniform(0, 1, j))
    higher = np.maximum(higher, base)
    return (
        SelectionVector(np.where(np.isinf(base), np.inf, base), source="phi2"),
        SelectionVector(np.where(np.isinf(higher), np.inf, higher), source="phi2"),
    )


class TestNestingWithCommonDraws:
    def test_asymptotic_mode(self):
        rng = np.random.default_rng(10)
        sample = normal_sample(100, 4, 11)
        summary = summarize(sample)
        for kind in StatisticKind:
            for trial in range(10):
                low, high = nested_selection_pair(rng, 4)
                a = gms_asymptotic(summary, low, kind, 0.05, 400, seed=trial)
                b = gms_asymptotic(summary, high, kind, 0.05, 400, seed=trial)
                assert b.value <= a.value

    def test_bootstrap_mode(self):
        rng = np.random.default_rng(12)
        sample = normal_sample(60, 3, 13)
        for kind in StatisticKind:
            for trial in range(6):
                low, high = nested_selection_pair(rng, 3)
                a = run_gms_boot(sample, low, kind, seed=trial)
                b = run_gms_boot(sample, high, kind, seed=trial)
                assert b.value <= a.value

    def test_alpha_monotonicity(self):
        sample = normal_sample(60, 2, 14)
        summary = summarize(sample)
        values = [
            gms_asymptotic(summary, zeros_selection(2), StatisticKind.MMM, alpha, 1000, seed=4).value
            for alpha in (0.20, 0.10, 0.05, 0.01)
        ]
        assert np.all(np.diff(values) >= 0)


def run_gms_boot(sample, selection, kind, seed=0, n_draws=300, alpha=0.05):
    return gms_bootstrap(sample, selection, kind, alpha, n_draws, seed=seed)


class TestBootstrap:
    def test_all_omitted_gives_zero(self):
        sample = normal_sample(50, 2, 20, shift=-3.0)
        report = run_gms_boot(sample, omit_all_selection(2), StatisticKind.AQLR)
        assert report.value == 0.0

    def test_quantile_is_an_order_statistic_of_the_draws(self):
        sample = normal_sample(30, 2, 21)
        draws = BootstrapDraws(sample, summarize(sample), 100, substream(5, 1))
        selection = zeros_selection(2)
        values = draws.selection_draws(selection, StatisticKind.MMM)
        expected = np.sort(values)[int(np.ceil(0.95 * values.size)) - 1]
        assert draws.selection_quantile(selection, StatisticKind.MMM, 0.95) == expected

    def test_determinism(self):
        sample = normal_sample(40, 3, 22)
        a = run_gms_boot(sample, zeros_selection(3), StatisticKind.AQLR, seed=7)
        b = run_gms_boot(sample, zeros_selection(3), StatisticKind.AQLR, seed=7)
        assert a.value == b.value

    def test_too_many_degenerate(self):
        # two observations: half of all resamples duplicate a single row
        sample = MomentSample(np.array([[0.0], [1.0]]))
        with pytest.raises(TooManyDegenerate):
            BootstrapDraws(sample, summarize(sample), 200, substream(1, 1))


class TestCms:
    def test_matches_gms_when_mean_nonnegative(self):
        sample = normal_sample(60, 2, 30, shift=4.0)
        schedule = KappaSchedule.parse("sqrt-log-n")
        for mode in (MODE_ASYMPTOTIC, MODE_BOOTSTRAP):
            cms = cms_critical_value(
                sample, StatisticKind.MMM, 1, schedule, mode, 0.05, 300, seed=3
            )
            summary = summarize(sample)
            from cmselect.critical import gms_selection

            sel = gms_selection(summary, schedule)
            if mode == MODE_ASYMPTOTIC:
                gms = gms_asymptotic(summary, sel, StatisticKind.MMM, 0.05, 300, seed=3)
            else:
                gms = gms_bootstrap(sample, sel, StatisticKind.MMM, 0.05, 300, seed=3)
            assert cms.value == gms.value

    def test_tilting_can_only_omit_more_under_positive_correlation(self):
        # strongly correlated pair, one violated moment, the other hovering at
        # the threshold: the tilt pushes the slack coordinate over it
        rng = np.random.default_rng(31)
        z = rng.standard_normal(120)
        noise = rng.standard_normal(120) * 0.3
        g1 = z - 0.35
        g2 = 0.95 * z + noise + 0.17
        sample = MomentSample(np.column_stack([g1, g2]))
        schedule = KappaSchedule.parse("sqrt-log-n")
        summary = summarize(sample)
        from cmselect.critical import cms_selection, gms_selection

        gms_sel = gms_selection(summary, schedule)
        cms_sel, fallback, _ = cms_selection(sample, summary, schedule)
        assert not fallback
        assert np.isposinf(cms_sel.shifts).sum() > np.isposinf(gms_sel.shifts).sum()

    def test_infeasible_tilt_falls_back_and_flags(self):
        sample = MomentSample(np.array([[-2.0], [-1.0], [-1.5], [-0.75]]))
        report = cms_critical_value(
            sample,
            StatisticKind.MMM,
            1,
            KappaSchedule.parse("fixed:1"),
            MODE_ASYMPTOTIC,
            0.05,
            200,
            seed=0,
        )
        assert report.tilt_fallback


class TestRsw:
    def test_default_beta_is_alpha_over_ten(self):
        sample = normal_sample(50, 2, 40)
        decision = rsw_test(sample, StatisticKind.MMM, alpha=0.05, n_draws=200, seed=1)
        assert decision.critical_value.supplementary["beta"] == pytest.approx(0.005)

    def test_no_rejection_when_all_means_strongly_positive(self):
        sample = normal_sample(80, 3, 41, shift=5.0)
        decision = rsw_test(sample, StatisticKind.AQLR, alpha=0.05, n_draws=200, seed=2)
        assert not decision.extras["first_stage"]
        assert not decision.reject

    def test_rectangle_arithmetic(self):
        sample = normal_sample(60, 2, 42, shift=-0.5)
        summary = summarize(sample)
        draws = BootstrapDraws(sample, summary, 300, substream(3, 1))
        report, first_stage = rsw_critical_value(draws, summary, StatisticKind.MMM, 0.05, 0.005)
        k_inv = report.supplementary["k_inv_beta"]
        lower = summary.mean + summary.std * k_inv / np.sqrt(summary.n)
        assert np.allclose(report.supplementary["lambda_star"], np.maximum(lower, 0.0))
        assert first_stage == bool(np.any(lower < 0.0))
        # k_inv is the beta-quantile of the bootstrapped minima
        mins = draws.rectangle_min[draws.valid]
        assert k_inv == np.sort(mins)[int(np.ceil(0.005 * mins.size)) - 1]

    def test_beta_domain(self):
        sample = normal_sample(50, 2, 43)
        with pytest.raises(DomainError):
            rsw_test(sample, StatisticKind.MMM, alpha=0.05, beta=0.06, n_draws=200)


class TestRms:
    def tables(self, kappa_const, eta1=0.0, eta2=None):
        return RmsTables(
            delta_grid=(-1.0, 0.0, 1.0),
            kappa_values=(kappa_const,) * 3,
            eta1_values=(eta1,) * 3,
            eta2_by_j={2: 0.0 if eta2 is None else eta2},
        )

    def test_missing_tables_disabled(self):
        sample = normal_sample(50, 2, 50)
        with pytest.raises(MissingTable):
            rms_hook(sample, StatisticKind.AQLR, 0.05, None, MODE_BOOTSTRAP, 200, seed=0)

    def test_degenerate_tables_reduce_to_gms(self):
        sample = normal_sample(50, 2, 51)
        kappa_const = float(np.sqrt(np.log(50)))
        report = rms_hook(
            sample, StatisticKind.MMM, 0.05, self.tables(kappa_const), MODE_BOOTSTRAP, 200, seed=6
        )
        gms = run_test(
            sample, StatisticKind.MMM, "gms", mode=MODE_BOOTSTRAP, alpha=0.05, n_draws=200, seed=6
        )
        assert report.value == gms.critical_value.value

    def test_eta_shift_is_exactly_additive(self):
        sample = normal_sample(50, 2, 52)
        kappa_const = 2.0
        base = rms_hook(
            sample, StatisticKind.MMM, 0.05, self.tables(kappa_const), MODE_BOOTSTRAP, 200, seed=7
        )
        shifted = rms_hook(
            sample,
            StatisticKind.MMM,
            0.05,
            self.tables(kappa_const, eta2=0.1),
            MODE_BOOTSTRAP,
            200,
            seed=7,
        )
        assert shifted.value == pytest.approx(base.value + 0.1, abs=1e-12)

    def test_min_off_diagonal_of_negative_family(self):
        from cmselect import CorrelationFamily, make_toeplitz

        matrix = make_toeplitz(CorrelationFamily("Neg", 2))
        assert min_off_diagonal(matrix) == pytest.approx(-0.9)

    def test_interpolation_clamps(self):
        tables = RmsTables(
            delta_grid=(0.0, 1.0),
            kappa_values=(1.0, 3.0),
            eta1_values=(0.1, 0.3),
            eta2_by_j={4: 0.05},
        )
        assert tables.kappa_at(-5.0) == 1.0
        assert tables.kappa_at(0.5) == pytest.approx(2.0)
        assert tables.kappa_at(9.0) == 3.0
        assert tables.eta_at(0.5, 4) == pytest.approx(0.25)
        with pytest.raises(MissingTable):
            tables.eta_at(0.5, 7)


class TestRunTest:
    def test_accepts_when_statistic_zero(self):
        sample = normal_sample(60, 2, 60, shift=3.0)
        decision = run_test(sample, StatisticKind.MMM, "cms", n_draws=200, seed=0)
        assert decision.statistic == 0.0
        assert not decision.reject

    def test_unknown_procedure(self):
        sample = normal_sample(30, 2, 61)
        with pytest.raises(DomainError):
            run_test(sample, StatisticKind.MMM, "subsampling")

    def test_rsw_asymptotic_rejected(self):
        sample = normal_sample(30, 2, 62)
        with pytest.raises(DomainError):
            run_test(sample, StatisticKind.MMM, "rsw", mode=MODE_ASYMPTOTIC)

    def test_decision_serializes(self):
        import json

        sample = normal_sample(40, 2, 63, shift=-0.4)
        decision = run_test(sample, StatisticKind.AQLR, "cms", n_draws=150, seed=1)
        payload = json.loads(json.dumps(decision.to_dict()))
        assert isinstance(payload["reject"], bool)
        assert payload["critical_value"]["method"] == "CMS"
