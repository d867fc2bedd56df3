import numpy as np
import pytest

from core.models.advisor import decompose_probabilities
from core.models.bbox import BlackBoxConfig
from core.models.evaluation import (
    RankedScores,
    RetrainConfig,
    abstention_metrics,
    accuracy_rejection_curve,
    auroc,
    average_precision,
    failure_metrics,
    ood_auroc,
    ood_metrics,
    prr,
    sample_retrain,
)
from core.models.sgbt import SgbtParams
from core.utils.datagen import gen_gmm_shift
from core.utils.errors import ConfigError, DataError, DimensionMismatchError


def _pairwise_auroc(scores, positives):
    pos, neg = scores[positives], scores[~positives]
    diff = pos[:, None] - neg[None, :]
    return ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (len(pos) * len(neg))


@pytest.fixture(scope='module')
def shift_data():
    train, test = gen_gmm_shift(200, 400, 0)
    pool = test.subset(np.arange(0, 400, 2))
    held_out = test.subset(np.arange(1, 400, 2))
    return train, pool, held_out


class TestAuroc:
    def test_perfect(self):
        assert auroc(RankedScores([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])) == 1.0

    def test_all_ties(self):
        assert auroc(RankedScores([0.4] * 6, [1, 0, 1, 0, 0, 0])) == 0.5

    def test_pairwise_example(self):
        assert auroc(RankedScores([0.3, 0.7, 0.7, 0.1], [1, 1, 0, 0])) == pytest.approx(0.625)

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 201))
            scores = np.round(rng.normal(size=n), 1)
            positives = rng.random(n) < 0.3
            positives[0], positives[1] = True, False
            assert auroc(RankedScores(scores, positives)) == pytest.approx(_pairwise_auroc(scores, positives),
                                                                           abs=1e-12)

    def test_monotone_transform(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=100)
        positives = rng.random(100) < 0.4
        assert auroc(RankedScores(scores, positives)) == auroc(RankedScores(np.exp(scores), positives))

    def test_flipped_orientation(self):
        rng = np.random.default_rng(2)
        scores = rng.normal(size=50)
        positives = rng.random(50) < 0.5
        up = auroc(RankedScores(scores, positives, 'higher_is_positive'))
        down = auroc(RankedScores(scores, positives, 'lower_is_positive'))
        assert up + down == pytest.approx(1.0)

    def test_single_class(self):
        with pytest.raises(DataError):
            auroc(RankedScores([0.1, 0.2], [1, 1]))

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            RankedScores([0.1, 0.2], [1])

    def test_bad_orientation(self):
        with pytest.raises(ConfigError):
            RankedScores([0.1], [1], 'sideways')


class TestAveragePrecision:
    def test_perfect(self):
        assert average_precision(RankedScores([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])) == 1.0

    def test_single_group(self):
        assert average_precision(RankedScores([0.5] * 5, [1, 0, 1, 0, 0])) == pytest.approx(0.4)

    def test_hand_example(self):
        assert average_precision(RankedScores([0.9, 0.8, 0.7], [1, 0, 1])) == pytest.approx(5 / 6)


class TestOodAuroc:
    def test_epistemic_separates(self):
        assert ood_auroc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0], 'higher_is_positive') == 1.0

    def test_constant(self):
        assert ood_auroc([0.3] * 4, [1, 1, 0, 0], 'higher_is_positive') == 0.5

    def test_overconfident_on_ood(self):
        assert ood_auroc([0.99, 0.95, 0.6, 0.7], [1, 1, 0, 0], 'lower_is_positive') < 0.5


class TestAccuracyRejection:
    def test_endpoints(self):
        errors = np.array([1, 0, 0, 1, 0], dtype=bool)
        curve = accuracy_rejection_curve(np.arange(5.0), errors, 0.1)
        assert curve.accuracies[0] == pytest.approx(0.6)
        assert curve.accuracies[-1] == 1.0
        assert len(curve.rejection_fractions) == 11

    def test_oracle_ordering(self):
        curve = accuracy_rejection_curve([0.9, 0.1, 0.2, 0.8], [1, 0, 0, 1], 0.5)
        np.testing.assert_allclose(curve.accuracies, [0.5, 1.0, 1.0])
        assert curve.prr == 1.0

    def test_perfect_ranking_is_monotone(self):
        rng = np.random.default_rng(3)
        errors = rng.random(80) < 0.3
        curve = accuracy_rejection_curve(errors + rng.random(80) * 0.5, errors)
        assert np.all(np.diff(curve.accuracies) >= 0)

    def test_ties_reject_earlier_rows_first(self):
        curve = accuracy_rejection_curve([1.0, 1.0], [False, True], 0.5)
        np.testing.assert_allclose(curve.accuracies, [0.5, 0.5, 1.0])

    def test_grid_step_must_divide_one(self):
        with pytest.raises(ConfigError):
            accuracy_rejection_curve([0.1, 0.2], [0, 1], 0.3)

    def test_no_errors_gives_undefined_prr(self):
        assert np.isnan(accuracy_rejection_curve([0.1, 0.2], [0, 0]).prr)


class TestPrr:
    def test_oracle_is_one(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            errors = rng.random(50) < 0.3
            errors[0], errors[1] = True, False
            assert prr(errors.astype(float), errors) == 1.0

    def test_anti_oracle(self):
        errors = np.array([1, 1, 0, 0, 0, 0, 0, 0], dtype=bool)
        assert prr(-errors.astype(float), errors) == pytest.approx(-1.0)

    def test_random_orderings_average_zero(self):
        rng = np.random.default_rng(5)
        errors = np.zeros(200, dtype=bool)
        errors[:50] = True
        values = [prr(rng.permutation(200).astype(float), errors) for _ in range(100)]
        assert abs(np.mean(values)) <= 0.05

    def test_monotone_transform(self):
        rng = np.random.default_rng(6)
        scores = rng.normal(size=60)
        errors = rng.random(60) < 0.4
        assert prr(scores, errors) == prr(np.exp(scores), errors)

    def test_degenerate(self):
        with pytest.raises(DataError):
            prr([0.1, 0.2], [1, 1])


class TestMetricBundles:
    @pytest.fixture
    def report(self):
        rng = np.random.default_rng(7)
        return decompose_probabilities(rng.uniform(0.01, 0.99, size=(40, 3)))

    def test_failure_metrics_cover_every_scorer(self, report):
        z = np.arange(40) % 3 == 0
        confidence = np.linspace(0.5, 1.0, 40)
        metrics = failure_metrics(report, z, confidence=confidence)
        assert set(metrics) == {'error_prob', 'risk_score', 'total', 'aleatoric', 'epistemic', 'mcp_confidence'}
        assert all(0.0 <= m['auroc'] <= 1.0 for m in metrics.values())

    def test_failure_metrics_undefined_without_errors(self, report):
        metrics = failure_metrics(report, np.zeros(40, dtype=bool))
        assert metrics['epistemic'] == {'auroc': None, 'aupr': None}

    def test_ood_metrics_undefined_without_ood(self, report):
        assert ood_metrics(report, np.zeros(40, dtype=bool))['epistemic'] is None

    def test_abstention_curves(self, report):
        z = np.arange(40) % 4 == 0
        metrics, curves = abstention_metrics(report, z, trust=np.ones(40), grid_step=0.25)
        assert metrics['risk_score']['accuracy_at_1'] == 1.0
        assert metrics['trust_score']['accuracy_at_0'] == pytest.approx(0.75)
        assert list(curves.columns) == ['scorer', 'fraction', 'value']
        assert len(curves) == 6 * 5


class TestRetrainConfig:
    def test_unknown_strategy(self):
        with pytest.raises(ConfigError):
            RetrainConfig(strategies=('greedy',))

    def test_bad_k_percent(self):
        with pytest.raises(ConfigError):
            RetrainConfig(k_percent=0.0)


class TestSampleRetrain:
    BBOX = BlackBoxConfig(kind='logistic', epochs=50, lr=0.1)
    ADVISOR = SgbtParams(n_trees=5, max_depth=2, min_samples_leaf=2)

    def test_zero_rounds(self, shift_data):
        train, pool, test = shift_data
        curve = sample_retrain(train, pool, test, 'random', 10.0, 0, self.BBOX, self.ADVISOR)
        assert len(curve) == 1
        assert curve['fraction'].iloc[0] == 0.0

    def test_random_is_seeded(self, shift_data):
        train, pool, test = shift_data
        a = sample_retrain(train, pool, test, 'random', 10.0, 3, self.BBOX, self.ADVISOR, seed=2)
        b = sample_retrain(train, pool, test, 'random', 10.0, 3, self.BBOX, self.ADVISOR, seed=2)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_allclose(a['fraction'], [0.0, 0.1, 0.2, 0.3])

    @pytest.mark.parametrize('strategy', ['epistemic_desc', 'confidence_asc', 'trust_asc'])
    def test_scored_strategies(self, shift_data, strategy):
        train, pool, test = shift_data
        curve = sample_retrain(train, pool, test, strategy, 10.0, 2, self.BBOX, self.ADVISOR,
                               n_members=2, trust_k=3)
        assert len(curve) == 3
        assert curve['value'].between(0.0, 1.0).all()

    def test_without_replacement_exhausts_pool(self, shift_data):
        train, pool, test = shift_data
        curve = sample_retrain(train, pool, test, 'random', 100.0, 3, self.BBOX, self.ADVISOR,
                               with_replacement=False)
        assert len(curve) == 2
        assert curve['fraction'].iloc[-1] == 1.0

    def test_external_black_box_rejected(self, shift_data):
        train, pool, test = shift_data
        config = BlackBoxConfig(kind='external', train_predictions='a.csv', test_predictions='b.csv')
        with pytest.raises(ConfigError):
            sample_retrain(train, pool, test, 'random', 10.0, 1, config, self.ADVISOR)

    def test_needs_ood_points(self, shift_data):
        train, pool, _ = shift_data
        with pytest.raises(DataError):
            sample_retrain(train, pool, train, 'random', 10.0, 1, self.BBOX, self.ADVISOR)
