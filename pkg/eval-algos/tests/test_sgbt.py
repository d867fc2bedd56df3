import numpy as np
import pytest

from core.models.sgbt import (
    PROBA_EPS,
    RegressionTree,
    SgbtModel,
    SgbtParams,
    find_best_split,
    fit_sgbt,
    from_json,
    predict_proba,
    round_rows,
    subsample_size,
    to_json,
)
from core.utils.datagen import gen_circles
from core.utils.errors import ConfigError, DataError, DimensionMismatchError


def _stump(left_value, right_value, learning_rate=0.1, base_score=0.0):
    tree = RegressionTree.from_dict(
        {'feature_index': 0, 'threshold': 0.5, 'left': {'value': left_value}, 'right': {'value': right_value}},
        max_depth=1,
    )
    params = SgbtParams(n_trees=1, max_depth=1, learning_rate=learning_rate)
    return SgbtModel(base_score=base_score, trees=(tree,), params=params, n_features=1)


@pytest.fixture(scope='module')
def circles_fixture():
    d = gen_circles(200, 0.08, 0)
    # Error-like target: points on the inner circle.
    return d.features, d.labels.astype(bool)


class TestSgbtParams:
    @pytest.mark.parametrize('field, value', [
        ('max_depth', 0), ('learning_rate', 0.0), ('learning_rate', 1.5),
        ('sample_rate', 0.0), ('min_samples_leaf', 0), ('n_trees', -1),
    ])
    def test_rejects_out_of_range(self, field, value):
        with pytest.raises(ConfigError) as info:
            SgbtParams(**{field: value})
        assert info.value.field == field

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigError):
            SgbtParams.from_dict({'depth': 3})


class TestFindBestSplit:
    def test_variance_reduction_example(self):
        x = np.array([[1.0], [2.0], [3.0], [4.0]])
        split = find_best_split(x, np.array([-1.0, -1.0, 1.0, 1.0]), np.arange(4))
        assert split.feature_index == 0
        assert split.threshold == 2.5
        assert split.gain == pytest.approx(1.0)

    def test_constant_residuals_give_no_split(self):
        x = np.array([[1.0], [2.0], [3.0], [4.0]])
        assert find_best_split(x, np.full(4, 0.3), np.arange(4)) is None

    def test_tie_goes_to_lower_feature(self):
        column = np.array([1.0, 2.0, 3.0, 4.0])
        x = np.column_stack([column, column])
        split = find_best_split(x, np.array([-1.0, -1.0, 1.0, 1.0]), np.arange(4))
        assert split.feature_index == 0

    def test_respects_min_samples_leaf(self):
        x = np.arange(6, dtype=float).reshape(-1, 1)
        residuals = np.array([-5.0, 1.0, 1.0, 1.0, 1.0, 1.0])
        split = find_best_split(x, residuals, np.arange(6), min_samples_leaf=2)
        assert split.threshold == 1.5

    def test_duplicate_values_are_not_split(self):
        x = np.array([[1.0], [1.0], [1.0], [1.0]])
        assert find_best_split(x, np.array([-1.0, 1.0, -1.0, 1.0]), np.arange(4)) is None

    def test_too_few_rows(self):
        x = np.array([[1.0], [2.0], [3.0]])
        assert find_best_split(x, np.array([0.0, 1.0, 0.0]), np.arange(3), min_samples_leaf=2) is None


class TestFitSgbt:
    def test_four_point_example(self):
        x = np.array([[1.0], [2.0], [3.0], [4.0]])
        z = np.array([0, 0, 1, 1], dtype=bool)
        params = SgbtParams(n_trees=50, max_depth=1, sample_rate=1.0, min_samples_leaf=1)
        model = fit_sgbt(x, z, params)
        assert model.trees[0].threshold[0] == 2.5
        p = predict_proba(model, x)
        np.testing.assert_array_equal(p > 0.5, z)
        assert p[0] == p[1] and p[2] == p[3]

    def test_all_zero_targets(self):
        x = np.arange(10, dtype=float).reshape(-1, 1)
        model = fit_sgbt(x, np.zeros(10, dtype=bool), SgbtParams(n_trees=10))
        p = predict_proba(model, x)
        np.testing.assert_allclose(p, PROBA_EPS, rtol=1e-9)

    def test_deterministic_under_seed(self, circles_fixture):
        x, z = circles_fixture
        params = SgbtParams(n_trees=20, max_depth=3, seed=4)
        assert to_json(fit_sgbt(x, z, params)) == to_json(fit_sgbt(x, z, params))

    def test_different_seeds_differ(self, circles_fixture):
        x, z = circles_fixture
        a = fit_sgbt(x, z, SgbtParams(n_trees=20, max_depth=3, seed=1))
        b = fit_sgbt(x, z, SgbtParams(n_trees=20, max_depth=3, seed=2))
        assert to_json(a) != to_json(b)

    def test_full_sample_loss_is_non_increasing(self, circles_fixture):
        x, z = circles_fixture
        model = fit_sgbt(x, z, SgbtParams(n_trees=40, max_depth=3, sample_rate=1.0))
        history = np.array(model.loss_history)
        assert len(history) == 41
        assert np.all(np.diff(history) <= 1e-12)

    def test_monotone_feature_transform(self, circles_fixture):
        x, z = circles_fixture
        params = SgbtParams(n_trees=30, max_depth=3, sample_rate=1.0, seed=3)
        transformed = x.copy()
        transformed[:, 0] = np.exp(transformed[:, 0])
        a = predict_proba(fit_sgbt(x, z, params), x)
        b = predict_proba(fit_sgbt(transformed, z, params), transformed)
        np.testing.assert_array_equal(a, b)

    def test_depth_bound(self, circles_fixture):
        x, z = circles_fixture
        model = fit_sgbt(x, z, SgbtParams(n_trees=5, max_depth=2, min_samples_leaf=1))
        assert all(tree.depth() <= 2 for tree in model.trees)

    def test_rejects_single_row(self):
        with pytest.raises(DataError):
            fit_sgbt(np.zeros((1, 1)), np.zeros(1), SgbtParams(n_trees=1))

    def test_rejects_non_finite_features(self):
        x = np.array([[0.0], [np.inf], [1.0]])
        with pytest.raises(DataError):
            fit_sgbt(x, np.array([0, 1, 0]), SgbtParams(n_trees=1))

    def test_rejects_target_length_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            fit_sgbt(np.zeros((3, 1)), np.zeros(2), SgbtParams(n_trees=1))


class TestSubsampling:
    def test_size_is_ceiling(self):
        assert subsample_size(10, 0.7) == 7
        assert subsample_size(10, 0.25) == 3
        assert subsample_size(3, 0.1) == 1

    def test_rows_are_distinct_and_seeded(self):
        params = SgbtParams(sample_rate=0.5, seed=8)
        rows = round_rows(101, params, 3)
        assert len(rows) == 51
        assert len(np.unique(rows)) == 51
        np.testing.assert_array_equal(rows, round_rows(101, params, 3))
        assert not np.array_equal(rows, round_rows(101, params, 4))


class TestPredictProba:
    def test_no_trees_balanced_targets(self):
        x = np.arange(4, dtype=float).reshape(-1, 1)
        model = fit_sgbt(x, np.array([0, 1, 0, 1]), SgbtParams(n_trees=0))
        np.testing.assert_array_equal(predict_proba(model, x), 0.5)

    def test_closed_form_stump(self):
        p = predict_proba(_stump(-1.0, 1.0), np.array([[0.0], [1.0]]))
        np.testing.assert_allclose(p, [0.47502081252106, 0.52497918747894], rtol=1e-12)

    def test_clamp(self):
        p = predict_proba(_stump(-1000.0, 1000.0, learning_rate=1.0), np.array([[0.0], [1.0]]))
        assert p[0] == PROBA_EPS
        assert p[1] == 1.0 - PROBA_EPS

    def test_width_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            predict_proba(_stump(0.0, 0.0), np.zeros((2, 2)))


class TestSerialization:
    def test_json_round_trip_predicts_identically(self, circles_fixture):
        x, z = circles_fixture
        model = fit_sgbt(x, z, SgbtParams(n_trees=15, max_depth=3))
        again = from_json(to_json(model))
        np.testing.assert_array_equal(predict_proba(again, x), predict_proba(model, x))
        assert to_json(again) == to_json(model)

    def test_rejects_unknown_version(self):
        doc = _stump(0.0, 0.0).to_dict()
        doc['version'] = 99
        with pytest.raises(DataError):
            SgbtModel.from_dict(doc)
