import numpy as np
import pytest

from core.models.bbox import (
    BlackBoxConfig,
    ExternalModel,
    LogisticModel,
    error_indicator,
    load_external_predictions,
    model_from_dict,
    predict,
    train_black_box,
    train_logistic,
    train_mlp,
)
from core.utils.datagen import Dataset, gen_moons
from core.utils.errors import (
    ConfigError,
    DataError,
    DatasetNotFoundError,
    DimensionMismatchError,
    MissingColumnError,
)


@pytest.fixture
def line_data():
    x = np.array([[-2.0], [-1.5], [-1.0], [1.0], [1.5], [2.0]])
    return Dataset(x, [0, 0, 0, 1, 1, 1], 2, ('x0',))


@pytest.fixture
def xor_data():
    x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    return Dataset(x, [0, 1, 1, 0], 2, ('x0', 'x1'))


@pytest.fixture(scope='module')
def moons():
    return gen_moons(200, 0.1, 0)


def _write(tmp_path, text, name='predictions.csv'):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestBlackBoxConfig:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError) as info:
            BlackBoxConfig(kind='forest')
        assert info.value.field == 'kind'

    def test_external_needs_both_prediction_files(self):
        with pytest.raises(ConfigError):
            BlackBoxConfig(kind='external', train_predictions='train.csv')

    def test_from_dict_round_trip(self):
        config = BlackBoxConfig.from_dict({'kind': 'mlp', 'hidden': [8, 4], 'epochs': 10})
        assert config.hidden == (8, 4)
        assert BlackBoxConfig.from_dict(config.to_dict()) == config

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigError):
            BlackBoxConfig.from_dict({'layers': 2})


class TestErrorIndicator:
    def test_marks_mismatches(self):
        result = error_indicator([0, 1, 1, 0], [0, 0, 1, 1])
        np.testing.assert_array_equal(result.z, [False, True, False, True])
        assert result.positive_rate == 0.5

    def test_one_of_three(self):
        result = error_indicator([0, 1, 1], [0, 1, 0])
        np.testing.assert_array_equal(result.z, [False, False, True])
        assert result.positive_rate == pytest.approx(1 / 3)

    def test_disjoint_labels(self):
        assert error_indicator([0, 0], [1, 1]).positive_rate == 1.0

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            error_indicator([0, 1], [0])


class TestLogistic:
    def test_separates_line(self, line_data):
        model = train_logistic(line_data, epochs=300, lr=0.5)
        labels, probabilities = predict(model, line_data)
        np.testing.assert_array_equal(labels, line_data.labels)
        np.testing.assert_allclose(probabilities.sum(axis=1), 1.0)

    def test_zero_epochs_is_uniform(self, line_data):
        labels, probabilities = predict(train_logistic(line_data, epochs=0), line_data)
        np.testing.assert_allclose(probabilities, 0.5)
        np.testing.assert_array_equal(labels, 0)

    def test_single_class_training_set(self):
        d = Dataset(np.array([[0.0], [1.0], [2.0]]), [1, 1, 1], 2, ('x0',))
        labels, _ = predict(train_logistic(d, epochs=50), d)
        np.testing.assert_array_equal(labels, 1)

    def test_cannot_fit_xor(self, xor_data):
        labels, _ = predict(train_logistic(xor_data, l2=0.0, epochs=500), xor_data)
        assert np.mean(labels == xor_data.labels) <= 0.75

    def test_width_mismatch(self, line_data):
        model = train_logistic(line_data, epochs=1)
        with pytest.raises(DimensionMismatchError):
            model.predict(np.zeros((2, 3)))

    def test_dict_round_trip(self, line_data):
        model = train_logistic(line_data, epochs=20)
        again = model_from_dict(model.to_dict())
        assert isinstance(again, LogisticModel)
        np.testing.assert_array_equal(again.predict(line_data.features)[1], model.predict(line_data.features)[1])


class TestMlp:
    def test_fits_xor(self, xor_data):
        fits = [
            np.array_equal(train_mlp(xor_data, hidden=(8,), epochs=2000, seed=seed).predict(xor_data.features)[0],
                           xor_data.labels)
            for seed in range(3)
        ]
        assert sum(fits) >= 2

    def test_zero_epochs_is_initialization(self, moons):
        a = train_mlp(moons, hidden=(8,), epochs=0, seed=5)
        b = train_mlp(moons, hidden=(8,), epochs=0, seed=5)
        np.testing.assert_array_equal(a.weights[0], b.weights[0])
        np.testing.assert_array_equal(a.biases[0], 0.0)

    def test_seeded_determinism(self, moons):
        a = train_mlp(moons, hidden=(8,), epochs=5, seed=3)
        b = train_mlp(moons, hidden=(8,), epochs=5, seed=3)
        np.testing.assert_array_equal(a.predict(moons.features)[1], b.predict(moons.features)[1])

    def test_probabilities_are_distributions(self, moons):
        model = train_mlp(moons, hidden=(8, 4), epochs=5, seed=0)
        labels, probabilities = model.predict(moons.features)
        assert probabilities.shape == (moons.n_samples, 2)
        np.testing.assert_allclose(probabilities.sum(axis=1), 1.0)
        np.testing.assert_array_equal(labels, probabilities.argmax(axis=1))

    def test_dict_round_trip(self, moons):
        model = train_mlp(moons, hidden=(4,), epochs=2, seed=1)
        again = model_from_dict(model.to_dict())
        np.testing.assert_array_equal(again.predict(moons.features)[1], model.predict(moons.features)[1])

    def test_config_dispatch(self, moons):
        config = BlackBoxConfig(kind='mlp', hidden=(4,), epochs=2, seed=1)
        model = train_black_box(moons, config)
        assert model.kind == 'mlp'


class TestExternalPredictions:
    def test_labels_and_probabilities(self, tmp_path):
        path = _write(tmp_path, "pred_label,proba_0,proba_1\n0,0.9,0.1\n1,0.2,0.8\n")
        model = load_external_predictions(path, 2)
        labels, probabilities = model.predict(np.zeros((2, 5)))
        np.testing.assert_array_equal(labels, [0, 1])
        np.testing.assert_allclose(probabilities, [[0.9, 0.1], [0.2, 0.8]])
        assert model.has_probabilities

    def test_label_only(self, tmp_path):
        model = load_external_predictions(_write(tmp_path, "pred_label\n1\n0\n1\n"), 2)
        assert not model.has_probabilities
        assert model.predict(np.zeros((3, 1)))[1] is None

    def test_row_count_must_match(self, tmp_path):
        model = load_external_predictions(_write(tmp_path, "pred_label\n1\n0\n"), 2)
        with pytest.raises(DimensionMismatchError):
            model.predict(np.zeros((3, 1)))

    def test_probabilities_must_sum_to_one(self, tmp_path):
        path = _write(tmp_path, "pred_label,proba_0,proba_1\n0,0.9,0.1\n1,0.3,0.8\n")
        with pytest.raises(DataError) as info:
            load_external_predictions(path, 2)
        assert info.value.row == 2

    def test_label_out_of_range(self, tmp_path):
        with pytest.raises(DataError):
            load_external_predictions(_write(tmp_path, "pred_label\n0\n2\n"), 2)

    def test_partial_probability_columns(self, tmp_path):
        path = _write(tmp_path, "pred_label,proba_0\n0,1.0\n")
        with pytest.raises(MissingColumnError) as info:
            load_external_predictions(path, 2)
        assert info.value.column == 'proba_1'

    def test_missing_label_column(self, tmp_path):
        with pytest.raises(MissingColumnError):
            load_external_predictions(_write(tmp_path, "label\n0\n"), 2)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetNotFoundError):
            load_external_predictions(str(tmp_path / 'absent.csv'), 2)

    def test_dict_round_trip(self, tmp_path):
        model = load_external_predictions(_write(tmp_path, "pred_label\n1\n0\n"), 2)
        again = model_from_dict(model.to_dict())
        assert isinstance(again, ExternalModel)
        np.testing.assert_array_equal(again.labels, [1, 0])
