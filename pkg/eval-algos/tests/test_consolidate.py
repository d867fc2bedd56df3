import os

import pandas as pd
import pytest

from core.utils.consolidate_metrics import consolidate_metrics, consolidate_run, flatten_metrics
from core.utils.errors import DataError
from core.utils.serialize import read_json, write_json


def _repeat(auroc, prr, kind='mlp'):
    return {
        'black_box': {'kind': kind, 'test_accuracy': auroc},
        'failure': {'epistemic': {'auroc': auroc, 'aupr': None}},
        'abstention': {'risk_score': {'prr': prr}},
    }


class TestConsolidateMetrics:
    def test_mean_and_sample_sd(self):
        out = consolidate_metrics([_repeat(0.8, 0.2), _repeat(0.6, 0.4)])
        entry = out['failure']['epistemic']['auroc']
        assert entry['mean'] == pytest.approx(0.7)
        assert entry['sd'] == pytest.approx(0.1414213562)
        assert entry['values'] == [0.8, 0.6]
        assert out['repeats'] == 2

    def test_single_repeat_has_zero_sd(self):
        out = consolidate_metrics([_repeat(0.8, 0.2)])
        assert out['abstention']['risk_score']['prr'] == {'mean': 0.2, 'sd': 0.0, 'values': [0.2]}

    def test_undefined_values_are_skipped(self):
        out = consolidate_metrics([_repeat(0.8, None), _repeat(0.6, 0.4)])
        assert out['abstention']['risk_score']['prr']['values'] == [0.4]
        assert out['failure']['epistemic']['aupr'] is None

    def test_strings_are_kept(self):
        assert consolidate_metrics([_repeat(0.8, 0.2), _repeat(0.6, 0.4)])['black_box']['kind'] == 'mlp'

    def test_lists_are_averaged(self):
        out = consolidate_metrics([{'curve': [0.0, 1.0]}, {'curve': [1.0, 1.0]}])
        assert out['curve']['mean'] == [0.5, 1.0]

    def test_empty(self):
        with pytest.raises(DataError):
            consolidate_metrics([])


class TestFlatten:
    def test_dotted_rows(self):
        frame = flatten_metrics(consolidate_metrics([_repeat(0.8, 0.2), _repeat(0.6, 0.4)]))
        assert list(frame.columns) == ['metric', 'mean', 'sd']
        assert set(frame['metric']) == {
            'black_box.test_accuracy', 'failure.epistemic.auroc', 'abstention.risk_score.prr',
        }


class TestConsolidateRun:
    def test_reads_repeats_in_order(self, tmp_path):
        for r, value in enumerate([0.5, 0.7, 0.9, 0.1, 0.3, 0.2, 0.4, 0.6, 0.8, 1.0, 0.0]):
            write_json(_repeat(value, 0.1), str(tmp_path / f'repeat_{r}' / 'metrics.json'))
        out = consolidate_run(str(tmp_path))
        assert out['repeats'] == 11
        assert out['failure']['epistemic']['auroc']['values'][10] == 0.0
        assert read_json(str(tmp_path / 'metrics.json'))['repeats'] == 11
        assert len(pd.read_csv(os.path.join(str(tmp_path), 'metrics_summary.csv'))) == 3

    def test_no_repeats(self, tmp_path):
        with pytest.raises(DataError):
            consolidate_run(str(tmp_path))
