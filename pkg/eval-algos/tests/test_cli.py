import json
import os

import pandas as pd
import pytest
import yaml

from core.utils.cli import error_payload, main
from core.utils.errors import ConfigError, DataError, NumericError
from core.utils.serialize import read_json, write_json

SGBT_FLAGS = ['--n-members', '2', '--n-trees', '5', '--max-depth', '2', '--min-samples-leaf', '2']


def _payload(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture
def circles_bundle(tmp_path):
    """generate -> train-bbox -> train-advisor -> score on a small circles set."""
    d = str(tmp_path)
    assert main(['generate', '-g', 'circles', '-n', '120', '-o', d, '-q']) == 0
    assert main(['train-bbox', '-t', f'{d}/train.csv', '--epochs', '20', '-o', f'{d}/bbox.json', '-q']) == 0
    assert main(['train-advisor', '-t', f'{d}/train.csv', '-b', f'{d}/bbox.json', *SGBT_FLAGS,
                 '-o', f'{d}/advisor.json', '-q']) == 0
    assert main(['score', '-a', f'{d}/advisor.json', '-d', f'{d}/test.csv', '-o', f'{d}/report.csv', '-q']) == 0
    return d


@pytest.fixture
def shift_bundle(tmp_path):
    d = str(tmp_path)
    assert main(['generate', '-g', 'gmm_shift', '--n-train', '100', '--n-test', '100',
                 '--gmm-ood-label', '0', '-o', d, '-q']) == 0
    assert main(['train-bbox', '-t', f'{d}/train.csv', '--epochs', '20', '-o', f'{d}/bbox.json', '-q']) == 0
    assert main(['train-advisor', '-t', f'{d}/train.csv', '-b', f'{d}/bbox.json', *SGBT_FLAGS,
                 '-o', f'{d}/advisor.json', '-q']) == 0
    assert main(['score', '-a', f'{d}/advisor.json', '-d', f'{d}/test.csv', '-o', f'{d}/report.csv', '-q']) == 0
    return d


class TestPipeline:
    def test_generate_writes_split(self, tmp_path):
        assert main(['generate', '-g', 'moons', '-n', '100', '-o', str(tmp_path), '-q']) == 0
        assert len(pd.read_csv(tmp_path / 'train.csv')) == 70
        assert len(pd.read_csv(tmp_path / 'test.csv')) == 30

    def test_report_has_one_row_per_point(self, circles_bundle):
        report = pd.read_csv(os.path.join(circles_bundle, 'report.csv'))
        assert len(report) == len(pd.read_csv(os.path.join(circles_bundle, 'test.csv')))
        assert list(report.columns) == ['error_prob', 'total', 'aleatoric', 'epistemic', 'risk_score']

    def test_eval(self, circles_bundle):
        d = circles_bundle
        assert main(['eval', '-d', f'{d}/test.csv', '-r', f'{d}/report.csv', '-b', f'{d}/bbox.json',
                     '-t', f'{d}/train.csv', '--trust-k', '3', '-o', f'{d}/eval.json', '-q']) == 0
        failure = read_json(f'{d}/eval.json')['failure']
        assert {'epistemic', 'mcp_confidence', 'trust_score'} <= set(failure)

    def test_abstain_eval(self, circles_bundle):
        d = circles_bundle
        assert main(['abstain-eval', '-d', f'{d}/test.csv', '-r', f'{d}/report.csv', '-b', f'{d}/bbox.json',
                     '--grid-step', '0.1', '--curves', f'{d}/curves.csv', '-o', f'{d}/abstain.json', '-q']) == 0
        metrics = read_json(f'{d}/abstain.json')['abstention']
        assert metrics['risk_score']['accuracy_at_1'] == 1.0
        curves = pd.read_csv(f'{d}/curves.csv')
        assert set(curves['scorer']) == set(metrics)

    def test_grid_defaults_to_every_supported_kind(self, circles_bundle):
        d = circles_bundle
        assert main(['grid', '-b', f'{d}/bbox.json', '-a', f'{d}/advisor.json', '-d', f'{d}/train.csv',
                     '--resolution', '3', '-o', f'{d}/grids', '-q']) == 0
        assert len(os.listdir(f'{d}/grids')) == 6
        assert len(pd.read_csv(f'{d}/grids/epistemic.csv')) == 9

    def test_ood_eval(self, shift_bundle):
        d = shift_bundle
        assert main(['ood-eval', '-d', f'{d}/test.csv', '-r', f'{d}/report.csv', '-b', f'{d}/bbox.json',
                     '-o', f'{d}/ood.json', '-q']) == 0
        ood = read_json(f'{d}/ood.json')['ood']
        assert 0.0 <= ood['epistemic'] <= 1.0

    def test_ood_eval_needs_flags(self, circles_bundle, capsys):
        d = circles_bundle
        code = main(['ood-eval', '-d', f'{d}/test.csv', '-r', f'{d}/report.csv', '-b', f'{d}/bbox.json',
                     '-o', f'{d}/ood.json', '-q'])
        assert code == DataError.exit_code
        assert _payload(capsys)['error'] == 'MissingColumnError'

    def test_sample_retrain(self, shift_bundle):
        d = shift_bundle
        assert main(['sample-retrain', '-t', f'{d}/train.csv', '--test', f'{d}/test.csv', '--epochs', '20',
                     '--strategy', 'random', 'trust_asc', '--trust-k', '3', '--rounds', '2',
                     '--k-percent', '10', *SGBT_FLAGS, '-o', f'{d}/retrain.csv', '-q']) == 0
        curves = pd.read_csv(f'{d}/retrain.csv')
        assert list(curves.columns) == ['strategy', 'fraction', 'value']
        assert len(curves) == 6

    def test_external_predictions(self, circles_bundle, tmp_path):
        d = circles_bundle
        n_train = len(pd.read_csv(f'{d}/train.csv'))
        pd.DataFrame({'pred_label': [i % 2 for i in range(n_train)]}).to_csv(tmp_path / 'pred.csv', index=False)
        assert main(['train-advisor', '-t', f'{d}/train.csv', '-p', str(tmp_path / 'pred.csv'), *SGBT_FLAGS,
                     '-o', f'{d}/external_advisor.json', '-q']) == 0


class TestRunCommand:
    def test_run_scenario_file(self, tmp_path):
        config = {
            'dataset': {'generator': 'circles', 'n': 120},
            'black_box': {'epochs': 20},
            'advisor': {'n_members': 2, 'sgbt': {'n_trees': 5, 'max_depth': 2, 'min_samples_leaf': 2}},
            'baselines': {'trust_k': 3},
            'evaluation': {'ood': False, 'grid_step': 0.1},
            'grid': {'enabled': False},
        }
        path = tmp_path / 'tiny.yaml'
        path.write_text(yaml.safe_dump(config))
        out = str(tmp_path / 'out')
        assert main(['run', '-c', str(path), '-r', '2', '-o', out, '-q']) == 0
        assert read_json(os.path.join(out, 'manifest.json'))['config']['run']['name'] == 'tiny'
        assert main(['consolidate', '-o', out, '-q']) == 0
        assert read_json(os.path.join(out, 'metrics.json'))['repeats'] == 2

    def test_missing_config(self, tmp_path, capsys):
        assert main(['run', '-c', str(tmp_path / 'absent.yaml'), '-q']) == ConfigError.exit_code
        assert _payload(capsys)['exit_code'] == 2

    def test_consolidate_without_repeats(self, tmp_path):
        write_json({}, str(tmp_path / 'metrics.json'))
        assert main(['consolidate', '-o', str(tmp_path), '-q']) == DataError.exit_code


class TestErrors:
    def test_payload(self):
        assert error_payload(NumericError('diverged')) == {
            'error': 'NumericError', 'message': 'diverged', 'exit_code': 4,
        }
        assert error_payload(KeyError('x'))['exit_code'] == 1

    def test_config_error_exit_code(self, circles_bundle, capsys):
        d = circles_bundle
        code = main(['train-advisor', '-t', f'{d}/train.csv', '-b', f'{d}/bbox.json', '--sample-rate', '0',
                     '-o', f'{d}/bad.json', '-q'])
        assert code == 2
        payload = _payload(capsys)
        assert payload['error'] == 'ConfigError'
        assert not os.path.exists(f'{d}/bad.json')

    @pytest.mark.parametrize('argv', [
        ['unknown-command'],
        ['train-bbox', '-o', 'bbox.json'],
        ['generate', '-n', 'many'],
        [],
    ])
    def test_usage_errors_are_config_errors(self, argv, capsys):
        assert main(argv) == ConfigError.exit_code
        payload = _payload(capsys)
        assert payload['error'] == 'ConfigError'
        assert payload['exit_code'] == 2

    def test_missing_dataset_exit_code(self, tmp_path):
        code = main(['train-bbox', '-t', str(tmp_path / 'absent.csv'), '-o', str(tmp_path / 'bbox.json'), '-q'])
        assert code == 3

    def test_partial_outputs_are_removed(self, circles_bundle):
        d = circles_bundle
        code = main(['abstain-eval', '-d', f'{d}/test.csv', '-r', f'{d}/report.csv', '-b', f'{d}/bbox.json',
                     '--curves', f'{d}/report.csv/curves.csv', '-o', f'{d}/abstain.json', '-q'])
        assert code == 1
        assert not os.path.exists(f'{d}/abstain.json')
        assert os.path.isfile(f'{d}/report.csv')
