import os
from typing import Dict, Optional

from dotenv import load_dotenv


BUNDLE_FILES = {
    'train': 'train.csv',
    'test': 'test.csv',
    'bbox': 'bbox.json',
    'advisor': 'advisor.json',
    'report': 'report.csv',
    'metrics': 'metrics.json',
    'manifest': 'manifest.json',
}
OPTIONAL_BUNDLE_FILES = {
    'pool': 'pool.csv',
    'curves': 'abstention_curves.csv',
    'retrain': 'sample_retrain.csv',
    'summary': 'metrics_summary.csv',
}
ADULT_FILENAME = 'adult.csv'


class ScenarioPaths:
    """
    Path management for scenario configs, run outputs and fetched data.
    """

    def __init__(self, scenario: str, output_dir: Optional[str] = None):
        """
        Args:
            scenario: Scenario name, e.g. 'circles'. Configs live in
                results/scenarios/<scenario>.yaml.
            output_dir: Overrides the default results/<scenario>/outputs.
        """
        self.scenario = scenario
        self.project_root = self._get_project_root()
        self.results_root = os.path.join(self.project_root, 'results')
        self.output_dir = os.path.abspath(output_dir) if output_dir else os.path.join(
            self.results_root, scenario, 'outputs'
        )

    def _get_project_root(self) -> str:
        # core/utils/config.py -> project root
        current_file = os.path.dirname(os.path.abspath(__file__))
        return os.path.abspath(os.path.join(current_file, '../../..'))

    def get_scenario_yaml_path(self) -> str:
        return os.path.join(self.results_root, 'scenarios', f'{self.scenario}.yaml')

    def get_repeat_dir(self, repeat: int) -> str:
        return os.path.join(self.output_dir, f'repeat_{repeat}')

    def get_artifact_paths(self, base_dir: Optional[str] = None) -> Dict[str, str]:
        """
        Paths of every bundle artifact under `base_dir` (default: the output dir).

        Returns:
            Dictionary from artifact key to absolute path, including optional
            artifacts that a run may or may not produce.
        """
        base = base_dir or self.output_dir
        files = {**BUNDLE_FILES, **OPTIONAL_BUNDLE_FILES}
        return {key: os.path.join(base, name) for key, name in files.items()}

    def get_grid_path(self, kind: str, base_dir: Optional[str] = None, extension: str = 'csv') -> str:
        return os.path.join(base_dir or self.output_dir, 'grids', f'{kind}.{extension}')

    def resolve_path(self, relative_path: str) -> str:
        """Resolves a path from a YAML file against the project root; absolute paths pass through."""
        if os.path.isabs(relative_path):
            return relative_path
        return os.path.join(self.project_root, relative_path)


def get_data_dir() -> str:
    """
    Directory for fetched datasets: $RISK_ADVISOR_DATA_DIR, else results/data.
    Relative paths are taken from the project root.
    """
    load_dotenv()
    default = os.path.join(ScenarioPaths('data').results_root, 'data')
    return resolve_project_path(os.environ.get('RISK_ADVISOR_DATA_DIR') or default)


def get_adult_csv_path() -> str:
    """Census Income CSV location: $ADULT_CSV_PATH, else <data dir>/adult.csv."""
    load_dotenv()
    path = os.environ.get('ADULT_CSV_PATH')
    return resolve_project_path(path) if path else os.path.join(get_data_dir(), ADULT_FILENAME)


def get_scenario_yaml_path(scenario: str) -> str:
    return ScenarioPaths(scenario).get_scenario_yaml_path()


def resolve_project_path(relative_path: str) -> str:
    return ScenarioPaths('data').resolve_path(relative_path)
