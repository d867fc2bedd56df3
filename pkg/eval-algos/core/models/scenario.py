from dataclasses import asdict, dataclass, fields, replace
import logging
import os
import shutil
import tempfile
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
import yaml
from joblib import Parallel, delayed
from dotenv import load_dotenv

from .. import __version__
from .advisor import RiskWeights, advisor_features, decompose, fit_advisor, grid_search_sgbt
from .baselines import fit_trust, mcp_confidence, trust_scores
from .bbox import BlackBoxConfig, error_indicator, load_external_predictions, train_black_box
from .evaluation import (
    RetrainConfig,
    abstention_metrics,
    failure_metrics,
    ood_metrics,
    sample_retrain,
)
from .sgbt import SgbtParams
from ..utils.config import ScenarioPaths
from ..utils.consolidate_metrics import consolidate_metrics, flatten_metrics
from ..utils.datagen import (
    Dataset,
    GmmShiftParams,
    SplitSpec,
    fit_standardizer,
    gen_circles,
    gen_gmm_shift,
    gen_moons,
    load_csv,
    save_csv,
    shift_split,
    stratified_split,
    stratified_split_indices,
)
from ..utils.errors import ConfigError, DataError, EmptyDatasetError
from ..utils.grid import GRID_KINDS, default_bounds, emit_grid, render_svg, save_grid
from ..utils.serialize import read_json, save_model_document, write_frame, write_json


DATASET_GENERATORS = ('circles', 'moons', 'gmm_shift', 'csv')
# Advisor member seeds start at seed * SEED_STRIDE so repeats never share members.
SEED_STRIDE = 1000


# ------------------------------------------------------------------------
# Dataclass Definitions
# ------------------------------------------------------------------------

def _check_keys(cls, values: Dict[str, Any], section: str) -> Dict[str, Any]:
    values = dict(values or {})
    unknown = set(values) - {f.name for f in fields(cls)}
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"Unknown setting '{section}.{name}'", field=f'{section}.{name}')
    return values


@dataclass(frozen=True)
class DatasetConfig:
    """
    Where the data comes from: a synthetic generator or CSV files. A single
    `path` is split by `train_fraction` (or by its OOD flag with `shift`);
    `train_path` / `test_path` are used as given.
    """
    generator: str = 'circles'
    n: int = 2000
    noise_sd: float = 0.08
    n_train: int = 1000
    n_test: int = 1000
    gmm: GmmShiftParams = GmmShiftParams()
    path: Optional[str] = None
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    label_column: str = 'label'
    ood_column: Optional[str] = None
    ood_value: Optional[str] = None
    shift: bool = False
    balance_ood: bool = True
    train_fraction: float = 0.7
    stratified: bool = True

    def __post_init__(self):
        if self.generator not in DATASET_GENERATORS:
            raise ConfigError(f"dataset.generator must be one of {DATASET_GENERATORS}, got '{self.generator}'",
                              field='dataset.generator')
        if self.generator == 'csv' and not (self.path or (self.train_path and self.test_path)):
            raise ConfigError("CSV datasets need dataset.path or both train_path and test_path",
                              field='dataset.path')
        if self.shift and not self.ood_column:
            raise ConfigError("dataset.shift needs dataset.ood_column", field='dataset.ood_column')
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"dataset.train_fraction must lie in (0, 1), got {self.train_fraction}",
                              field='dataset.train_fraction')

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'DatasetConfig':
        values = _check_keys(cls, values, 'dataset')
        gmm = values.pop('gmm', None) or {}
        gmm = _check_keys(GmmShiftParams, gmm, 'dataset.gmm')
        for key in ('mean_a0', 'mean_a1', 'mean_b', 'test_mix'):
            if key in gmm:
                gmm[key] = tuple(float(v) for v in gmm[key])
        return cls(gmm=GmmShiftParams(**gmm), **values)


@dataclass(frozen=True)
class AdvisorConfig:
    n_members: int = 10
    sgbt: SgbtParams = SgbtParams()
    weights: RiskWeights = RiskWeights()
    include_prediction: bool = False
    grid_search: bool = False
    search_grid: Optional[Dict[str, Tuple]] = None
    cv_folds: int = 5

    def __post_init__(self):
        if self.n_members < 1:
            raise ConfigError(f"advisor.n_members must be at least 1, got {self.n_members}",
                              field='advisor.n_members')
        if self.cv_folds < 2:
            raise ConfigError(f"advisor.cv_folds must be at least 2, got {self.cv_folds}",
                              field='advisor.cv_folds')

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'AdvisorConfig':
        values = _check_keys(cls, values, 'advisor')
        sgbt = SgbtParams.from_dict(values.pop('sgbt', None) or {})
        weights = RiskWeights.from_dict(values.pop('weights', None) or {})
        grid = values.pop('search_grid', None)
        if grid is not None:
            grid = {name: tuple(candidates) for name, candidates in grid.items()}
        return cls(sgbt=sgbt, weights=weights, search_grid=grid, **values)


@dataclass(frozen=True)
class BaselineConfig:
    mcp: bool = True
    trust: bool = True
    trust_alpha: float = 0.0625
    trust_k: int = 10

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'BaselineConfig':
        return cls(**_check_keys(cls, values, 'baselines'))


@dataclass(frozen=True)
class EvaluationConfig:
    failure: bool = True
    ood: bool = True
    abstention: bool = True
    grid_step: float = 0.01
    sample_retrain: RetrainConfig = RetrainConfig()

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'EvaluationConfig':
        values = _check_keys(cls, values, 'evaluation')
        retrain = _check_keys(RetrainConfig, values.pop('sample_retrain', None) or {}, 'evaluation.sample_retrain')
        if 'strategies' in retrain:
            retrain['strategies'] = tuple(retrain['strategies'])
        return cls(sample_retrain=RetrainConfig(**retrain), **values)


@dataclass(frozen=True)
class GridConfig:
    enabled: bool = True
    kinds: Tuple[str, ...] = GRID_KINDS
    resolution: int = 50
    bounds: Optional[Tuple[float, float, float, float]] = None
    svg: bool = False

    def __post_init__(self):
        unknown = [kind for kind in self.kinds if kind not in GRID_KINDS]
        if unknown:
            raise ConfigError(f"Unknown grid kind '{unknown[0]}'", field='grid.kinds')
        if self.resolution < 1:
            raise ConfigError(f"grid.resolution must be at least 1, got {self.resolution}", field='grid.resolution')
        if self.bounds is not None and len(self.bounds) != 4:
            raise ConfigError("grid.bounds must be [xmin, xmax, ymin, ymax]", field='grid.bounds')

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'GridConfig':
        values = _check_keys(cls, values, 'grid')
        if 'kinds' in values:
            values['kinds'] = tuple(values['kinds'])
        if values.get('bounds') is not None:
            values['bounds'] = tuple(float(b) for b in values['bounds'])
        return cls(**values)


@dataclass(frozen=True)
class RunConfig:
    name: str = 'scenario'
    seed: int = 0
    repeats: int = 1
    n_jobs: int = 1
    include_members: bool = False

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError(f"run.repeats must be at least 1, got {self.repeats}", field='run.repeats')
        if self.seed < 0:
            raise ConfigError(f"run.seed must be non-negative, got {self.seed}", field='run.seed')

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'RunConfig':
        return cls(**_check_keys(cls, values, 'run'))


@dataclass(frozen=True)
class ExperimentConfig:
    """
    A complete, serializable scenario. `run.seed` (plus the repeat index)
    drives every random choice: data generation and splits, black-box
    training, and advisor members, overriding seeds set in other sections.
    """
    dataset: DatasetConfig = DatasetConfig()
    black_box: BlackBoxConfig = BlackBoxConfig()
    advisor: AdvisorConfig = AdvisorConfig()
    baselines: BaselineConfig = BaselineConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    grid: GridConfig = GridConfig()
    run: RunConfig = RunConfig()

    def __post_init__(self):
        # External predictions are matched to rows by position, so the split must be fixed on disk.
        if self.black_box.kind == 'external' and not (self.dataset.generator == 'csv' and self.dataset.train_path):
            raise ConfigError("An external black box needs dataset.generator 'csv' with train_path and test_path",
                              field='dataset.train_path')

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any]) -> 'ExperimentConfig':
        config_dict = _check_keys(cls, config_dict, 'config')
        black_box = dict(config_dict.get('black_box') or {})
        return cls(
            dataset=DatasetConfig.from_dict(config_dict.get('dataset')),
            black_box=BlackBoxConfig.from_dict(black_box),
            advisor=AdvisorConfig.from_dict(config_dict.get('advisor')),
            baselines=BaselineConfig.from_dict(config_dict.get('baselines')),
            evaluation=EvaluationConfig.from_dict(config_dict.get('evaluation')),
            grid=GridConfig.from_dict(config_dict.get('grid')),
            run=RunConfig.from_dict(config_dict.get('run')),
        )

    def to_dict(self) -> Dict[str, Any]:
        """Plain nested dict (tuples as lists) that from_dict reads back."""
        def plain(value):
            if isinstance(value, dict):
                return {k: plain(v) for k, v in value.items()}
            if isinstance(value, (list, tuple)):
                return [plain(v) for v in value]
            return value
        return plain(asdict(self))


# ------------------------------------------------------------------------
# ScenarioRunner Class
# ------------------------------------------------------------------------

class ScenarioRunner:
    """
    Runs one repeat of a scenario end to end:

        1. Load or generate the datasets (and carve out the retrain pool).
        2. Standardize with training statistics.
        3. Train (or load) the black box.
        4. Compute the error indicator on train and test.
        5. Train the advisor, optionally after a grid search.
        6. Score the test set with the advisor and the baselines.
        7. Compute failure, OOD and abstention metrics.
        8. Run sample-and-retrain, when enabled.
        9. Emit decision grids for 2-D data.

    Every step stores its products in `self.analysis`.
    """

    def __init__(self, config: ExperimentConfig, seed: int):
        self.config = config
        self.seed = seed
        self.paths = ScenarioPaths(config.run.name)
        self.analysis: Dict[str, Any] = {}

    def run_analysis(self) -> Dict[str, Any]:
        logging.info(f"Running scenario '{self.config.run.name}' with seed {self.seed}")
        self._load_datasets()
        self._standardize()
        self._train_black_box()
        self._compute_error_indicators()
        self._train_advisor()
        self._score()
        self._evaluate()
        if self.config.evaluation.sample_retrain.enabled:
            self._sample_retrain()
        if self.config.grid.enabled:
            self._emit_grids()
        return self.analysis

    # --------------------------------------------------------------------
    # Step 1: Load or generate datasets
    # --------------------------------------------------------------------
    def _resolve(self, path: str) -> str:
        load_dotenv()
        return self.paths.resolve_path(os.path.expandvars(path))

    def _load_csv_datasets(self) -> Tuple[Dataset, Dataset]:
        ds = self.config.dataset
        split = SplitSpec(ds.train_fraction, ds.stratified, self.seed)
        load = lambda path, classes=None: load_csv(self._resolve(path), ds.label_column, ds.ood_column,
                                                   ds.ood_value, class_count=classes)
        if ds.path:
            data = load(ds.path)
            if ds.shift:
                return shift_split(data, split, balance=ds.balance_ood)
            return stratified_split(data, split)
        train = load(ds.train_path)
        test = load(ds.test_path, train.class_count)
        if train.feature_names != test.feature_names:
            raise DataError("Train and test files encode to different feature columns; "
                            "pass a single file as dataset.path instead")
        class_count = max(train.class_count, test.class_count)
        return replace(train, class_count=class_count), replace(test, class_count=class_count)

    def _load_datasets(self) -> None:
        ds = self.config.dataset
        split = SplitSpec(ds.train_fraction, ds.stratified, self.seed)
        if ds.generator == 'circles':
            train, test = stratified_split(gen_circles(ds.n, ds.noise_sd, self.seed), split)
        elif ds.generator == 'moons':
            train, test = stratified_split(gen_moons(ds.n, ds.noise_sd, self.seed), split)
        elif ds.generator == 'gmm_shift':
            train, test = gen_gmm_shift(ds.n_train, ds.n_test, self.seed, ds.gmm)
        else:
            train, test = self._load_csv_datasets()

        pool = None
        retrain = self.config.evaluation.sample_retrain
        if retrain.enabled:
            if test.is_ood is None or not test.is_ood.any():
                raise ConfigError("sample_retrain needs a dataset with out-of-distribution test points",
                                  field='evaluation.sample_retrain')
            pool_idx, test_idx = stratified_split_indices(
                test.is_ood.astype(int), SplitSpec(retrain.pool_fraction, True, self.seed)
            )
            pool, test = test.subset(pool_idx), test.subset(test_idx)

        if train.n_samples == 0 or test.n_samples == 0:
            raise EmptyDatasetError("Train or test set is empty. Check Step 1.")
        self.analysis.update(train_raw=train, test_raw=test, pool_raw=pool)
        logging.info(f"Step 1: {train.n_samples} train / {test.n_samples} test rows, {train.n_features} features")

    # --------------------------------------------------------------------
    # Step 2: Standardize
    # --------------------------------------------------------------------
    def _standardize(self) -> None:
        scaler = fit_standardizer(self.analysis['train_raw'])
        pool_raw = self.analysis['pool_raw']
        self.analysis.update(
            standardizer=scaler,
            train=scaler.transform(self.analysis['train_raw']),
            test=scaler.transform(self.analysis['test_raw']),
            pool=None if pool_raw is None else scaler.transform(pool_raw),
        )

    # --------------------------------------------------------------------
    # Step 3: Train the black box
    # --------------------------------------------------------------------
    def _black_box_config(self) -> BlackBoxConfig:
        return replace(self.config.black_box, seed=self.seed)

    def _train_black_box(self) -> None:
        config = self._black_box_config()
        train, test = self.analysis['train'], self.analysis['test']
        if config.kind == 'external':
            bbox_train = load_external_predictions(self._resolve(config.train_predictions), train.class_count)
            bbox_test = load_external_predictions(self._resolve(config.test_predictions), train.class_count)
        else:
            bbox_train = bbox_test = train_black_box(train, config)

        train_pred, train_proba = bbox_train.predict(train.features)
        test_pred, test_proba = bbox_test.predict(test.features)
        self.analysis.update(
            bbox=bbox_test,
            train_pred=train_pred,
            train_proba=train_proba,
            test_pred=test_pred,
            test_proba=test_proba,
        )
        logging.info(f"Step 3: trained {config.kind} black box")

    # --------------------------------------------------------------------
    # Step 4: Error indicators
    # --------------------------------------------------------------------
    def _compute_error_indicators(self) -> None:
        train, test = self.analysis['train'], self.analysis['test']
        z_train = error_indicator(train.labels, self.analysis['train_pred'])
        z_test = error_indicator(test.labels, self.analysis['test_pred'])
        if z_train.positive_rate in (0.0, 1.0):
            logging.warning(f"Black-box training error rate is {z_train.positive_rate}; "
                            f"the advisor can only learn a constant")
        self.analysis.update(z_train=z_train, z_test=z_test)
        logging.info(f"Step 4: train error rate {z_train.positive_rate:.4f}, test error rate {z_test.positive_rate:.4f}")

    # --------------------------------------------------------------------
    # Step 5: Train the advisor
    # --------------------------------------------------------------------
    def _advisor_params(self) -> SgbtParams:
        return self.config.advisor.sgbt.with_seed(self.seed * SEED_STRIDE)

    def _train_advisor(self) -> None:
        cfg = self.config.advisor
        train = self.analysis['train']
        z = self.analysis['z_train'].z
        predicted = self.analysis['train_pred'] if cfg.include_prediction else None
        class_count = train.class_count if cfg.include_prediction else None
        params = self._advisor_params()

        search_results = None
        if cfg.grid_search:
            features = advisor_features(train.features, predicted, class_count)
            params, search_results = grid_search_sgbt(features, z, params, cfg.search_grid, cfg.cv_folds,
                                                      n_jobs=self.config.run.n_jobs)

        advisor = fit_advisor(train.features, z, params, cfg.n_members, cfg.weights,
                              predicted_labels=predicted, class_count=class_count,
                              n_jobs=self.config.run.n_jobs)
        self.analysis.update(advisor=advisor, advisor_params=params, search_results=search_results)
        logging.info(f"Step 5: trained advisor with {advisor.n_members} members")

    # --------------------------------------------------------------------
    # Step 6: Score the test set
    # --------------------------------------------------------------------
    def _score(self) -> None:
        cfg = self.config.baselines
        train, test = self.analysis['train'], self.analysis['test']
        advisor = self.analysis['advisor']
        predicted = self.analysis['test_pred'] if advisor.include_prediction else None
        report = decompose(advisor, test.features, predicted)

        confidence = None
        if cfg.mcp:
            if self.analysis['test_proba'] is None:
                logging.warning("Black box has no probabilities; skipping the confidence baseline")
            else:
                confidence = mcp_confidence(self.analysis['test_proba'])

        trust = None
        if cfg.trust:
            trust_model = fit_trust(train, cfg.trust_alpha, cfg.trust_k)
            trust = trust_scores(trust_model, test.features, self.analysis['test_pred'])

        self.analysis.update(report=report, confidence=confidence, trust=trust)

    # --------------------------------------------------------------------
    # Step 7: Metrics
    # --------------------------------------------------------------------
    def _evaluate(self) -> None:
        cfg = self.config.evaluation
        train, test = self.analysis['train'], self.analysis['test']
        report = self.analysis['report']
        confidence, trust = self.analysis['confidence'], self.analysis['trust']
        z_test = self.analysis['z_test'].z
        if report.n_points != test.n_samples:
            raise DataError("Report and test set differ in length. Check Step 6.")

        metrics: Dict[str, Any] = {
            'black_box': {
                'kind': self.config.black_box.kind,
                'train_accuracy': 1.0 - self.analysis['z_train'].positive_rate,
                'test_accuracy': 1.0 - self.analysis['z_test'].positive_rate,
            },
            'advisor': {
                'n_members': self.analysis['advisor'].n_members,
                'params': self.analysis['advisor_params'].to_dict(),
            },
        }
        if self.analysis['search_results'] is not None:
            metrics['advisor']['grid_search'] = self.analysis['search_results'].to_dict(orient='records')
        if cfg.failure:
            metrics['failure'] = failure_metrics(report, z_test, confidence, trust)
        if cfg.ood and test.is_ood is not None:
            metrics['ood'] = ood_metrics(report, test.is_ood, confidence, trust)
        curves = None
        if cfg.abstention:
            metrics['abstention'], curves = abstention_metrics(report, z_test, confidence, trust, cfg.grid_step)
        self.analysis.update(metrics=metrics, curves=curves)

    # --------------------------------------------------------------------
    # Step 8: Sample and retrain
    # --------------------------------------------------------------------
    def _sample_retrain(self) -> None:
        cfg = self.config.evaluation.sample_retrain
        baselines = self.config.baselines
        frames = []
        per_strategy = {}
        for strategy in cfg.strategies:
            logging.info(f"Step 8: sample-and-retrain with {strategy}")
            curve = sample_retrain(
                self.analysis['train'], self.analysis['pool'], self.analysis['test'],
                strategy, cfg.k_percent, cfg.rounds, self._black_box_config(), self._advisor_params(),
                n_members=self.config.advisor.n_members,
                trust_alpha=baselines.trust_alpha, trust_k=baselines.trust_k,
                seed=self.seed, with_replacement=cfg.with_replacement, n_jobs=self.config.run.n_jobs,
            )
            per_strategy[strategy] = {'fraction': curve['fraction'].tolist(), 'value': curve['value'].tolist()}
            curve.insert(0, 'strategy', strategy)
            frames.append(curve)
        self.analysis['retrain'] = pd.concat(frames, ignore_index=True)
        self.analysis['metrics']['sample_retrain'] = per_strategy

    # --------------------------------------------------------------------
    # Step 9: Decision grids
    # --------------------------------------------------------------------
    def _emit_grids(self) -> None:
        cfg = self.config.grid
        train_raw = self.analysis['train_raw']
        if train_raw.n_features != 2:
            logging.info("Step 9: skipping grids, data is not 2-D")
            return
        bbox = self.analysis['bbox']
        if bbox.kind == 'external' and self.analysis['advisor'].include_prediction:
            logging.info("Step 9: skipping grids, the advisor needs black-box predictions off the data")
            return
        bounds = cfg.bounds or default_bounds(train_raw.features)
        grids = {}
        for kind in cfg.kinds:
            if kind == 'bbox_proba' and bbox.kind == 'external':
                logging.info("Step 9: external black box, skipping bbox_proba grid")
                continue
            grids[kind] = emit_grid(kind, bbox, self.analysis['advisor'], bounds, cfg.resolution,
                                    self.analysis['standardizer'])
        self.analysis['grids'] = grids


# ------------------------------------------------------------------------
# Bundle I/O
# ------------------------------------------------------------------------

def load_config(config_path: str) -> ExperimentConfig:
    """
    Reads a scenario YAML or a manifest.json from an earlier run. A YAML
    without run.name takes its name from the file.
    """
    if not os.path.exists(config_path):
        raise ConfigError(f"Config file not found: {config_path}", field='config')
    if config_path.endswith('.json'):
        doc = read_json(config_path)
        if 'config' not in doc:
            raise ConfigError(f"{config_path} is not a run manifest", field='config')
        return ExperimentConfig.from_dict(doc['config'])

    with open(config_path, 'r') as f:
        try:
            config_dict = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {config_path}: {e}", field='config')
    if not isinstance(config_dict, dict):
        raise ConfigError(f"{config_path} must hold a mapping", field='config')
    run = dict(config_dict.get('run') or {})
    run.setdefault('name', os.path.splitext(os.path.basename(config_path))[0])
    config_dict['run'] = run
    return ExperimentConfig.from_dict(config_dict)


def save_results(analysis: Dict[str, Any], base_dir: str, include_members: bool = False,
                 svg: bool = False) -> List[str]:
    """
    Writes one repeat's bundle into `base_dir`.

    Returns:
        List[str]: Paths of every file written.
    """
    paths = ScenarioPaths('bundle', base_dir).get_artifact_paths()
    scaler = analysis['standardizer']
    written = [
        save_csv(analysis['train_raw'], paths['train']),
        save_csv(analysis['test_raw'], paths['test']),
        save_model_document(analysis['bbox'], paths['bbox'], scaler),
        save_model_document(analysis['advisor'], paths['advisor'], scaler),
        write_frame(analysis['report'].to_frame(include_members), paths['report']),
        write_json(analysis['metrics'], paths['metrics']),
    ]
    if analysis.get('pool_raw') is not None:
        written.append(save_csv(analysis['pool_raw'], paths['pool']))
    if analysis.get('curves') is not None:
        written.append(write_frame(analysis['curves'], paths['curves']))
    if analysis.get('retrain') is not None:
        written.append(write_frame(analysis['retrain'], paths['retrain']))
    for kind, grid in (analysis.get('grids') or {}).items():
        grid_paths = ScenarioPaths('bundle', base_dir)
        written.append(save_grid(grid, grid_paths.get_grid_path(kind)))
        if svg:
            written.append(render_svg(grid, grid_paths.get_grid_path(kind, extension='svg'), title=kind))
    return written


def _publish(staging: str, output_dir: str) -> None:
    """Moves every staged file into `output_dir`, one atomic rename per file."""
    for root, _, files in os.walk(staging):
        for name in files:
            source = os.path.join(root, name)
            target = os.path.join(output_dir, os.path.relpath(source, staging))
            os.makedirs(os.path.dirname(target), exist_ok=True)
            os.replace(source, target)
    shutil.rmtree(staging, ignore_errors=True)


def run_repeat(config: ExperimentConfig, seed: int, base_dir: str) -> Tuple[Dict[str, Any], List[str]]:
    runner = ScenarioRunner(config, seed)
    analysis = runner.run_analysis()
    return analysis, save_results(analysis, base_dir, config.run.include_members, config.grid.svg)


def _run_repeat_files(config: ExperimentConfig, seed: int, base_dir: str) -> List[str]:
    return run_repeat(config, seed, base_dir)[1]


def run_scenario(config: ExperimentConfig, output_dir: Optional[str] = None) -> Dict[str, Any]:
    """
    Runs every repeat of a scenario and publishes the bundle.

    Outputs are staged in a temporary sibling directory and only moved into
    place once everything succeeded; a failed run leaves nothing behind.
    With more than one repeat, each repeat gets repeat_<r>/ and the top-level
    metrics.json holds mean and sd over repeats.

    Args:
        config: The scenario.
        output_dir: Overrides results/<name>/outputs.

    Returns:
        Dict[str, Any]: The manifest that was written.
    """
    paths = ScenarioPaths(config.run.name, output_dir)
    output_dir = paths.output_dir
    parent = os.path.dirname(output_dir)
    os.makedirs(parent, exist_ok=True)
    staging = tempfile.mkdtemp(prefix=f'.{os.path.basename(output_dir)}-staging-', dir=parent)
    seed_list = [config.run.seed + r for r in range(config.run.repeats)]

    try:
        written = []
        if len(seed_list) == 1:
            _, written = run_repeat(config, seed_list[0], staging)
        else:
            staged_paths = ScenarioPaths('bundle', staging)
            repeat_dirs = [staged_paths.get_repeat_dir(r) for r in range(len(seed_list))]
            outputs = Parallel(n_jobs=config.run.n_jobs)(
                delayed(_run_repeat_files)(config, seed, repeat_dir) for seed, repeat_dir in zip(seed_list, repeat_dirs)
            )
            written = [path for files in outputs for path in files]
            per_repeat = [read_json(os.path.join(repeat_dir, 'metrics.json')) for repeat_dir in repeat_dirs]
            staged = staged_paths.get_artifact_paths()
            consolidated = consolidate_metrics(per_repeat)
            written.append(write_json(consolidated, staged['metrics']))
            written.append(write_frame(flatten_metrics(consolidated), staged['summary']))

        manifest_path = os.path.join(staging, 'manifest.json')
        manifest = {
            'config': config.to_dict(),
            'seed_list': seed_list,
            'artifact_paths': sorted(os.path.relpath(p, staging) for p in written + [manifest_path]),
            'tool_version': __version__,
        }
        write_json(manifest, manifest_path)
        _publish(staging, output_dir)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise

    print(f"✓ Scenario '{config.run.name}' written to {output_dir}")
    return manifest


def run_simulation(config_path: str, output_dir: Optional[str] = None,
                   repeats: Optional[int] = None) -> Dict[str, Any]:
    """Loads a scenario file (YAML or manifest) and runs it."""
    config = load_config(config_path)
    if repeats is not None:
        config = replace(config, run=replace(config.run, repeats=repeats))
    return run_scenario(config, output_dir)
