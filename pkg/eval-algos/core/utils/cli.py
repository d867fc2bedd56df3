"""
Command-line entry point.

    python -m core.utils.cli generate --generator circles -o results/demo
    python -m core.utils.cli train-bbox --train results/demo/train.csv -o results/demo/bbox.json
    python -m core.utils.cli train-advisor --train results/demo/train.csv --bbox results/demo/bbox.json \\
        -o results/demo/advisor.json
    python -m core.utils.cli score --advisor results/demo/advisor.json --data results/demo/test.csv \\
        -o results/demo/report.csv
    python -m core.utils.cli run --config results/scenarios/circles.yaml --repeats 5

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure, 1 anything else.
"""
import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..models.advisor import REPORT_COLUMNS, AdvisorModel, RiskWeights, UncertaintyReport, advisor_features, \
    fit_advisor, grid_search_sgbt, score_file
from ..models.baselines import fit_trust, mcp_confidence, trust_scores
from ..models.bbox import BlackBoxConfig, BlackBoxModel, error_indicator, load_external_predictions, \
    model_from_dict, train_black_box
from ..models.evaluation import STRATEGIES, abstention_metrics, failure_metrics, ood_metrics, sample_retrain
from ..models.scenario import run_simulation
from ..models.sgbt import SgbtParams
from .config import get_scenario_yaml_path
from .consolidate_metrics import consolidate_run
from .data_fetcher import fetch_adult
from .datagen import Dataset, GmmShiftParams, SplitSpec, Standardizer, fit_standardizer, gen_circles, \
    gen_gmm_shift, gen_moons, load_csv, save_csv, stratified_split, stratified_split_indices
from .errors import ConfigError, DataError, MissingColumnError, RiskAdvisorError
from .grid import GRID_KINDS, default_bounds, emit_grid, render_svg, save_grid
from .serialize import load_model_document, read_frame, save_model_document, write_frame, write_json


OOD_COLUMN = 'is_ood'


# ------------------------------------------------------------------------
# Shared Helpers
# ------------------------------------------------------------------------

def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.ERROR if quiet else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s: %(message)s',
                        handlers=[logging.StreamHandler()], force=True)


def read_dataset(path: str, label_column: str, ood_column: Optional[str] = None,
                 ood_value: Optional[str] = None) -> Dataset:
    """Loads a CSV, picking up an is_ood column automatically when present."""
    if ood_column is None and os.path.exists(path):
        header = pd.read_csv(path, nrows=0).columns
        if OOD_COLUMN in header:
            ood_column = OOD_COLUMN
    return load_csv(path, label_column, ood_column, ood_value)


def load_black_box(path: str) -> Tuple[BlackBoxModel, Optional[Standardizer]]:
    doc = load_model_document(path)
    scaler = doc.get('standardizer')
    return model_from_dict(doc['model']), None if scaler is None else Standardizer.from_dict(scaler)


def load_advisor(path: str) -> Tuple[AdvisorModel, Optional[Standardizer]]:
    doc = load_model_document(path)
    scaler = doc.get('standardizer')
    return AdvisorModel.from_dict(doc['model']), None if scaler is None else Standardizer.from_dict(scaler)


def apply_standardizer(d: Dataset, scaler: Optional[Standardizer]) -> Dataset:
    return d if scaler is None else scaler.transform(d)


def black_box_outputs(d: Dataset, bbox_path: Optional[str], predictions_path: Optional[str]
                      ) -> Tuple[np.ndarray, Optional[np.ndarray], Optional[Standardizer]]:
    """
    Labels and probabilities of the black box on `d`. A predictions file takes
    precedence over the model; the model's standardizer is returned either way.
    """
    if not bbox_path and not predictions_path:
        raise ConfigError("Pass --bbox or --predictions", field='bbox')
    model, scaler = load_black_box(bbox_path) if bbox_path else (None, None)
    if predictions_path:
        model = load_external_predictions(predictions_path, d.class_count if model is None else model.class_count)
    labels, probabilities = model.predict(apply_standardizer(d, scaler).features)
    return labels, probabilities, scaler


def report_from_frame(frame: pd.DataFrame) -> UncertaintyReport:
    missing = [column for column in REPORT_COLUMNS if column not in frame.columns]
    if missing:
        raise MissingColumnError(f"Report is missing column '{missing[0]}'", column=missing[0])
    member_columns = [column for column in frame.columns if str(column).startswith('member_')]
    members = frame[member_columns].values if member_columns else frame[['error_prob']].values
    return UncertaintyReport(member_probs=members, **{c: frame[c].values.astype(float) for c in REPORT_COLUMNS})


def sgbt_params_from_args(args: argparse.Namespace) -> SgbtParams:
    return SgbtParams(
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        learning_rate=args.learning_rate,
        sample_rate=args.sample_rate,
        min_samples_leaf=args.min_samples_leaf,
        seed=args.seed,
    )


def bbox_config_from_args(args: argparse.Namespace) -> BlackBoxConfig:
    return BlackBoxConfig(
        kind=args.kind,
        epochs=args.epochs,
        lr=args.lr,
        l2=args.l2,
        hidden=tuple(args.hidden),
        batch_size=args.batch_size,
        seed=args.seed,
        train_predictions=getattr(args, 'train_predictions', None),
        test_predictions=getattr(args, 'test_predictions', None),
    )


# ------------------------------------------------------------------------
# Commands
# ------------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace, written: List[str]) -> None:
    if args.generator == 'gmm_shift':
        defaults = GmmShiftParams()
        params = GmmShiftParams(
            mean_a0=tuple(args.gmm_mean_a0 or defaults.mean_a0),
            mean_a1=tuple(args.gmm_mean_a1 or defaults.mean_a1),
            mean_b=tuple(args.gmm_mean_b or defaults.mean_b),
            scale=args.gmm_scale,
            test_mix=tuple(args.gmm_test_mix or defaults.test_mix),
            ood_label=args.gmm_ood_label,
        )
        train, test = gen_gmm_shift(args.n_train, args.n_test, args.seed, params)
    else:
        generator = gen_circles if args.generator == 'circles' else gen_moons
        data = generator(args.n, args.noise_sd, args.seed)
        train, test = stratified_split(data, SplitSpec(args.train_fraction, True, args.seed))

    for name, d in (('train.csv', train), ('test.csv', test)):
        written.append(save_csv(d, os.path.join(args.output_dir, name)))
    print(f"✓ Generated {train.n_samples} train and {test.n_samples} test rows in {args.output_dir}")


def cmd_train_bbox(args: argparse.Namespace, written: List[str]) -> None:
    train_raw = read_dataset(args.train, args.label_column)
    scaler = fit_standardizer(train_raw)
    train = scaler.transform(train_raw)
    model = train_black_box(train, bbox_config_from_args(args))
    labels, _ = model.predict(train.features)
    accuracy = 1.0 - error_indicator(train.labels, labels).positive_rate
    written.append(save_model_document(model, args.output, scaler))
    print(f"✓ Trained {args.kind} black box (train accuracy {accuracy:.4f}) -> {args.output}")


def cmd_train_advisor(args: argparse.Namespace, written: List[str]) -> None:
    train_raw = read_dataset(args.train, args.label_column)
    labels, _, scaler = black_box_outputs(train_raw, args.bbox, args.predictions)
    scaler = scaler or fit_standardizer(train_raw)
    train = scaler.transform(train_raw)
    z = error_indicator(train.labels, labels).z
    predicted = labels if args.include_prediction else None
    class_count = train.class_count if args.include_prediction else None
    params = sgbt_params_from_args(args)

    if args.grid:
        features = advisor_features(train.features, predicted, class_count)
        params, results = grid_search_sgbt(features, z, params, n_folds=args.cv_folds, n_jobs=args.n_jobs)
        if args.grid_output:
            written.append(write_frame(results, args.grid_output))
        print(f"✓ Grid search picked {params.to_dict()}")

    weights = RiskWeights(args.weight_model, args.weight_epistemic, args.weight_aleatoric)
    advisor = fit_advisor(train.features, z, params, args.n_members, weights,
                          predicted_labels=predicted, class_count=class_count, n_jobs=args.n_jobs)
    written.append(save_model_document(advisor, args.output, scaler))
    print(f"✓ Trained advisor with {advisor.n_members} members -> {args.output}")


def cmd_score(args: argparse.Namespace, written: List[str]) -> None:
    advisor, scaler = load_advisor(args.advisor)
    data_raw = read_dataset(args.data, args.label_column)
    predicted = None
    if advisor.include_prediction:
        predicted, _, _ = black_box_outputs(data_raw, args.bbox, args.predictions)
    report = score_file(advisor, apply_standardizer(data_raw, scaler), args.output,
                        include_members=args.include_members, predicted_labels=predicted)
    written.append(args.output)
    print(f"✓ Scored {report.n_points} rows -> {args.output}")


def evaluation_inputs(args: argparse.Namespace) -> Dict[str, Any]:
    """Test data, black-box outputs, the report and the baseline scores for the eval commands."""
    data_raw = read_dataset(args.data, args.label_column)
    labels, probabilities, scaler = black_box_outputs(data_raw, args.bbox, args.predictions)
    report = report_from_frame(read_frame(args.report))
    if report.n_points != data_raw.n_samples:
        raise DataError(f"Report has {report.n_points} rows, dataset has {data_raw.n_samples}")

    confidence = None
    if not args.no_mcp and probabilities is not None:
        confidence = mcp_confidence(probabilities)
    trust = None
    if args.train and not args.no_trust:
        train_raw = read_dataset(args.train, args.label_column)
        scaler = scaler or fit_standardizer(train_raw)
        trust_model = fit_trust(scaler.transform(train_raw), args.trust_alpha, args.trust_k)
        trust = trust_scores(trust_model, apply_standardizer(data_raw, scaler).features, labels)
    return {
        'data': data_raw,
        'z': error_indicator(data_raw.labels, labels).z,
        'report': report,
        'confidence': confidence,
        'trust': trust,
    }


def cmd_eval(args: argparse.Namespace, written: List[str]) -> None:
    inputs = evaluation_inputs(args)
    metrics = failure_metrics(inputs['report'], inputs['z'], inputs['confidence'], inputs['trust'])
    written.append(write_json({'failure': metrics}, args.output))
    print(f"✓ Failure-prediction metrics -> {args.output}")


def cmd_ood_eval(args: argparse.Namespace, written: List[str]) -> None:
    inputs = evaluation_inputs(args)
    if inputs['data'].is_ood is None:
        raise MissingColumnError(f"Column '{OOD_COLUMN}' not found in {args.data}", column=OOD_COLUMN)
    metrics = ood_metrics(inputs['report'], inputs['data'].is_ood, inputs['confidence'], inputs['trust'])
    written.append(write_json({'ood': metrics}, args.output))
    print(f"✓ OOD-detection metrics -> {args.output}")


def cmd_abstain_eval(args: argparse.Namespace, written: List[str]) -> None:
    inputs = evaluation_inputs(args)
    metrics, curves = abstention_metrics(inputs['report'], inputs['z'], inputs['confidence'], inputs['trust'],
                                         args.grid_step)
    written.append(write_json({'abstention': metrics}, args.output))
    if args.curves:
        written.append(write_frame(curves, args.curves))
    print(f"✓ Abstention metrics -> {args.output}")


def cmd_sample_retrain(args: argparse.Namespace, written: List[str]) -> None:
    train_raw = read_dataset(args.train, args.label_column)
    test_raw = read_dataset(args.test, args.label_column)
    if args.pool:
        pool_raw = read_dataset(args.pool, args.label_column)
    else:
        if test_raw.is_ood is None:
            raise MissingColumnError(f"Column '{OOD_COLUMN}' not found in {args.test}", column=OOD_COLUMN)
        pool_idx, test_idx = stratified_split_indices(test_raw.is_ood.astype(int),
                                                      SplitSpec(args.pool_fraction, True, args.seed))
        pool_raw, test_raw = test_raw.subset(pool_idx), test_raw.subset(test_idx)

    scaler = fit_standardizer(train_raw)
    train, pool, test = (scaler.transform(d) for d in (train_raw, pool_raw, test_raw))
    frames = []
    for strategy in args.strategy:
        curve = sample_retrain(train, pool, test, strategy, args.k_percent, args.rounds,
                               bbox_config_from_args(args), sgbt_params_from_args(args),
                               n_members=args.n_members, trust_alpha=args.trust_alpha, trust_k=args.trust_k,
                               seed=args.seed, with_replacement=not args.no_replacement, n_jobs=args.n_jobs)
        curve.insert(0, 'strategy', strategy)
        frames.append(curve)
        print(f"✓ {strategy}: final OOD accuracy {curve['value'].iloc[-1]:.4f}")
    written.append(write_frame(pd.concat(frames, ignore_index=True), args.output))


def cmd_grid(args: argparse.Namespace, written: List[str]) -> None:
    bbox, bbox_scaler = load_black_box(args.bbox) if args.bbox else (None, None)
    advisor, advisor_scaler = load_advisor(args.advisor) if args.advisor else (None, None)
    scaler = advisor_scaler or bbox_scaler
    if args.bounds:
        bounds = tuple(args.bounds)
    elif args.data:
        bounds = default_bounds(read_dataset(args.data, args.label_column).features)
    else:
        raise ConfigError("Pass --bounds or --data to size the grid", field='bounds')

    kinds = args.kind or [kind for kind in GRID_KINDS if (bbox if kind == 'bbox_proba' else advisor) is not None]
    if not kinds:
        raise ConfigError("Pass --bbox and/or --advisor", field='kind')
    for kind in kinds:
        grid = emit_grid(kind, bbox, advisor, bounds, args.resolution,
                         bbox_scaler if kind == 'bbox_proba' else scaler)
        written.append(save_grid(grid, os.path.join(args.output_dir, f'{kind}.csv')))
        if args.svg:
            written.append(render_svg(grid, os.path.join(args.output_dir, f'{kind}.svg'), title=kind))
        print(f"✓ {kind} grid ({args.resolution}x{args.resolution}) -> {args.output_dir}")


def cmd_run(args: argparse.Namespace, written: List[str]) -> None:
    config_path = args.config
    if not os.path.exists(config_path) and os.path.exists(get_scenario_yaml_path(config_path)):
        config_path = get_scenario_yaml_path(config_path)
    run_simulation(config_path, args.output_dir, args.repeats)


def cmd_consolidate(args: argparse.Namespace, written: List[str]) -> None:
    consolidated = consolidate_run(args.output_dir)
    print(f"✓ Consolidated {consolidated['repeats']} repeats in {args.output_dir}")


def cmd_fetch_adult(args: argparse.Namespace, written: List[str]) -> None:
    fetch_adult(args.output, args.force)


# ------------------------------------------------------------------------
# Argument Parsing
# ------------------------------------------------------------------------

def _logging_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--verbose', '-v', action='store_true', help='Debug logging')
    parent.add_argument('--quiet', '-q', action='store_true', help='Errors only')
    return parent


def _data_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--label-column', '-l', type=str, default='label', help='Label column name')
    return parent


def _bbox_parent() -> argparse.ArgumentParser:
    defaults = BlackBoxConfig()
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--kind', '-k', choices=['logistic', 'mlp', 'external'], default=defaults.kind)
    parent.add_argument('--epochs', type=int, default=defaults.epochs)
    parent.add_argument('--lr', type=float, default=defaults.lr)
    parent.add_argument('--l2', type=float, default=defaults.l2)
    parent.add_argument('--hidden', type=int, nargs='+', default=list(defaults.hidden))
    parent.add_argument('--batch-size', type=int, default=defaults.batch_size)
    return parent


def _sgbt_parent() -> argparse.ArgumentParser:
    defaults = SgbtParams()
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--n-members', '-m', type=int, default=10, help='Advisor ensemble size')
    parent.add_argument('--n-trees', type=int, default=defaults.n_trees)
    parent.add_argument('--max-depth', type=int, default=defaults.max_depth)
    parent.add_argument('--learning-rate', type=float, default=defaults.learning_rate)
    parent.add_argument('--sample-rate', type=float, default=defaults.sample_rate)
    parent.add_argument('--min-samples-leaf', type=int, default=defaults.min_samples_leaf)
    parent.add_argument('--n-jobs', '-j', type=int, default=1, help='joblib workers')
    return parent


def _trust_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--trust-alpha', type=float, default=0.0625)
    parent.add_argument('--trust-k', type=int, default=10)
    return parent


def _eval_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--data', '-d', type=str, required=True, help='Evaluation CSV')
    parent.add_argument('--report', '-r', type=str, required=True, help='Report CSV from score')
    parent.add_argument('--bbox', '-b', type=str, help='Black-box model document')
    parent.add_argument('--predictions', '-p', type=str, help='External predictions for the evaluation rows')
    parent.add_argument('--train', '-t', type=str, help='Training CSV (enables the Trust Score baseline)')
    parent.add_argument('--no-mcp', action='store_true', help='Skip the confidence baseline')
    parent.add_argument('--no-trust', action='store_true', help='Skip the Trust Score baseline')
    parent.add_argument('--output', '-o', type=str, required=True, help='Metrics JSON')
    return parent


class CliParser(argparse.ArgumentParser):
    """Reports usage errors as ConfigError so they reach the JSON error payload."""

    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    log, data, bbox, sgbt, trust, evaluation = (
        _logging_parent(), _data_parent(), _bbox_parent(), _sgbt_parent(), _trust_parent(), _eval_parent()
    )
    parser = CliParser(description='Audit a black-box classifier with an uncertainty-aware advisor')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('generate', parents=[log], help='Generate a synthetic dataset')
    p.add_argument('--generator', '-g', choices=['circles', 'moons', 'gmm_shift'], default='circles')
    p.add_argument('--n', '-n', type=int, default=2000)
    p.add_argument('--noise-sd', type=float, default=0.08)
    p.add_argument('--train-fraction', type=float, default=0.7)
    p.add_argument('--n-train', type=int, default=1000)
    p.add_argument('--n-test', type=int, default=1000)
    p.add_argument('--gmm-mean-a0', type=float, nargs=2)
    p.add_argument('--gmm-mean-a1', type=float, nargs=2)
    p.add_argument('--gmm-mean-b', type=float, nargs=2)
    p.add_argument('--gmm-scale', type=float, default=GmmShiftParams().scale)
    p.add_argument('--gmm-test-mix', type=float, nargs=3)
    p.add_argument('--gmm-ood-label', type=int, choices=[0, 1])
    p.add_argument('--seed', '-s', type=int, default=0)
    p.add_argument('--output-dir', '-o', type=str, required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser('train-bbox', parents=[log, data, bbox], help='Train the black-box classifier')
    p.add_argument('--train', '-t', type=str, required=True)
    p.add_argument('--train-predictions', type=str, help='Predictions file for --kind external')
    p.add_argument('--test-predictions', type=str, help='Predictions file for --kind external')
    p.add_argument('--seed', '-s', type=int, default=0)
    p.add_argument('--output', '-o', type=str, required=True)
    p.set_defaults(func=cmd_train_bbox)

    p = sub.add_parser('train-advisor', parents=[log, data, sgbt], help='Train the error-predicting advisor')
    p.add_argument('--train', '-t', type=str, required=True)
    p.add_argument('--bbox', '-b', type=str, help='Black-box model document')
    p.add_argument('--predictions', '-p', type=str, help='External predictions for the training rows')
    p.add_argument('--include-prediction', action='store_true', help='Add the black-box label to the features')
    p.add_argument('--grid', action='store_true', help='Pick SGBT settings by cross-validated grid search')
    p.add_argument('--cv-folds', type=int, default=5)
    p.add_argument('--grid-output', type=str, help='CSV with one row per grid cell')
    p.add_argument('--weight-model', type=float, default=1.0)
    p.add_argument('--weight-epistemic', type=float, default=1.0)
    p.add_argument('--weight-aleatoric', type=float, default=1.0)
    p.add_argument('--seed', '-s', type=int, default=0)
    p.add_argument('--output', '-o', type=str, required=True)
    p.set_defaults(func=cmd_train_advisor)

    p = sub.add_parser('score', parents=[log, data], help='Write per-point uncertainty reports')
    p.add_argument('--advisor', '-a', type=str, required=True)
    p.add_argument('--data', '-d', type=str, required=True)
    p.add_argument('--bbox', '-b', type=str, help='Needed by advisors trained with --include-prediction')
    p.add_argument('--predictions', '-p', type=str)
    p.add_argument('--include-members', action='store_true', help='Add member_<m> probability columns')
    p.add_argument('--output', '-o', type=str, required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser('eval', parents=[log, data, trust, evaluation], help='Failure-prediction AUROC/AUPR')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('ood-eval', parents=[log, data, trust, evaluation], help='OOD-detection AUROC')
    p.set_defaults(func=cmd_ood_eval)

    p = sub.add_parser('abstain-eval', parents=[log, data, trust, evaluation], help='PRR and AR curves')
    p.add_argument('--grid-step', type=float, default=0.01)
    p.add_argument('--curves', type=str, help='Long-format AR curve CSV')
    p.set_defaults(func=cmd_abstain_eval)

    p = sub.add_parser('sample-retrain', parents=[log, data, bbox, sgbt, trust], help='Sample-and-retrain curves')
    p.add_argument('--train', '-t', type=str, required=True)
    p.add_argument('--test', type=str, required=True, help='Test CSV with an is_ood column')
    p.add_argument('--pool', type=str, help='Pool CSV (default: carve one out of --test)')
    p.add_argument('--pool-fraction', type=float, default=0.5)
    p.add_argument('--strategy', nargs='+', choices=list(STRATEGIES), default=list(STRATEGIES))
    p.add_argument('--k-percent', type=float, default=5.0)
    p.add_argument('--rounds', type=int, default=8)
    p.add_argument('--no-replacement', action='store_true', help='Moved points leave the pool')
    p.add_argument('--seed', '-s', type=int, default=0)
    p.add_argument('--output', '-o', type=str, required=True)
    p.set_defaults(func=cmd_sample_retrain)

    p = sub.add_parser('grid', parents=[log, data], help='Evaluate models over a 2-D lattice')
    p.add_argument('--kind', nargs='+', choices=list(GRID_KINDS),
                   help='Default: every kind the given models support')
    p.add_argument('--bbox', '-b', type=str)
    p.add_argument('--advisor', '-a', type=str)
    p.add_argument('--bounds', type=float, nargs=4, metavar=('XMIN', 'XMAX', 'YMIN', 'YMAX'))
    p.add_argument('--data', '-d', type=str, help='CSV whose padded bounding box sizes the grid')
    p.add_argument('--resolution', type=int, default=50)
    p.add_argument('--svg', action='store_true', help='Also render SVG heatmaps')
    p.add_argument('--output-dir', '-o', type=str, required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser('run', parents=[log], help='Run a scenario end to end')
    p.add_argument('--config', '-c', type=str, required=True, help='Scenario YAML, manifest.json, or a name from results/scenarios')
    p.add_argument('--repeats', '-r', type=int, help='Overrides run.repeats')
    p.add_argument('--output-dir', '-o', type=str)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser('consolidate', parents=[log], help='Aggregate per-repeat metrics')
    p.add_argument('--output-dir', '-o', type=str, required=True)
    p.set_defaults(func=cmd_consolidate)

    p = sub.add_parser('fetch-adult', parents=[log], help='Download the Census Income dataset')
    p.add_argument('--output', '-o', type=str)
    p.add_argument('--force', '-f', action='store_true')
    p.set_defaults(func=cmd_fetch_adult)

    return parser


# ------------------------------------------------------------------------
# Main
# ------------------------------------------------------------------------

def error_payload(error: BaseException) -> Dict[str, Any]:
    exit_code = error.exit_code if isinstance(error, RiskAdvisorError) else 1
    return {'error': type(error).__name__, 'message': str(error), 'exit_code': exit_code}


def _remove(paths: List[str]) -> None:
    for path in paths:
        if os.path.isfile(path):
            os.remove(path)


def _fail(error: BaseException) -> int:
    payload = error_payload(error)
    logging.debug("Command failed", exc_info=True)
    print(json.dumps(payload), file=sys.stderr)
    return payload['exit_code']


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as e:
        return _fail(e)
    setup_logging(args.verbose, args.quiet)

    written: List[str] = []
    try:
        args.func(args, written)
    except Exception as e:
        _remove(written)
        return _fail(e)
    return 0


if __name__ == "__main__":
    sys.exit(main())
