import logging
from pathlib import Path

import click
import numpy as np

from .config import METHODS, STAGE_ANCHORS, derive_seed, resolve_config
from .data import (
    average_pairwise_distance,
    load_dataset,
    read_matrix_csv,
    save_to_json,
    standardize,
    write_matrix_csv,
)
from .errors import DataError
from .evaluation import (
    build_anchors,
    cross_validate,
    fit_transform,
    holdout_evaluate,
    load_report,
    representation_kind,
    write_report,
)
from .geometry import (
    equidistance_samples,
    principal_directions,
    pullback_metric_learned,
    pullback_metric_P,
    pullback_metric_Q,
)
from .learner import generate_triplets
from .similarity import build_similarity, embed_proximity, embed_similarity_matrix, embed_simplex
from .stats import P_THRESHOLD, score_table

logger = logging.getLogger(__name__)

POSITIVE = click.FloatRange(min=0, min_open=True)
FRACTION = click.FloatRange(min=0, max=1, min_open=True)
OPEN_UNIT = click.FloatRange(min=0, max=1, min_open=True, max_open=True)


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug output.")
def cli(verbose):
    """Similarity-based Fisher information metric learning."""
    level = logging.WARNING if not verbose else (logging.INFO if verbose == 1 else logging.DEBUG)
    logging.getLogger().setLevel(level)


# options shared by the commands that read a dataset
def data_options(fn):
    fn = click.option("--label-column", default=None, help="Header name of the label column (default: last).")(fn)
    fn = click.option("--seed", type=int, default=None, help="Global seed; every random stage derives from it.")(fn)
    fn = click.option("--output-dir", "-o", type=click.Path(file_okay=False), default=None)(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                      help="JSON run configuration; flags override it.")(fn)
    return fn


def similarity_options(fn):
    fn = click.option("--family", type=click.Choice(["gaussian", "angular"]), default=None,
                      help="Similarity family (default: gaussian).")(fn)
    fn = click.option("--sigma-multiplier", type=POSITIVE, default=None,
                      help="Shared Gaussian width as a multiple of the mean pairwise distance.")(fn)
    fn = click.option("--entropy-target", type=OPEN_UNIT, default=None,
                      help="Per-anchor widths matching entropy log(n * c).")(fn)
    return fn


def anchor_options(fn):
    fn = click.option("--anchor-fraction", type=FRACTION, default=None,
                      help="Random fraction of instances as anchors.")(fn)
    fn = click.option("--clusters", type=click.IntRange(min=2), default=None,
                      help="k-means cluster centers as anchors.")(fn)
    return fn


def _embedding_overrides(family, sigma_multiplier, entropy_target) -> dict:
    if sigma_multiplier is not None and entropy_target is not None:
        raise click.UsageError("--sigma-multiplier and --entropy-target are mutually exclusive")
    if family == "angular" and (sigma_multiplier is not None or entropy_target is not None):
        raise click.UsageError("width options only apply to the gaussian family")
    calibration, width = None, None
    if sigma_multiplier is not None:
        calibration, width = "shared", sigma_multiplier
    elif entropy_target is not None:
        calibration, width = "entropy", entropy_target
    return {"embedding.family": family, "embedding.calibration": calibration, "embedding.width": width}


def _anchor_overrides(anchor_fraction, clusters) -> dict:
    if anchor_fraction is not None and clusters is not None:
        raise click.UsageError("--anchor-fraction and --clusters are mutually exclusive")
    mode = "random" if anchor_fraction is not None else ("kmeans" if clusters is not None else None)
    return {"anchors.mode": mode, "anchors.fraction": anchor_fraction, "anchors.n_clusters": clusters}


def _output_dir(cfg) -> Path:
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_written(path):
    click.echo(f"✓ Wrote {path}")


def _require_data(cfg):
    if not cfg.data:
        raise click.UsageError("Missing option '--data' (or 'data' in --config).")


def _configured_map(cfg, dataset):
    """Anchors and similarity of the configured embedding, fitted on ``dataset``."""
    anchors = build_anchors(dataset.instances, cfg.anchors, derive_seed(cfg.seed, STAGE_ANCHORS))
    sim = build_similarity(cfg.embedding.family, dataset.instances, anchors, cfg.embedding.to_calibration(),
                           average_pairwise_distance(dataset))
    return anchors, sim


@cli.command("map")
@click.option("--data", default=None, type=click.Path(dir_okay=False))
@anchor_options
@similarity_options
@data_options
def map_command(data, anchor_fraction, clusters, family, sigma_multiplier, entropy_target,
                label_column, seed, output_dir, config_path):
    """Embed a dataset on the simplex (masses.csv) and in proximity space (proximity.csv)."""
    cfg = resolve_config(config_path, data=data, label_column=label_column, seed=seed, output_dir=output_dir,
                         **_anchor_overrides(anchor_fraction, clusters),
                         **_embedding_overrides(family, sigma_multiplier, entropy_target))
    _require_data(cfg)

    dataset, _ = standardize(load_dataset(cfg.data, cfg.label_column))
    anchors, sim = _configured_map(cfg, dataset)
    out = _output_dir(cfg)
    header = [f"z{k + 1}" for k in range(anchors.m)]
    _echo_written(write_matrix_csv(embed_simplex(dataset.instances, anchors, sim), out / "masses.csv", header))
    _echo_written(write_matrix_csv(embed_proximity(dataset.instances, anchors, sim), out / "proximity.csv", header))
    metadata = {**dataset.metadata(), "anchors": anchors.source, "m": anchors.m, "similarity": sim.describe()}
    if sim.sigma is not None:
        metadata["sigma"] = sim.sigma
    _echo_written(save_to_json(metadata, out / "map_metadata.json"))
    _echo_written(save_to_json(cfg.to_dict(), out / "resolved_config.json"))


def _precomputed_representation(cfg, n: int) -> np.ndarray:
    if cfg.masses and cfg.similarities:
        raise click.UsageError("--masses and --similarities are mutually exclusive")
    path = cfg.masses or cfg.similarities
    matrix = read_matrix_csv(path)
    if matrix.shape[0] != n:
        raise DataError(f"{path} has {matrix.shape[0]} rows for {n} instances")
    if cfg.similarities and representation_kind(cfg.method) == "simplex":
        return embed_similarity_matrix(matrix)
    return matrix


@cli.command("train")
@click.option("--data", default=None, type=click.Path(dir_okay=False))
@click.option("--masses", type=click.Path(dir_okay=False), default=None,
              help="Precomputed embedding (one row per instance) instead of mapping --data.")
@click.option("--similarities", type=click.Path(dir_okay=False), default=None,
              help="Precomputed non-negative similarities to the anchors; rows are normalized "
                   "onto the simplex unless the method works on proximities.")
@click.option("--method", type=click.Choice(METHODS), default=None)
@click.option("--gamma", type=POSITIVE, default=None, help="Margin.")
@click.option("--alpha", type=click.FloatRange(min=0), default=None, help="Weight of the target-pair term.")
@click.option("--k-latent", type=click.IntRange(min=1), default=None, help="Rows of L (default ceil(0.1 m)).")
@click.option("--max-iters", type=click.IntRange(min=0), default=None)
@anchor_options
@similarity_options
@data_options
def train_command(data, masses, similarities, method, gamma, alpha, k_latent, max_iters, anchor_fraction,
                  clusters, family, sigma_multiplier, entropy_target, label_column, seed, output_dir,
                  config_path):
    """Learn the transform L on a whole dataset and write it as L.csv."""
    if (masses or similarities) and (sigma_multiplier is not None or entropy_target is not None):
        raise click.UsageError("width options have no effect with a precomputed embedding")
    cfg = resolve_config(config_path, data=data, masses=masses, similarities=similarities, method=method,
                         label_column=label_column, seed=seed, output_dir=output_dir,
                         **{"learner.gamma": gamma, "learner.alpha": alpha, "learner.k_latent": k_latent,
                            "learner.max_iters": max_iters},
                         **_anchor_overrides(anchor_fraction, clusters),
                         **_embedding_overrides(family, sigma_multiplier, entropy_target))
    _require_data(cfg)
    dataset, _ = standardize(load_dataset(cfg.data, cfg.label_column))

    if cfg.masses or cfg.similarities:
        representation = _precomputed_representation(cfg, dataset.n)
    else:
        anchors, sim = _configured_map(cfg, dataset)
        embed = embed_proximity if representation_kind(cfg.method) == "proximity" else embed_simplex
        representation = embed(dataset.instances, anchors, sim)

    triplets = generate_triplets(dataset, cfg.learner.k1, cfg.learner.k2)
    L, report = fit_transform(cfg.method, representation, triplets, cfg.learner)
    click.echo(f"{cfg.method}: objective {report.objective_trace[0]:.6g} -> {report.best_objective:.6g} "
               f"after {report.iterations} iterations ({report.stop_reason})")

    out = _output_dir(cfg)
    _echo_written(write_matrix_csv(L, out / "L.csv"))
    _echo_written(save_to_json(report.to_dict(), out / "train_report.json"))
    _echo_written(save_to_json(cfg.to_dict(), out / "resolved_config.json"))


@cli.command("eval")
@click.option("--data", default=None, type=click.Path(dir_okay=False), help="Training split.")
@click.option("--test", default=None, type=click.Path(dir_okay=False), help="Test split.")
@click.option("--method", type=click.Choice(METHODS), default=None)
@click.option("--large-data", is_flag=True, default=None, help="20% random anchors and k_latent = ceil(0.05 m).")
@click.option("--jobs", type=int, default=None)
@data_options
def eval_command(data, test, method, large_data, jobs, label_column, seed, output_dir, config_path):
    """Select hyperparameters on a training split and report 1-NN accuracy on a test split."""
    cfg = resolve_config(config_path, data=data, test=test, method=method, large_data=large_data or None,
                         label_column=label_column, seed=seed, output_dir=output_dir, **{"cv.jobs": jobs})
    _require_data(cfg)
    if not cfg.test:
        raise click.UsageError("Missing option '--test' (or 'test' in --config).")
    train_data = load_dataset(cfg.data, cfg.label_column)
    test_data = load_dataset(cfg.test, cfg.label_column)
    report = holdout_evaluate(train_data, test_data, cfg.method, cfg.seed, cfg)
    click.echo(f"{report.method}: test accuracy {report.accuracy:.4f} ({report.n_test} instances)")
    out = _output_dir(cfg)
    _echo_written(save_to_json(report, out / "holdout.json"))
    _echo_written(save_to_json(cfg.to_dict(), out / "resolved_config.json"))


@cli.command("cv")
@click.option("--data", default=None, type=click.Path(dir_okay=False))
@click.option("--method", type=click.Choice(METHODS), default=None)
@click.option("--repeats", type=click.IntRange(min=1), default=None)
@click.option("--folds", type=click.IntRange(min=2), default=None)
@click.option("--jobs", type=int, default=None, help="Concurrent fold workers (default 1).")
@click.option("--large-data", is_flag=True, default=None, help="20% random anchors and k_latent = ceil(0.05 m).")
@click.option("--format", "report_format", type=click.Choice(["json", "csv"]), default=None)
@data_options
def cv_command(data, method, repeats, folds, jobs, large_data, report_format, label_column, seed,
               output_dir, config_path):
    """Repeated K-fold cross-validation with inner grid search."""
    cfg = resolve_config(config_path, data=data, method=method, large_data=large_data or None,
                         report_format=report_format, label_column=label_column, seed=seed,
                         output_dir=output_dir,
                         **{"cv.repeats": repeats, "cv.n_folds": folds, "cv.jobs": jobs})
    _require_data(cfg)
    dataset = load_dataset(cfg.data, cfg.label_column)
    report = cross_validate(dataset, cfg.method, cfg.cv.repeats, cfg.cv.n_folds, cfg.seed, cfg)
    click.echo(f"{report.method}: {100 * report.mean:.2f} +/- {100 * report.stddev:.2f} "
               f"over {len(report.accuracies)} folds")
    out = _output_dir(cfg)
    _echo_written(write_report(report, out, cfg.report_format))
    _echo_written(save_to_json(cfg.to_dict(), out / "resolved_config.json"))


@cli.command("score")
@click.argument("reports", nargs=-1, type=click.Path(dir_okay=False))
@click.option("--p-threshold", type=OPEN_UNIT, default=P_THRESHOLD, show_default=True)
@click.option("--output", type=click.Path(dir_okay=False), default=None, help="Also write the table as JSON.")
def score_command(reports, p_threshold, output):
    """Paired t-test points between two or more CV reports."""
    if len(reports) < 2:
        raise click.UsageError("score needs at least two report files")
    accuracies = {}
    for path in reports:
        name, values = load_report(path)
        key = name if name not in accuracies else f"{name} ({path})"
        accuracies[key] = values
    lengths = {len(v) for v in accuracies.values()}
    if len(lengths) != 1:
        raise DataError(f"reports have different fold counts: {sorted(lengths)}")

    table = score_table(accuracies, p_threshold)
    for pair, result in table.pairs.items():
        click.echo(f"{pair}: t={result.t_statistic:.4f} p={result.p_value:.4g} "
                   f"points {result.points_a:g}/{result.points_b:g}")
    for name, total in table.totals.items():
        click.echo(f"total {name}: {total:g}")
    if output:
        _echo_written(save_to_json(table.to_dict(), output))


@cli.command("pullback")
@click.option("--data", default=None, type=click.Path(dir_okay=False))
@click.option("--grid", type=click.IntRange(min=2), default=None, help="Evaluation points per axis (default 15).")
@click.option("--radius", type=POSITIVE, default=None, help="Equi-distance curve radius (default 0.1).")
@click.option("--curve-points", type=click.IntRange(min=1), default=None, help="Points per curve (default 32).")
@click.option("--standardize/--raw", "do_standardize", default=None, help="Standardize features (default: raw).")
@click.option("--transform", type=click.Path(dir_okay=False), default=None,
              help="A learned L.csv; adds pullback_L.csv with the metric of x -> L f(x).")
@anchor_options
@similarity_options
@data_options
def pullback_command(data, grid, radius, curve_points, do_standardize, transform, anchor_fraction, clusters,
                     family, sigma_multiplier, entropy_target, label_column, seed, output_dir, config_path):
    """Local metrics of the proximity and simplex maps on a grid over a 2-D dataset."""
    cfg = resolve_config(config_path, data=data, label_column=label_column, seed=seed, output_dir=output_dir,
                         **{"pullback.grid": grid, "pullback.radius": radius,
                            "pullback.curve_points": curve_points, "pullback.standardize": do_standardize,
                            "pullback.transform": transform},
                         **_anchor_overrides(anchor_fraction, clusters),
                         **_embedding_overrides(family, sigma_multiplier, entropy_target))
    _require_data(cfg)
    settings = cfg.pullback
    dataset = load_dataset(cfg.data, cfg.label_column)
    if dataset.d != 2:
        raise DataError(f"pullback needs 2-D data, got {dataset.d} features")
    if settings.standardize:
        dataset, _ = standardize(dataset)
    anchors, sim = _configured_map(cfg, dataset)

    metrics = [("pullback_Q.csv", pullback_metric_Q), ("pullback_P.csv", pullback_metric_P)]
    if settings.transform:
        L = read_matrix_csv(settings.transform)
        if L.shape[1] != anchors.m:
            raise DataError(f"{settings.transform} has {L.shape[1]} columns for {anchors.m} anchors")
        metrics.append(("pullback_L.csv", lambda x, a, s: pullback_metric_learned(x, a, s, L)))

    low, high = dataset.instances.min(axis=0), dataset.instances.max(axis=0)
    pad = 0.1 * np.maximum(high - low, 1e-12)
    xs = np.linspace(low[0] - pad[0], high[0] + pad[0], settings.grid)
    ys = np.linspace(low[1] - pad[1], high[1] + pad[1], settings.grid)
    points = [np.array([x, y]) for y in ys for x in xs]

    header = ["x1", "x2", "g11", "g12", "g21", "g22", "u1_x", "u1_y", "u2_x", "u2_y"]
    header += [f"c{i}_{axis}" for i in range(settings.curve_points) for axis in ("x", "y")]
    header += ["unbounded"]

    out = _output_dir(cfg)
    for name, metric in metrics:
        rows = []
        for x in points:
            G = metric(x, anchors, sim).entries
            U = principal_directions(G, 2)
            curve = equidistance_samples(x, G, settings.radius, settings.curve_points)
            rows.append(np.concatenate([
                x, G.reshape(-1), U[:, 0], U[:, 1], curve.points.reshape(-1),
                [float(bool(curve.unbounded_directions))],
            ]))
        _echo_written(write_matrix_csv(np.array(rows), out / name, header))
    _echo_written(save_to_json({"anchors": anchors.source, "m": anchors.m, "similarity": sim.describe()},
                               out / "pullback_metadata.json"))
    _echo_written(save_to_json(cfg.to_dict(), out / "resolved_config.json"))
