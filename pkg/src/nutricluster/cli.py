"""Command-line pipeline: ingest -> similarity -> cluster -> evaluate -> train -> report.

Every subcommand writes its outputs next to a `<name>.manifest.json`
sidecar (see the manifest module), exits 0 on success, exits 1 with a
single-line JSON error object on stderr for validation problems, and
leaves usage errors (unknown flags or subcommands) to argparse's
exit code 2. Outputs are deterministic given identical inputs, flags,
and seeds.

Nutrient selection uses the letter codes E, C, F, P (or full names),
so run labels read like `C+F+V`. Visual similarity is part of every
clustering run by default; `--no-visual` is a diagnostics escape hatch
for nutrient-only matrices.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .clustering import APConfig, Hierarchy, cluster_categories
from .errors import ConfigurationError, NutriClusterError, UndefinedMetricError, ValidationError
from .evaluation import (
    MAE_SCOPES,
    PredictionRow,
    accuracy,
    cluster_variances,
    distance_report,
    nutrient_mae,
    parse_predictions_csv,
    visual_distance_matrix,
)
from .manifest import build_manifest, write_json_output, write_output
from .multitask import (
    Checkpoint,
    MultiTaskModel,
    TrainingConfig,
    samples_from_features,
    split_indices,
    standardize_apply,
    standardize_fit,
    train,
)
from .nutrient_data import (
    NUTRIENT_NAMES,
    CategoryTable,
    aggregate_categories,
    inter_class_std,
    parse_counts_csv,
    parse_nutrient_codes,
    parse_nutrient_csv,
)
from .report import build_comparison, load_metrics, render_figures, render_report_csv
from .similarity import (
    FeatureStats,
    SimilarityConfig,
    combine_similarity,
    fit_feature_gaussians,
    nutrient_similarity_matrix,
    parse_features_csv,
    visual_similarity_matrix,
)
from .synthkit import (
    PlantedConfig,
    generate_confusion_log,
    generate_planted_dataset,
    render_predictions_csv,
)


def _load_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from None


def _load_table(path: str, counts_path: str | None) -> CategoryTable:
    """Accept either an ingested table JSON or a raw items CSV."""
    if str(path).endswith(".json"):
        if counts_path is not None:
            raise ConfigurationError(
                "--counts only applies to CSV tables; image counts are embedded in a table JSON"
            )
        return CategoryTable.from_json_obj(_load_json(path))
    items = parse_nutrient_csv(path)
    counts = parse_counts_csv(counts_path) if counts_path else None
    return aggregate_categories(items, counts)


def _load_hierarchy(path: str) -> Hierarchy:
    return Hierarchy.from_json_obj(_load_json(path))


def _table_inputs(args) -> list[str]:
    inputs = [args.table]
    if getattr(args, "counts", None):
        inputs.append(args.counts)
    return inputs


def _flags(args) -> dict:
    return {key: value for key, value in vars(args).items() if key != "func"}


def cmd_ingest(args) -> int:
    table = _load_table(args.items, args.counts)
    manifest = build_manifest("ingest", _flags(args),
                              [args.items, *( [args.counts] if args.counts else [] )])
    write_json_output(args.out, table.to_json_obj(), manifest)
    return 0


def _feature_stats(args) -> FeatureStats | None:
    if args.features and args.feature_stats:
        raise ConfigurationError("pass either --features or --feature-stats, not both")
    if args.features:
        return fit_feature_gaussians(parse_features_csv(args.features))
    if args.feature_stats:
        return FeatureStats.from_json_obj(_load_json(args.feature_stats))
    return None


def cmd_similarity(args) -> int:
    nutrients = parse_nutrient_codes(args.nutrients) if args.nutrients else ()
    stats = _feature_stats(args)
    include_visual = not args.no_visual
    if include_visual and stats is None:
        if not nutrients:
            raise ConfigurationError(
                "nothing to compute: pass --features/--feature-stats, --nutrients, or both"
            )
        raise ConfigurationError(
            "visual similarity requires --features or --feature-stats; "
            "pass --no-visual for a nutrient-only matrix"
        )
    if not include_visual and not nutrients:
        raise ConfigurationError("--no-visual requires --nutrients")

    nutrient_matrix = None
    if nutrients:
        if not args.table:
            raise ConfigurationError("--nutrients requires --table")
        weights = None
        if args.weights:
            weights = tuple(float(w) for w in args.weights.split(","))
        config = SimilarityConfig(nutrients, weights=weights,
                                  allow_energy_mix=args.allow_energy_mix)
        table = _load_table(args.table, args.counts)
        nutrient_matrix = nutrient_similarity_matrix(table, inter_class_std(table), config)

    visual_matrix = visual_similarity_matrix(stats) if include_visual and stats else None
    if nutrient_matrix is not None and visual_matrix is not None:
        matrix = combine_similarity(nutrient_matrix, visual_matrix)
    else:
        matrix = nutrient_matrix if nutrient_matrix is not None else visual_matrix

    inputs = []
    if nutrients:
        inputs.extend(_table_inputs(args))
    if args.features:
        inputs.append(args.features)
    if args.feature_stats:
        inputs.append(args.feature_stats)
    manifest = build_manifest("similarity", _flags(args), inputs)
    write_json_output(args.out, matrix.to_json_obj(), manifest)
    return 0


def cmd_cluster(args) -> int:
    from .similarity import SimilarityMatrix

    matrix = SimilarityMatrix.from_json_obj(_load_json(args.similarity))
    if args.preference == "median":
        preference = "median"
    else:
        try:
            preference = float(args.preference)
        except ValueError:
            raise ConfigurationError(
                f"--preference must be 'median' or a number, got {args.preference!r}"
            ) from None
    config = APConfig(
        preference=preference,
        damping=args.damping,
        max_iterations=args.max_iterations,
        convergence_window=args.convergence_window,
        seed=args.seed,
        tie_break_noise=args.tie_break_noise,
    )
    hierarchy = cluster_categories(matrix, config)
    manifest = build_manifest("cluster", _flags(args), [args.similarity], seed=args.seed)
    write_json_output(args.out, hierarchy.to_json_obj(), manifest)
    return 0


def _mae_block(log, table, nutrients, scopes, strict: bool) -> dict:
    """Per-nutrient MAE; in lenient mode an undefined mistakes_only is null."""
    block: dict = {}
    for nutrient in nutrients:
        block[nutrient] = {}
        for scope in scopes:
            try:
                block[nutrient][scope] = nutrient_mae(log, table, nutrient, scope=scope)
            except UndefinedMetricError:
                if strict:
                    raise
                block[nutrient][scope] = None
    return block


def cmd_eval_clusters(args) -> int:
    hierarchy = _load_hierarchy(args.hierarchy)
    table = _load_table(args.table, args.counts)
    nutrients = parse_nutrient_codes(args.nutrients) if args.nutrients else NUTRIENT_NAMES
    conventions = (
        ("weighted", "literal") if args.variance_convention == "both"
        else (args.variance_convention,)
    )
    variances = {
        convention: cluster_variances(hierarchy, table, nutrients, convention).to_json_obj()["nutrients"]
        for convention in conventions
    }

    distances = None
    if args.visual:
        from .similarity import SimilarityMatrix

        visual = SimilarityMatrix.from_json_obj(_load_json(args.visual))
        result = distance_report(hierarchy, visual_distance_matrix(visual))
        distances = {"intra": result.intra, "inter": result.inter, "ratio": result.ratio}

    acc = None
    mae = None
    if args.log:
        log = parse_predictions_csv(args.log)
        acc = accuracy(log)
        mae = _mae_block(log, table, nutrients, MAE_SCOPES, strict=False)

    obj = {
        "accuracy": acc,
        "mae": mae,
        "variances": variances,
        "distances": distances,
        "conventions": {
            "variance": list(conventions),
            "distance": "one_minus_visual_similarity",
            "mae_scopes": list(MAE_SCOPES),
            "relative_change_sign": "negative_is_improvement",
        },
        "table_digest": table.digest(),
    }
    inputs = [args.hierarchy, *_table_inputs(args)]
    if args.visual:
        inputs.append(args.visual)
    if args.log:
        inputs.append(args.log)
    manifest = build_manifest("eval-clusters", _flags(args), inputs)
    write_json_output(args.out, obj, manifest)
    return 0


def cmd_mae(args) -> int:
    table = _load_table(args.table, args.counts)
    log = parse_predictions_csv(args.log)
    nutrients = parse_nutrient_codes(args.nutrients) if args.nutrients else NUTRIENT_NAMES
    scopes = MAE_SCOPES if args.scope == "both" else (args.scope,)
    obj = {
        "accuracy": accuracy(log),
        "mae": _mae_block(log, table, nutrients, scopes, strict=args.scope != "both"),
        "scopes": list(scopes),
        "table_digest": table.digest(),
    }
    manifest = build_manifest("mae", _flags(args), [args.log, *_table_inputs(args)])
    write_json_output(args.out, obj, manifest)
    return 0


def cmd_train_toy(args) -> int:
    rows = parse_features_csv(args.features)
    hierarchy = _load_hierarchy(args.hierarchy)
    X, y_cat, y_clu, categories = samples_from_features(rows, hierarchy)
    train_idx, test_idx = split_indices(len(X), args.test_fraction, args.seed)

    feature_mean = feature_std = None
    if not args.raw_features:
        feature_mean, feature_std = standardize_fit(X[train_idx])
        X = standardize_apply(X, feature_mean, feature_std)

    config = TrainingConfig(
        lambda_category=args.lambda1,
        lambda_cluster=args.lambda2,
        hidden_dim=args.hidden_dim,
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        decay_factor=args.decay_factor,
        decay_interval=args.decay_interval,
        seed=args.seed,
        activation=args.activation,
    )
    model = MultiTaskModel.init(
        X.shape[1], config.hidden_dim, len(categories), len(hierarchy.clusters),
        seed=config.seed, activation=config.activation,
    )
    result = train(model, X[train_idx], y_cat[train_idx], y_clu[train_idx], config)

    predictions = []
    if len(test_idx):
        cat_pred, _ = result.model.predict(X[test_idx])
        predictions = [
            PredictionRow(f"row{int(idx):06d}", categories[y_cat[idx]], categories[int(pred)])
            for idx, pred in zip(test_idx, cat_pred)
        ]

    checkpoint = Checkpoint(
        model=result.model,
        config=config,
        categories=categories,
        feature_mean=feature_mean,
        feature_std=feature_std,
    )
    out_dir = Path(args.out)
    manifest = build_manifest("train-toy", _flags(args),
                              [args.features, args.hierarchy], seed=args.seed)
    write_json_output(out_dir / "checkpoint.json", checkpoint.to_json_obj(), manifest)
    write_output(out_dir / "predictions.csv", render_predictions_csv(predictions), manifest)
    return 0


def cmd_synth_planted(args) -> int:
    config = PlantedConfig(
        groups=args.groups,
        per_group=args.per_group,
        dim=args.dim,
        separation=args.separation,
        spread=args.spread,
        sample_noise=args.sample_noise,
        images_per_category=args.images_per_category,
        nutrient_jitter=args.nutrient_jitter,
        nutrient_levels=args.nutrient_levels,
        seed=args.seed,
    )
    data = generate_planted_dataset(config)
    out_dir = Path(args.out)
    manifest = build_manifest("synth planted", _flags(args), [], seed=args.seed)
    write_output(out_dir / "items.csv", data.nutrient_csv, manifest)
    write_output(out_dir / "counts.csv", data.counts_csv, manifest)
    write_output(out_dir / "features.csv", data.features_csv, manifest)
    write_json_output(out_dir / "ground_truth.json", data.ground_truth_json_obj(), manifest)
    return 0


def cmd_synth_confusion(args) -> int:
    table = _load_table(args.table, args.counts)
    hierarchy = _load_hierarchy(args.hierarchy)
    log = generate_confusion_log(table, hierarchy, args.error_rate, args.mode, seed=args.seed)
    manifest = build_manifest("synth confusion", _flags(args),
                              [*_table_inputs(args), args.hierarchy], seed=args.seed)
    write_output(args.out, render_predictions_csv(log), manifest)
    return 0


def cmd_report(args) -> int:
    baseline = load_metrics(args.baseline)
    candidates = [load_metrics(path) for path in args.candidate]
    nutrients = parse_nutrient_codes(args.nutrients) if args.nutrients else NUTRIENT_NAMES
    comparison = build_comparison(baseline, candidates, nutrients, scope=args.scope)
    out_dir = Path(args.out)
    manifest = build_manifest("report", _flags(args), [args.baseline, *args.candidate])
    figures = render_figures(comparison)
    comparison["figures"] = sorted(figures)
    write_json_output(out_dir / "report.json", comparison, manifest)
    write_output(out_dir / "report.csv", render_report_csv(comparison), manifest)
    for name, png in sorted(figures.items()):
        write_output(out_dir / name, png, manifest)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nutricluster",
        description="Nutrient-aware food category clustering and evaluation pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ingest", help="aggregate a food-item CSV into a category table JSON")
    p.add_argument("--items", required=True, help="food item CSV")
    p.add_argument("--counts", help="per-category image counts CSV")
    p.add_argument("--out", required=True, help="output table JSON")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("similarity", help="build a similarity matrix (nutrient, visual, or combined)")
    p.add_argument("--table", help="category table JSON or items CSV (required with --nutrients)")
    p.add_argument("--counts", help="counts CSV when --table is a CSV")
    p.add_argument("--features", help="per-image features CSV")
    p.add_argument("--feature-stats", help="precomputed feature Gaussian stats JSON")
    p.add_argument("--nutrients", help="nutrient codes, e.g. 'C+F' or 'energy'")
    p.add_argument("--weights", help="comma-separated nutrient weights")
    p.add_argument("--allow-energy-mix", action="store_true",
                   help="permit combining energy with other nutrients")
    p.add_argument("--no-visual", action="store_true",
                   help="diagnostics only: emit a nutrient-only matrix")
    p.add_argument("--out", required=True, help="output similarity JSON")
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("cluster", help="affinity propagation over a similarity matrix")
    p.add_argument("--similarity", required=True, help="similarity matrix JSON")
    p.add_argument("--preference", default="median", help="'median' or a number")
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--convergence-window", type=int, default=50)
    p.add_argument("--tie-break-noise", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output hierarchy JSON")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval-clusters", help="variance decomposition and distance metrics for a hierarchy")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--table", required=True, help="category table JSON or items CSV")
    p.add_argument("--counts", help="counts CSV when --table is a CSV")
    p.add_argument("--visual", help="visual similarity JSON for the distance report")
    p.add_argument("--log", help="optional predictions CSV for accuracy and MAE")
    p.add_argument("--nutrients", help="nutrient codes (default: all four)")
    p.add_argument("--variance-convention", choices=["weighted", "literal", "both"],
                   default="weighted")
    p.add_argument("--out", required=True, help="output report JSON")
    p.set_defaults(func=cmd_eval_clusters)

    p = sub.add_parser("mae", help="accuracy and nutrient MAE of a prediction log")
    p.add_argument("--log", required=True, help="predictions CSV")
    p.add_argument("--table", required=True, help="category table JSON or items CSV")
    p.add_argument("--counts", help="counts CSV when --table is a CSV")
    p.add_argument("--nutrients", help="nutrient codes (default: all four)")
    p.add_argument("--scope", choices=["all", "mistakes_only", "both"], default="all")
    p.add_argument("--out", required=True, help="output metrics JSON")
    p.set_defaults(func=cmd_mae)

    p = sub.add_parser("train-toy", help="train the two-head classifier on a features CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--lambda1", type=float, default=1.0, help="category loss weight")
    p.add_argument("--lambda2", type=float, default=1.0, help="cluster loss weight")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--decay-factor", type=float, default=2.0)
    p.add_argument("--decay-interval", type=int, default=5)
    p.add_argument("--activation", choices=["relu", "identity"], default="relu")
    p.add_argument("--raw-features", action="store_true",
                   help="skip train-split feature standardization")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("synth", help="synthetic data generators")
    synth_sub = p.add_subparsers(dest="generator", required=True)

    sp = synth_sub.add_parser("planted", help="planted-cluster dataset")
    sp.add_argument("--groups", type=int, default=4)
    sp.add_argument("--per-group", type=int, default=5)
    sp.add_argument("--dim", type=int, default=8)
    sp.add_argument("--separation", type=float, default=10.0)
    sp.add_argument("--spread", type=float, default=0.5)
    sp.add_argument("--sample-noise", type=float, default=2.0)
    sp.add_argument("--images-per-category", type=int, default=25)
    sp.add_argument("--nutrient-jitter", type=float, default=1.0)
    sp.add_argument("--nutrient-levels", type=int, default=None,
                    help="decouple nutrient profiles from visual groups")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_synth_planted)

    sp = synth_sub.add_parser("confusion", help="simulated prediction log")
    sp.add_argument("--table", required=True, help="category table JSON or items CSV")
    sp.add_argument("--counts", help="counts CSV when --table is a CSV")
    sp.add_argument("--hierarchy", required=True)
    sp.add_argument("--error-rate", type=float, required=True)
    sp.add_argument("--mode", choices=["within_cluster", "uniform"], required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output predictions CSV")
    sp.set_defaults(func=cmd_synth_confusion)

    p = sub.add_parser("report", help="compare candidate runs against a baseline")
    p.add_argument("--baseline", required=True, help="baseline metrics JSON (from `mae`)")
    p.add_argument("--candidate", action="append", required=True,
                   help="candidate metrics JSON; repeatable")
    p.add_argument("--nutrients", help="nutrient codes (default: all four)")
    p.add_argument("--scope", choices=["all", "mistakes_only"], default="all")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NutriClusterError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "FileError", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
