"""Acceptance gate: ten go/no-go checks with pinned tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS/FAIL
line per criterion. Every check validates the implementation against
an independent oracle (closed forms, brute-force search, numeric
integration, finite differences) or reproduces the qualitative
behavior the pipeline exists for, and asserts its own runtime budget.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from nutricluster.cli import main
from nutricluster.clustering import APConfig, affinity_propagation, cluster_categories
from nutricluster.errors import UndefinedMetricError
from nutricluster.evaluation import (
    cluster_variances,
    distance_report,
    DistanceMatrix,
    inter_cluster_distance,
    intra_cluster_distance,
    nutrient_mae,
    visual_distance_matrix,
)
from nutricluster.multitask import (
    MultiTaskModel,
    TrainingConfig,
    multitask_loss,
    loss_gradients,
    samples_from_features,
    split_indices,
    standardize_apply,
    standardize_fit,
    train,
)
from nutricluster.nutrient_data import CategoryTable, inter_class_std
from nutricluster.similarity import (
    SimilarityConfig,
    SimilarityMatrix,
    combine_similarity,
    fit_feature_gaussians,
    gaussian_ovl,
    nutrient_similarity_matrix,
    rbf_similarity,
    visual_similarity_matrix,
    weighted_harmonic_mean,
)
from nutricluster.synthkit import (
    PlantedConfig,
    generate_confusion_log,
    generate_planted_dataset,
    hierarchy_from_partition,
)


def verdict(number: int, ok: bool, detail: str) -> str:
    line = f"[criterion {number:02d}] {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    return line


# ---------------------------------------------------------------- criterion 1

def test_criterion_01_similarity_suite():
    rng = np.random.default_rng(42)
    start = time.perf_counter()
    max_rbf_err = 0.0
    max_whm_err = 0.0
    for _ in range(1000):
        x1, x2 = rng.uniform(0.0, 600.0, size=2)
        sigma = rng.uniform(0.5, 150.0)
        value = rbf_similarity(x1, x2, sigma)
        assert 0.0 < value <= 1.0
        assert value == rbf_similarity(x2, x1, sigma)
        oracle = math.exp(-((x1 - x2) ** 2) / (2.0 * sigma * sigma))
        oracle = min(max(oracle, 1e-12), 1.0)
        max_rbf_err = max(max_rbf_err, abs(value - oracle) / max(oracle, 1e-300))

        n = int(rng.integers(2, 5))
        scores = rng.uniform(1e-4, 1.0, size=n)
        weights = rng.uniform(0.1, 5.0, size=n)
        fused = weighted_harmonic_mean(scores, weights)
        assert scores.min() - 1e-15 <= fused <= scores.max() + 1e-15
        scaled = weighted_harmonic_mean(scores, weights * rng.uniform(0.5, 20.0))
        max_whm_err = max(max_whm_err, abs(fused - scaled) / fused)

        a, b = rng.uniform(1e-4, 1.0, size=2)
        left = SimilarityMatrix(("p", "q"), np.array([[1.0, a], [a, 1.0]]))
        right = SimilarityMatrix(("p", "q"), np.array([[1.0, b], [b, 1.0]]))
        fused_lr = combine_similarity(left, right).values[0, 1]
        fused_rl = combine_similarity(right, left).values[0, 1]
        assert fused_lr == fused_rl
        assert min(a, b) - 1e-15 <= fused_lr <= max(a, b) + 1e-15

    elapsed = time.perf_counter() - start
    ok = max_rbf_err < 1e-12 and max_whm_err < 1e-12 and elapsed < 5.0
    line = verdict(1, ok, f"similarity suite on 1000 pairs: rbf err {max_rbf_err:.2e}, "
                          f"weight-scale err {max_whm_err:.2e}, {elapsed:.2f}s")
    assert ok, line


# ---------------------------------------------------------------- criterion 2

def ovl_numeric(m1, s1, m2, s2, points=100_000):
    span = 10.0 * max(s1, s2)
    grid = np.linspace(min(m1, m2) - span, max(m1, m2) + span, points)
    pdf1 = np.exp(-0.5 * ((grid - m1) / s1) ** 2) / (s1 * math.sqrt(2 * math.pi))
    pdf2 = np.exp(-0.5 * ((grid - m2) / s2) ** 2) / (s2 * math.sqrt(2 * math.pi))
    return float(np.trapezoid(np.minimum(pdf1, pdf2), grid))


def test_criterion_02_ovl_against_numeric_integration():
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst = 0.0
    for trial in range(200):
        m1, m2 = rng.uniform(-10.0, 10.0, size=2)
        s1 = float(rng.uniform(0.05, 5.0))
        s2 = s1 if trial % 4 == 0 else float(rng.uniform(0.05, 5.0))
        worst = max(worst, abs(gaussian_ovl(m1, s1, m2, s2) - ovl_numeric(m1, s1, m2, s2)))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and elapsed < 10.0
    line = verdict(2, ok, f"overlap coefficient vs trapezoid oracle on 200 pairs: "
                          f"worst gap {worst:.2e}, {elapsed:.2f}s")
    assert ok, line


# ---------------------------------------------------------------- criterion 3

def exhaustive_best_partition(values: np.ndarray, preference: float):
    """Brute-force the exemplar subset maximizing net similarity."""
    n = len(values)
    best_score, best_assignment = -np.inf, None
    for size in range(1, n + 1):
        for exemplars in itertools.combinations(range(n), size):
            cols = values[:, exemplars]
            score = size * preference
            assignment = []
            for i in range(n):
                if i in exemplars:
                    assignment.append(i)
                else:
                    best_e = int(np.argmax(cols[i]))
                    score += cols[i, best_e]
                    assignment.append(exemplars[best_e])
            if score > best_score:
                best_score, best_assignment = score, assignment
    return best_assignment


def as_partition(assignment):
    groups = {}
    for i, e in enumerate(assignment):
        groups.setdefault(e, set()).add(i)
    return {frozenset(g) for g in groups.values()}


def test_criterion_03_ap_matches_exhaustive_search():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    matches, valid = 0, 0
    trials = 50
    for _ in range(trials):
        sizes = []
        remaining = int(rng.integers(4, 9))
        while remaining >= 2:
            take = int(rng.integers(2, min(4, remaining) + 1))
            if remaining - take == 1:
                take += 1
            sizes.append(take)
            remaining -= take
        k = sum(sizes)
        values = np.full((k, k), 0.1)
        offset = 0
        for size in sizes:
            values[offset:offset + size, offset:offset + size] = 0.9
            offset += size
        np.fill_diagonal(values, 1.0)
        labels = tuple(f"c{i:02d}" for i in range(k))
        sim = SimilarityMatrix(labels, values)
        median = float(np.median(values[~np.eye(k, dtype=bool)]))

        hierarchy = cluster_categories(sim, APConfig(seed=1))
        assert sorted(hierarchy.labels()) == sorted(labels)  # valid partition
        valid += 1
        got = {frozenset(labels.index(m) for m in c.members) for c in hierarchy.clusters}
        want = as_partition(exhaustive_best_partition(values, median))
        matches += got == want
    elapsed = time.perf_counter() - start
    ok = matches >= 48 and valid == trials and elapsed < 60.0
    line = verdict(3, ok, f"affinity propagation vs exhaustive search: "
                          f"{matches}/{trials} exact, all valid, {elapsed:.2f}s")
    assert ok, line


# ---------------------------------------------------------------- criterion 4

def random_table(rng, k):
    labels = tuple(f"cat{i:02d}" for i in range(k))
    values = rng.uniform(0.0, 400.0, size=(k, 4))
    counts = rng.integers(1, 31, size=k)
    return CategoryTable(labels, values, counts)


def random_partition(rng, labels, max_blocks=None):
    order = list(labels)
    rng.shuffle(order)
    blocks = int(rng.integers(2, max_blocks or len(labels)))
    cuts = sorted(rng.choice(np.arange(1, len(order)), size=blocks - 1, replace=False))
    return [order[a:b] for a, b in zip([0, *cuts], [*cuts, len(order)])]


def test_criterion_04_variance_decomposition_identity():
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        table = random_table(rng, int(rng.integers(3, 13)))
        hierarchy = hierarchy_from_partition(random_partition(rng, table.labels))
        report = cluster_variances(hierarchy, table, convention="weighted")
        for column, nutrient in enumerate(("energy", "carbohydrate", "fat", "protein")):
            expanded = np.repeat(table.values[:, column], table.image_counts)
            total = float(np.mean((expanded - expanded.mean()) ** 2))
            entry = report.per_nutrient[nutrient]
            worst = max(worst, abs(entry.intra + entry.inter - total) / max(total, 1e-300))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and elapsed < 5.0
    line = verdict(4, ok, f"variance decomposition vs per-image brute force "
                          f"(200 triples, 4 nutrients): worst rel gap {worst:.2e}, {elapsed:.2f}s")
    assert ok, line


# ---------------------------------------------------------------- criterion 5

def test_criterion_05_distance_metrics_against_double_loops():
    rng = np.random.default_rng(5)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(4, 13))
        labels = tuple(f"cat{i:02d}" for i in range(k))
        points = rng.uniform(0.0, 1.0, size=(k, 3))
        values = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
        np.fill_diagonal(values, 0.0)
        values = np.triu(values) + np.triu(values, 1).T
        dist = DistanceMatrix(labels, values)
        partition = random_partition(rng, labels, max_blocks=k)  # at least one block >= 2
        hierarchy = hierarchy_from_partition(partition)
        at = {label: dist.index(label) for label in labels}

        intra_oracle = 0.0
        for cluster in hierarchy.clusters:
            if len(cluster.members) < 2:
                continue
            pair_values = [
                values[at[a], at[b]]
                for a, b in itertools.combinations(cluster.members, 2)
            ]
            intra_oracle = max(intra_oracle, math.fsum(pair_values) / len(pair_values))
        exemplars = [c.exemplar for c in hierarchy.clusters]
        pairs = [
            values[at[a], at[b]] for a, b in itertools.combinations(exemplars, 2)
        ]
        inter_oracle = math.fsum(pairs) / len(pairs)

        worst = max(worst, abs(intra_cluster_distance(hierarchy, dist) - intra_oracle))
        worst = max(worst, abs(inter_cluster_distance(hierarchy, dist) - inter_oracle))

    labels = ("a", "b", "c")
    dist = DistanceMatrix(labels, np.array([[0.0, 0.2, 0.4], [0.2, 0.0, 0.6], [0.4, 0.6, 0.0]]))
    singles = hierarchy_from_partition([("a",), ("b",), ("c",)])
    with pytest.raises(UndefinedMetricError):
        intra_cluster_distance(singles, dist)

    elapsed = time.perf_counter() - start
    ok = worst < 1e-12 and elapsed < 5.0
    line = verdict(5, ok, f"distance metrics vs double-loop oracles (100 partitions): "
                          f"worst gap {worst:.2e}; singleton-only raises; {elapsed:.2f}s")
    assert ok, line


# ---------------------------------------------------------------- criterion 6

def fd_gradients(model, X, y_cat, y_clu, lambdas, step=1e-5):
    grads = {}
    for name in ("W0", "b0", "W1", "b1", "W2", "b2"):
        arr = getattr(model, name)
        grad = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            original = arr[idx]
            arr[idx] = original + step
            up = multitask_loss(model, X, y_cat, y_clu, lambdas)
            arr[idx] = original - step
            down = multitask_loss(model, X, y_cat, y_clu, lambdas)
            arr[idx] = original
            grad[idx] = (up - down) / (2.0 * step)
        grads[name] = grad
    return grads


def test_criterion_06_gradient_check():
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    lambda_grid = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    worst = 0.0
    for trial in range(100):
        d = int(rng.integers(2, 6))
        h = int(rng.integers(2, 6))
        n_cat = int(rng.integers(2, 6))
        n_clu = int(rng.integers(2, 5))
        n = int(rng.integers(2, 6))
        activation = "identity" if trial % 7 == 6 else "relu"
        model = MultiTaskModel.init(d, h if activation == "relu" else d, n_cat, n_clu,
                                    seed=int(rng.integers(0, 10_000)), activation=activation)
        X = rng.normal(0.0, 1.5, size=(n, d))
        y_cat = rng.integers(0, n_cat, size=n)
        y_clu = rng.integers(0, n_clu, size=n)
        lambdas = lambda_grid[trial % 3]
        analytic = loss_gradients(model, X, y_cat, y_clu, lambdas)
        numeric = fd_gradients(model, X, y_cat, y_clu, lambdas)
        for name in analytic:
            denom = np.maximum(np.maximum(np.abs(analytic[name]), np.abs(numeric[name])), 1e-5)
            worst = max(worst, float(np.max(np.abs(analytic[name] - numeric[name]) / denom)))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 30.0
    line = verdict(6, ok, f"analytic vs central-difference gradients (100 configs): "
                          f"max rel err {worst:.2e}, {elapsed:.2f}s")
    assert ok, line


# ---------------------------------------------------------------- criterion 7

def test_criterion_07_combined_clustering_beats_visual_only():
    start = time.perf_counter()
    wins = 0
    worst_ratio = 0.0
    for seed in range(20):
        config = PlantedConfig(groups=4, per_group=5, dim=16, nutrient_levels=2, seed=seed)
        data = generate_planted_dataset(config)
        stats = fit_feature_gaussians(data.feature_rows)
        visual = visual_similarity_matrix(stats)
        nutrient = nutrient_similarity_matrix(
            data.table, inter_class_std(data.table), SimilarityConfig(("fat",))
        )
        combined = combine_similarity(nutrient, visual)
        visual_clusters = cluster_categories(visual, APConfig(seed=0))
        combined_clusters = cluster_categories(combined, APConfig(seed=0))

        by_visual = cluster_variances(visual_clusters, data.table, ("fat",)).per_nutrient["fat"]
        by_combined = cluster_variances(combined_clusters, data.table, ("fat",)).per_nutrient["fat"]
        wins += by_combined.intra < by_visual.intra and by_combined.inter > by_visual.inter

        ratio = distance_report(combined_clusters, visual_distance_matrix(visual)).ratio
        worst_ratio = max(worst_ratio, ratio)
    elapsed = time.perf_counter() - start
    ok = wins >= 18 and worst_ratio < 1.0 and elapsed < 120.0
    line = verdict(7, ok, f"combined vs visual-only clustering on planted data: "
                          f"{wins}/20 strict variance wins, worst visual-distance ratio "
                          f"{worst_ratio:.3f} (< 1), {elapsed:.2f}s")
    assert ok, line


# ---------------------------------------------------------------- criterion 8

def test_criterion_08_within_cluster_mistakes_cost_less():
    start = time.perf_counter()
    wins = 0
    within_maes, uniform_maes = [], []
    for seed in range(20):
        config = PlantedConfig(groups=4, per_group=5, dim=8, images_per_category=40,
                               seed=100 + seed)
        data = generate_planted_dataset(config)
        hierarchy = hierarchy_from_partition(data.expected_partition)
        within = generate_confusion_log(data.table, hierarchy, 0.3, "within_cluster", seed=seed)
        uniform = generate_confusion_log(data.table, hierarchy, 0.3, "uniform", seed=seed)
        mae_within = nutrient_mae(within, data.table, "energy")
        mae_uniform = nutrient_mae(uniform, data.table, "energy")
        within_maes.append(mae_within)
        uniform_maes.append(mae_uniform)
        wins += mae_within < mae_uniform
    mean_within = math.fsum(within_maes) / len(within_maes)
    mean_uniform = math.fsum(uniform_maes) / len(uniform_maes)
    reduction = (mean_uniform - mean_within) / mean_uniform
    elapsed = time.perf_counter() - start
    ok = wins >= 18 and reduction > 0.0 and elapsed < 60.0
    line = verdict(8, ok, f"within-cluster vs uniform confusion at error 0.3: "
                          f"{wins}/20 lower energy MAE, reduction {reduction:.3f} (> 0), "
                          f"{elapsed:.2f}s")
    assert ok, line


# ---------------------------------------------------------------- criterion 9

def test_criterion_09_multitask_trainer_reaches_accuracy():
    start = time.perf_counter()
    config = PlantedConfig(groups=4, per_group=5, dim=16, separation=10.0, spread=4.0,
                           sample_noise=0.5, images_per_category=25, seed=0)
    data = generate_planted_dataset(config)
    hierarchy = hierarchy_from_partition(data.expected_partition)
    X, y_cat, y_clu, labels = samples_from_features(data.feature_rows, hierarchy)
    assert len(labels) == 20 and len(hierarchy.clusters) == 4
    train_idx, test_idx = split_indices(len(X), 0.2, seed=0)
    mean, std = standardize_fit(X[train_idx])
    X = standardize_apply(X, mean, std)

    accuracies = {}
    traces = {}
    for lambdas in ((1.0, 1.0), (1.0, 0.0)):
        training = TrainingConfig(
            lambda_category=lambdas[0], lambda_cluster=lambdas[1], hidden_dim=64,
            batch_size=32, epochs=150, learning_rate=0.01, decay_factor=2.0,
            decay_interval=30, seed=0,
        )
        model = MultiTaskModel.init(16, 64, len(labels), len(hierarchy.clusters), seed=0)
        result = train(model, X[train_idx], y_cat[train_idx], y_clu[train_idx], training)
        predicted, _ = result.model.predict(X[test_idx])
        accuracies[lambdas] = float(np.mean(predicted == y_cat[test_idx]))
        traces[lambdas] = result.trace

    joint = accuracies[(1.0, 1.0)]
    single = accuracies[(1.0, 0.0)]
    trace = traces[(1.0, 1.0)]
    trace_ok = all(np.isfinite(v) for v in trace) and trace[-1] < trace[0]
    elapsed = time.perf_counter() - start
    ok = joint >= 0.95 and abs(joint - single) <= 0.05 and trace_ok and elapsed < 120.0
    line = verdict(9, ok, f"multi-task trainer on planted features: joint accuracy "
                          f"{joint:.3f} (>= 0.95), single-head {single:.3f} "
                          f"(gap {abs(joint - single):.3f} <= 0.05), decreasing finite trace, "
                          f"{elapsed:.2f}s")
    assert ok, line


# --------------------------------------------------------------- criterion 10

PIPELINE_NAMES = (
    "data/items.csv", "data/counts.csv", "data/features.csv", "data/ground_truth.json",
    "table.json", "similarity.json", "hierarchy.json", "predictions.csv",
    "metrics.json", "report/report.json", "report/report.csv", "report/mae_energy.png",
)


def run_pipeline(root: Path) -> None:
    commands = [
        ["synth", "planted", "--groups", "2", "--per-group", "3", "--dim", "6",
         "--images-per-category", "10", "--seed", "5", "--out", str(root / "data")],
        ["ingest", "--items", str(root / "data/items.csv"),
         "--counts", str(root / "data/counts.csv"), "--out", str(root / "table.json")],
        ["similarity", "--table", str(root / "table.json"),
         "--features", str(root / "data/features.csv"), "--nutrients", "C+F",
         "--out", str(root / "similarity.json")],
        ["cluster", "--similarity", str(root / "similarity.json"), "--seed", "0",
         "--out", str(root / "hierarchy.json")],
        ["synth", "confusion", "--table", str(root / "table.json"),
         "--hierarchy", str(root / "hierarchy.json"), "--error-rate", "0.25",
         "--mode", "within_cluster", "--seed", "2", "--out", str(root / "predictions.csv")],
        ["mae", "--log", str(root / "predictions.csv"), "--table", str(root / "table.json"),
         "--scope", "both", "--out", str(root / "metrics.json")],
        ["report", "--baseline", str(root / "metrics.json"),
         "--candidate", str(root / "metrics.json"), "--out", str(root / "report")],
    ]
    for command in commands:
        assert main(command) == 0, command


def test_criterion_10_cli_pipeline_is_byte_deterministic(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    start = time.perf_counter()
    run_pipeline(tmp_path)
    snapshot = {}
    for path in sorted(tmp_path.rglob("*")):
        if path.is_file():
            snapshot[path.relative_to(tmp_path)] = path.read_bytes()
    assert {str(p) for p in snapshot} >= set(PIPELINE_NAMES)

    run_pipeline(tmp_path)  # identical flags, inputs, and seeds
    differing = [
        str(rel) for rel, content in snapshot.items()
        if (tmp_path / rel).read_bytes() != content
    ]
    elapsed = time.perf_counter() - start
    ok = not differing and len(snapshot) >= 2 * len(PIPELINE_NAMES)
    line = verdict(10, ok, f"re-running the CLI pipeline reproduced all "
                           f"{len(snapshot)} files byte-for-byte"
                           + (f"; differing: {differing}" if differing else "")
                           + f", {elapsed:.2f}s")
    assert ok, line
