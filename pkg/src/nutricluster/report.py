"""Comparison reports: candidate runs against a flat baseline.

Consumes the metrics JSON emitted by the `mae` subcommand (accuracy,
per-nutrient MAE, and the digest of the category table the run was
scored against), aggregates candidates (mean and worst case), and
states the error change relative to the baseline in both directions:
`change` is (candidate - baseline) / baseline, negative when the
candidate improves; `reduction` is its negation, positive when the
candidate improves. Both are emitted side by side so no reader has to
guess the sign convention.

Alongside the JSON and CSV tables the report renders one bar chart per
nutrient (baseline / candidates mean / worst candidate).
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .errors import AlignmentError, ValidationError
from .nutrient_data import NUTRIENT_NAMES, NUTRIENT_UNITS

FIGURE_COLORS = ("tab:blue", "tab:orange", "tab:red")
FIGURE_BARS = ("baseline", "candidates mean", "worst candidate")


def load_metrics(path: str | Path) -> dict:
    """Load and sanity-check one metrics JSON file."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from None
    for key in ("mae", "table_digest"):
        if key not in obj:
            raise ValidationError(f"{path} is missing the {key!r} field")
    obj["path"] = str(path)
    return obj


def _scope_value(metrics: dict, nutrient: str, scope: str):
    per_nutrient = metrics["mae"].get(nutrient)
    if per_nutrient is None or scope not in per_nutrient:
        raise ValidationError(
            f"{metrics['path']} has no {nutrient!r} MAE for scope {scope!r}"
        )
    value = per_nutrient[scope]
    if value is None:
        raise ValidationError(
            f"{metrics['path']}: {nutrient} MAE is undefined for scope {scope!r}"
        )
    return float(value)


def _change_pair(candidate: float, baseline: float):
    """(change, reduction) vs baseline; None when the ratio is undefined."""
    if candidate == baseline:
        return 0.0, 0.0
    if baseline == 0.0:
        return None, None
    change = (candidate - baseline) / baseline
    return change, -change


def build_comparison(baseline: dict, candidates: list[dict],
                     nutrients=NUTRIENT_NAMES, scope: str = "all") -> dict:
    """Aggregate candidate metrics against the baseline run."""
    if not candidates:
        raise ValidationError("at least one candidate metrics file is required")
    digests = {metrics["table_digest"] for metrics in [baseline, *candidates]}
    if len(digests) != 1:
        raise AlignmentError(
            "metrics files were scored against different category tables; "
            "digests: " + ", ".join(sorted(digests))
        )
    mae = {}
    for nutrient in nutrients:
        base_value = _scope_value(baseline, nutrient, scope)
        values = [_scope_value(candidate, nutrient, scope) for candidate in candidates]
        mean_value = math.fsum(values) / len(values)
        worst_value = max(values)
        change, reduction = _change_pair(mean_value, base_value)
        worst_change, worst_reduction = _change_pair(worst_value, base_value)
        mae[nutrient] = {
            "baseline": base_value,
            "per_candidate": values,
            "candidates_mean": mean_value,
            "candidates_worst": worst_value,
            "change": change,
            "reduction": reduction,
            "worst_change": worst_change,
            "worst_reduction": worst_reduction,
        }
    return {
        "scope": scope,
        "nutrients": list(nutrients),
        "table_digest": baseline["table_digest"],
        "baseline": {"path": baseline["path"], "accuracy": baseline.get("accuracy")},
        "candidates": [
            {"path": candidate["path"], "accuracy": candidate.get("accuracy")}
            for candidate in candidates
        ],
        "mae": mae,
    }


def render_report_csv(comparison: dict) -> str:
    """Flat per-run, per-nutrient table mirroring the JSON report."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(
        ["run", "role", "accuracy", "nutrient", "scope", "mae", "change", "reduction"]
    )
    scope = comparison["scope"]
    runs = [(comparison["baseline"]["path"], "baseline", comparison["baseline"]["accuracy"])]
    runs += [
        (entry["path"], "candidate", entry["accuracy"])
        for entry in comparison["candidates"]
    ]
    for nutrient in comparison["nutrients"]:
        entry = comparison["mae"][nutrient]
        per_run = [entry["baseline"], *entry["per_candidate"]]
        for (path, role, acc), value in zip(runs, per_run):
            change, reduction = (0.0, 0.0) if role == "baseline" else _change_pair(
                value, entry["baseline"]
            )
            writer.writerow([path, role, acc, nutrient, scope, value, change, reduction])
        writer.writerow(
            ["", "candidates_mean", "", nutrient, scope, entry["candidates_mean"],
             entry["change"], entry["reduction"]]
        )
        writer.writerow(
            ["", "candidates_worst", "", nutrient, scope, entry["candidates_worst"],
             entry["worst_change"], entry["worst_reduction"]]
        )
    return buffer.getvalue()


def render_figures(comparison: dict) -> dict[str, bytes]:
    """One bar chart per nutrient as PNG bytes, keyed mae_<nutrient>.png."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    figures: dict[str, bytes] = {}
    for nutrient in comparison["nutrients"]:
        entry = comparison["mae"][nutrient]
        heights = [entry["baseline"], entry["candidates_mean"], entry["candidates_worst"]]
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.bar(range(len(heights)), heights, color=FIGURE_COLORS, tick_label=FIGURE_BARS)
        ax.set_ylabel(f"MAE ({NUTRIENT_UNITS[nutrient]})")
        ax.set_title(f"{nutrient} MAE, scope={comparison['scope']}")
        ax.tick_params(axis="x", labelrotation=20)
        fig.tight_layout()
        buffer = io.BytesIO()
        fig.savefig(buffer, format="png", dpi=100)
        plt.close(fig)
        figures[f"mae_{nutrient}.png"] = buffer.getvalue()
    return figures
