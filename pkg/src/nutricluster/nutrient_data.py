"""Food item ingestion and category-level nutrient tables.

Raw data arrives as one CSV row per food item. Analysis happens at the
category level: items collapse to their per-category mean nutrient
vector, image counts attach from a separate counts file, and the
spread of the category means provides the kernel scales used by the
similarity layer.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    DegenerateInputError,
    FormatError,
    ParseError,
    ValidationError,
)

# Canonical nutrient order; every (K, 4) value array uses these columns.
NUTRIENT_NAMES: tuple[str, ...] = ("energy", "carbohydrate", "fat", "protein")
NUTRIENT_UNITS: Mapping[str, str] = {
    "energy": "kcal",
    "carbohydrate": "g",
    "fat": "g",
    "protein": "g",
}
# Single-letter codes used on the command line and in run labels.
NUTRIENT_CODES: Mapping[str, str] = {
    "E": "energy",
    "C": "carbohydrate",
    "F": "fat",
    "P": "protein",
}

ITEM_HEADER = ("food_code", "category", "energy_kcal", "carb_g", "fat_g", "protein_g")
COUNTS_HEADER = ("category", "image_count")


@dataclass(frozen=True)
class FoodItem:
    """One food item row: an identifier, its category, and four nutrient values."""

    food_code: str
    category: str
    nutrients: tuple[float, float, float, float]


@dataclass
class CategoryTable:
    """Category-level nutrient table.

    labels are unique and sorted lexicographically; values is (K, 4) in
    NUTRIENT_NAMES column order; image_counts is (K,) non-negative ints.
    """

    labels: tuple[str, ...]
    values: np.ndarray
    image_counts: np.ndarray
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.labels = tuple(str(c) for c in self.labels)
        self.values = np.asarray(self.values, dtype=float)
        self.image_counts = np.asarray(self.image_counts, dtype=np.int64)
        k = len(self.labels)
        if len(set(self.labels)) != k:
            raise ValidationError("category table has duplicate category ids")
        if list(self.labels) != sorted(self.labels):
            raise ValidationError("category table labels must be sorted lexicographically")
        if self.values.shape != (k, len(NUTRIENT_NAMES)):
            raise ValidationError(
                f"category table values must have shape ({k}, {len(NUTRIENT_NAMES)}), "
                f"got {self.values.shape}"
            )
        if self.image_counts.shape != (k,):
            raise ValidationError(
                f"category table image_counts must have shape ({k},), got {self.image_counts.shape}"
            )
        if k and not np.all(np.isfinite(self.values)):
            raise ValidationError("category table contains non-finite nutrient values")
        if k and (self.values < 0).any():
            raise ValidationError("category table contains negative nutrient values")
        if k and (self.image_counts < 0).any():
            raise ValidationError("category table contains negative image counts")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, category: str) -> int:
        try:
            return self._index[category]
        except KeyError:
            raise KeyError(f"unknown category {category!r}") from None

    def column(self, nutrient: str) -> np.ndarray:
        """Return a copy of one nutrient column in label order."""
        if nutrient not in NUTRIENT_NAMES:
            raise KeyError(f"unknown nutrient {nutrient!r}")
        return self.values[:, NUTRIENT_NAMES.index(nutrient)].copy()

    def to_json_obj(self) -> dict:
        return {
            "categories": [
                {
                    "id": c,
                    "nutrients": [float(v) for v in self.values[i]],
                    "image_count": int(self.image_counts[i]),
                }
                for i, c in enumerate(self.labels)
            ]
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "CategoryTable":
        try:
            cats = obj["categories"]
            labels = [str(c["id"]) for c in cats]
            values = [c["nutrients"] for c in cats]
            counts = [c["image_count"] for c in cats]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed category table object: {exc}") from exc
        return cls(tuple(labels), np.array(values, dtype=float).reshape(len(labels), 4), np.array(counts))

    def digest(self) -> str:
        """Content hash of the table, used to check that runs share inputs."""
        payload = json.dumps(self.to_json_obj(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class NutrientStats:
    """Inter-class spread of the category means, one entry per nutrient.

    sigma is the population standard deviation across categories: the
    categories present are treated as the entire class population, not
    a sample from a larger one.
    """

    sigma: tuple[float, ...]
    minimum: tuple[float, ...]
    maximum: tuple[float, ...]

    def sigma_for(self, nutrient: str) -> float:
        return self.sigma[NUTRIENT_NAMES.index(nutrient)]

    def degenerate_nutrients(self) -> tuple[str, ...]:
        """Nutrients whose inter-class spread is zero (unusable as kernel scales)."""
        return tuple(n for n, s in zip(NUTRIENT_NAMES, self.sigma) if s == 0.0)

    def to_json_obj(self) -> dict:
        return {
            "sigma": {n: self.sigma[i] for i, n in enumerate(NUTRIENT_NAMES)},
            "range": {
                n: [self.minimum[i], self.maximum[i]] for i, n in enumerate(NUTRIENT_NAMES)
            },
            "degenerate": list(self.degenerate_nutrients()),
        }


def _read_rows(path: str | Path, expected_header: tuple[str, ...]) -> list[list[str]]:
    """Read a CSV, validate its header, and return the data rows."""
    name = str(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{name}: file is empty, expected header "
                              f"{','.join(expected_header)}") from None
        if tuple(h.strip() for h in header) != expected_header:
            raise FormatError(
                f"{name}: row 1: bad header {','.join(header)!r}, "
                f"expected {','.join(expected_header)!r}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise FormatError(
                    f"{name}: row {lineno}: expected {len(expected_header)} columns, got {len(row)}"
                )
            rows.append([lineno, *row])
    return rows


def _parse_float(token: str, *, name: str, row: int, column: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(
            f"{name}: row {row}, column {column!r}: cannot parse {token!r} as a number"
        ) from None
    return value


def parse_nutrient_csv(path: str | Path) -> list[FoodItem]:
    """Parse a food item CSV with header food_code,category,energy_kcal,carb_g,fat_g,protein_g.

    Nutrient values must be finite and non-negative. A header-only file
    yields an empty list.
    """
    name = str(path)
    items: list[FoodItem] = []
    for lineno, code, category, *raw in _read_rows(path, ITEM_HEADER):
        if not category.strip():
            raise ValidationError(f"{name}: row {lineno}: empty category id")
        nutrients = tuple(
            _parse_float(tok, name=name, row=lineno, column=ITEM_HEADER[2 + i])
            for i, tok in enumerate(raw)
        )
        for col, value in zip(ITEM_HEADER[2:], nutrients):
            # NaN fails both comparisons below, so it is caught here too.
            if not (np.isfinite(value) and value >= 0.0):
                raise ValidationError(
                    f"{name}: row {lineno}, column {col!r}: nutrient value {value!r} "
                    "must be finite and non-negative"
                )
        items.append(FoodItem(code.strip(), category.strip(), nutrients))
    return items


def parse_counts_csv(path: str | Path) -> dict[str, int]:
    """Parse an image counts CSV with header category,image_count."""
    name = str(path)
    counts: dict[str, int] = {}
    for lineno, category, raw in _read_rows(path, COUNTS_HEADER):
        category = category.strip()
        if not category:
            raise ValidationError(f"{name}: row {lineno}: empty category id")
        if category in counts:
            raise ValidationError(f"{name}: row {lineno}: duplicate count for category {category!r}")
        try:
            count = int(raw)
        except ValueError:
            raise ParseError(
                f"{name}: row {lineno}, column 'image_count': cannot parse {raw!r} as an integer"
            ) from None
        if count < 0:
            raise ValidationError(
                f"{name}: row {lineno}: image count {count} must be non-negative"
            )
        counts[category] = count
    return counts


def aggregate_categories(
    items: Iterable[FoodItem],
    counts: Mapping[str, int] | None = None,
) -> CategoryTable:
    """Collapse food items to per-category mean nutrient vectors.

    Categories appear iff they have at least one item; labels come out
    sorted lexicographically. Categories missing from `counts` get an
    image count of 0; count entries for unknown categories are ignored.
    """
    grouped: dict[str, list[tuple[float, ...]]] = {}
    for item in items:
        grouped.setdefault(item.category, []).append(item.nutrients)
    labels = tuple(sorted(grouped))
    if labels:
        values = np.array([np.mean(grouped[c], axis=0) for c in labels], dtype=float)
    else:
        values = np.zeros((0, len(NUTRIENT_NAMES)))
    counts = counts or {}
    image_counts = np.array([int(counts.get(c, 0)) for c in labels], dtype=np.int64)
    return CategoryTable(labels, values, image_counts)


def inter_class_std(table: CategoryTable) -> NutrientStats:
    """Population standard deviation and range of each nutrient across categories."""
    if len(table) < 2:
        raise DegenerateInputError(
            f"inter-class statistics need at least 2 categories, got {len(table)}"
        )
    sigma = np.std(table.values, axis=0, ddof=0)
    return NutrientStats(
        sigma=tuple(float(s) for s in sigma),
        minimum=tuple(float(v) for v in table.values.min(axis=0)),
        maximum=tuple(float(v) for v in table.values.max(axis=0)),
    )


def parse_nutrient_codes(selector: str) -> tuple[str, ...]:
    """Expand a code string like "E" or "C,F,P" into nutrient names."""
    names: list[str] = []
    for token in selector.replace("+", ",").split(","):
        token = token.strip()
        if not token:
            continue
        key = token.upper()
        if key in NUTRIENT_CODES:
            names.append(NUTRIENT_CODES[key])
        elif token.lower() in NUTRIENT_NAMES:
            names.append(token.lower())
        else:
            raise ValidationError(
                f"unknown nutrient code {token!r}; use letters "
                f"{'/'.join(NUTRIENT_CODES)} or full names {'/'.join(NUTRIENT_NAMES)}"
            )
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate nutrient in selection {selector!r}")
    return tuple(names)


def short_label(nutrients: Iterable[str], include_visual: bool = False) -> str:
    """Compact run label such as "C+F+V" built from nutrient letter codes."""
    rev = {v: k for k, v in NUTRIENT_CODES.items()}
    parts = [rev[n] for n in nutrients]
    if include_visual:
        parts.append("V")
    return "+".join(parts) if parts else "V" if include_visual else ""
