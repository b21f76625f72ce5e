"""Affinity propagation over category similarity and the cluster hierarchy.

Categories exchange responsibility and availability messages until the
exemplar set stops changing; each category then joins the exemplar it
is most similar to. The resulting flat partition of category leaves is
wrapped in a two-level hierarchy whose cluster ids follow exemplar
label order, so identical inputs always name clusters identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    ConsistencyError,
    ConvergenceError,
    DegenerateInputError,
)
from .similarity import SimilarityMatrix

# Magnitude of the seeded perturbation subtracted from the diagonal.
# Exactly symmetric inputs (identical categories, planted blocks) leave
# message passing stuck in a degenerate oscillation; shaving a tiny
# seeded amount off each preference breaks the tie and, being negative,
# biases exact ties toward fewer clusters instead of a coin flip.
DEFAULT_TIE_BREAK_NOISE = 1e-10


@dataclass(frozen=True)
class APConfig:
    """Affinity propagation knobs.

    preference is either the string "median" (median of the off-diagonal
    similarities) or an explicit real; damping is the weight kept on the
    previous messages. Convergence means the exemplar set survived
    convergence_window consecutive iterations unchanged.
    """

    preference: str | float = "median"
    damping: float = 0.5
    max_iterations: int = 500
    convergence_window: int = 50
    seed: int = 0
    tie_break_noise: float = DEFAULT_TIE_BREAK_NOISE

    def __post_init__(self) -> None:
        if isinstance(self.preference, str):
            if self.preference != "median":
                raise ConfigurationError(
                    f"preference must be a real number or 'median', got {self.preference!r}"
                )
        elif not np.isfinite(float(self.preference)):
            raise ConfigurationError("preference must be finite")
        if not (0.5 <= self.damping < 1.0):
            raise ConfigurationError(f"damping must lie in [0.5, 1), got {self.damping}")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be at least 1")
        if not (1 <= self.convergence_window < self.max_iterations):
            raise ConfigurationError(
                "convergence_window must be at least 1 and smaller than max_iterations"
            )
        if self.tie_break_noise < 0.0:
            raise ConfigurationError("tie_break_noise must be non-negative")

    def to_json_obj(self) -> dict:
        return {
            "preference": self.preference,
            "damping": self.damping,
            "max_iterations": self.max_iterations,
            "convergence_window": self.convergence_window,
            "seed": self.seed,
            "tie_break_noise": self.tie_break_noise,
        }


@dataclass
class ClusterAssignment:
    """Flat clustering result over matrix indices."""

    exemplars: tuple[int, ...]
    assignment: np.ndarray
    iterations: int
    converged: bool
    preference_value: float


def _resolve_preference(values: np.ndarray, config: APConfig) -> float:
    if config.preference == "median":
        mask = ~np.eye(values.shape[0], dtype=bool)
        return float(np.median(values[mask]))
    return float(config.preference)


def affinity_propagation(sim: SimilarityMatrix, config: APConfig) -> ClusterAssignment:
    """Cluster by message passing on a similarity matrix.

    Raises ConvergenceError (carrying the last exemplar set) if the
    exemplar set never stabilises within the iteration budget.
    """
    k = len(sim.labels)
    if k < 2:
        raise DegenerateInputError(f"clustering needs at least 2 categories, got {k}")
    working = sim.values.astype(float).copy()
    preference = _resolve_preference(working, config)
    np.fill_diagonal(working, preference)
    if config.tie_break_noise > 0.0:
        rng = np.random.default_rng(config.seed)
        working[np.diag_indices(k)] -= rng.uniform(0.0, 1.0, size=k) * config.tie_break_noise

    lam = config.damping
    responsibilities = np.zeros((k, k))
    availabilities = np.zeros((k, k))
    rows = np.arange(k)
    previous: tuple[int, ...] | None = None
    stable = 0
    converged = False
    iterations = 0
    exemplars: tuple[int, ...] = ()

    for iterations in range(1, config.max_iterations + 1):
        # r(i, k) = s(i, k) - max_{k' != k} (a(i, k') + s(i, k'))
        candidates = availabilities + working
        first_idx = np.argmax(candidates, axis=1)
        first = candidates[rows, first_idx]
        candidates[rows, first_idx] = -np.inf
        second = candidates.max(axis=1)
        fresh_r = working - first[:, None]
        fresh_r[rows, first_idx] = working[rows, first_idx] - second
        responsibilities = lam * responsibilities + (1.0 - lam) * fresh_r

        # a(i, k) = min(0, r(k, k) + sum of positive r from elsewhere);
        # a(k, k) = sum of positive r(i', k) over i' != k.
        positive = np.maximum(responsibilities, 0.0)
        positive[rows, rows] = responsibilities[rows, rows]
        column_sums = positive.sum(axis=0)
        fresh_a = column_sums[None, :] - positive
        diagonal = fresh_a[rows, rows].copy()
        fresh_a = np.minimum(fresh_a, 0.0)
        fresh_a[rows, rows] = diagonal
        availabilities = lam * availabilities + (1.0 - lam) * fresh_a

        exemplars = tuple(
            int(i)
            for i in np.flatnonzero(np.diag(availabilities) + np.diag(responsibilities) > 0.0)
        )
        if exemplars and exemplars == previous:
            stable += 1
        elif exemplars:
            previous = exemplars
            stable = 1
        else:
            previous = None
            stable = 0
        if stable >= config.convergence_window:
            converged = True
            break

    if not converged:
        raise ConvergenceError(
            f"affinity propagation did not converge within {config.max_iterations} "
            "iterations (exemplar set kept changing); increase max_iterations or "
            "adjust damping",
            exemplars=previous or (),
        )

    exemplar_idx = np.array(exemplars)
    assignment = exemplar_idx[np.argmax(working[:, exemplar_idx], axis=1)]
    assignment[exemplar_idx] = exemplar_idx
    return ClusterAssignment(
        exemplars=exemplars,
        assignment=assignment,
        iterations=iterations,
        converged=True,
        preference_value=preference,
    )


@dataclass(frozen=True)
class Cluster:
    id: int
    exemplar: str
    members: tuple[str, ...]


@dataclass
class Hierarchy:
    """Two-level structure: clusters over category leaves.

    Clusters are ordered (and numbered) by exemplar label, members are
    sorted, and every category belongs to exactly one cluster.
    """

    clusters: tuple[Cluster, ...]
    config: dict = field(default_factory=dict)
    converged: bool = True
    iterations: int = 0

    def __post_init__(self) -> None:
        self.clusters = tuple(self.clusters)
        if not self.clusters:
            raise ConsistencyError("hierarchy has no clusters")
        seen: set[str] = set()
        exemplars = []
        for position, cluster in enumerate(self.clusters):
            if cluster.id != position:
                raise ConsistencyError(
                    f"cluster id {cluster.id} out of order; ids must be dense and ascending"
                )
            if not cluster.members:
                raise ConsistencyError(f"cluster {cluster.id} has no members")
            if list(cluster.members) != sorted(cluster.members):
                raise ConsistencyError(f"cluster {cluster.id} members are not sorted")
            if cluster.exemplar not in cluster.members:
                raise ConsistencyError(
                    f"cluster {cluster.id} exemplar {cluster.exemplar!r} is not one of its members"
                )
            for member in cluster.members:
                if member in seen:
                    raise ConsistencyError(
                        f"category {member!r} appears more than once in the hierarchy"
                    )
                seen.add(member)
            exemplars.append(cluster.exemplar)
        if exemplars != sorted(exemplars):
            raise ConsistencyError("clusters must be ordered by exemplar label")

    def labels(self) -> tuple[str, ...]:
        return tuple(sorted(m for c in self.clusters for m in c.members))

    def exemplars(self) -> tuple[str, ...]:
        return tuple(c.exemplar for c in self.clusters)

    def cluster_of(self) -> dict[str, int]:
        return {m: c.id for c in self.clusters for m in c.members}

    def to_json_obj(self) -> dict:
        return {
            "clusters": [
                {"id": c.id, "exemplar": c.exemplar, "members": list(c.members)}
                for c in self.clusters
            ],
            "config": self.config,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Hierarchy":
        try:
            clusters = tuple(
                Cluster(int(c["id"]), str(c["exemplar"]), tuple(str(m) for m in c["members"]))
                for c in obj["clusters"]
            )
            config = dict(obj.get("config", {}))
            converged = bool(obj["converged"])
            iterations = int(obj["iterations"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConsistencyError(f"malformed hierarchy object: {exc}") from exc
        return cls(clusters, config, converged, iterations)


def build_hierarchy(
    result: ClusterAssignment,
    labels: Sequence[str],
    config: dict | None = None,
) -> Hierarchy:
    """Turn a flat index assignment into a labeled hierarchy."""
    labels = tuple(str(c) for c in labels)
    if len(labels) != len(result.assignment):
        raise ConsistencyError(
            f"{len(labels)} labels for an assignment over {len(result.assignment)} points"
        )
    groups: dict[int, list[str]] = {}
    for i, e in enumerate(result.assignment):
        groups.setdefault(int(e), []).append(labels[i])
    ordered = sorted(groups.items(), key=lambda item: labels[item[0]])
    clusters = tuple(
        Cluster(id=cid, exemplar=labels[e], members=tuple(sorted(members)))
        for cid, (e, members) in enumerate(ordered)
    )
    return Hierarchy(
        clusters=clusters,
        config=dict(config or {}),
        converged=result.converged,
        iterations=result.iterations,
    )


def cluster_categories(sim: SimilarityMatrix, config: APConfig) -> Hierarchy:
    """Run affinity propagation on a similarity matrix and wrap the result."""
    result = affinity_propagation(sim, config)
    provenance = config.to_json_obj()
    provenance["preference_value"] = result.preference_value
    provenance["similarity_domains"] = list(sim.provenance.get("domains", []))
    return build_hierarchy(result, sim.labels, provenance)
