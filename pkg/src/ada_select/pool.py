"""Datasets, regions, and label bookkeeping.

A pool is a bag of samples grouped into fixed regions. Regions are the
atomic labeling unit: budgets are counted in pixels (= member samples),
and a region's aggregate feature and predicted class are recomputed from
the current model at the start of every selection round.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidInput
from .util import derive_rng

PROB_SUM_TOL = 1e-9


class Domain(str, Enum):
    SOURCE = "source"
    TARGET = "target"


class LabelState(str, Enum):
    UNLABELED = "unlabeled"
    LABELED = "labeled"


@dataclass
class Sample:
    """One pixel-analogue: a feature vector with a hidden ground-truth class."""

    id: int
    feature: np.ndarray
    true_class: int
    region_id: int = -1


@dataclass
class Region:
    """A fixed group of samples labeled (and budgeted) as a unit.

    `feature_z`, `predicted_class` and `mean_probs` are model-dependent
    aggregates, refreshed each round; `majority_true_class` is static and
    is only consulted for source-side grouping and reporting.
    """

    id: int
    sample_ids: list[int]
    size_px: int
    majority_true_class: int = -1
    feature_z: np.ndarray | None = None
    predicted_class: int | None = None
    mean_probs: np.ndarray | None = None
    label_state: LabelState = LabelState.UNLABELED
    px_scores: dict[str, float] | None = None


@dataclass
class DomainPool:
    domain: Domain
    samples: list[Sample]
    regions: list[Region]
    class_count: int
    feature_dim: int
    _sample_index: dict[int, int] = field(default_factory=dict, repr=False)
    _region_index: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._sample_index = {s.id: i for i, s in enumerate(self.samples)}
        self._region_index = {r.id: i for i, r in enumerate(self.regions)}

    def sample_by_id(self, sample_id: int) -> Sample:
        return self.samples[self._sample_index[sample_id]]

    def region_by_id(self, region_id: int) -> Region:
        try:
            return self.regions[self._region_index[region_id]]
        except KeyError:
            raise InvalidInput(f"unknown region id {region_id}") from None

    @property
    def total_px(self) -> int:
        return sum(r.size_px for r in self.regions)

    @property
    def labeled_px(self) -> int:
        return sum(r.size_px for r in self.regions if r.label_state is LabelState.LABELED)

    @property
    def unlabeled_px(self) -> int:
        return sum(r.size_px for r in self.regions if r.label_state is LabelState.UNLABELED)

    def unlabeled_regions(self) -> list[Region]:
        return [r for r in self.regions if r.label_state is LabelState.UNLABELED]

    def labeled_regions(self) -> list[Region]:
        return [r for r in self.regions if r.label_state is LabelState.LABELED]

    def feature_matrix(self) -> np.ndarray:
        """(n_samples, d) raw features in pool sample order."""
        return np.stack([s.feature for s in self.samples])

    def sample_rows(self, region: Region) -> list[int]:
        """Row indices into pool-ordered arrays for a region's members."""
        return [self._sample_index[sid] for sid in region.sample_ids]

    def true_classes(self) -> np.ndarray:
        return np.array([s.true_class for s in self.samples], dtype=np.int64)


def _majority_class(samples: list[Sample]) -> int:
    counts: dict[int, int] = {}
    for s in samples:
        counts[s.true_class] = counts.get(s.true_class, 0) + 1
    best = max(counts.values())
    # ties break to the lowest class id, mirroring the argmax rule
    return min(c for c, n in counts.items() if n == best)


def build_regions(
    samples: list[Sample], region_size: int, seed: int, start_id: int = 0
) -> list[Region]:
    """Partition samples into contiguous fixed-size blocks of a seeded shuffle.

    The final block may be smaller than `region_size`. Every sample is
    assigned to exactly one region (its `region_id` is updated in place).
    Deterministic for a given seed.
    """
    if not samples:
        raise InvalidInput("cannot build regions from an empty sample list")
    if region_size < 1:
        raise InvalidInput(f"region_size must be >= 1, got {region_size}")
    rng = derive_rng(seed, "regions")
    order = rng.permutation(len(samples))
    regions: list[Region] = []
    for block_start in range(0, len(samples), region_size):
        block = [samples[i] for i in order[block_start : block_start + region_size]]
        region = Region(
            id=start_id + len(regions),
            sample_ids=[s.id for s in block],
            size_px=len(block),
            majority_true_class=_majority_class(block),
        )
        for s in block:
            s.region_id = region.id
        regions.append(region)
    return regions


def aggregate_region(
    region: Region, member_features: np.ndarray, member_probs: np.ndarray
) -> tuple[np.ndarray, int, np.ndarray]:
    """Aggregate member features and class probabilities for one region.

    Returns (feature_z, predicted_class, mean_probs) where feature_z and
    mean_probs are plain arithmetic means, and the predicted class is the
    argmax of mean_probs with ties broken to the lowest class id.
    """
    member_features = np.asarray(member_features, dtype=np.float64)
    member_probs = np.asarray(member_probs, dtype=np.float64)
    if member_features.ndim != 2 or member_features.shape[0] != region.size_px:
        raise InvalidInput(
            f"expected {region.size_px} member feature rows, got shape {member_features.shape}"
        )
    if member_probs.ndim != 2 or member_probs.shape[0] != region.size_px:
        raise InvalidInput(
            f"expected {region.size_px} member probability rows, got shape {member_probs.shape}"
        )
    sums = member_probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
        raise InvalidInput("member probability vectors must sum to 1 within 1e-9")
    feature_z = member_features.mean(axis=0)
    mean_probs = member_probs.mean(axis=0)
    predicted_class = int(np.argmax(mean_probs))
    return feature_z, predicted_class, mean_probs


def refresh_aggregates(pool: DomainPool, features: np.ndarray, probs: np.ndarray) -> None:
    """Recompute every region's aggregate from per-sample features and probs.

    `features` (n, dz) and `probs` (n, C) are aligned with pool.samples.
    """
    features = np.asarray(features, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if features.shape[0] != len(pool.samples) or probs.shape[0] != len(pool.samples):
        raise InvalidInput("features/probs must have one row per pool sample")
    for region in pool.regions:
        rows = pool.sample_rows(region)
        z, c, p = aggregate_region(region, features[rows], probs[rows])
        region.feature_z = z
        region.predicted_class = c
        region.mean_probs = p


def acquire_labels(pool: DomainPool, region_ids: list[int]) -> int:
    """Mark the listed regions as labeled; returns the pixel count acquired.

    Validates every id before mutating anything: an unknown or already
    labeled id raises InvalidInput and leaves the pool unchanged.
    """
    regions = []
    seen: set[int] = set()
    for rid in region_ids:
        region = pool.region_by_id(rid)
        if region.label_state is LabelState.LABELED or rid in seen:
            raise InvalidInput(f"region {rid} is already labeled")
        seen.add(rid)
        regions.append(region)
    for region in regions:
        region.label_state = LabelState.LABELED
    return sum(r.size_px for r in regions)


def labeled_training_set(pool: DomainPool) -> tuple[np.ndarray, np.ndarray]:
    """(X, y) over samples whose region is labeled; y is the true class.

    For a fully labeled source pool this is the whole pool; for a target
    pool it grows as labels are acquired. Empty pools yield (0, d) arrays.
    """
    feats: list[np.ndarray] = []
    labels: list[int] = []
    for region in pool.regions:
        if region.label_state is not LabelState.LABELED:
            continue
        for sid in region.sample_ids:
            s = pool.sample_by_id(sid)
            feats.append(s.feature)
            labels.append(s.true_class)
    if not feats:
        return (
            np.zeros((0, pool.feature_dim), dtype=np.float64),
            np.zeros((0,), dtype=np.int64),
        )
    return np.stack(feats), np.array(labels, dtype=np.int64)


def save_pool_csv(pool: DomainPool, path) -> None:
    """Write `id,region_id,class,f0,...,f{d-1}` rows, one per sample."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(
            ["id", "region_id", "class"] + [f"f{i}" for i in range(pool.feature_dim)]
        )
        for s in pool.samples:
            writer.writerow(
                [s.id, s.region_id, s.true_class] + [repr(float(v)) for v in s.feature]
            )


def load_pool_csv(path, domain: Domain, class_count: int | None = None) -> DomainPool:
    """Rebuild a pool from the CSV dataset format.

    Regions are reconstructed from the `region_id` column; label state
    follows the domain invariant (source fully labeled, target unlabeled).
    """
    samples: list[Sample] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:3] != ["id", "region_id", "class"]:
            raise InvalidInput(f"unexpected dataset header: {header[:3]}")
        d = len(header) - 3
        for row in reader:
            samples.append(
                Sample(
                    id=int(row[0]),
                    feature=np.array([float(v) for v in row[3:]], dtype=np.float64),
                    true_class=int(row[2]),
                    region_id=int(row[1]),
                )
            )
    if not samples:
        raise InvalidInput(f"dataset {path} contains no samples")
    if class_count is None:
        class_count = max(s.true_class for s in samples) + 1
    by_region: dict[int, list[Sample]] = {}
    for s in samples:
        by_region.setdefault(s.region_id, []).append(s)
    state = LabelState.LABELED if domain is Domain.SOURCE else LabelState.UNLABELED
    regions = [
        Region(
            id=rid,
            sample_ids=[s.id for s in members],
            size_px=len(members),
            majority_true_class=_majority_class(members),
            label_state=state,
        )
        for rid, members in sorted(by_region.items())
    ]
    return DomainPool(
        domain=domain,
        samples=samples,
        regions=regions,
        class_count=class_count,
        feature_dim=d,
    )
