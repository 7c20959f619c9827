"""Region scoring, class-balanced budgeting, and the two samplers.

The density sampler ranks unlabeled regions by how much more typical they
are of the target domain than of the source (log-density ratio under the
per-class mixtures), spends a per-class budget derived from estimated
class-conditional divergences, and tops up any leftover with a global
pass. The uncertainty sampler ranks regions by a prediction-confidence
criterion. Both spend integer pixel budgets greedily in rank order,
skipping regions that no longer fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .density import LOG_FLOOR, DensityEstimators, log_density
from .errors import InternalError, InvalidInput, NotEstimable
from .pool import PROB_SUM_TOL, Region

DEFAULT_KL_CAP = 20.0
DEFAULT_WEIGHT_FLOOR = 0.01


@dataclass(frozen=True)
class ScoredRegion:
    """An unlabeled region with both domain log-densities attached."""

    region_id: int
    predicted_class: int
    log_density_target: float
    log_density_source: float
    size_px: int

    @property
    def log_ratio(self) -> float:
        """How much more target-typical than source-typical the region is."""
        return self.log_density_target - self.log_density_source


@dataclass
class ClassKl:
    """Per-class divergence estimate and the pixel budget derived from it."""

    class_id: int
    kl_estimate: float | None  # None when no region supports the class
    region_count: int
    weight: float = 0.0
    budget_px: int = 0


def score_regions(
    regions: list[Region],
    source_est: DensityEstimators,
    target_est: DensityEstimators,
) -> list[ScoredRegion]:
    """Attach source/target log-densities to each region.

    Each region is evaluated under the mixtures of its *predicted* class.
    A missing target-side mixture is a bug (the target estimators were fit
    on the very predictions being scored); a missing source-side mixture
    means the source never exhibits the class, and the source log-density
    falls back to the floor so the ratio saturates high.
    """
    scored: list[ScoredRegion] = []
    for region in regions:
        if region.feature_z is None or region.predicted_class is None:
            raise InvalidInput(
                f"region {region.id} has no aggregates; refresh aggregates first"
            )
        c = region.predicted_class
        trg_model = target_est.per_class.get(c)
        if trg_model is None:
            raise InternalError(
                f"no target density model for predicted class {c} (region {region.id})"
            )
        src_model = source_est.per_class.get(c)
        log_d_t = log_density(trg_model, region.feature_z)
        log_d_s = LOG_FLOOR if src_model is None else log_density(src_model, region.feature_z)
        scored.append(
            ScoredRegion(
                region_id=region.id,
                predicted_class=c,
                log_density_target=log_d_t,
                log_density_source=log_d_s,
                size_px=region.size_px,
            )
        )
    return scored


def estimate_class_kl(scored: list[ScoredRegion], class_id: int) -> float:
    """Monte-Carlo divergence estimate for one class: the mean log-ratio
    over regions predicted as that class."""
    ratios = [s.log_ratio for s in scored if s.predicted_class == class_id]
    if not ratios:
        raise NotEstimable(f"no scored regions predicted as class {class_id}")
    return float(np.mean(ratios))


def largest_remainder(weights: list[float], total: int) -> list[int]:
    """Apportion `total` integer units proportionally to `weights`.

    Floors the exact shares, then hands the leftover units out one each in
    order of largest fractional part (ties to the lower index). The result
    always sums exactly to `total`.
    """
    if total < 0:
        raise InvalidInput(f"total must be >= 0, got {total}")
    if any(w < 0 for w in weights):
        raise InvalidInput("weights must be non-negative")
    wsum = float(sum(weights))
    if not weights:
        if total:
            raise InvalidInput("cannot apportion a positive total over no classes")
        return []
    if wsum <= 0.0:
        weights = [1.0] * len(weights)
        wsum = float(len(weights))
    exact = [w / wsum * total for w in weights]
    floors = [int(math.floor(e)) for e in exact]
    leftover = total - sum(floors)
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - floors[i]), i))
    for i in order[:leftover]:
        floors[i] += 1
    return floors


def class_budgets(
    kls: list[ClassKl],
    budget_px: int,
    kl_cap: float = DEFAULT_KL_CAP,
    weight_floor: float = DEFAULT_WEIGHT_FLOOR,
) -> list[ClassKl]:
    """Split the density budget across classes by divergence weight.

    Each class weighs clamp(kl, 0, kl_cap) + weight_floor; classes whose
    divergence could not be estimated weigh kl_cap + weight_floor (treat
    unknown as maximally shifted). Integer apportionment preserves the
    total exactly. Weights and budgets are filled in on the input entries.
    """
    if budget_px < 0:
        raise InvalidInput(f"budget_px must be >= 0, got {budget_px}")
    if kl_cap <= 0 or weight_floor < 0:
        raise InvalidInput("need kl_cap > 0 and weight_floor >= 0")
    for entry in kls:
        if entry.kl_estimate is None:
            entry.weight = kl_cap + weight_floor
        else:
            entry.weight = min(max(entry.kl_estimate, 0.0), kl_cap) + weight_floor
    shares = largest_remainder([e.weight for e in kls], budget_px)
    for entry, share in zip(kls, shares):
        entry.budget_px = share
    return kls


def _greedy_fit(ranked: list[ScoredRegion], budget_px: int) -> tuple[list[int], int]:
    """Spend a pixel budget over a ranked list; skipped regions stay
    eligible for later passes. Returns (chosen ids, pixels spent)."""
    chosen: list[int] = []
    remaining = budget_px
    for s in ranked:
        if s.size_px <= remaining:
            chosen.append(s.region_id)
            remaining -= s.size_px
    return chosen, budget_px - remaining


def select_density(
    scored: list[ScoredRegion], budgets: list[ClassKl]
) -> tuple[list[int], int]:
    """Class-balanced density selection.

    Per class, regions predicted as that class are taken in descending
    log-ratio order (ties to the lower region id) while they fit the class
    budget. Budget that no class could spend is pooled and spent in one
    global pass over everything still unselected, same ordering. Returns
    (selected region ids in acquisition order, pixels spent).
    """
    by_class: dict[int, list[ScoredRegion]] = {}
    for s in scored:
        by_class.setdefault(s.predicted_class, []).append(s)
    rank_key = lambda s: (-s.log_ratio, s.region_id)

    selected: list[int] = []
    taken: set[int] = set()
    leftover = 0
    for entry in budgets:
        group = sorted(by_class.get(entry.class_id, []), key=rank_key)
        chosen, spent = _greedy_fit(group, entry.budget_px)
        selected.extend(chosen)
        taken.update(chosen)
        leftover += entry.budget_px - spent
    if leftover > 0:
        rest = sorted((s for s in scored if s.region_id not in taken), key=rank_key)
        chosen, _ = _greedy_fit(rest, leftover)
        selected.extend(chosen)
        taken.update(chosen)
    if len(taken) != len(selected):
        raise InternalError("density selection produced duplicate region ids")
    return selected, sum(s.size_px for s in scored if s.region_id in taken)


def entropy_score(probs: np.ndarray) -> float:
    """Shannon entropy (nats) of one probability vector; 0*log(0) is 0."""
    p = _checked_probs(probs)
    nz = p[p > 0.0]
    return float(-np.sum(nz * np.log(nz)))


def margin_score(probs: np.ndarray) -> float:
    """Top-1 minus top-2 probability; small means uncertain."""
    p = _checked_probs(probs)
    if p.shape[0] < 2:
        return float(p[0])
    top2 = np.sort(p)[-2:]
    return float(top2[1] - top2[0])


def confidence_score(probs: np.ndarray) -> float:
    """Top-1 probability; small means uncertain."""
    p = _checked_probs(probs)
    return float(np.max(p))


def _checked_probs(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] == 0:
        raise InvalidInput(f"expected a 1-d probability vector, got shape {p.shape}")
    if np.any(p < 0.0) or abs(float(p.sum()) - 1.0) > PROB_SUM_TOL:
        raise InvalidInput("probabilities must be non-negative and sum to 1 within 1e-9")
    return p


UNCERTAINTY_CRITERIA = ("entropy", "margin", "confidence")


def uncertainty_value(probs: np.ndarray, criterion: str) -> float:
    if criterion == "entropy":
        return entropy_score(probs)
    if criterion == "margin":
        return margin_score(probs)
    if criterion == "confidence":
        return confidence_score(probs)
    raise InvalidInput(f"unknown uncertainty criterion: {criterion!r}")


def per_pixel_uncertainty_value(member_probs: np.ndarray, criterion: str) -> float:
    """Mean of the per-pixel criterion over a region's members — the
    alternative to scoring the region's mean probability vector."""
    member_probs = np.asarray(member_probs, dtype=np.float64)
    if member_probs.ndim != 2 or member_probs.shape[0] == 0:
        raise InvalidInput("expected a non-empty (n, C) batch of probability rows")
    return float(np.mean([uncertainty_value(row, criterion) for row in member_probs]))


def select_uncertainty(
    candidates: list[tuple[Region, float]], budget_px: int, criterion: str
) -> tuple[list[int], int]:
    """Greedy budget-fit over regions ranked by an uncertainty value.

    `candidates` pairs each region with its already-computed criterion
    value. Entropy ranks descending (most uncertain first); margin and
    confidence rank ascending. Ties break to the lower region id.
    """
    if criterion not in UNCERTAINTY_CRITERIA:
        raise InvalidInput(f"unknown uncertainty criterion: {criterion!r}")
    if budget_px < 0:
        raise InvalidInput(f"budget_px must be >= 0, got {budget_px}")
    sign = -1.0 if criterion == "entropy" else 1.0
    ranked = sorted(candidates, key=lambda rv: (sign * rv[1], rv[0].id))
    chosen: list[int] = []
    remaining = budget_px
    for region, _ in ranked:
        if region.size_px <= remaining:
            chosen.append(region.id)
            remaining -= region.size_px
    return chosen, budget_px - remaining


def verify_kl_decomposition(
    p_target: np.ndarray, p_source: np.ndarray
) -> tuple[float, float, float]:
    """Check KL(joint||joint) == KL(marginal) + expected conditional KL.

    Both arguments are (C, M) joint tables over (class, feature-bin) with
    strictly positive entries summing to 1. Returns (joint KL, decomposed
    sum, residual); callers assert the residual is ~0.
    """
    pt = np.asarray(p_target, dtype=np.float64)
    ps = np.asarray(p_source, dtype=np.float64)
    if pt.shape != ps.shape or pt.ndim != 2:
        raise InvalidInput("joint tables must share one (C, M) shape")
    if np.any(pt <= 0.0) or np.any(ps <= 0.0):
        raise InvalidInput("joint tables must be strictly positive")
    for name, tab in (("target", pt), ("source", ps)):
        if abs(float(tab.sum()) - 1.0) > 1e-9:
            raise InvalidInput(f"{name} joint table must sum to 1")

    joint = float(np.sum(pt * np.log(pt / ps)))
    mt, ms = pt.sum(axis=1), ps.sum(axis=1)
    marginal = float(np.sum(mt * np.log(mt / ms)))
    cond = 0.0
    for c in range(pt.shape[0]):
        ct, cs = pt[c] / mt[c], ps[c] / ms[c]
        cond += float(mt[c]) * float(np.sum(ct * np.log(ct / cs)))
    return joint, marginal + cond, joint - (marginal + cond)
