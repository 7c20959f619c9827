"""The end-to-end selection loop and the strategy-comparison grid.

One experiment: warm up on the labeled source pool, then for each round
refresh region aggregates with the current model, build per-class density
estimators for both domains, rank and select regions under the scheduled
density/uncertainty budget split, reveal their labels, and fine-tune on
everything labeled so far; mean IoU is tracked on a held-out target split.

Strategies reduce the loop to its ablations: pure uncertainty baselines,
density-only selection with or without class balancing, uniformly random
acquisition, and the full scheduled combination.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidInput, NotEstimable
from .model import (
    ARCH_VERSIONS,
    TrainSpec,
    evaluate,
    extract_feature,
    finetune,
    predict_proba,
    warmup,
)
from .pool import Domain, DomainPool, refresh_aggregates
from .schedule import ScheduleParams, SchedulePolicy, split_budget
from .selection import (
    ClassKl,
    ScoredRegion,
    class_budgets,
    estimate_class_kl,
    largest_remainder,
    per_pixel_uncertainty_value,
    score_regions,
    select_density,
    select_uncertainty,
    uncertainty_value,
)
from .density import build_estimators
from .simulate import ShiftSpec, custom_shift_spec, generate, oracle_label
from .util import derive_rng, derive_seed, round_half_up

THREADS_ENV_VAR = "ADA_SELECT_THREADS"


class Strategy(str, Enum):
    RANDOM = "random"
    ENTROPY = "entropy"
    MARGIN = "margin"
    CONFIDENCE = "confidence"
    DENSITY_ONLY = "density_only"
    DENSITY_CLASS_BALANCED = "density_class_balanced"
    FULL = "full"


# Strategies that never touch the density path.
_UNCERTAINTY_ONLY = {Strategy.ENTROPY, Strategy.MARGIN, Strategy.CONFIDENCE}
_DENSITY_ONLY = {Strategy.DENSITY_ONLY, Strategy.DENSITY_CLASS_BALANCED}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to run one strategy over one or more seeds.

    The synthetic-benchmark knobs default to shift-bench-v1; the loop
    knobs default to a 5-round schedule spending 1% of the target-train
    pixels per round.
    """

    # data generation
    class_count: int = 6
    feature_dim: int = 8
    components_per_class: int = 2
    shift_magnitude: float = 2.5
    novel_mode_classes: frozenset[int] = frozenset({4, 5})
    samples_per_domain: int = 6000
    eval_fraction: float = 1.0 / 3.0
    region_size: int = 5
    center_scale: float = 1.2
    component_spread: float = 1.0
    novel_offset: float = 7.5
    # selection loop
    strategy: Strategy = Strategy.FULL
    class_balance: bool = True
    per_pixel_uncertainty: bool = False
    alpha: float = 1.0
    beta: float = 1.0
    policy: SchedulePolicy = SchedulePolicy.HALF_DECAY
    rounds: int = 5
    budget_pct: float = 1.0
    rho: float = 200.0
    kappa: float = 20.0
    weight_floor: float = 0.01
    # training
    arch: str = "one_hidden"
    hidden_units: int = 16
    learning_rate: float = 0.15
    batch_size: int = 64
    warmup_epochs: int = 30
    finetune_epochs: int = 35
    # experiment plumbing
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if not 0.0 < self.budget_pct <= 100.0:
            raise InvalidInput(f"budget_pct must lie in (0, 100], got {self.budget_pct}")
        if self.rho <= 0.0:
            raise InvalidInput(f"rho must be > 0, got {self.rho}")
        if self.kappa <= 0.0 or self.weight_floor < 0.0:
            raise InvalidInput("need kappa > 0 and weight_floor >= 0")
        if not self.seeds:
            raise InvalidInput("need at least one seed")
        if self.arch not in ARCH_VERSIONS:
            raise InvalidInput(f"unknown architecture: {self.arch!r}")
        if self.arch == "one_hidden" and self.hidden_units < 1:
            raise InvalidInput(f"hidden_units must be >= 1, got {self.hidden_units}")
        # delegate range checks for the schedule/shift/training parameters
        ScheduleParams(self.alpha, self.beta, self.policy, self.rounds, 0)
        self.shift_spec(int(self.seeds[0]))
        TrainSpec(self.learning_rate, self.warmup_epochs, self.batch_size)
        TrainSpec(self.learning_rate, self.finetune_epochs, self.batch_size)

    def shift_spec(self, seed: int) -> ShiftSpec:
        return custom_shift_spec(
            class_count=self.class_count,
            feature_dim=self.feature_dim,
            components_per_class=self.components_per_class,
            shift_magnitude=self.shift_magnitude,
            novel_mode_classes=self.novel_mode_classes,
            samples_per_domain=self.samples_per_domain,
            eval_fraction=self.eval_fraction,
            seed=seed,
            region_size=self.region_size,
            center_scale=self.center_scale,
            component_spread=self.component_spread,
            novel_offset=self.novel_offset,
        )


@dataclass(frozen=True)
class RoundMetrics:
    round_index: int
    labeled_px: int  # cumulative over rounds
    density_fraction: float  # the lambda actually used (0 for random)
    miou: float
    accuracy: float
    per_class_iou: tuple[float, ...]
    selected_px_per_class: tuple[int, ...]  # this round, by true class
    density_px_per_class: tuple[int, ...]  # density-stage subset of the above


@dataclass
class ScoreDumpRow:
    region_id: int
    predicted_class: int
    log_density_source: float
    log_density_target: float
    log_ratio: float
    entropy: float
    margin: float
    confidence: float
    selected_by: str  # density | uncertainty | none


def effective_loop(config: ExperimentConfig) -> tuple[SchedulePolicy, bool, str]:
    """Resolve a strategy to (schedule policy, class_balance, criterion).

    The full strategy honors the configured policy; ablation strategies
    pin the schedule to one end and fix their own balancing/criterion.
    """
    s = config.strategy
    if s is Strategy.FULL:
        return config.policy, config.class_balance, "entropy"
    if s in _UNCERTAINTY_ONLY:
        return SchedulePolicy.PURE_UNCERTAINTY, False, s.value
    if s in _DENSITY_ONLY:
        return SchedulePolicy.PURE_DENSITY, s is Strategy.DENSITY_CLASS_BALANCED, "entropy"
    if s is Strategy.RANDOM:
        return SchedulePolicy.PURE_UNCERTAINTY, False, "entropy"
    raise InvalidInput(f"unknown strategy: {s!r}")


def worker_count() -> int:
    """Concurrency bound from ADA_SELECT_THREADS (0 or unset = auto)."""
    raw = os.environ.get(THREADS_ENV_VAR, "0").strip()
    try:
        value = int(raw)
    except ValueError:
        raise InvalidInput(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from None
    if value < 0:
        raise InvalidInput(f"{THREADS_ENV_VAR} must be >= 0, got {value}")
    if value == 0:
        return os.cpu_count() or 1
    return value


def selection_histogram(region_ids: list[int], pool: DomainPool) -> np.ndarray:
    """Selected pixels per TRUE class (length class_count)."""
    counts = np.zeros(pool.class_count, dtype=np.int64)
    for rid in region_ids:
        region = pool.region_by_id(rid)
        for sid in region.sample_ids:
            counts[pool.sample_by_id(sid).true_class] += 1
    return counts


def _refresh_both(clf, source: DomainPool, target: DomainPool) -> dict[Domain, np.ndarray]:
    """Recompute region aggregates for both pools; returns per-domain
    sample-aligned probability matrices (reused by uncertainty scoring)."""
    probs: dict[Domain, np.ndarray] = {}
    for pool in (source, target):
        x = pool.feature_matrix()
        p = predict_proba(clf, x)
        refresh_aggregates(pool, extract_feature(clf, x), p)
        probs[pool.domain] = p
    return probs


def _class_kl_table(scored: list[ScoredRegion], class_count: int) -> list[ClassKl]:
    table: list[ClassKl] = []
    for c in range(class_count):
        count = sum(1 for s in scored if s.predicted_class == c)
        try:
            kl = estimate_class_kl(scored, c)
        except NotEstimable:
            kl = None
        table.append(ClassKl(class_id=c, kl_estimate=kl, region_count=count))
    return table


def _equal_budgets(table: list[ClassKl], budget_px: int) -> list[ClassKl]:
    shares = largest_remainder([1.0] * len(table), budget_px)
    for entry, share in zip(table, shares):
        entry.weight = 1.0
        entry.budget_px = share
    return table


def _random_round(pool: DomainPool, budget_px: int, rng: np.random.Generator) -> list[int]:
    ids = [r.id for r in pool.unlabeled_regions()]
    order = rng.permutation(len(ids))
    chosen: list[int] = []
    remaining = budget_px
    for i in order:
        region = pool.region_by_id(ids[i])
        if region.size_px <= remaining:
            chosen.append(region.id)
            remaining -= region.size_px
    return chosen


def _uncertainty_values(
    pool: DomainPool,
    regions,
    probs: np.ndarray,
    criterion: str,
    per_pixel: bool,
) -> list[tuple]:
    pairs = []
    for region in regions:
        if per_pixel:
            value = per_pixel_uncertainty_value(probs[pool.sample_rows(region)], criterion)
        else:
            value = uncertainty_value(region.mean_probs, criterion)
        pairs.append((region, value))
    return pairs


def run_experiment(
    config: ExperimentConfig,
    seed: int,
    score_sink: list[tuple[int, list[ScoreDumpRow]]] | None = None,
) -> list[RoundMetrics]:
    """Run the N-round loop for one seed; returns per-round metrics.

    Fully deterministic: every stochastic stage draws from a sub-seed
    derived from `seed` and a stage tag. When `score_sink` is given, each
    round appends (round_index, per-region score rows) for the dump CSV.
    """
    spec = config.shift_spec(seed)
    source, target_train, target_eval = generate(spec)
    round_budget = round_half_up(config.budget_pct / 100.0 * target_train.total_px)
    policy, class_balance, criterion = effective_loop(config)
    params = ScheduleParams(
        alpha=config.alpha,
        beta=config.beta,
        policy=policy,
        rounds=config.rounds,
        round_budget_px=round_budget,
    )

    clf = warmup(
        source,
        TrainSpec(
            learning_rate=config.learning_rate,
            epochs=config.warmup_epochs,
            batch_size=config.batch_size,
            seed=derive_seed(seed, "warmup"),
        ),
        arch=config.arch,
        hidden_units=config.hidden_units,
    )

    history: list[RoundMetrics] = []
    for n in range(1, config.rounds + 1):
        plan = split_budget(params, n)
        want_scores = score_sink is not None and config.strategy is not Strategy.RANDOM

        density_ids: list[int] = []
        uncertainty_ids: list[int] = []
        if config.strategy is Strategy.RANDOM:
            lam = 0.0
            density_ids = []
            uncertainty_ids = _random_round(
                target_train, round_budget, derive_rng(seed, "random-round", n)
            )
            selected = list(uncertainty_ids)
        else:
            lam = plan.density_fraction
            probs = _refresh_both(clf, source, target_train)
            scored: list[ScoredRegion] = []
            if plan.density_px > 0 or want_scores:
                est_seed = derive_seed(seed, "estimators", n)
                src_est = build_estimators(source.regions, Domain.SOURCE, config.rho, est_seed)
                trg_est = build_estimators(
                    target_train.regions, Domain.TARGET, config.rho, est_seed
                )
                scored = score_regions(target_train.unlabeled_regions(), src_est, trg_est)
            if plan.density_px > 0:
                table = _class_kl_table(scored, config.class_count)
                if class_balance:
                    class_budgets(table, plan.density_px, config.kappa, config.weight_floor)
                else:
                    _equal_budgets(table, plan.density_px)
                density_ids, _ = select_density(scored, table)
            if plan.uncertainty_px > 0:
                chosen = set(density_ids)
                candidates = _uncertainty_values(
                    target_train,
                    (r for r in target_train.unlabeled_regions() if r.id not in chosen),
                    probs[Domain.TARGET],
                    criterion,
                    config.per_pixel_uncertainty,
                )
                uncertainty_ids, _ = select_uncertainty(
                    candidates, plan.uncertainty_px, criterion
                )
            selected = density_ids + uncertainty_ids
            if want_scores:
                score_sink.append(
                    (n, _dump_rows(target_train, scored, density_ids, uncertainty_ids))
                )

        density_hist = selection_histogram(density_ids, target_train)
        total_hist = density_hist + selection_histogram(uncertainty_ids, target_train)
        oracle_label(target_train, selected)

        clf = finetune(
            clf,
            [source, target_train],
            TrainSpec(
                learning_rate=config.learning_rate,
                epochs=config.finetune_epochs,
                batch_size=config.batch_size,
                seed=derive_seed(seed, "finetune", n),
            ),
        )
        report = evaluate(clf, target_eval)
        history.append(
            RoundMetrics(
                round_index=n,
                labeled_px=target_train.labeled_px,
                density_fraction=lam,
                miou=report.miou,
                accuracy=report.accuracy,
                per_class_iou=tuple(float(v) for v in report.per_class_iou),
                selected_px_per_class=tuple(int(v) for v in total_hist),
                density_px_per_class=tuple(int(v) for v in density_hist),
            )
        )
    return history


def _dump_rows(
    pool: DomainPool,
    scored: list[ScoredRegion],
    density_ids: list[int],
    uncertainty_ids: list[int],
) -> list[ScoreDumpRow]:
    by_density, by_uncertainty = set(density_ids), set(uncertainty_ids)
    rows = []
    for s in sorted(scored, key=lambda s: s.region_id):
        region = pool.region_by_id(s.region_id)
        tag = (
            "density"
            if s.region_id in by_density
            else "uncertainty"
            if s.region_id in by_uncertainty
            else "none"
        )
        rows.append(
            ScoreDumpRow(
                region_id=s.region_id,
                predicted_class=s.predicted_class,
                log_density_source=s.log_density_source,
                log_density_target=s.log_density_target,
                log_ratio=s.log_ratio,
                entropy=uncertainty_value(region.mean_probs, "entropy"),
                margin=uncertainty_value(region.mean_probs, "margin"),
                confidence=uncertainty_value(region.mean_probs, "confidence"),
                selected_by=tag,
            )
        )
    return rows


@dataclass(frozen=True)
class SummaryRow:
    strategy: str
    round_index: int
    mean_miou: float
    std_miou: float
    seed_count: int


@dataclass(frozen=True)
class SignTestRow:
    strategy_a: str
    strategy_b: str
    round_index: int
    wins_a: int
    wins_b: int
    ties: int
    p_value: float  # one-sided: a beats b


@dataclass
class ComparisonResult:
    per_run: dict[tuple[str, int], list[RoundMetrics]] = field(default_factory=dict)
    summary: list[SummaryRow] = field(default_factory=list)
    sign_tests: list[SignTestRow] = field(default_factory=list)


def sign_test_p(a_values: list[float], b_values: list[float]) -> tuple[int, int, int, float]:
    """Paired one-sided exact sign test for 'a exceeds b'.

    Ties are dropped; with w wins over m informative pairs the p-value is
    P[Binomial(m, 1/2) >= w]. No pairs at all gives p = 1.
    """
    if len(a_values) != len(b_values):
        raise InvalidInput("paired test needs equal-length value lists")
    wins = sum(1 for a, b in zip(a_values, b_values) if a > b)
    losses = sum(1 for a, b in zip(a_values, b_values) if b > a)
    m = wins + losses
    if m == 0:
        return 0, 0, len(a_values), 1.0
    p = sum(math.comb(m, k) for k in range(wins, m + 1)) / 2.0**m
    return wins, losses, len(a_values) - m, p


def run_comparison(
    configs: list[ExperimentConfig], seeds: list[int]
) -> ComparisonResult:
    """Run every (strategy config, seed) pair and tabulate the grid.

    Pairs fan out over a thread pool bounded by ADA_SELECT_THREADS; the
    result tables are assembled in deterministic order regardless of
    completion order. A single config degenerates to a plain summary with
    no sign-test rows.
    """
    if not configs:
        raise InvalidInput("need at least one experiment config")
    if not seeds:
        raise InvalidInput("need at least one seed")
    labels = [c.strategy.value for c in configs]
    if len(set(labels)) != len(labels):
        raise InvalidInput("each config must use a distinct strategy")
    if len({c.rounds for c in configs}) != 1:
        raise InvalidInput("all configs in one comparison must share the round count")

    jobs = [(c, s) for c in configs for s in seeds]
    result = ComparisonResult()
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(lambda job: run_experiment(job[0], job[1]), jobs))
    else:
        outs = [run_experiment(c, s) for c, s in jobs]
    for (cfg, s), metrics in zip(jobs, outs):
        result.per_run[(cfg.strategy.value, s)] = metrics

    rounds = configs[0].rounds
    for cfg in configs:
        label = cfg.strategy.value
        for n in range(1, rounds + 1):
            vals = [result.per_run[(label, s)][n - 1].miou for s in seeds]
            result.summary.append(
                SummaryRow(
                    strategy=label,
                    round_index=n,
                    mean_miou=float(np.mean(vals)),
                    std_miou=float(np.std(vals)),
                    seed_count=len(seeds),
                )
            )
    for a in labels:
        for b in labels:
            if a == b:
                continue
            for n in range(1, rounds + 1):
                av = [result.per_run[(a, s)][n - 1].miou for s in seeds]
                bv = [result.per_run[(b, s)][n - 1].miou for s in seeds]
                wins, losses, ties, p = sign_test_p(av, bv)
                result.sign_tests.append(
                    SignTestRow(
                        strategy_a=a,
                        strategy_b=b,
                        round_index=n,
                        wins_a=wins,
                        wins_b=losses,
                        ties=ties,
                        p_value=p,
                    )
                )
    return result


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


def write_results_csv(
    per_run: dict[tuple[str, int], list[RoundMetrics]], class_count: int, path
) -> None:
    """`strategy,seed,round,labeled_px,lambda,miou,acc,iou_c0,...` rows."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(
            ["strategy", "seed", "round", "labeled_px", "lambda", "miou", "acc"]
            + [f"iou_c{c}" for c in range(class_count)]
        )
        for (label, seed) in sorted(per_run):
            for m in per_run[(label, seed)]:
                w.writerow(
                    [label, seed, m.round_index, m.labeled_px, _fmt(m.density_fraction),
                     _fmt(m.miou), _fmt(m.accuracy)]
                    + [_fmt(v) for v in m.per_class_iou]
                )


def write_histogram_csv(per_run: dict[tuple[str, int], list[RoundMetrics]], path) -> None:
    """`strategy,seed,round,class,selected_px` rows (total selection)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["strategy", "seed", "round", "class", "selected_px"])
        for (label, seed) in sorted(per_run):
            for m in per_run[(label, seed)]:
                for c, px in enumerate(m.selected_px_per_class):
                    w.writerow([label, seed, m.round_index, c, px])


def write_summary_csv(summary: list[SummaryRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["strategy", "round", "mean_miou", "std_miou", "seeds"])
        for row in summary:
            w.writerow(
                [row.strategy, row.round_index, _fmt(row.mean_miou), _fmt(row.std_miou),
                 row.seed_count]
            )


def write_sign_tests_csv(rows: list[SignTestRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["strategy_a", "strategy_b", "round", "wins_a", "wins_b", "ties", "p_value"])
        for r in rows:
            w.writerow(
                [r.strategy_a, r.strategy_b, r.round_index, r.wins_a, r.wins_b, r.ties,
                 _fmt(r.p_value)]
            )


def write_score_dump_csv(rows: list[ScoreDumpRow], path) -> None:
    """`region_id,class,log_dS,log_dT,pi,entropy,margin,confidence,selected_by`."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(
            ["region_id", "class", "log_dS", "log_dT", "pi", "entropy", "margin",
             "confidence", "selected_by"]
        )
        for r in rows:
            w.writerow(
                [r.region_id, r.predicted_class, _fmt(r.log_density_source),
                 _fmt(r.log_density_target), _fmt(r.log_ratio), _fmt(r.entropy),
                 _fmt(r.margin), _fmt(r.confidence), r.selected_by]
            )
