"""Per-class density estimation with diagonal-covariance Gaussian mixtures.

Each domain gets one mixture per class, fit on region-level aggregate
features: the source side groups regions by their dominant ground-truth
class (source labels are given), the target side by the model's predicted
class. Log-densities from the two sides feed the region ranking.

The EM loop is written out rather than delegated so that fits are
bitwise-reproducible for a given seed and the log-likelihood trace is
available to tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .pool import Domain, Region
from .util import clamp, derive_rng, derive_seed, logsumexp, round_half_up

# Additive floor for log-densities: a class the source never exhibits
# reports this instead of -inf so ratios stay finite and such regions
# rank (correctly) as maximally target-specific.
LOG_FLOOR = -1.0e6

VAR_FLOOR = 1e-6
MAX_ITERS = 100
REL_TOL = 1e-6
MAX_COMPONENTS = 10


@dataclass
class GmmModel:
    """Diagonal-covariance Gaussian mixture over d-dimensional features."""

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d), all >= VAR_FLOOR
    ll_trace: list[float] = field(default_factory=list)

    @property
    def component_count(self) -> int:
        return int(self.weights.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.means.shape[1])


@dataclass
class DensityEstimators:
    """One fitted mixture per class for a single domain."""

    domain: Domain
    per_class: dict[int, GmmModel]

    def classes(self) -> list[int]:
        return sorted(self.per_class)


def _component_log_pdf(model: GmmModel, z: np.ndarray) -> np.ndarray:
    """(n, K) log of weight_k * N(z | mean_k, diag var_k)."""
    diff = z[:, None, :] - model.means[None, :, :]  # (n, K, d)
    quad = np.sum(diff * diff / model.variances[None, :, :], axis=2)
    log_norm = -0.5 * (
        model.means.shape[1] * np.log(2.0 * np.pi)
        + np.sum(np.log(model.variances), axis=1)
    )
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    return log_w[None, :] + log_norm[None, :] - 0.5 * quad


def log_density_batch(model: GmmModel, z: np.ndarray) -> np.ndarray:
    """Mixture log-density for each row of z, floored at LOG_FLOOR."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise InvalidInput(f"expected a 2-d batch of feature rows, got ndim={z.ndim}")
    if z.shape[1] != model.feature_dim:
        raise InvalidInput(
            f"feature dim mismatch: model has {model.feature_dim}, got {z.shape[1]}"
        )
    ll = logsumexp(_component_log_pdf(model, z), axis=1)
    return np.maximum(ll, LOG_FLOOR)


def log_density(model: GmmModel, z: np.ndarray) -> float:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise InvalidInput(f"expected a single feature vector, got ndim={z.ndim}")
    return float(log_density_batch(model, z[None, :])[0])


def _kmeans_pp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seed centers: first uniform, rest weighted by squared distance."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all points coincide with a chosen center; any pick is fine
            centers[j] = x[rng.integers(n)]
            continue
        centers[j] = x[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def fit_gmm(features: np.ndarray, component_count: int, seed: int) -> GmmModel:
    """Fit a diagonal-covariance mixture by EM.

    The requested component count is capped at the number of rows. Stops
    when the per-iteration log-likelihood gain falls below REL_TOL in
    relative terms, or after MAX_ITERS iterations. The trace of total
    log-likelihoods (one entry per E-step) is kept on the model.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidInput(f"need a non-empty (n, d) feature matrix, got shape {x.shape}")
    if component_count < 1:
        raise InvalidInput(f"component_count must be >= 1, got {component_count}")
    n, d = x.shape
    k = min(component_count, n)
    rng = derive_rng(seed, "gmm-init")

    global_var = np.maximum(x.var(axis=0), VAR_FLOOR)
    model = GmmModel(
        weights=np.full(k, 1.0 / k),
        means=_kmeans_pp_centers(x, k, rng),
        variances=np.tile(global_var, (k, 1)),
    )

    prev_ll = -np.inf
    for _ in range(MAX_ITERS):
        comp = _component_log_pdf(model, x)  # (n, k)
        row_ll = logsumexp(comp, axis=1)
        total_ll = float(np.sum(np.maximum(row_ll, LOG_FLOOR)))
        model.ll_trace.append(total_ll)
        if np.isfinite(prev_ll) and total_ll - prev_ll < REL_TOL * abs(prev_ll):
            break
        prev_ll = total_ll

        resp = np.exp(comp - row_ll[:, None])  # (n, k)
        nk = resp.sum(axis=0)
        safe_nk = np.maximum(nk, 1e-300)
        model.weights = nk / n
        model.means = (resp.T @ x) / safe_nk[:, None]
        diff = x[:, None, :] - model.means[None, :, :]
        var = np.einsum("nk,nkd->kd", resp, diff * diff) / safe_nk[:, None]
        model.variances = np.maximum(var, VAR_FLOOR)
    return model


def choose_component_count(region_count: int, rho: float) -> int:
    """Mixture size grows with the per-class region count: round(n/rho),
    clipped to [1, MAX_COMPONENTS]."""
    if region_count < 1:
        raise InvalidInput(f"region_count must be >= 1, got {region_count}")
    if rho <= 0:
        raise InvalidInput(f"rho must be positive, got {rho}")
    return int(clamp(round_half_up(region_count / rho), 1, MAX_COMPONENTS))


def _grouping_class(region: Region, domain: Domain) -> int:
    if domain is Domain.SOURCE:
        return region.majority_true_class
    if region.predicted_class is None:
        raise InvalidInput(
            f"region {region.id} has no predicted class; refresh aggregates first"
        )
    return region.predicted_class


def build_estimators(
    regions: list[Region], domain: Domain, rho: float, seed: int
) -> DensityEstimators:
    """Fit one mixture per class present among the given regions.

    Regions are grouped by dominant true class (source) or predicted
    class (target); classes with no supporting regions get no entry.
    Fits are independent, in ascending class order, each with its own
    derived seed, so results do not depend on which other classes exist.
    """
    groups: dict[int, list[np.ndarray]] = {}
    for region in regions:
        if region.feature_z is None:
            raise InvalidInput(
                f"region {region.id} has no aggregate feature; refresh aggregates first"
            )
        groups.setdefault(_grouping_class(region, domain), []).append(region.feature_z)
    per_class: dict[int, GmmModel] = {}
    for class_id in sorted(groups):
        feats = np.stack(groups[class_id])
        k = choose_component_count(feats.shape[0], rho)
        per_class[class_id] = fit_gmm(feats, k, derive_seed(seed, domain.value, class_id))
    return DensityEstimators(domain=domain, per_class=per_class)


def sample_gmm(model: GmmModel, count: int, seed: int) -> np.ndarray:
    """Draw `count` i.i.d. rows from the mixture (used by tests/oracles)."""
    if count < 0:
        raise InvalidInput(f"count must be >= 0, got {count}")
    d = model.feature_dim
    if count == 0:
        return np.zeros((0, d), dtype=np.float64)
    rng = derive_rng(seed, "gmm-sample")
    comps = rng.choice(model.component_count, size=count, p=model.weights)
    noise = rng.standard_normal((count, d))
    return model.means[comps] + noise * np.sqrt(model.variances[comps])


def dump_estimators(est: DensityEstimators) -> str:
    """CSV-like debug dump: one row per mixture component with its weight,
    mean coordinates, and variance coordinates."""
    first = next(iter(est.per_class.values()), None)
    d = first.feature_dim if first is not None else 0
    header = (
        ["class", "component", "weight"]
        + [f"mean{i}" for i in range(d)]
        + [f"var{i}" for i in range(d)]
    )
    lines = [",".join(header)]
    for class_id in est.classes():
        m = est.per_class[class_id]
        for k in range(m.component_count):
            row = (
                [str(class_id), str(k), repr(float(m.weights[k]))]
                + [repr(float(v)) for v in m.means[k]]
                + [repr(float(v)) for v in m.variances[k]]
            )
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"
