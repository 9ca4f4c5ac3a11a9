"""Summary distillers: random baselines, barycenter transport and distribution matching."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .barycenter import BarycenterParams, solve_barycenter
from .distributions import (
    GroundCost,
    LabeledMeasure,
    MultiDomainDataset,
    balanced_labels,
    class_means,
    stratified_sample,
)
from .errors import (
    DegenerateTransport,
    LabelLengthMismatch,
    NonFiniteGradient,
    ZeroRowMass,
)
from .ot_core import SinkhornParams, barycentric_map, wasserstein

logger = logging.getLogger(__name__)

METHODS = ("random_source", "random_target_oracle", "wbt", "msda_dm", "dadil")


@dataclass(eq=False)
class Summary:
    measure: LabeledMeasure
    method: str
    spc: int
    seed: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        counts = self.measure.class_counts()
        if not (counts == self.spc).all():
            raise ValueError(f"summary must hold exactly {self.spc} points per class, got {counts.tolist()}")

    @property
    def is_oracle(self) -> bool:
        return self.method == "random_target_oracle"

    def rows(self, class_names):
        name = f"summary:{self.method}"
        for x, y in zip(self.measure.support, self.measure.labels):
            yield name, class_names[y], x


def distill_random_source(dataset: MultiDomainDataset, spc: int, seed: int) -> Summary:
    pooled = dataset.pooled_sources()
    return Summary(stratified_sample(pooled, spc, seed), "random_source", spc, seed)


def distill_random_target_oracle(dataset: MultiDomainDataset, target_labels, spc: int, seed: int) -> Summary:
    """Best-case baseline: reads held-out target labels, never available to the other methods."""
    target_labels = np.asarray(target_labels)
    if target_labels.shape != (dataset.target.n,):
        raise LabelLengthMismatch(f"{target_labels.size} labels for {dataset.target.n} target points")
    labeled = dataset.target.with_labels(target_labels)
    return Summary(stratified_sample(labeled, spc, seed), "random_target_oracle", spc, seed, {"label_oracle": True})


def distill_wbt(
    dataset: MultiDomainDataset,
    spc: int,
    ot: SinkhornParams = SinkhornParams(),
    bary: BarycenterParams | None = None,
    seed: int = 0,
) -> Summary:
    m = spc * dataset.n_classes
    if bary is None:
        bary = BarycenterParams(support_size=m, sinkhorn=ot)
    bary = dataclasses.replace(bary, support_size=m, seed=seed)
    sources = dataset.sources
    alpha = np.full(len(sources), 1.0 / len(sources))
    res = solve_barycenter(sources, alpha, bary, labeled=True)
    B = res.measure
    value, plan = wasserstein(B, dataset.target, GroundCost.euclidean(), ot)
    try:
        support = barycentric_map(plan, dataset.target.support)
    except ZeroRowMass as e:
        raise DegenerateTransport(e.row) from e
    diag = {
        "barycenter_history": res.history,
        "barycenter_iters": res.n_iters,
        "transport_cost": value,
        "transport_converged": plan.converged,
    }
    return Summary(B.with_support(support), "wbt", spc, seed, diag)


# -- MSDA-DM ----------------------------------------------------------------------


@dataclass(frozen=True)
class DMParams:
    learning_rate: float = 0.1
    iters: int = 500
    target_weight: float = 1.0
    # square the target MMD term like the per-class source terms
    squared_target: bool = False
    # handle the unsquared target norm by its proximal map instead of its gradient;
    # plain gradient steps stall at the kink where the summary mean hits the target mean
    target_prox: bool = True
    max_halvings: int = 20


class DMObjective:
    """Linear MMD to the target plus squared per-class MMD to every source.

    Labels of the summary are fixed; only coordinates move.
    """

    def __init__(self, dataset: MultiDomainDataset, labels: np.ndarray, params: DMParams = DMParams()):
        self.labels = np.asarray(labels)
        self.n_classes = dataset.n_classes
        self.counts = np.bincount(self.labels, minlength=self.n_classes)
        self.target_mean = dataset.target.support.mean(0)
        self.source_means = [class_means(s) for s in dataset.sources]
        self.weight = params.target_weight
        self.squared = params.squared_target

    def __call__(self, X: np.ndarray) -> tuple[float, np.ndarray]:
        value, grad = self.smooth(X)
        if self.weight and not self.squared:
            diff = X.mean(0) - self.target_mean
            norm = float(np.linalg.norm(diff))
            value += self.weight * norm
            if norm > 0:
                grad = grad + self.weight * diff / (norm * X.shape[0])
        return value, grad

    def nonsmooth(self, X: np.ndarray) -> float:
        """The unsquared target term (zero when it is squared or switched off)."""
        if not self.weight or self.squared:
            return 0.0
        return self.weight * float(np.linalg.norm(X.mean(0) - self.target_mean))

    def prox(self, Z: np.ndarray, step: float) -> np.ndarray:
        """Proximal map of ``step`` times the unsquared target term.

        The term depends on ``Z`` only through its mean, so the map soft-thresholds
        the mean towards the target and shifts every point by the same vector.
        """
        if not self.weight or self.squared:
            return Z
        v = Z.mean(0)
        r = v - self.target_mean
        norm = float(np.linalg.norm(r))
        thresh = step * self.weight / Z.shape[0]
        shrink = max(0.0, 1.0 - thresh / norm) if norm > 0 else 0.0
        return Z + (self.target_mean + shrink * r - v)

    def smooth(self, X: np.ndarray) -> tuple[float, np.ndarray]:
        """Per-class source terms plus the target term when it is squared."""
        grad = np.zeros_like(X)
        value = 0.0
        if self.weight and self.squared:
            diff = X.mean(0) - self.target_mean
            value += self.weight * float(diff @ diff)
            grad += self.weight * 2.0 * diff / X.shape[0]
        sums = np.zeros((self.n_classes, X.shape[1]))
        np.add.at(sums, self.labels, X)
        present = self.counts > 0
        mu = np.zeros_like(sums)
        mu[present] = sums[present] / self.counts[present, None]
        gmu = np.zeros_like(mu)
        for cm in self.source_means:
            ok = present & cm.present
            diff = mu[ok] - cm.means[ok]
            value += float((diff**2).sum())
            gmu[ok] += 2.0 * diff
        with np.errstate(invalid="ignore", divide="ignore"):
            per_class = np.where(present[:, None], gmu / np.maximum(self.counts, 1)[:, None], 0.0)
        grad += per_class[self.labels]
        return value, grad


def distill_msda_dm(
    dataset: MultiDomainDataset,
    spc: int,
    opt: DMParams = DMParams(),
    seed: int = 0,
) -> Summary:
    init = stratified_sample(dataset.pooled_sources(), spc, seed)
    objective = DMObjective(dataset, init.labels, opt)
    X = np.array(init.support)
    if opt.target_prox:
        # forward step on the smooth part, proximal step on the target norm
        def step(X, lr, grad):
            return objective.prox(X - lr * grad, lr)

        def evaluate(X):
            v, g = objective.smooth(X)
            return v + objective.nonsmooth(X), g
    else:
        def step(X, lr, grad):
            return X - lr * grad

        evaluate = objective
    value, grad = evaluate(X)
    curve = [value]
    for _ in range(opt.iters):
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient("gradient became non-finite")
        lr = opt.learning_rate
        for _ in range(opt.max_halvings + 1):
            X_try = step(X, lr, grad)
            v_try, g_try = evaluate(X_try)
            if np.isfinite(v_try) and v_try <= value:
                break
            lr *= 0.5
        else:
            # no step size decreases the objective any further
            break
        if np.array_equal(X_try, X):
            break
        X, value, grad = X_try, v_try, g_try
        curve.append(value)
    diag = {"objective_curve": curve, "initial_objective": curve[0], "final_objective": curve[-1]}
    return Summary(init.with_support(X), "msda_dm", spc, seed, diag)


def summary_labels(spc: int, n_classes: int) -> np.ndarray:
    return balanced_labels(spc * n_classes, n_classes)
