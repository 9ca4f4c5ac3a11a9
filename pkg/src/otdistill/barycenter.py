"""Free-support Wasserstein barycenters by fixed-point iteration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distributions import (
    LabeledMeasure,
    balanced_labels,
    concat,
    label_penalty,
    sq_distances,
)
from .errors import (
    ConfigError,
    DegenerateBeta,
    DimensionMismatch,
    LabelMixing,
    SimplexViolation,
)
from .ot_core import SinkhornParams, TransportPlan, sinkhorn

logger = logging.getLogger(__name__)

INITS = ("random_subset", "gaussian_around_pooled_mean")


@dataclass(frozen=True)
class BarycenterParams:
    support_size: int
    max_outer_iters: int = 50
    support_tol: float = 1e-4
    sinkhorn: SinkhornParams = field(default_factory=SinkhornParams)
    init: str = "random_subset"
    seed: int = 0
    beta_kappa: float = 10.0

    def __post_init__(self):
        if self.support_size < 1:
            raise ConfigError("support_size must be positive")
        if self.max_outer_iters < 1:
            raise ConfigError("max_outer_iters must be positive")
        if not self.support_tol > 0:
            raise ConfigError("support_tol must be positive")
        if self.init not in INITS:
            raise ConfigError(f"init must be one of {INITS}, got {self.init!r}")


@dataclass(eq=False)
class BarycenterResult:
    measure: LabeledMeasure
    history: list[float]
    # plans of the last iteration, rows = barycenter points; the returned
    # support is exactly sum_k alpha_k * (P_k @ X_k) / rowmass(P_k)
    plans: list[TransportPlan]
    n_iters: int
    converged: bool


def check_simplex(alpha, k: int | None = None, atol: float = 1e-9) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or (k is not None and alpha.size != k):
        raise SimplexViolation(f"expected {k} weights, got shape {alpha.shape}")
    if not np.all(np.isfinite(alpha)) or alpha.min() < -atol or abs(alpha.sum() - 1.0) > atol:
        raise SimplexViolation(f"weights {alpha.tolist()} are not on the probability simplex")
    return alpha


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-and-threshold)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1 or not np.all(np.isfinite(v)):
        raise ValueError("project_simplex expects a finite, non-empty vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


def _init_support(measures, labels, m, init, rng):
    pooled = concat(measures) if labels is not None else concat([mu.with_labels(None) for mu in measures])
    if init == "gaussian_around_pooled_mean":
        x = pooled.support
        return x.mean(0) + x.std(0) * rng.normal(size=(m, x.shape[1]))
    if labels is None:
        idx = rng.choice(pooled.n, size=m, replace=pooled.n < m)
        return pooled.support[idx].copy()
    X = np.empty((m, pooled.d))
    for c in np.unique(labels):
        slots = np.flatnonzero(labels == c)
        pool = np.flatnonzero(pooled.labels == c)
        if pool.size == 0:
            # no input has this class; fall back to the pooled cloud
            pool = np.arange(pooled.n)
        X[slots] = pooled.support[rng.choice(pool, size=slots.size, replace=pool.size < slots.size)]
    return X


def solve_barycenter(
    measures: Sequence[LabeledMeasure],
    alpha,
    params: BarycenterParams,
    labeled: bool | None = None,
    labels: np.ndarray | None = None,
    init_support: np.ndarray | None = None,
) -> BarycenterResult:
    """Fixed-point free-support barycenter returning its final plans.

    ``labeled=None`` means labeled iff every input measure is labeled. In
    labeled mode the barycenter labels are ``labels`` if given, else an equal
    per-class allocation, and they never change; transport then uses the
    label-augmented cost with a per-measure penalty fixed at initialization.
    """
    measures = list(measures)
    if not measures:
        raise ValueError("need at least one measure")
    alpha = check_simplex(alpha, len(measures))
    d = measures[0].d
    if any(mu.d != d for mu in measures):
        raise DimensionMismatch("measures have different feature dimensions")
    n_classes = measures[0].n_classes
    all_labeled = all(mu.labeled for mu in measures)
    if labeled is None:
        labeled = all_labeled
    if labeled and not all_labeled:
        raise LabelMixing("a labeled barycenter needs every input measure labeled")
    m = params.support_size

    if labeled:
        if labels is None:
            if m % n_classes:
                raise ConfigError(f"support size {m} is not a multiple of {n_classes} classes")
            labels = balanced_labels(m, n_classes)
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (m,):
            raise ConfigError("barycenter labels must match the support size")
    else:
        labels = None

    rng = np.random.default_rng(params.seed)
    if init_support is not None:
        X = np.array(init_support, dtype=float)
        if X.shape != (m, d):
            raise DimensionMismatch(f"init support has shape {X.shape}, expected {(m, d)}")
    else:
        X = _init_support(measures, labels, m, params.init, rng)

    # epsilon and label penalty are frozen at initialization so that every
    # outer iteration descends the same objective
    bary0 = LabeledMeasure(X, labels, n_classes)
    penalties, solvers = [], []
    for mu in measures:
        feat = sq_distances(X, mu.support)
        if labeled:
            beta = params.beta_kappa * float(feat.max())
            if not beta > 0:
                raise DegenerateBeta("barycenter initialization coincides with every input point")
            penalties.append(label_penalty(bary0, mu, beta))
        else:
            penalties.append(None)
        eps = params.sinkhorn.resolve(float(feat.mean()))
        solvers.append(SinkhornParams(eps, params.sinkhorn.max_iters, params.sinkhorn.tol, relative=False))

    potentials: list = [None] * len(measures)
    history: list[float] = []
    plans: list[TransportPlan] = []
    converged = False
    it = 0
    for it in range(1, params.max_outer_iters + 1):
        current = []
        objective = 0.0
        X_new = np.zeros_like(X)
        for k, mu in enumerate(measures):
            C = sq_distances(X, mu.support)
            if penalties[k] is not None:
                C += penalties[k]
            plan = sinkhorn(C, solvers[k], init=potentials[k])
            potentials[k] = plan.potentials
            current.append(plan)
            objective += alpha[k] * plan.cost_value
            P = plan.coupling
            X_new += alpha[k] * (P @ mu.support) / P.sum(1, keepdims=True)
        if history and objective > history[-1]:
            # transport cost has plateaued; further steps only trade it for entropy
            converged = True
            break
        history.append(float(objective))
        plans = current
        shift = float(np.linalg.norm(X_new - X, axis=1).mean())
        X = X_new
        if shift < params.support_tol:
            converged = True
            break
    logger.debug("barycenter: %d iterations, objective %.6g", it, history[-1])
    return BarycenterResult(LabeledMeasure(X, labels, n_classes), history, plans, it, converged)


def free_support_barycenter(
    measures: Sequence[LabeledMeasure],
    alpha,
    params: BarycenterParams,
    labeled: bool | None = None,
    labels: np.ndarray | None = None,
    init_support: np.ndarray | None = None,
) -> tuple[LabeledMeasure, list[float]]:
    res = solve_barycenter(measures, alpha, params, labeled, labels, init_support)
    return res.measure, res.history
