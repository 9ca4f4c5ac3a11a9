"""Empirical measures, ground costs, standardization and stratified sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    ConfigError,
    DegenerateBeta,
    DimensionMismatch,
    EmptyClass,
    LabelMixing,
    MissingLabels,
    NoUnlabeledDomain,
    ZeroVarianceFeature,
)

logger = logging.getLogger(__name__)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledMeasure:
    """Uniformly weighted point cloud, optionally labeled.

    ``labels`` is ``None`` for an unlabeled (target) measure. Arrays are copied
    and made read-only on construction.
    """

    support: np.ndarray
    labels: np.ndarray | None
    n_classes: int

    def __post_init__(self):
        x = np.asarray(self.support, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DimensionMismatch(f"support must be a non-empty n x d matrix, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("support contains non-finite entries")
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        object.__setattr__(self, "support", _frozen(x))
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (x.shape[0],):
                raise DimensionMismatch(f"{y.shape[0] if y.ndim else 0} labels for {x.shape[0]} points")
            if y.size and (not np.issubdtype(y.dtype, np.integer)):
                if not np.all(np.equal(np.mod(y, 1), 0)):
                    raise ValueError("labels must be integers")
            y = y.astype(np.int64)
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise ValueError(f"labels must lie in [0, {self.n_classes})")
            object.__setattr__(self, "labels", _frozen(y))

    @property
    def n(self) -> int:
        return self.support.shape[0]

    @property
    def d(self) -> int:
        return self.support.shape[1]

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def class_counts(self) -> np.ndarray:
        if self.labels is None:
            raise MissingLabels("measure is unlabeled")
        return np.bincount(self.labels, minlength=self.n_classes)

    def with_support(self, support: np.ndarray) -> "LabeledMeasure":
        return LabeledMeasure(support, self.labels, self.n_classes)

    def with_labels(self, labels: np.ndarray | None) -> "LabeledMeasure":
        return LabeledMeasure(self.support, labels, self.n_classes)

    def subset(self, idx: np.ndarray) -> "LabeledMeasure":
        y = None if self.labels is None else self.labels[idx]
        return LabeledMeasure(self.support[idx], y, self.n_classes)


def concat(measures: Sequence[LabeledMeasure]) -> LabeledMeasure:
    """Pool several measures into one (labels kept only if all are labeled)."""
    if not measures:
        raise ValueError("nothing to concatenate")
    d = {m.d for m in measures}
    if len(d) != 1:
        raise DimensionMismatch(f"feature dimensions differ: {sorted(d)}")
    labeled = {m.labeled for m in measures}
    if len(labeled) != 1:
        raise LabelMixing("cannot pool labeled and unlabeled measures")
    x = np.concatenate([m.support for m in measures])
    y = np.concatenate([m.labels for m in measures]) if labeled.pop() else None
    return LabeledMeasure(x, y, measures[0].n_classes)


@dataclass(frozen=True, eq=False)
class MultiDomainDataset:
    domains: Mapping[str, LabeledMeasure]
    target_name: str
    n_classes: int
    feature_dim: int
    class_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        domains = dict(self.domains)
        if self.target_name not in domains:
            raise NoUnlabeledDomain(f"target domain {self.target_name!r} not present")
        for name, m in domains.items():
            if m.d != self.feature_dim:
                raise DimensionMismatch(f"domain {name!r} has d={m.d}, expected {self.feature_dim}")
            if m.n_classes != self.n_classes:
                raise DimensionMismatch(f"domain {name!r} declares {m.n_classes} classes")
            if name == self.target_name and m.labeled:
                raise LabelMixing("the target domain must be unlabeled")
            if name != self.target_name and not m.labeled:
                raise LabelMixing(f"source domain {name!r} is unlabeled")
        if len(domains) < 2:
            raise ValueError("need at least one source and one target domain")
        object.__setattr__(self, "domains", domains)
        if not self.class_names:
            w = len(str(self.n_classes - 1))
            object.__setattr__(self, "class_names", tuple(f"{c:0{w}d}" for c in range(self.n_classes)))
        elif len(self.class_names) != self.n_classes:
            raise ValueError("class_names length must equal n_classes")

    @property
    def target(self) -> LabeledMeasure:
        return self.domains[self.target_name]

    @property
    def source_names(self) -> list[str]:
        return [k for k in self.domains if k != self.target_name]

    @property
    def sources(self) -> list[LabeledMeasure]:
        return [self.domains[k] for k in self.source_names]

    @property
    def n_samples(self) -> int:
        return sum(m.n for m in self.domains.values())

    def pooled_sources(self) -> LabeledMeasure:
        return concat(self.sources)

    def replace_supports(self, fn) -> "MultiDomainDataset":
        domains = {k: m.with_support(fn(m.support)) for k, m in self.domains.items()}
        d = next(iter(domains.values())).d
        return MultiDomainDataset(domains, self.target_name, self.n_classes, d, self.class_names)


# -- standardization ---------------------------------------------------------

@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray
    keep: np.ndarray  # boolean column mask; False for dropped constant features

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x[:, self.keep] - self.mean[self.keep]) / self.std[self.keep]

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if not self.keep.all():
            raise ValueError("cannot invert a scaler that dropped features")
        return z * self.std + self.mean


def standardize(dataset: MultiDomainDataset, on_constant: str = "error") -> tuple[MultiDomainDataset, Scaler]:
    """Pooled (sources + target) zero-mean, unit-variance scaling.

    ``on_constant`` decides what happens to features with zero pooled variance:
    ``"error"`` raises ``ZeroVarianceFeature``, ``"keep"`` centres them only,
    ``"drop"`` removes them.
    """
    if on_constant not in ("error", "keep", "drop"):
        raise ConfigError(f"unknown on_constant policy {on_constant!r}")
    pooled = np.concatenate([m.support for m in dataset.domains.values()])
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    const = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    keep = np.ones_like(const)
    if const.any():
        if on_constant == "error":
            raise ZeroVarianceFeature(int(np.flatnonzero(const)[0]))
        if on_constant == "drop":
            keep = ~const
        std = np.where(const, 1.0, std)
    scaler = Scaler(mean, std, keep)
    return dataset.replace_supports(scaler.transform), scaler


# -- ground costs -------------------------------------------------------------

@dataclass(frozen=True)
class GroundCost:
    kind: str = "euclidean_sq"
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("euclidean_sq", "label_augmented"):
            raise ConfigError(f"unknown ground cost {self.kind!r}")
        if self.kind == "label_augmented" and not self.beta > 0:
            raise DegenerateBeta("label-augmented cost needs beta > 0")
        if self.kind == "euclidean_sq" and self.beta != 0:
            raise ConfigError("beta is only meaningful for the label-augmented cost")

    @classmethod
    def euclidean(cls) -> "GroundCost":
        return cls("euclidean_sq", 0.0)

    @classmethod
    def augmented(cls, beta: float) -> "GroundCost":
        return cls("label_augmented", float(beta))


def sq_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return cdist(x, y, "sqeuclidean")


def cost_matrix(a: LabeledMeasure, b: LabeledMeasure, cost: GroundCost = GroundCost()) -> np.ndarray:
    if a.d != b.d:
        raise DimensionMismatch(f"d={a.d} vs d={b.d}")
    c = sq_distances(a.support, b.support)
    if cost.kind == "label_augmented":
        c += label_penalty(a, b, cost.beta)
    return c


def label_penalty(a: LabeledMeasure, b: LabeledMeasure, beta: float) -> np.ndarray:
    """``beta * ||y_i - y_j||^2`` on one-hot labels, i.e. ``2 beta`` on every label mismatch."""
    if a.labels is None or b.labels is None:
        raise MissingLabels("label-augmented cost needs labels on both measures")
    return 2.0 * beta * (a.labels[:, None] != b.labels[None, :])


def beta_heuristic(a: LabeledMeasure, b: LabeledMeasure, kappa: float = 10.0) -> float:
    """``kappa`` times the largest squared distance between a point of ``a`` and one of ``b``."""
    if a.d != b.d:
        raise DimensionMismatch(f"d={a.d} vs d={b.d}")
    return float(kappa * sq_distances(a.support, b.support).max())


def label_cost(a: LabeledMeasure, b: LabeledMeasure, kappa: float = 10.0) -> GroundCost:
    beta = beta_heuristic(a, b, kappa)
    if not beta > 0:
        raise DegenerateBeta("all points coincide, the label penalty would vanish")
    return GroundCost.augmented(beta)


# -- sampling and moments -----------------------------------------------------

def stratified_indices(labels: np.ndarray, n_classes: int, spc: int, rng: np.random.Generator) -> np.ndarray:
    """``spc`` indices per class, class-major order; with replacement for small classes."""
    if spc < 1:
        raise ValueError("spc must be positive")
    out = []
    for c in range(n_classes):
        pool = np.flatnonzero(labels == c)
        if pool.size == 0:
            raise EmptyClass(c)
        out.append(rng.choice(pool, size=spc, replace=pool.size < spc))
    return np.concatenate(out)


def stratified_sample(m: LabeledMeasure, spc: int, seed: int) -> LabeledMeasure:
    if m.labels is None:
        raise MissingLabels("stratified sampling needs labels")
    idx = stratified_indices(m.labels, m.n_classes, spc, np.random.default_rng(seed))
    return m.subset(idx)


def balanced_labels(size: int, n_classes: int) -> np.ndarray:
    """Class-major label vector with counts differing by at most one."""
    counts = np.full(n_classes, size // n_classes)
    counts[: size % n_classes] += 1
    return np.repeat(np.arange(n_classes), counts)


class ClassMeans(NamedTuple):
    means: np.ndarray  # n_c x d; NaN rows for absent classes
    counts: np.ndarray

    @property
    def present(self) -> np.ndarray:
        return self.counts > 0


def class_means(m: LabeledMeasure) -> ClassMeans:
    if m.labels is None:
        raise MissingLabels("class means need labels")
    counts = np.bincount(m.labels, minlength=m.n_classes)
    sums = np.zeros((m.n_classes, m.d))
    np.add.at(sums, m.labels, m.support)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, None]
    means[counts == 0] = np.nan
    return ClassMeans(means, counts)
