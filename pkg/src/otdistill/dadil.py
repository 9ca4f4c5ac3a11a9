"""Dataset dictionary learning: domains as Wasserstein barycenters of labeled atoms."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .barycenter import BarycenterParams, check_simplex, project_simplex, solve_barycenter
from .distill import Summary
from .distributions import (
    LabeledMeasure,
    MultiDomainDataset,
    balanced_labels,
    label_penalty,
    sq_distances,
)
from .errors import ConfigError, DataError, Diverged, SimplexViolation
from .ot_core import SinkhornParams, sinkhorn

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DadilParams:
    iters: int = 100
    lr_atoms: float = 0.1
    lr_coords: float = 0.01
    batch_size: int = 128
    inner_steps: int = 5
    ot: SinkhornParams = field(default_factory=SinkhornParams)
    bary: BarycenterParams | None = None  # compression-time barycenter settings
    beta_kappa: float = 10.0
    jitter: float = 0.1
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.iters < 1 or self.inner_steps < 1 or self.batch_size < 1:
            raise ConfigError("iters, inner_steps and batch_size must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass(eq=False)
class Dictionary:
    atoms: list[LabeledMeasure]
    coords: np.ndarray  # (n_domains, K); rows follow domain_names, target last
    domain_names: list[str]
    training_history: list[float] = field(default_factory=list)
    # scored training loss of the returned parameters
    selected_loss: float | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.shape != (len(self.domain_names), len(self.atoms)):
            raise ConfigError("coords must have one row per domain and one column per atom")
        for row in self.coords:
            check_simplex(row, len(self.atoms))
        shapes = {(a.n, a.d, a.n_classes) for a in self.atoms}
        if len(shapes) != 1:
            raise ConfigError("atoms must share size, dimension and class count")

    @property
    def k(self) -> int:
        return len(self.atoms)

    @property
    def n_classes(self) -> int:
        return self.atoms[0].n_classes

    @property
    def target_coords(self) -> np.ndarray:
        return self.coords[-1]

    def to_json(self) -> str:
        return json.dumps(
            {
                "domain_names": self.domain_names,
                "n_classes": self.n_classes,
                "atoms": [{"support": a.support.tolist(), "labels": a.labels.tolist()} for a in self.atoms],
                "coords": self.coords.tolist(),
                "training_history": self.training_history,
                "selected_loss": self.selected_loss,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "Dictionary":
        try:
            d = json.loads(text)
            atoms = [LabeledMeasure(a["support"], a["labels"], d["n_classes"]) for a in d["atoms"]]
            return cls(
                atoms, np.array(d["coords"]), list(d["domain_names"]), list(d["training_history"]), d.get("selected_loss")
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed dictionary JSON: {e}") from None

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Dictionary":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def default_n_atom(n_classes: int) -> int:
    """``max(2 n_c, 50)`` rounded up to a whole number of points per class."""
    base = max(2 * n_classes, 50)
    return n_classes * -(-base // n_classes)


def fixed_plan_loss(atoms, alpha, maps, plan, batch, penalty=None):
    """Reconstruction loss and gradients with every transport plan frozen.

    The barycenter support is the linear map ``X_B = sum_k alpha_k M_k X_k`` of
    the atom supports, ``M_k`` being row-normalized barycenter plans. The loss
    is ``<plan, C(X_B, batch)>`` where ``plan`` couples barycenter rows with
    batch columns and ``penalty`` is a constant label term added to ``C``.

    Returns ``(loss, grads w.r.t. each atom support, grad w.r.t. alpha)``.
    """
    mapped = [M @ X for M, X in zip(maps, atoms)]
    XB = sum(a * Y for a, Y in zip(alpha, mapped))
    C = sq_distances(XB, batch)
    if penalty is not None:
        C = C + penalty
    loss = float((plan * C).sum())
    # d/dx_j of sum_i plan_ji |x_j - q_i|^2
    G = 2.0 * (plan.sum(1)[:, None] * XB - plan @ batch)
    g_atoms = [a * (M.T @ G) for a, M in zip(alpha, maps)]
    g_alpha = np.array([float((G * Y).sum()) for Y in mapped])
    return loss, g_atoms, g_alpha


class _Adam:
    def __init__(self, shape, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps

    def step(self, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1**self.t)
        vh = self.v / (1 - self.b2**self.t)
        return self.lr * mh / (np.sqrt(vh) + self.eps)


class _SGD:
    def __init__(self, shape, lr):
        self.lr = lr

    def step(self, g):
        return self.lr * g


def _init_atoms(dataset, k, n_atom, jitter, seed):
    pooled = dataset.pooled_sources()
    labels = balanced_labels(n_atom, dataset.n_classes)
    atoms = []
    for j in range(k):
        rng = np.random.default_rng([seed, j])
        X = np.empty((n_atom, dataset.feature_dim))
        for c in range(dataset.n_classes):
            slots = np.flatnonzero(labels == c)
            pool = np.flatnonzero(pooled.labels == c)
            if pool.size == 0:
                pool = np.arange(pooled.n)
            X[slots] = pooled.support[rng.choice(pool, size=slots.size, replace=pool.size < slots.size)]
        X += jitter * rng.normal(size=X.shape)
        atoms.append(X)
    return atoms, labels


def _batch(m: LabeledMeasure, size, rng):
    if m.labels is not None:
        per_class = max(1, size // m.n_classes)
        present = np.flatnonzero(m.class_counts() > 0)
        idx = np.concatenate(
            [rng.choice(np.flatnonzero(m.labels == c), per_class, replace=(m.labels == c).sum() < per_class) for c in present]
        )
    else:
        idx = rng.choice(m.n, size=min(size, m.n), replace=False)
    return m.subset(idx)


def dadil_fit(
    dataset: MultiDomainDataset,
    k: int | None = None,
    n_atom: int | None = None,
    params: DadilParams = DadilParams(),
) -> Dictionary:
    """Learn ``k`` labeled atoms and per-domain simplex weights.

    Each iteration reconstructs every domain as a barycenter of the atoms,
    couples it with a minibatch of the domain, and takes one gradient step on
    atom supports and weights with all plans held fixed.
    """
    names = dataset.source_names + [dataset.target_name]
    k = len(names) if k is None else k
    n_atom = default_n_atom(dataset.n_classes) if n_atom is None else n_atom
    if k < 1:
        raise ConfigError("need at least one atom")
    if n_atom < dataset.n_classes:
        raise ConfigError("n_atom must be at least the number of classes")

    atoms, atom_labels = _init_atoms(dataset, k, n_atom, params.jitter, params.seed)
    coords = np.full((len(names), k), 1.0 / k)
    make = _Adam if params.optimizer == "adam" else _SGD
    atom_opt = [make(a.shape, params.lr_atoms) for a in atoms]
    coord_opt = [make(k, params.lr_coords) for _ in names]
    inner = BarycenterParams(
        support_size=n_atom, max_outer_iters=params.inner_steps, sinkhorn=params.ot, beta_kappa=params.beta_kappa
    )
    rng = np.random.default_rng([params.seed, 1 << 16])
    history: list[float] = []
    best = (np.inf, None, None)

    for it in range(params.iters):
        total = 0.0
        g_atoms = [np.zeros_like(a) for a in atoms]
        g_coords = np.zeros_like(coords)
        measures = [LabeledMeasure(a, atom_labels, dataset.n_classes) for a in atoms]
        for row, name in enumerate(names):
            alpha = coords[row]
            init = sum(w * a for w, a in zip(alpha, atoms))
            res = solve_barycenter(measures, alpha, inner, labeled=True, labels=atom_labels, init_support=init)
            maps = [p.coupling / p.coupling.sum(1, keepdims=True) for p in res.plans]
            batch = _batch(dataset.domains[name], params.batch_size, rng)
            feat = sq_distances(res.measure.support, batch.support)
            penalty = None
            if batch.labeled:
                penalty = label_penalty(res.measure, batch, params.beta_kappa * float(feat.max()))
            C = feat if penalty is None else feat + penalty
            plan = sinkhorn(C, params.ot, scale=float(feat.mean())).coupling
            loss, ga, gc = fixed_plan_loss(atoms, alpha, maps, plan, batch.support, penalty)
            total += loss
            for j in range(k):
                g_atoms[j] += ga[j]
            g_coords[row] = gc
        history.append(total)
        scored = ([a.copy() for a in atoms], coords.copy())
        if total < best[0]:
            best = (total, *scored)
        elif total > 10 * best[0]:
            raise Diverged(f"loss {total:.4g} at iteration {it} exceeds 10x the best {best[0]:.4g}")
        if not all(np.all(np.isfinite(g)) for g in g_atoms) or not np.all(np.isfinite(g_coords)):
            raise Diverged(f"non-finite gradient at iteration {it}")
        for j in range(k):
            atoms[j] = atoms[j] - atom_opt[j].step(g_atoms[j])
        for row in range(len(names)):
            coords[row] = project_simplex(coords[row] - coord_opt[row].step(g_coords[row]))
            if abs(coords[row].sum() - 1.0) > 1e-9 or coords[row].min() < 0:
                raise SimplexViolation("projected coordinates left the simplex")
        logger.debug("dadil iteration %d: loss %.6g", it, total)

    # return the last scored state unless it drifted above the best one
    if history[-1] > 1.1 * best[0]:
        (atoms, coords), selected = best[1:], best[0]
    else:
        (atoms, coords), selected = scored, history[-1]
    out_atoms = [LabeledMeasure(a, atom_labels, dataset.n_classes) for a in atoms]
    return Dictionary(out_atoms, coords, names, history, selected)


def reconstruction_losses(dictionary: Dictionary, dataset: MultiDomainDataset, params: DadilParams = DadilParams()) -> dict[str, float]:
    """Full-data transport loss between each domain and its reconstruction."""
    inner = BarycenterParams(
        support_size=dictionary.atoms[0].n, max_outer_iters=params.inner_steps, sinkhorn=params.ot, beta_kappa=params.beta_kappa
    )
    labels = dictionary.atoms[0].labels
    out = {}
    for row, name in enumerate(dictionary.domain_names):
        alpha = dictionary.coords[row]
        init = sum(w * a.support for w, a in zip(alpha, dictionary.atoms))
        B = solve_barycenter(dictionary.atoms, alpha, inner, labeled=True, labels=labels, init_support=init).measure
        Q = dataset.domains[name]
        feat = sq_distances(B.support, Q.support)
        C = feat + label_penalty(B, Q, params.beta_kappa * float(feat.max())) if Q.labeled else feat
        out[name] = sinkhorn(C, params.ot, scale=float(feat.mean())).cost_value
    return out


def dadil_compress_target(
    dictionary: Dictionary,
    spc: int,
    bary: BarycenterParams | None = None,
    seed: int = 0,
) -> Summary:
    """Barycenter of the atoms at the target weights, with ``spc`` points per class."""
    if spc < 1:
        raise ConfigError("spc must be positive")
    m = spc * dictionary.n_classes
    bary = BarycenterParams(support_size=m) if bary is None else bary
    bary = dataclasses.replace(bary, support_size=m, seed=seed)
    res = solve_barycenter(dictionary.atoms, dictionary.target_coords, bary, labeled=True)
    diag = {"barycenter_history": res.history, "target_coords": dictionary.target_coords.tolist()}
    return Summary(res.measure, "dadil", spc, seed, diag)
