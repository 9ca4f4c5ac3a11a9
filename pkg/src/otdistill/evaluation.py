"""Linear classifier on summaries, target accuracy, SPC sweeps."""

from __future__ import annotations

import dataclasses
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .bench_io import TABLE1, RunRecord
from .dadil import DadilParams, dadil_compress_target, dadil_fit
from .barycenter import BarycenterParams
from .distill import (
    METHODS,
    DMParams,
    distill_msda_dm,
    distill_random_source,
    distill_random_target_oracle,
    distill_wbt,
)
from .distributions import LabeledMeasure, MultiDomainDataset
from .errors import ConfigError, LabelLengthMismatch, NonFiniteLoss, NotConvergedWarning
from .ot_core import SinkhornParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassifierParams:
    l2: float = 1e-3
    iters: int = 500
    lr: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")
        if self.iters < 1 or not self.lr > 0:
            raise ValueError("iters and lr must be positive")


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray  # n_classes x d
    bias: np.ndarray
    risk_curve: tuple = ()

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights.T + self.bias

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X).argmax(1)


def softmax_risk(W, b, X, y, l2):
    """L2-regularized multinomial cross-entropy and its gradient in (W, b)."""
    n = X.shape[0]
    Z = X @ W.T + b
    lse = logsumexp(Z, axis=1)
    loss = float((lse - Z[np.arange(n), y]).mean() + 0.5 * l2 * (W**2).sum())
    G = np.exp(Z - lse[:, None])
    G[np.arange(n), y] -= 1.0
    G /= n
    return loss, G.T @ X + l2 * W, G.sum(0)


def fit_linear(summary, params: ClassifierParams = ClassifierParams()) -> LinearModel:
    """Full-batch gradient descent on the softmax risk of a labeled summary.

    ``summary`` is a ``Summary`` or a labeled ``LabeledMeasure``. A step that
    would raise the risk is retried at half the step size.
    """
    m = getattr(summary, "measure", summary)
    if not isinstance(m, LabeledMeasure) or m.labels is None:
        raise ValueError("fit_linear needs a labeled measure")
    X, y, nc = m.support, m.labels, m.n_classes
    rng = np.random.default_rng(params.seed)
    W = 0.01 * rng.normal(size=(nc, X.shape[1]))
    b = np.zeros(nc)
    loss, gW, gb = softmax_risk(W, b, X, y, params.l2)
    curve = [loss]
    for _ in range(params.iters):
        lr = params.lr
        for _ in range(30):
            W2, b2 = W - lr * gW, b - lr * gb
            loss2, gW2, gb2 = softmax_risk(W2, b2, X, y, params.l2)
            if np.isfinite(loss2) and loss2 <= loss:
                break
            lr *= 0.5
        else:
            break
        W, b, loss, gW, gb = W2, b2, loss2, gW2, gb2
        curve.append(loss)
    if not np.isfinite(loss):
        raise NonFiniteLoss("classifier risk is not finite")
    return LinearModel(W, b, tuple(curve))


def evaluate(model: LinearModel, target, labels) -> float:
    X = getattr(target, "support", target)
    labels = np.asarray(labels)
    if labels.shape != (np.asarray(X).shape[0],):
        raise LabelLengthMismatch(f"{labels.size} labels for {np.asarray(X).shape[0]} points")
    return float((model.predict(X) == labels).mean())


def compression_ratio(dataset, spc: int) -> float:
    """Summary size ``spc * n_classes`` over the total sample count across domains.

    ``dataset`` is a ``MultiDomainDataset``, a ``BenchmarkShape`` or a key of ``TABLE1``.
    """
    if isinstance(dataset, str):
        dataset = TABLE1[dataset]
    return spc * dataset.n_classes / dataset.n_samples


# -- sweeps -----------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    benchmark: str = "synthetic"
    ot: SinkhornParams = field(default_factory=SinkhornParams)
    # support_size and seed are set per cell; sinkhorn is replaced by ``ot``
    bary: BarycenterParams = field(default_factory=lambda: BarycenterParams(support_size=1))
    dm: DMParams = field(default_factory=DMParams)
    dadil: DadilParams = field(default_factory=DadilParams)
    dadil_atoms: int | None = None
    dadil_atom_size: int | None = None
    classifier: ClassifierParams = field(default_factory=ClassifierParams)
    jobs: int = 1


def distill(method: str, dataset: MultiDomainDataset, spc: int, seed: int, cfg: SweepConfig = SweepConfig(), target_labels=None, dictionary=None):
    """Run one distiller by name. DaDiL fits a dictionary unless one is given."""
    bary = dataclasses.replace(cfg.bary, sinkhorn=cfg.ot)
    if method == "random_source":
        return distill_random_source(dataset, spc, seed)
    if method == "random_target_oracle":
        if target_labels is None:
            raise ConfigError("random_target_oracle needs held-out target labels")
        return distill_random_target_oracle(dataset, target_labels, spc, seed)
    if method == "wbt":
        return distill_wbt(dataset, spc, cfg.ot, bary, seed)
    if method == "msda_dm":
        return distill_msda_dm(dataset, spc, cfg.dm, seed)
    if method == "dadil":
        if dictionary is None:
            dictionary = fit_dictionary(dataset, seed, cfg)
        return dadil_compress_target(dictionary, spc, cfg.dadil.bary or bary, seed)
    raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


def fit_dictionary(dataset, seed, cfg: SweepConfig):
    params = dataclasses.replace(cfg.dadil, seed=seed)
    return dadil_fit(dataset, cfg.dadil_atoms, cfg.dadil_atom_size, params)


def _scalar_diagnostics(diag: dict) -> dict:
    return {k: v for k, v in sorted(diag.items()) if isinstance(v, (bool, int, float, str))}


def _run_job(job) -> list[RunRecord]:
    """All SPC cells of one (method, seed) pair; a DaDiL dictionary is fit once.

    Sinkhorn non-convergence warnings are counted into each record's
    diagnostics instead of being printed.
    """
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NotConvergedWarning)
        records = _run_cells(job, caught)
    return records


def _drain(caught: list) -> int:
    n = sum(issubclass(w.category, NotConvergedWarning) for w in caught)
    for w in caught:
        if not issubclass(w.category, NotConvergedWarning):
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    caught.clear()
    return n


def _run_cells(job, caught) -> list[RunRecord]:
    method, seed, spc_values, dataset, target_labels, cfg = job
    out = []
    dictionary, fit_time, fit_error = None, 0.0, None
    if method == "dadil":
        t0 = time.perf_counter()
        try:
            dictionary = fit_dictionary(dataset, seed, cfg)
        except Exception as e:  # every cell of this seed fails the same way
            fit_error = _error_tag(e)
        fit_time = time.perf_counter() - t0
    fit_warnings = _drain(caught)
    for spc in spc_values:
        rec = RunRecord(cfg.benchmark, dataset.target_name, method, spc, seed, None)
        rec.diagnostics["compression_ratio"] = compression_ratio(dataset, spc)
        if fit_error is not None:
            rec.error = fit_error
            out.append(rec)
            continue
        try:
            t0 = time.perf_counter()
            summary = distill(method, dataset, spc, seed, cfg, target_labels, dictionary)
            cls_params = dataclasses.replace(cfg.classifier, seed=seed)
            model = fit_linear(summary, cls_params)
            t1 = time.perf_counter()
            rec.accuracy = evaluate(model, dataset.target, target_labels)
            rec.eval_time = time.perf_counter() - t1
            rec.train_time = t1 - t0 + fit_time
            rec.diagnostics.update(_scalar_diagnostics(summary.diagnostics))
            if dictionary is not None:
                rec.diagnostics["dadil_selected_loss"] = dictionary.selected_loss
                rec.diagnostics["dadil_target_coords"] = dictionary.target_coords.tolist()
                rec.diagnostics["dadil_fit_sinkhorn_not_converged"] = fit_warnings
        except Exception as e:
            logger.debug("cell %s spc=%d seed=%d failed", method, spc, seed, exc_info=True)
            rec.error = _error_tag(e)
        rec.diagnostics["sinkhorn_not_converged"] = _drain(caught)
        out.append(rec)
    return out


def _error_tag(e: Exception) -> str:
    category = getattr(e, "category", type(e).__name__)
    return f"{category}: {type(e).__name__}: {e}"


def sweep(
    dataset: MultiDomainDataset,
    methods,
    spc_values,
    seeds,
    cfg: SweepConfig = SweepConfig(),
    target_labels=None,
) -> list[RunRecord]:
    """Every (method, spc, seed) cell, each trained on its summary and scored on the target.

    Cells that raise are kept as records carrying an ``error`` tag. Records come
    back sorted by method, spc and seed whatever the worker count.
    """
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
    if target_labels is None:
        raise ConfigError("scoring needs held-out target labels")
    target_labels = np.asarray(target_labels)
    if target_labels.shape != (dataset.target.n,):
        raise LabelLengthMismatch(f"{target_labels.size} labels for {dataset.target.n} target points")
    spc_values = sorted(set(int(s) for s in spc_values))
    seeds = sorted(set(int(s) for s in seeds))
    if not spc_values or min(spc_values) < 1:
        raise ConfigError("spc values must be positive")
    jobs = [(m, s, spc_values, dataset, target_labels, cfg) for m in methods for s in seeds]
    workers = max(1, min(cfg.jobs, len(jobs)))
    if workers == 1:
        results = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    records = [r for batch in results for r in batch]
    order = {m: i for i, m in enumerate(methods)}
    records.sort(key=lambda r: (order[r.method], r.spc, r.seed))
    for r in records:
        if r.error:
            logger.warning("%s spc=%d seed=%d failed: %s", r.method, r.spc, r.seed, r.error)
    return records


def paired_gains(records, method: str, baseline: str = "random_source", spc: int | None = None) -> dict[tuple[int, int], float]:
    """Accuracy of ``method`` minus ``baseline`` for each (spc, seed) where both succeeded."""
    acc = {(r.method, r.spc, r.seed): r.accuracy for r in records if r.error is None and r.accuracy is not None}
    out = {}
    for (m, s, seed), a in sorted(acc.items()):
        if m == method and (spc is None or s == spc) and (baseline, s, seed) in acc:
            out[(s, seed)] = a - acc[(baseline, s, seed)]
    return out
