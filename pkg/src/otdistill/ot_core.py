"""Discrete optimal transport between uniform empirical measures.

The workhorse is a stabilized Sinkhorn solver; ``exact_ot`` solves the
uniform, equal-size case exactly as an assignment problem and serves as an
oracle for it.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .distributions import (
    GroundCost,
    LabeledMeasure,
    class_means,
    label_penalty,
    sq_distances,
)
from .errors import (
    CapExceeded,
    DimensionMismatch,
    MissingLabels,
    NonFiniteCost,
    NotConverged,
    NotConvergedWarning,
    NotSquare,
    ZeroRowMass,
)

logger = logging.getLogger(__name__)

# rescale potentials once a scaling vector leaves [1e-30, 1e30]
_ABSORB_LOG = 69.0
_ANNEAL_ITERS = 50


@dataclass(frozen=True)
class SinkhornParams:
    """Entropic solver settings.

    With ``relative=True`` the regularization actually used is
    ``epsilon * scale`` where ``scale`` is the mean ground cost (or the mean
    feature cost, for label-augmented problems).
    """

    epsilon: float = 0.05
    max_iters: int = 1000
    tol: float = 1e-6
    relative: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")

    def resolve(self, scale: float) -> float:
        if self.relative and scale > 0:
            return self.epsilon * scale
        return self.epsilon


@dataclass(frozen=True, eq=False)
class TransportPlan:
    coupling: np.ndarray
    cost_value: float
    solver: str
    marginal_error: float
    epsilon: float | None = None
    converged: bool = True
    n_iters: int = 0
    potentials: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.coupling.shape

    def to_dict(self) -> dict:
        return {
            "solver": self.solver,
            "cost_value": self.cost_value,
            "marginal_error": self.marginal_error,
            "epsilon": self.epsilon,
            "converged": self.converged,
            "n_iters": self.n_iters,
            "coupling": self.coupling.tolist(),
        }


def _marginal_error(P: np.ndarray) -> float:
    n, m = P.shape
    return float(max(np.abs(P.sum(1) - 1.0 / n).max(), np.abs(P.sum(0) - 1.0 / m).max()))


def _lse(M: np.ndarray, axis: int) -> np.ndarray:
    mx = M.max(axis=axis, keepdims=True)
    mx[~np.isfinite(mx)] = 0.0
    return np.log(np.exp(M - mx).sum(axis=axis)) + np.squeeze(mx, axis=axis)


def _round_feasible(P: np.ndarray) -> np.ndarray:
    """Project an approximate plan onto the uniform transport polytope.

    Rows and then columns are scaled down to their targets, and the missing
    mass is added back as a rank-one correction.
    """
    n, m = P.shape
    a, b = 1.0 / n, 1.0 / m
    r = P.sum(1)
    with np.errstate(divide="ignore"):
        P = P * np.minimum(a / r, 1.0)[:, None]
    c = P.sum(0)
    with np.errstate(divide="ignore"):
        P = P * np.minimum(b / c, 1.0)[None, :]
    er = a - P.sum(1)
    ec = b - P.sum(0)
    s = er.sum()
    if s > 0:
        P = P + np.outer(er, ec) / s
    return np.maximum(P, 0.0)


def _sinkhorn_log(C, eps, f, g, max_iters, tol):
    """Plain log-domain iterations; slow but immune to underflow.

    Same convention as the scaling path: the plan is ``exp((f + g - C) / eps)``.
    """
    n, m = C.shape
    la, lb = -np.log(n), -np.log(m)
    err = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        f = eps * (la - _lse((g[None, :] - C) / eps, axis=1))
        g = eps * (lb - _lse((f[:, None] - C) / eps, axis=0))
        rows = np.exp(_lse((f[:, None] + g[None, :] - C) / eps, axis=1))
        err = float(np.abs(rows - 1.0 / n).max())
        if err <= tol:
            break
    return f, g, err, it


def _sinkhorn_scaling(C, eps, f, g, max_iters, tol):
    """Matrix scaling on a kernel shifted by the current potentials.

    Potentials absorb the scaling vectors whenever they drift too far, so the
    kernel never overflows. Returns ``None`` if a row or column of the kernel
    underflows entirely; the caller then falls back to log-domain updates.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _scaling_loop(C, eps, f, g, max_iters, tol)


def _scaling_loop(C, eps, f, g, max_iters, tol):
    n, m = C.shape
    a, b = 1.0 / n, 1.0 / m
    K = np.exp((f[:, None] + g[None, :] - C) / eps)
    if not np.isfinite(K).all():
        return None
    u = np.ones(n)
    v = np.ones(m)
    err = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        Kv = K @ v
        if not np.all(Kv > 0):
            return None
        u = a / Kv
        Ktu = K.T @ u
        if not np.all(Ktu > 0):
            return None
        v = b / Ktu
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            return None
        err = float(np.abs(u * (K @ v) - a).max())
        if err <= tol:
            break
        if np.abs(np.log(u)).max() > _ABSORB_LOG or np.abs(np.log(v)).max() > _ABSORB_LOG:
            f = f + eps * np.log(u)
            g = g + eps * np.log(v)
            K = np.exp((f[:, None] + g[None, :] - C) / eps)
            if not np.isfinite(K).all():
                return None
            u = np.ones(n)
            v = np.ones(m)
    f = f + eps * np.log(u)
    g = g + eps * np.log(v)
    return f, g, err, it


def _solve(C, eps, f, g, max_iters, tol):
    out = _sinkhorn_scaling(C, eps, f, g, max_iters, tol)
    if out is None:
        out = _sinkhorn_log(C, eps, f, g, max_iters, tol)
    return out


def sinkhorn(
    C: np.ndarray,
    params: SinkhornParams = SinkhornParams(),
    scale: float | None = None,
    init: tuple[np.ndarray, np.ndarray] | None = None,
    strict: bool = False,
) -> TransportPlan:
    """Entropic OT between uniform marginals on the rows and columns of ``C``.

    ``scale`` overrides the reference magnitude for relative epsilon (mean of
    ``C`` by default). ``init`` warm-starts the dual potentials. The returned
    coupling is rounded onto the feasible set, so ``cost_value`` is the
    transport cost of a genuine coupling and never undercuts the exact optimum.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or 0 in C.shape:
        raise DimensionMismatch(f"cost must be a non-empty matrix, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise NonFiniteCost("cost matrix has non-finite entries")
    if (C < 0).any():
        raise NonFiniteCost("cost matrix has negative entries")
    n, m = C.shape
    eps = params.resolve(float(C.mean()) if scale is None else float(scale))
    if n == 1 or m == 1:
        P = np.full((n, m), 1.0 / (n * m))
        return TransportPlan(P, float((P * C).sum()), f"sinkhorn(eps={eps:.4g})", 0.0, eps, True, 0)

    if init is None:
        f = C.min(axis=1)
        g = (C - f[:, None]).min(axis=0)
    else:
        f, g = (np.asarray(p, dtype=float).copy() for p in init)
    total = 0
    # epsilon scaling: warm-start from coarser problems, each 4x sharper
    stage = float(np.ptp(C)) if init is None else eps
    while stage > 4.0 * eps:
        f, g, _, it = _solve(C, stage, f, g, _ANNEAL_ITERS, params.tol)
        total += it
        stage /= 4.0
    f, g, err, it = _solve(C, eps, f, g, params.max_iters, params.tol)
    it += total
    P = np.exp((f[:, None] + g[None, :] - C) / eps)
    converged = err <= params.tol
    P = _round_feasible(P)
    plan = TransportPlan(
        coupling=P,
        cost_value=float((P * C).sum()),
        solver=f"sinkhorn(eps={eps:.4g})",
        marginal_error=_marginal_error(P),
        epsilon=eps,
        converged=converged,
        n_iters=it,
        potentials=(f, g),
    )
    if not converged:
        if strict:
            raise NotConverged(plan, err)
        warnings.warn(f"sinkhorn stopped after {it} iterations, marginal error {err:.3g}", NotConvergedWarning, stacklevel=2)
    return plan


def exact_ot(C: np.ndarray, cap: int = 512) -> TransportPlan:
    """Exact OT for uniform equal-size measures, solved as a linear assignment."""
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise NotSquare(f"exact_ot needs a square cost, got {C.shape}")
    if not np.all(np.isfinite(C)):
        raise NonFiniteCost("cost matrix has non-finite entries")
    n = C.shape[0]
    if n > cap:
        raise CapExceeded(f"n={n} exceeds the exact solver cap {cap}")
    rows, cols = linear_sum_assignment(C)
    P = np.zeros_like(C)
    P[rows, cols] = 1.0 / n
    return TransportPlan(P, float(C[rows, cols].sum() / n), "exact", _marginal_error(P))


def wasserstein(
    a: LabeledMeasure,
    b: LabeledMeasure,
    cost: GroundCost = GroundCost(),
    params: SinkhornParams = SinkhornParams(),
) -> tuple[float, TransportPlan]:
    """Transport cost between two measures; its square root is W2 for the plain cost."""
    if a.d != b.d:
        raise DimensionMismatch(f"d={a.d} vs d={b.d}")
    feat = sq_distances(a.support, b.support)
    C = feat + label_penalty(a, b, cost.beta) if cost.kind == "label_augmented" else feat
    # epsilon tracks the feature scale; the label penalty would otherwise swamp it
    plan = sinkhorn(C, params, scale=float(feat.mean()))
    return plan.cost_value, plan


def linear_mmd(a: LabeledMeasure, b: LabeledMeasure) -> float:
    if a.d != b.d:
        raise DimensionMismatch(f"d={a.d} vs d={b.d}")
    return float(np.linalg.norm(a.support.mean(0) - b.support.mean(0)))


def class_mmd_sq(p: LabeledMeasure, q: LabeledMeasure) -> float:
    """Sum over classes of squared distances between class means.

    Classes missing from either measure are skipped.
    """
    if p.labels is None or q.labels is None:
        raise MissingLabels("class-conditional MMD needs labels on both measures")
    if p.d != q.d:
        raise DimensionMismatch(f"d={p.d} vs d={q.d}")
    if p.n_classes != q.n_classes:
        raise DimensionMismatch(f"{p.n_classes} vs {q.n_classes} classes")
    mp, mq = class_means(p), class_means(q)
    both = mp.present & mq.present
    if not both.all():
        logger.warning("classes %s are empty in one measure and skipped", np.flatnonzero(~both).tolist())
    diff = mp.means[both] - mq.means[both]
    return float((diff**2).sum())


def barycentric_map(plan: TransportPlan | np.ndarray, target_support: np.ndarray) -> np.ndarray:
    """Send row ``i`` to the plan-weighted average of the target points."""
    P = plan.coupling if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    Y = np.asarray(target_support, dtype=float)
    if P.shape[1] != Y.shape[0]:
        raise DimensionMismatch(f"plan has {P.shape[1]} columns, target has {Y.shape[0]} points")
    mass = P.sum(axis=1)
    bad = np.flatnonzero(~(mass > np.finfo(float).tiny))
    if bad.size:
        raise ZeroRowMass(int(bad[0]))
    return (P @ Y) / mass[:, None]
