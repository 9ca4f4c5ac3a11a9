import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otdistill.distributions import GroundCost, LabeledMeasure, cost_matrix
from otdistill.errors import (
    CapExceeded,
    DimensionMismatch,
    MissingLabels,
    NonFiniteCost,
    NotConverged,
    NotSquare,
    ZeroRowMass,
)
from otdistill.ot_core import (
    SinkhornParams,
    TransportPlan,
    barycentric_map,
    class_mmd_sq,
    exact_ot,
    linear_mmd,
    sinkhorn,
    wasserstein,
)


def brute_force_ot(C):
    n = C.shape[0]
    return min(C[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n))) / n


def random_cost(rng, n, m=None, d=3):
    x = rng.normal(size=(n, d))
    y = rng.normal(size=(m or n, d))
    return ((x[:, None] - y[None]) ** 2).sum(-1)


def test_sinkhorn_one_by_one():
    p = sinkhorn(np.array([[0.0]]))
    assert p.coupling.tolist() == [[1.0]]
    assert p.cost_value == 0.0


def test_sinkhorn_self_transport_small_eps():
    x = np.array([[0.0, 0.0], [1.0, 0.0]])
    C = ((x[:, None] - x[None]) ** 2).sum(-1)
    p = sinkhorn(C, SinkhornParams(epsilon=0.01))
    np.testing.assert_allclose(p.coupling, 0.5 * np.eye(2), atol=1e-6)
    assert p.cost_value < 1e-6


def test_sinkhorn_plan_is_feasible_and_close_to_exact():
    rng = np.random.default_rng(1)
    C = random_cost(rng, 6)
    p = sinkhorn(C, SinkhornParams(epsilon=0.01))
    assert (p.coupling >= 0).all()
    assert p.coupling.sum() == pytest.approx(1.0, abs=1e-6)
    assert p.marginal_error <= 1e-6
    e = exact_ot(C)
    assert abs(p.cost_value - e.cost_value) <= 0.02 * e.cost_value


def test_sinkhorn_rectangular_marginals():
    rng = np.random.default_rng(2)
    p = sinkhorn(random_cost(rng, 5, 40))
    assert p.converged
    np.testing.assert_allclose(p.coupling.sum(1), 1 / 5, atol=1e-6)
    np.testing.assert_allclose(p.coupling.sum(0), 1 / 40, atol=1e-6)


def test_sinkhorn_tiny_epsilon_does_not_overflow():
    rng = np.random.default_rng(3)
    C = random_cost(rng, 8) * 1e3
    p = sinkhorn(C, SinkhornParams(epsilon=1e-4 * float(np.median(C)), relative=False))
    assert np.isfinite(p.coupling).all()
    assert p.cost_value >= exact_ot(C).cost_value - 1e-9


def test_sinkhorn_errors_and_strict_mode():
    with pytest.raises(NonFiniteCost):
        sinkhorn(np.array([[0.0, np.inf], [1.0, 0.0]]))
    rng = np.random.default_rng(4)
    C = random_cost(rng, 6)
    with pytest.raises(NotConverged) as e:
        sinkhorn(C, SinkhornParams(epsilon=1e-2, max_iters=1), init=(np.zeros(6), np.zeros(6)), strict=True)
    assert isinstance(e.value.plan, TransportPlan)
    assert e.value.marginal_error > 0


def test_sinkhorn_warm_start_reuses_potentials():
    rng = np.random.default_rng(5)
    C = random_cost(rng, 30, 20)
    cold = sinkhorn(C)
    warm = sinkhorn(C, init=cold.potentials)
    assert warm.n_iters <= 2
    np.testing.assert_allclose(warm.coupling, cold.coupling, atol=1e-6)


def test_sinkhorn_cost_nonincreasing_after_stabilization():
    rng = np.random.default_rng(6)
    for _ in range(5):
        C = random_cost(rng, 8)
        params = SinkhornParams(epsilon=0.05, tol=1e-12)
        ref = sinkhorn(C, params)
        values = [sinkhorn(C, SinkhornParams(0.05, max_iters=k, tol=1e-12)).cost_value for k in range(ref.n_iters - 20, ref.n_iters + 1)]
        assert all(b <= a + 1e-8 for a, b in zip(values, values[1:]))


def test_exact_ot_examples():
    assert exact_ot(np.zeros((3, 3))).cost_value == 0.0
    p = exact_ot(np.array([[1.0, 2.0], [2.0, 1.0]]))
    np.testing.assert_array_equal(p.coupling, 0.5 * np.eye(2))
    assert p.cost_value == 1.0
    rng = np.random.default_rng(0)
    C = rng.random((5, 5))
    assert exact_ot(C).cost_value == pytest.approx(brute_force_ot(C), abs=1e-12)


def test_exact_ot_one_nonzero_per_row():
    rng = np.random.default_rng(8)
    P = exact_ot(rng.random((7, 7))).coupling
    assert ((P > 0).sum(1) == 1).all()
    assert ((P > 0).sum(0) == 1).all()


@pytest.mark.parametrize("n", range(1, 7))
def test_exact_ot_matches_enumeration(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(5):
        C = rng.random((n, n))
        assert exact_ot(C).cost_value == pytest.approx(brute_force_ot(C), abs=1e-12)


def test_exact_ot_errors():
    with pytest.raises(NotSquare):
        exact_ot(np.zeros((2, 3)))
    with pytest.raises(CapExceeded):
        exact_ot(np.zeros((4, 4)), cap=3)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31))
def test_sinkhorn_never_beats_exact(n, seed):
    C = random_cost(np.random.default_rng(seed), n)
    assert sinkhorn(C).cost_value >= exact_ot(C).cost_value - 1e-9


def test_wasserstein_examples():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(4, 2))
    a = LabeledMeasure(x, None, 1)
    v, _ = wasserstein(a, a, params=SinkhornParams(epsilon=1e-3))
    assert v <= 1e-6
    p = LabeledMeasure([[1.0, 2.0]], None, 1)
    q = LabeledMeasure([[4.0, 6.0]], None, 1)
    assert wasserstein(p, q, params=SinkhornParams(epsilon=123.0))[0] == 25.0
    b = LabeledMeasure(rng.normal(size=(4, 2)), None, 1)
    v, _ = wasserstein(a, b, params=SinkhornParams(epsilon=0.01))
    exact = exact_ot(cost_matrix(a, b)).cost_value
    assert abs(v - exact) <= 0.02 * exact


def test_wasserstein_is_symmetric():
    rng = np.random.default_rng(10)
    a = LabeledMeasure(rng.normal(size=(7, 3)), rng.integers(0, 2, 7), 2)
    b = LabeledMeasure(rng.normal(size=(9, 3)) + 1, rng.integers(0, 2, 9), 2)
    for cost in (GroundCost.euclidean(), GroundCost.augmented(50.0)):
        assert wasserstein(a, b, cost)[0] == pytest.approx(wasserstein(b, a, cost)[0], rel=1e-4)


def test_wasserstein_label_cost_blocks_cross_class_mass():
    a = LabeledMeasure([[0.0], [10.0]], [0, 1], 2)
    b = LabeledMeasure([[10.0], [0.0]], [0, 1], 2)
    _, plain = wasserstein(a, b)
    _, aug = wasserstein(a, b, GroundCost.augmented(1e4))
    np.testing.assert_allclose(plain.coupling, [[0, 0.5], [0.5, 0]], atol=1e-6)
    np.testing.assert_allclose(aug.coupling, [[0.5, 0], [0, 0.5]], atol=1e-6)


def test_linear_mmd():
    rng = np.random.default_rng(11)
    a = LabeledMeasure(rng.normal(size=(10, 3)), None, 1)
    assert linear_mmd(a, a) == 0.0
    p = LabeledMeasure([[-1.0, 0.0], [1.0, 0.0]], None, 1)
    q = LabeledMeasure([[3.0, 4.0]], None, 1)
    assert linear_mmd(p, q) == pytest.approx(5.0)
    b = LabeledMeasure(rng.normal(size=(13, 3)), None, 1)
    direct = np.sqrt(sum((a.support.mean(0)[k] - b.support.mean(0)[k]) ** 2 for k in range(3)))
    assert linear_mmd(a, b) == pytest.approx(direct, abs=1e-12)
    with pytest.raises(DimensionMismatch):
        linear_mmd(a, p)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_linear_mmd_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (LabeledMeasure(rng.normal(k, 1 + k, size=(rng.integers(1, 9), 2)), None, 1) for k in range(3))
    assert linear_mmd(a, c) <= linear_mmd(a, b) + linear_mmd(b, c) + 1e-12


def test_class_mmd_sq_examples():
    rng = np.random.default_rng(12)
    p = LabeledMeasure(rng.normal(size=(6, 2)), [0, 0, 0, 1, 1, 1], 2)
    assert class_mmd_sq(p, p) == 0.0
    q = LabeledMeasure([[3.0, 4.0], [0.0, 0.0]], [0, 1], 2)
    r = LabeledMeasure([[0.0, 0.0], [0.0, 0.0]], [0, 1], 2)
    assert class_mmd_sq(q, r) == pytest.approx(25.0)
    with pytest.raises(MissingLabels):
        class_mmd_sq(p, p.with_labels(None))


def test_class_mmd_sq_brute_force_and_empty_classes(caplog):
    rng = np.random.default_rng(13)
    p = LabeledMeasure(rng.normal(size=(30, 3)), rng.integers(0, 4, 30), 5)
    q = LabeledMeasure(rng.normal(size=(25, 3)), rng.integers(0, 4, 25), 5)
    total = 0.0
    for c in range(5):
        xp = [x for x, y in zip(p.support, p.labels) if y == c]
        xq = [x for x, y in zip(q.support, q.labels) if y == c]
        if xp and xq:
            total += float(((np.mean(xp, 0) - np.mean(xq, 0)) ** 2).sum())
    assert class_mmd_sq(p, q) == pytest.approx(total, abs=1e-10)
    assert "skipped" in caplog.text


def test_barycentric_map_examples():
    rng = np.random.default_rng(14)
    Y = rng.normal(size=(4, 2))
    np.testing.assert_allclose(barycentric_map(np.eye(4) / 4, Y), Y, atol=1e-15)
    out = barycentric_map(np.full((3, 4), 1 / 12), Y)
    np.testing.assert_allclose(out, np.tile(Y.mean(0), (3, 1)), atol=1e-15)
    with pytest.raises(ZeroRowMass) as e:
        barycentric_map(np.array([[0.5, 0.0], [0.0, 0.0]]), Y[:2])
    assert e.value.row == 1


def test_barycentric_map_stays_in_box():
    rng = np.random.default_rng(15)
    X, Y = rng.normal(size=(12, 3)), rng.normal(size=(20, 3)) * 3
    out = barycentric_map(sinkhorn(((X[:, None] - Y[None]) ** 2).sum(-1)), Y)
    assert (out >= Y.min(0) - 1e-12).all() and (out <= Y.max(0) + 1e-12).all()
