import dataclasses

import numpy as np
import pytest

from conftest import blobs
from otdistill.barycenter import BarycenterParams
from otdistill.dadil import (
    DadilParams,
    Dictionary,
    dadil_compress_target,
    dadil_fit,
    default_n_atom,
    fixed_plan_loss,
    reconstruction_losses,
)
from otdistill.distributions import LabeledMeasure, MultiDomainDataset, balanced_labels, label_penalty, sq_distances
from otdistill.errors import ConfigError, DataError
from otdistill.ot_core import SinkhornParams, sinkhorn

FAST = DadilParams(iters=8, batch_size=30, inner_steps=3)


def toy_plans(rng, k=2, n=6, nb=5, labeled=True):
    atoms = [rng.normal(size=(n, 3)) for _ in range(k)]
    maps = []
    for _ in range(k):
        P = rng.random((n, n))
        maps.append(P / P.sum(1, keepdims=True))
    plan = rng.random((n, nb))
    plan /= plan.sum()
    batch = rng.normal(size=(nb, 3))
    penalty = None
    if labeled:
        a = LabeledMeasure(np.zeros((n, 3)), balanced_labels(n, 2), 2)
        b = LabeledMeasure(batch, rng.integers(0, 2, nb), 2)
        penalty = label_penalty(a, b, 5.0)
    return atoms, maps, plan, batch, penalty


@pytest.mark.parametrize("labeled", [True, False])
def test_fixed_plan_atom_gradient_matches_finite_differences(labeled):
    rng = np.random.default_rng(0)
    atoms, maps, plan, batch, penalty = toy_plans(rng, labeled=labeled)
    alpha = np.array([0.35, 0.65])
    _, g_atoms, g_alpha = fixed_plan_loss(atoms, alpha, maps, plan, batch, penalty)
    h = 1e-6
    for j in range(2):
        num = np.zeros_like(atoms[j])
        for idx in np.ndindex(*atoms[j].shape):
            up = [a.copy() for a in atoms]
            dn = [a.copy() for a in atoms]
            up[j][idx] += h
            dn[j][idx] -= h
            num[idx] = (fixed_plan_loss(up, alpha, maps, plan, batch, penalty)[0] - fixed_plan_loss(dn, alpha, maps, plan, batch, penalty)[0]) / (2 * h)
        assert np.linalg.norm(g_atoms[j] - num) / np.linalg.norm(num) <= 1e-3
    num_a = np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        num_a[i] = (fixed_plan_loss(atoms, alpha + e, maps, plan, batch, penalty)[0] - fixed_plan_loss(atoms, alpha - e, maps, plan, batch, penalty)[0]) / (2 * h)
    assert np.linalg.norm(g_alpha - num_a) / np.linalg.norm(num_a) <= 1e-3


def test_default_n_atom_is_class_multiple():
    assert default_n_atom(5) == 50
    assert default_n_atom(13) == 52
    assert default_n_atom(29) == 58
    assert default_n_atom(30) == 60


def test_fit_shapes_and_invariants(toy_dataset):
    ds, _ = toy_dataset
    d = dadil_fit(ds, n_atom=12, params=FAST)
    assert d.k == 4  # sources + 1
    assert d.coords.shape == (4, 4)
    assert d.domain_names[-1] == "t"
    assert np.allclose(d.coords.sum(1), 1.0, atol=1e-9) and (d.coords >= 0).all()
    for a in d.atoms:
        np.testing.assert_array_equal(a.class_counts(), [4, 4, 4])
        np.testing.assert_array_equal(a.labels, d.atoms[0].labels)
    assert len(d.training_history) == FAST.iters


def test_fit_is_deterministic(toy_dataset):
    ds, _ = toy_dataset
    a = dadil_fit(ds, k=2, n_atom=6, params=FAST)
    b = dadil_fit(ds, k=2, n_atom=6, params=FAST)
    assert a.to_json() == b.to_json()


def test_single_atom_gives_identical_reconstructions(toy_dataset):
    ds, _ = toy_dataset
    d = dadil_fit(ds, k=1, n_atom=6, params=FAST)
    np.testing.assert_array_equal(d.coords, np.ones((4, 1)))
    bary = BarycenterParams(support_size=6)
    outs = [dadil_compress_target(dataclasses.replace(d, coords=d.coords[[i] * 4]), 2, bary, seed=0) for i in range(4)]
    for o in outs[1:]:
        np.testing.assert_array_equal(o.measure.support, outs[0].measure.support)


def test_symmetric_domains_reconstruct_equally():
    rng = np.random.default_rng(8)
    x, y = blobs(rng, 30, 3, 3)
    ds = MultiDomainDataset(
        {"a": LabeledMeasure(x, y, 3), "b": LabeledMeasure(x, y, 3), "t": LabeledMeasure(x, None, 3)}, "t", 3, 3
    )
    params = DadilParams(iters=30, batch_size=90, inner_steps=3)
    d = dadil_fit(ds, k=2, n_atom=12, params=params)
    losses = reconstruction_losses(d, ds, params)
    assert abs(losses["a"] - losses["b"]) <= 0.1 * max(losses["a"], losses["b"])


def test_training_improves_best_loss(toy_dataset):
    ds, _ = toy_dataset
    d = dadil_fit(ds, n_atom=12, params=DadilParams(iters=25, batch_size=30, inner_steps=3))
    h = d.training_history
    assert min(h) < h[0]
    assert d.selected_loss in h
    assert d.selected_loss <= 1.1 * min(h)


def test_one_hot_coords_compress_to_the_atom():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(8, 2)) * 4
    labels = balanced_labels(8, 2)
    atom = LabeledMeasure(x, labels, 2)
    other = LabeledMeasure(rng.normal(size=(8, 2)), labels, 2)
    d = Dictionary([other, atom], np.array([[0.5, 0.5], [0.0, 1.0]]), ["s", "t"])
    tight = BarycenterParams(support_size=8, sinkhorn=SinkhornParams(epsilon=1e-4), max_outer_iters=100)
    s = dadil_compress_target(d, 4, tight, seed=0)
    assert s.method == "dadil"
    for c in range(2):
        got = s.measure.support[s.measure.labels == c]
        want = x[labels == c]
        # same point sets up to ordering
        D = sq_distances(got, want)
        assert D.min(1).max() <= 1e-4


def test_compress_tep_shape_and_determinism():
    rng = np.random.default_rng(10)
    labels = balanced_labels(58, 29)
    atoms = [LabeledMeasure(rng.normal(size=(58, 4)), labels, 29) for _ in range(2)]
    d = Dictionary(atoms, np.array([[0.5, 0.5], [0.3, 0.7]]), ["s", "t"])
    a = dadil_compress_target(d, 1, seed=5)
    b = dadil_compress_target(d, 1, seed=5)
    assert a.measure.n == 29
    np.testing.assert_array_equal(a.measure.class_counts(), np.ones(29))
    np.testing.assert_array_equal(a.measure.support, b.measure.support)


def test_scaling_features_scales_losses_quadratically(toy_dataset):
    ds, _ = toy_dataset
    rng = np.random.default_rng(12)
    labels = balanced_labels(9, 3)
    atoms = [LabeledMeasure(rng.normal(size=(9, 4)) * 2, labels, 3) for _ in range(2)]
    coords = np.array([[0.5, 0.5], [0.2, 0.8], [0.9, 0.1], [0.4, 0.6]])
    s = 3.0
    d1 = Dictionary(atoms, coords, ds.source_names + [ds.target_name])
    d2 = Dictionary([a.with_support(a.support * s) for a in atoms], coords, d1.domain_names)
    l1 = reconstruction_losses(d1, ds)
    l2 = reconstruction_losses(d2, ds.replace_supports(lambda X: X * s))
    for name in l1:
        assert l2[name] == pytest.approx(s**2 * l1[name], rel=1e-6)


def test_dictionary_json_round_trip(tmp_path, toy_dataset):
    ds, _ = toy_dataset
    d = dadil_fit(ds, k=2, n_atom=6, params=FAST)
    d.save(tmp_path / "dict.json")
    e = Dictionary.load(tmp_path / "dict.json")
    assert e.to_json() == d.to_json()
    np.testing.assert_array_equal(e.coords, d.coords)
    with pytest.raises(DataError):
        Dictionary.from_json('{"atoms": []}')


def test_dictionary_and_fit_validation(toy_dataset):
    ds, _ = toy_dataset
    labels = balanced_labels(4, 2)
    atoms = [LabeledMeasure(np.zeros((4, 2)), labels, 2)] * 2
    with pytest.raises(ConfigError):
        Dictionary(atoms, np.array([[0.5, 0.6]]), ["t"])
    with pytest.raises(ConfigError):
        Dictionary(atoms, np.array([[1.0]]), ["t"])
    with pytest.raises(ConfigError):
        dadil_fit(ds, n_atom=2, params=FAST)
    with pytest.raises(ConfigError):
        DadilParams(optimizer="lbfgs")
    with pytest.raises(ConfigError):
        dadil_compress_target(Dictionary(atoms, np.array([[0.5, 0.5]]), ["t"]), 0)


def test_loss_plan_consistency():
    # the fixed-plan loss equals the transport value it was built from
    rng = np.random.default_rng(13)
    atoms, maps, _, batch, _ = toy_plans(rng, labeled=False)
    alpha = np.array([0.5, 0.5])
    XB = sum(a * (M @ X) for a, M, X in zip(alpha, maps, atoms))
    plan = sinkhorn(sq_distances(XB, batch), SinkhornParams())
    loss, _, _ = fixed_plan_loss(atoms, alpha, maps, plan.coupling, batch)
    assert loss == pytest.approx(plan.cost_value, rel=1e-12)
