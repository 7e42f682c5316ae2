import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mockingbird.dataset_io import LabeledDataset
from mockingbird.detector import (
    OBJECTIVES,
    TrainConfig,
    accuracy,
    init_model,
    input_gradient,
    load_model,
    objective_value,
    predict_proba,
    save_model,
    top_k_from_probs,
    top_k_labels,
    train,
)
from mockingbird.errors import BadK, DimensionMismatch, ModelFormatError, SingleClassDataset, UnknownClass
from mockingbird.trace_model import BurstTrace


def finite_difference(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _separable(n=20, width=12, seed=0):
    rng = np.random.default_rng(seed)
    traces = []
    for i in range(n):
        label = i % 2
        lo, hi = (1, 5) if label == 0 else (20, 30)
        traces.append(BurstTrace(label, rng.integers(lo, hi, size=width).astype(float)))
    return LabeledDataset(2, traces)


@pytest.mark.parametrize("objective", OBJECTIVES)
def test_input_gradient_matches_finite_differences(objective):
    rng = np.random.default_rng(99)
    worst = 0.0
    for trial in range(100):
        dims = [int(rng.integers(3, 9)), *[int(h) for h in rng.integers(3, 8, size=rng.integers(1, 3))],
                int(rng.integers(2, 6))]
        model = init_model(dims, seed=trial)
        x = rng.uniform(0, 2, size=dims[0])
        cls = int(rng.integers(dims[-1]))
        _, grad = input_gradient(model, x, objective, cls)
        fd = finite_difference(
            lambda v: objective_value(predict_proba(model, v, normalized=True), objective, cls), x)
        err = np.max(np.abs(grad - fd)) / max(1.0, np.max(np.abs(fd)))
        worst = max(worst, err)
    assert worst < 1e-5


def test_gradient_wrt_normalized_input():
    model = init_model([4, 3], seed=1, normalization_scale=10.0)
    raw = np.array([5.0, 10.0, 2.0, 7.0])
    v1, g1 = input_gradient(model, raw, "proba_of_class", 0, normalized=False)
    v2, g2 = input_gradient(model, raw / 10.0, "proba_of_class", 0)
    assert v1 == v2 and np.array_equal(g1, g2)


def test_zero_model_uniform_and_flat():
    model = init_model([5, 4, 3], zero=True)
    p = predict_proba(model, np.ones(5))
    assert np.allclose(p, 1 / 3)
    _, g = input_gradient(model, np.ones(5), "proba_of_class", 1)
    assert np.allclose(g, 0)


def test_probabilities_sum_to_one():
    model = init_model([6, 5, 4], seed=3)
    p = predict_proba(model, np.random.default_rng(0).uniform(0, 50, size=(10, 6)))
    assert p.shape == (10, 4)
    assert np.all(p >= 0) and np.allclose(p.sum(axis=1), 1, atol=1e-9)


def test_cw_targeted_negative_at_argmax():
    model = train(_separable(), TrainConfig(epochs=50, hidden_dims=(8,)))
    x = _separable().traces[1]
    p = predict_proba(model, x)
    assert objective_value(p, "cw_targeted", int(np.argmax(p))) < 0


def test_objective_value_definitions():
    p = np.array([0.2, 0.5, 0.3])
    assert objective_value(p, "cw_targeted", 1) == pytest.approx(0.3 - 0.5)
    assert objective_value(p, "cw_untargeted", 1) == pytest.approx(0.5 - 0.3)
    assert objective_value(p, "proba_of_class", 2) == 0.3
    with pytest.raises(UnknownClass):
        objective_value(p, "proba_of_class", 3)


def test_separable_training_is_perfect_and_deterministic():
    ds = _separable()
    held = _separable(seed=1)
    a = train(ds, TrainConfig(epochs=50, hidden_dims=(8,)))
    b = train(ds, TrainConfig(epochs=50, hidden_dims=(8,)))
    assert accuracy(a, held) == 1.0
    assert a.parameters_equal(b)
    for t in ds:
        assert int(np.argmax(predict_proba(a, t))) == t.label
    assert a.classes == 2


def test_train_rejects_single_class():
    with pytest.raises(SingleClassDataset):
        train(LabeledDataset(2, [BurstTrace(0, [1, 2]), BurstTrace(0, [3, 4])]))


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        predict_proba(init_model([3, 2]), np.ones(4))


def test_top_k_examples():
    assert top_k_from_probs([0.1, 0.6, 0.3], 2) == [1, 2]
    assert top_k_from_probs([0.5, 0.5], 1) == [0]
    assert sorted(top_k_from_probs([0.2, 0.1, 0.7], 3)) == [0, 1, 2]
    with pytest.raises(BadK):
        top_k_from_probs([0.5, 0.5], 3)
    with pytest.raises(BadK):
        top_k_labels(init_model([2, 2]), np.ones(2), 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=8))
def test_top_k_brute_force(weights):
    p = np.asarray(weights)
    for k in range(1, p.size + 1):
        expected = sorted(range(p.size), key=lambda i: (-p[i], i))[:k]
        assert top_k_from_probs(p, k) == expected


def test_model_round_trip(tmp_path):
    model = init_model([7, 5, 3], seed=2, normalization_scale=13.5, arch_id="x")
    save_model(model, tmp_path / "m.bin")
    back = load_model(tmp_path / "m.bin")
    assert back.parameters_equal(model)
    assert back.arch_id == "x" and back.normalization_scale == 13.5
    x = np.arange(7.0)
    assert np.array_equal(predict_proba(back, x), predict_proba(model, x))


def test_model_format_errors(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"nope")
    with pytest.raises(ModelFormatError):
        load_model(p)
    model = init_model([3, 2])
    save_model(model, p)
    p.write_bytes(p.read_bytes() + b"\x00" * 8)
    with pytest.raises(ModelFormatError):
        load_model(p)


def test_scale_quantile_changes_normalization():
    ds = _separable()
    full = train(ds, TrainConfig(epochs=1))
    robust = train(ds, TrainConfig(epochs=1, scale_quantile=0.5))
    assert full.normalization_scale == ds.matrix().max()
    assert robust.normalization_scale < full.normalization_scale
