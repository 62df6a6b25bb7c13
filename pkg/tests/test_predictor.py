from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabalign.data import encode_table
from tabalign.errors import DataError
from tabalign.predictor import PredictorSpec, TrainedPredictor, train

from helpers import blobs_table, fd_gradient, fd_hessian, numeric_schema, random_predictor


@pytest.fixture(scope="module")
def blobs_fixture():
    return blobs_table(250, centers=[(-3.0, -3.0), (3.0, 3.0)], spread=1.0, seed=0)


def _accuracy(model, table):
    probs = model.predict_proba_table(table)
    vocab = table.schema.label_column.vocabulary
    truth = np.array([vocab.index(v) for v in table.label_values()])
    return float(np.mean(np.argmax(probs, axis=1) == truth))


def test_blobs_training_accuracy(blobs_fixture):
    model = train(blobs_fixture, PredictorSpec())
    assert _accuracy(model, blobs_fixture) >= 0.95


def test_single_class_table_errors(blobs_fixture):
    from tabalign.data import Table

    rows = tuple(r for r in blobs_fixture.rows if r[-1] == "0")
    single = Table(schema=blobs_fixture.schema, rows=rows)
    with pytest.raises(DataError, match="single"):
        train(single, PredictorSpec(epochs=1))


def test_training_is_seed_deterministic(blobs_fixture):
    spec = PredictorSpec(hidden_layers=(8, 4), epochs=5, seed=11)
    a = train(blobs_fixture, spec)
    b = train(blobs_fixture, spec)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(a.biases, b.biases):
        assert np.array_equal(ba, bb)


def test_untrained_net_is_uniform(blobs_fixture):
    # zero-initialized output layer: an untrained 2-class net answers (0.5, 0.5)
    model = train(blobs_fixture, PredictorSpec(hidden_layers=(8,), epochs=0))
    probs = model.predict_proba(blobs_fixture.rows[0])
    assert probs.tolist() == pytest.approx([0.5, 0.5])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(min_value=-5, max_value=5), min_size=4, max_size=4), st.integers(0, 999))
def test_probabilities_are_a_distribution(values, seed):
    model = random_predictor(4, seed=seed)
    probs = model.predict_proba_vector(np.array(values))
    assert np.all(probs >= 0)
    assert probs.sum() == pytest.approx(1.0, abs=1e-6)


def test_gradient_matches_finite_differences():
    for seed in range(5):
        model = random_predictor(5, seed=seed)
        rng = np.random.default_rng(seed + 100)
        v = rng.normal(0, 1.0, size=5)
        for ci in (0, 1):
            grad = model.input_gradient(v, ci)
            oracle = fd_gradient(lambda u: float(model.logits(u)[ci]), v, h=1e-4)
            assert np.max(np.abs(grad - oracle)) <= 1e-4


def test_gradient_chain_value_at_zero_input():
    # tanh has slope 1 and curvature 0 at the origin: with zero biases the
    # gradient collapses to the plain weight chain, and the Hessian vanishes
    model = random_predictor(4, seed=1, hidden=(6,))
    model = TrainedPredictor(
        spec=PredictorSpec(hidden_layers=(6,), activation="tanh", epochs=1),
        schema=model.schema,
        weights=model.weights,
        biases=[np.zeros_like(b) for b in model.biases],
    )
    v = np.zeros(4)
    expected = model.weights[0].T @ model.weights[1][0]
    assert np.allclose(model.input_gradient(v, 0), expected, atol=1e-12)
    assert np.max(np.abs(model.input_hessian(v, 0))) <= 1e-12


def test_hessian_matches_finite_differences():
    for seed in range(5):
        model = random_predictor(4, seed=seed + 50)
        rng = np.random.default_rng(seed)
        v = rng.normal(0, 1.0, size=4)
        hess = model.input_hessian(v, 1)
        oracle = fd_hessian(lambda u: float(model.logits(u)[1]), v, h=1e-3)
        assert np.max(np.abs(hess - oracle)) <= 1e-3


def test_hessian_is_symmetric():
    model = random_predictor(6, seed=7)
    v = np.random.default_rng(0).normal(size=6)
    hess = model.input_hessian(v, 0)
    assert np.max(np.abs(hess - hess.T)) <= 1e-8


def test_checkpoint_round_trip(tmp_path, blobs_fixture):
    model = train(blobs_fixture, PredictorSpec(hidden_layers=(8,), epochs=3, seed=2))
    path = tmp_path / "model.npz"
    model.save(path)
    loaded = TrainedPredictor.load(path)
    assert loaded.spec == model.spec
    assert loaded.schema == model.schema
    x = encode_table(blobs_fixture)[:5]
    assert np.array_equal(loaded.logits(x), model.logits(x))


def test_imbalanced_classes_get_weighted():
    from tabalign.data import Table, fit_bins, with_schema

    rng = np.random.default_rng(3)
    minority = [(float(x), float(y), "0") for x, y in rng.normal((-3, -3), 1.0, size=(30, 2))]
    majority = [(float(x), float(y), "1") for x, y in rng.normal((3, 3), 1.0, size=(400, 2))]
    schema = blobs_table(2, centers=[(0, 0), (1, 1)], seed=0).schema
    merged = Table(schema=schema, rows=tuple(minority + majority))
    merged = with_schema(merged, fit_bins(merged, 4))
    model = train(merged, PredictorSpec(hidden_layers=(8,), epochs=40, seed=0))
    # minority class must still be recoverable
    minority_table = Table(schema=merged.schema, rows=tuple(minority))
    probs = model.predict_proba_table(minority_table)
    assert float(np.mean(np.argmax(probs, axis=1) == 0)) >= 0.9
