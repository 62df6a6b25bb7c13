from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabalign import attribution
from tabalign.align import (
    ClassPriorModel,
    WeightedTable,
    fit_frequencies,
    importance_weights,
    joint_probability,
    log_joint_probability,
    resample,
)
from tabalign.attribution import FeatureGroups
from tabalign.data import CATEGORICAL, NUMERICAL, ColumnSpec, Table, TableSchema, fit_bins, with_schema
from tabalign.errors import DataError
from tabalign.evaluate import tv_distance
from tabalign.predictor import PredictorSpec

from helpers import mixed_table


def _cat_table(columns: dict[str, list[str]], labels: list[str]) -> Table:
    names = list(columns)
    specs = [
        ColumnSpec(name=n, kind=CATEGORICAL, vocabulary=tuple(dict.fromkeys(columns[n])))
        for n in names
    ]
    specs.append(ColumnSpec(name="y", kind=CATEGORICAL, vocabulary=tuple(dict.fromkeys(labels)) if len(set(labels)) > 1 else ("0", "1")))
    schema = TableSchema(columns=tuple(specs), label_index=len(names))
    rows = tuple(tuple([*vals, lab]) for *vals, lab in zip(*columns.values(), labels))
    return Table(schema=schema, rows=rows)


def _no_groups(n_fields: int) -> FeatureGroups:
    return FeatureGroups(groups=(), n_fields=n_fields, gamma_threshold=0.0)


class ConstantModel:
    """Duck-typed discriminant model returning a fixed probability vector."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)

    def predict_proba(self, row):
        return self.probs


def test_raw_frequencies_alpha_zero():
    table = _cat_table({"f": ["a", "a", "b"]}, ["0", "1", "0"])
    fm = fit_frequencies(table, _no_groups(1), table.schema, alpha=0.0)
    factor = fm.factors[(0,)]
    assert factor.probability(("a",)) == pytest.approx(2 / 3)
    assert factor.probability(("b",)) == pytest.approx(1 / 3)
    assert factor.unseen == 0.0


def test_smoothed_frequencies_alpha_one():
    table = _cat_table({"f": ["a", "a", "b"]}, ["0", "1", "0"])
    fm = fit_frequencies(table, _no_groups(1), table.schema, alpha=1.0)
    factor = fm.factors[(0,)]
    # N=3, S=2: denominator 3 + 1*(2+1) = 6
    assert factor.probability(("a",)) == pytest.approx(3 / 6)
    assert factor.probability(("b",)) == pytest.approx(2 / 6)
    assert factor.probability(("never-seen",)) == pytest.approx(1 / 6)


def test_factor_probabilities_sum_to_one():
    table = mixed_table(60, seed=1)
    groups = FeatureGroups(groups=((0, 2),), n_fields=3, gamma_threshold=0.1)
    fm = fit_frequencies(table, groups, table.schema, alpha=1.0)
    for factor in fm.factors.values():
        assert sum(factor.probs.values()) + factor.unseen == pytest.approx(1.0, abs=1e-9)


def test_joint_group_beats_independence_on_correlated_columns():
    values = ["a", "b", "a", "b", "a", "b"]
    table = _cat_table({"f1": values, "f2": values}, ["0", "1"] * 3)  # f1 == f2 always
    grouped = fit_frequencies(table, FeatureGroups(((0, 1),), 2, 0.0), table.schema, alpha=0.0)
    independent = fit_frequencies(table, _no_groups(2), table.schema, alpha=0.0)
    discordant = ("a", "b", "0")
    model = ConstantModel([0.5, 0.5])
    assert joint_probability(grouped, model, discordant) == 0.0
    assert joint_probability(independent, model, discordant) > 0.0


def test_joint_probability_uniform_product():
    table = _cat_table({"f1": ["a", "a", "b", "b"], "f2": ["x", "y", "x", "y"]}, ["0", "1", "1", "0"])
    fm = fit_frequencies(table, _no_groups(2), table.schema, alpha=0.0)
    p = joint_probability(fm, ConstantModel([0.5, 0.5]), ("a", "x", "0"))
    assert p == pytest.approx(0.5 * 0.5 * 0.5)


def test_joint_probability_three_field_by_hand():
    table = _cat_table(
        {"f1": ["a", "a", "b", "b"], "f2": ["x", "x", "y", "y"], "f3": ["u", "v", "u", "v"]},
        ["0", "1", "1", "0"],
    )
    groups = FeatureGroups(((0, 1),), 3, 0.0)
    fm = fit_frequencies(table, groups, table.schema, alpha=0.0)
    model = ConstantModel([0.25, 0.75])
    row = ("a", "x", "u", "1")
    expected = (2 / 4) * (2 / 4) * 0.75  # P(f1,f2) * P(f3) * M(row)
    assert joint_probability(fm, model, row) == pytest.approx(expected)


def test_joint_probability_enumeration_oracle():
    # with one group covering every field and a perfect conditional model,
    # the joint at alpha=0 must equal the empirical row frequency exactly
    rng = np.random.default_rng(5)
    f1 = [("a", "b")[rng.integers(2)] for _ in range(200)]
    f2 = [("x", "y")[rng.integers(2)] for _ in range(200)]
    f3 = [("u", "v")[rng.integers(2)] for _ in range(200)]
    labels = [str(int(rng.random() < (0.8 if a == "a" else 0.3))) for a in f1]
    table = _cat_table({"f1": f1, "f2": f2, "f3": f3}, labels)

    class PerfectModel:
        def __init__(self, table):
            self.cond = {}
            counts = {}
            for row in table.rows:
                x, y = row[:3], row[3]
                counts.setdefault(x, {"0": 0, "1": 0})
                counts[x][y] += 1
            vocab = table.schema.label_column.vocabulary
            for x, c in counts.items():
                total = c["0"] + c["1"]
                self.cond[x] = np.array([c[v] / total for v in vocab])

        def predict_proba(self, row):
            return self.cond[row[:3]]

    fm = fit_frequencies(table, FeatureGroups(((0, 1, 2),), 3, 0.0), table.schema, alpha=0.0)
    model = PerfectModel(table)
    for row in set(table.rows):
        empirical = sum(1 for r in table.rows if r == row) / table.n_rows
        assert joint_probability(fm, model, row) == pytest.approx(empirical, rel=1e-9)


def test_identity_weights_are_one():
    table = mixed_table(120, seed=7)
    groups = _no_groups(3)
    spec = PredictorSpec(hidden_layers=(8,), epochs=10, seed=3)
    wt = importance_weights(table, table, groups, spec)
    assert wt.weights.max() / wt.weights.min() <= 1.05
    assert np.allclose(wt.weights, 1.0, atol=1e-9)
    assert wt.effective_sample_size() == pytest.approx(table.n_rows)


def test_skewed_marginal_downweights_overrepresented_value():
    original = mixed_table(600, seed=1, skew=0.5)
    synthetic = with_schema(mixed_table(400, seed=2, skew=0.9), original.schema)
    spec = PredictorSpec(hidden_layers=(8,), epochs=15, seed=0)
    wt = importance_weights(original, synthetic, _no_groups(3), spec)
    mask_a = np.array([row[0] == "a" for row in synthetic.rows])
    assert wt.weights[mask_a].mean() < wt.weights[~mask_a].mean()


def test_single_class_synthetic_falls_back_to_prior():
    original = mixed_table(150, seed=3)
    rows = tuple(r for r in original.rows if r[-1] == "0")[:60]
    synthetic = Table(schema=original.schema, rows=rows)
    spec = PredictorSpec(hidden_layers=(8,), epochs=5, seed=1)
    with pytest.warns(UserWarning, match="single-class"):
        wt = importance_weights(original, synthetic, _no_groups(3), spec)
    assert np.all(wt.weights > 0)


def test_class_prior_model_probabilities():
    table = mixed_table(50, seed=4)
    prior = ClassPriorModel.fit(table)
    probs = prior.predict_proba(table.rows[0])
    assert probs.sum() == pytest.approx(1.0)
    assert np.all(probs > 0)


def test_groups_always_come_from_the_original_table(monkeypatch):
    # importance_weights receives groups; it must never re-extract them
    def boom(*args, **kwargs):
        raise AssertionError("extract_groups must not be called during alignment")

    monkeypatch.setattr(attribution, "extract_groups", boom)
    original = mixed_table(80, seed=5)
    synthetic = with_schema(mixed_table(60, seed=6), original.schema)
    spec = PredictorSpec(hidden_layers=(8,), epochs=5, seed=0)
    importance_weights(original, synthetic, _no_groups(3), spec)


def test_resample_uniform_full_size_is_permutation():
    table = mixed_table(40, seed=8)
    wt = WeightedTable(table=table, weights=np.ones(table.n_rows))
    out = resample(wt, table.n_rows, seed=0)
    assert sorted(out.rows) == sorted(table.rows)


def test_resample_with_replacement_frequency():
    table = mixed_table(2, seed=9)
    wt = WeightedTable(table=table, weights=np.array([9.0, 1.0]))
    rng_draws = resample(wt, 10_000, seed=1, with_replacement=True)
    freq = sum(1 for r in rng_draws.rows if r == table.rows[0]) / 10_000
    assert freq == pytest.approx(0.9, abs=0.01)


def test_resample_without_replacement_guard():
    table = mixed_table(5, seed=10)
    wt = WeightedTable(table=table, weights=np.ones(5))
    with pytest.raises(DataError, match="with_replacement"):
        resample(wt, 6, seed=0)
    assert resample(wt, 0, seed=0).n_rows == 0


def test_resampling_reduces_tv_on_skewed_pool():
    # pool over-represents "a"; weights favor "b" rows; marginal must move
    # toward the 50/50 target after resampling
    rng = np.random.default_rng(3)
    values = ["a" if rng.random() < 0.9 else "b" for _ in range(500)]
    table = _cat_table({"f": values}, [str(i % 2) for i in range(500)])
    target = ["a"] * 250 + ["b"] * 250
    weights = np.array([0.5 / 0.9 if v == "a" else 0.5 / 0.1 for v in values])
    wt = WeightedTable(table=table, weights=weights)
    out = resample(wt, 300, seed=2)
    pre = tv_distance([r[0] for r in table.rows], target)
    post = tv_distance([r[0] for r in out.rows], target)
    assert post < pre


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_joint_probability_strictly_positive_with_smoothing(seed):
    table = mixed_table(30, seed=seed % 100)
    groups = FeatureGroups(((0, 1),), 3, 0.0)
    fm = fit_frequencies(table, groups, table.schema, alpha=1.0)
    rng = np.random.default_rng(seed)
    row = (
        ("a", "b")[rng.integers(2)],
        ("x", "y", "z")[rng.integers(3)],
        float(rng.normal(0, 5)),
        ("0", "1")[rng.integers(2)],
    )
    assert log_joint_probability(fm, ConstantModel([0.5, 0.5]), row) > -np.inf
    assert joint_probability(fm, ConstantModel([0.5, 0.5]), row) > 0.0
