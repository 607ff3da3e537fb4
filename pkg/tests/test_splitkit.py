import itertools
import json
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avibench.dataset import ClipRef, Manifest, SessionRecord
from avibench.errors import SplitError
from avibench.splitkit import (ScalerParams, apply_minmax, class_weights, epoch_seed, fit_minmax, load_split_json,
                               shuffle_training, split_json, split_report, stratified_session_split)


def manifest_from_sizes(sizes_by_class: dict[str, list[int]]) -> Manifest:
    sessions = []
    for label, sizes in sizes_by_class.items():
        for i, n in enumerate(sizes):
            sessions.append(SessionRecord(f"{label}-{i:03d}", label, [ClipRef(f"{label}-{i}.wav", float(n), n)]))
    return Manifest(sessions)


def greedy_oracle(sizes: list[tuple[str, int]], ratios=("0.7", "0.2", "0.1")) -> dict[str, str]:
    """Independent restatement of the threshold rule in integer arithmetic."""
    rt, rv = Fraction(ratios[0]), Fraction(ratios[1])
    total = sum(n for _, n in sizes)
    out, tr, va = {}, 0, 0
    for sid, n in sorted(sizes, key=lambda p: (-p[1], p[0])):
        if tr * rt.denominator < rt.numerator * total:
            out[sid], tr = "train", tr + n
        elif va * rv.denominator < rv.numerator * total:
            out[sid], va = "validation", va + n
        else:
            out[sid] = "test"
    return out


def test_worked_example_5_3_2():
    m = manifest_from_sizes({"a": [5, 3, 2]})
    split = stratified_session_split(m)
    assert split.assignment == {"a-000": "train", "a-001": "train", "a-002": "validation"}
    report = split_report(split, m)
    assert report.percentages("a") == (80.0, 20.0, 0.0)
    assert report.deviation["a"]["train"] == pytest.approx(0.1)
    assert any("no test sessions" in w for w in split.warnings)


def test_divisible_example():
    m = manifest_from_sizes({"a": [1] * 10})
    split = stratified_session_split(m)
    assert Counter(split.assignment.values()) == {"train": 7, "validation": 2, "test": 1}
    assert split_report(split, m).percentages("a") == (70.0, 20.0, 10.0)


def test_ties_broken_by_session_id():
    m = manifest_from_sizes({"a": [2, 2, 2, 2, 2]})
    split = stratified_session_split(m)
    assert [split.assignment[f"a-{i:03d}"] for i in range(5)] == ["train"] * 4 + ["validation"]


def test_single_session_warns():
    split = stratified_session_split(manifest_from_sizes({"a": [4], "b": [1, 1]}))
    assert split.assignment["a-000"] == "train"
    assert any("single session" in w and "'a'" in w for w in split.warnings)


@pytest.mark.parametrize("ratios", [(0.5, 0.5), (0.7, 0.2, 0.2), (0.9, 0.1, 0.0), (1.0, -0.1, 0.1)])
def test_bad_ratios(ratios):
    with pytest.raises(SplitError):
        stratified_session_split(manifest_from_sizes({"a": [1, 1]}), ratios)


def test_report_totals_and_csv():
    m = manifest_from_sizes({"a": [5, 3, 2], "b": [1] * 10})
    report = split_report(stratified_session_split(m), m)
    assert sum(report.set_totals.values()) == m.total_cuts()
    lines = report.to_csv().splitlines()
    assert lines[0] == "class,set,count,percent"
    assert lines[1:4] == ["a,train,8,80.00", "a,validation,2,20.00", "a,test,0,0.00"]


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.sampled_from("abcdef"), st.lists(st.integers(1, 60), min_size=1, max_size=25),
                       min_size=1))
def test_split_matches_oracle_and_bound(sizes_by_class):
    m = manifest_from_sizes(sizes_by_class)
    split = stratified_session_split(m)
    expected = {}
    for label, sizes in sizes_by_class.items():
        expected.update(greedy_oracle([(f"{label}-{i:03d}", n) for i, n in enumerate(sizes)]))
    assert split.assignment == expected
    report = split_report(split, m)
    for label, sizes in sizes_by_class.items():
        assert abs(report.deviation[label]["train"]) <= max(sizes) / sum(sizes) + 1e-12
        assert sum(report.percentages(label)) == pytest.approx(100.0)


# -- class weights --------------------------------------------------------------

def test_weights_example():
    w = class_weights({"a": 100, "b": 50, "c": 50}).weights
    assert w == pytest.approx({"a": 2 / 3, "b": 4 / 3, "c": 4 / 3}, abs=1e-12)


def test_balanced_weights_are_one():
    assert set(class_weights({"a": 7, "b": 7}).weights.values()) == {1.0}


def test_absent_class_rejected():
    with pytest.raises(SplitError, match="no training samples"):
        class_weights({"a": 3, "b": 0})
    with pytest.raises(SplitError):
        class_weights({"a": 3}, ["a", "b"])


def test_weight_vector_follows_class_order():
    w = class_weights({"a": 1, "b": 3})
    assert w.vector(["b", "a"]).tolist() == [w.weights["b"], w.weights["a"]]


# -- min-max --------------------------------------------------------------------

def test_minmax_midpoint():
    assert apply_minmax(ScalerParams(2.0, 10.0), np.array(6.0)) == 0.5


def test_minmax_train_bounds_and_clamp():
    rng = np.random.default_rng(0)
    train = rng.normal(size=(20, 4, 5))
    p = fit_minmax(train)
    out = apply_minmax(p, train)
    assert out.min() == 0.0 and out.max() == 1.0
    other = apply_minmax(p, np.array([train.min() - 5, train.max() + 5]))
    assert other.tolist() == [0.0, 1.0]


def test_minmax_list_input_matches_array():
    parts = [np.array([[1.0, 4.0]]), np.array([[-2.0, 3.0]])]
    assert fit_minmax(parts) == ScalerParams(-2.0, 4.0)


def test_minmax_constant_data():
    p = fit_minmax(np.full((3, 2, 2), 5.0))
    assert np.all(apply_minmax(p, np.array([1.0, 5.0, 9.0])) == 0.0)


def test_minmax_empty():
    with pytest.raises(SplitError):
        fit_minmax(np.zeros((0, 2)))


# -- shuffling --------------------------------------------------------------------

def test_shuffle_deterministic_permutation():
    items = list(range(50))
    a = shuffle_training(items, 11)
    assert a == shuffle_training(items, 11)
    assert sorted(a) == items


def test_shuffle_uniform_over_3_elements():
    counts = Counter(tuple(shuffle_training(["x", "y", "z"], s)) for s in range(10_000))
    assert set(counts) == set(itertools.permutations(["x", "y", "z"]))
    for c in counts.values():
        assert abs(c / 10_000 - 1 / 6) <= 0.02


def test_epoch_seeds_differ():
    seeds = {epoch_seed(3, e) for e in range(100)}
    assert len(seeds) == 100
    assert epoch_seed(3, 0) == epoch_seed(3, 0) != epoch_seed(4, 0)


def test_shuffle_empty():
    with pytest.raises(SplitError):
        shuffle_training([], 0)


def test_split_json_schema(tmp_path):
    m = manifest_from_sizes({"a": [5, 3, 2], "b": [1] * 4})
    split = stratified_session_split(m)
    text = split_json(split, class_weights({"a": 8, "b": 2}), ScalerParams(0.0, 2.5), 9)
    doc = json.loads(text)
    assert set(doc) == {"ratios", "assignment", "class_weights", "scaler", "seed"}
    assert doc["scaler"] == {"min": 0.0, "max": 2.5} and doc["seed"] == 9
    (tmp_path / "s.json").write_text(text)
    assert load_split_json(tmp_path / "s.json") == doc
