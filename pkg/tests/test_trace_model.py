import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadeserve.errors import InfeasibleError, InvariantError, MissingModelError, ShapeError, TraceFormatError
from cascadeserve.trace_model import (
    ClusterSpec,
    GPU,
    JointAccuracySpec,
    PredictionRecord,
    TaskKind,
    TraceBundle,
    contributions_of,
    dumps_cluster,
    dumps_profiles,
    dumps_trace,
    generate_synthetic_trace,
    load_cluster,
    load_profiles,
    load_trace,
    parse_trace,
)

from helpers import CLS, cluster, profile

COLA = JointAccuracySpec(
    models=("small", "medium", "large"),
    contributions=(0.82, 0.05, 0.01),
    marginals=(None, None, 0.61),
    task=CLS,
    dim=2,
)


def small_spec(task=CLS, dim=5):
    return JointAccuracySpec(("a", "b", "c"), (0.5, 0.2, 0.1), task, dim, steps=3)


def assert_same_bundle(a: TraceBundle, b: TraceBundle):
    assert a.task == b.task and a.models == b.models and len(a) == len(b)
    for ra, rb in zip(a.records, b.records):
        assert ra.request_id == rb.request_id and ra.label == rb.label
        assert set(ra.outputs) == set(rb.outputs)
        for m in ra.outputs:
            np.testing.assert_array_equal(ra.outputs[m], rb.outputs[m])


# -- load_trace --------------------------------------------------------------


@pytest.mark.parametrize(
    "task", [CLS, TaskKind("generation", top_k=3), TaskKind("question_answering")], ids=lambda t: t.kind
)
def test_round_trip_is_identity(tmp_path, task):
    bundle = generate_synthetic_trace(small_spec(task), 40, seed=3)
    path = tmp_path / "trace.json"
    path.write_text(dumps_trace(bundle))
    back = load_trace(path, task)
    assert back.models == ("a", "b", "c") and len(back) == 40
    assert_same_bundle(bundle, back)


def test_missing_model_output_rejected(tmp_path):
    doc = json.loads(dumps_trace(generate_synthetic_trace(small_spec(), 5, seed=0)))
    del doc["records"][2]["outputs"]["b"]
    path = tmp_path / "t.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(MissingModelError):
        load_trace(path)


def test_empty_record_list_is_valid(tmp_path):
    bundle = TraceBundle(CLS, ("a", "b"), ())
    path = tmp_path / "t.json"
    path.write_text(dumps_trace(bundle))
    back = load_trace(path)
    assert back.models == ("a", "b") and len(back) == 0


def test_malformed_file_is_parse_error(tmp_path):
    path = tmp_path / "t.json"
    path.write_text("{not json")
    with pytest.raises(TraceFormatError):
        load_trace(path)
    path.write_text(json.dumps({"schema_version": 1, "kind": "profiles"}))
    with pytest.raises(TraceFormatError):
        load_trace(path)


def test_inconsistent_logit_length_is_shape_error():
    doc = json.loads(dumps_trace(generate_synthetic_trace(small_spec(), 4, seed=0)))
    doc["records"][1]["outputs"]["a"] = doc["records"][1]["outputs"]["a"] + [0.0]
    with pytest.raises(ShapeError):
        parse_trace(doc)


def test_label_shape_checked():
    with pytest.raises(ShapeError):
        TraceBundle(CLS, ("a",), (PredictionRecord("r", 7, {"a": [0.0, 1.0]}),))
    with pytest.raises(ShapeError):
        TraceBundle(TaskKind("question_answering"), ("a",), (PredictionRecord("r", 1, {"a": [[0, 1], [1, 0]]}),))


def test_task_mismatch_rejected():
    doc = json.loads(dumps_trace(generate_synthetic_trace(small_spec(), 2, seed=0)))
    with pytest.raises(ShapeError):
        parse_trace(doc, TaskKind("question_answering"))


# -- generator ---------------------------------------------------------------


def test_cola_like_joint_accuracy():
    bundle = generate_synthetic_trace(COLA, 10_000, seed=0)
    correct = bundle.correctness()
    joint = correct.any(axis=0).mean()
    assert abs(joint - 0.88) <= 0.02
    assert abs(correct[2].mean() - 0.61) <= 0.02
    np.testing.assert_allclose(contributions_of(correct), [0.82, 0.05, 0.01], atol=0.02)


def test_zero_records_gives_empty_bundle():
    b = generate_synthetic_trace(COLA, 0, seed=1)
    assert len(b) == 0 and b.models == COLA.models


def test_generation_is_deterministic():
    a = dumps_trace(generate_synthetic_trace(small_spec(), 200, seed=9))
    b = dumps_trace(generate_synthetic_trace(small_spec(), 200, seed=9))
    c = dumps_trace(generate_synthetic_trace(small_spec(), 200, seed=10))
    assert a == b and a != c


def test_infeasible_spec_rejected():
    spec = JointAccuracySpec(("a", "b"), (0.8, 0.3), CLS, 4)
    with pytest.raises(InfeasibleError):
        generate_synthetic_trace(spec, 10, seed=0)
    with pytest.raises(InfeasibleError):
        generate_synthetic_trace(JointAccuracySpec(("a", "b"), (0.5, 0.1), CLS, 4, marginals=(0.5, 0.05)), 10, 0)


def test_confidence_higher_when_correct():
    bundle = generate_synthetic_trace(small_spec(), 3000, seed=2)
    correct = bundle.correctness()
    for i, m in enumerate(bundle.models):
        logits = np.array([r.outputs[m] for r in bundle.records])
        srt = np.sort(logits, axis=1)
        margin = srt[:, -1] - srt[:, -2]
        assert margin[correct[i]].mean() > margin[~correct[i]].mean()
        # margins overlap, so confidence does not separate perfectly
        assert margin[correct[i]].min() < margin[~correct[i]].max()


@st.composite
def specs(draw):
    n = draw(st.integers(2, 4))
    raw = draw(st.lists(st.floats(0.0, 1.0), min_size=n + 1, max_size=n + 1).filter(lambda v: sum(v) > 0.1))
    total = draw(st.floats(0.3, 0.99))
    c = np.array(raw) / sum(raw) * total
    contributions = tuple(float(x) for x in c[:n])
    start = np.concatenate([[0.0], np.cumsum(contributions)[:-1]])
    marg = tuple(
        float(contributions[i] + draw(st.floats(0.0, 1.0)) * start[i]) if draw(st.booleans()) else None
        for i in range(n)
    )
    return JointAccuracySpec(tuple(f"m{i}" for i in range(n)), contributions, CLS, draw(st.integers(2, 6)), marginals=marg)


@settings(max_examples=15)
@given(specs(), st.integers(0, 2**16))
def test_generator_matches_marginals_and_contributions(spec, seed):
    bundle = generate_synthetic_trace(spec, 10_000, seed)
    correct = bundle.correctness()
    np.testing.assert_allclose(contributions_of(correct), spec.contributions, atol=0.02)
    start = 0.0
    for i, c in enumerate(spec.contributions):
        target = spec.marginals[i] if spec.marginals[i] is not None else start + c
        assert abs(correct[i].mean() - target) <= 0.02
        start += c


@settings(max_examples=25)
@given(st.integers(0, 40), st.integers(0, 2**16), st.sampled_from(["classification", "generation", "question_answering"]))
def test_serialization_round_trip_property(n, seed, kind):
    task = TaskKind(kind, 2 if kind == "generation" else None)
    bundle = generate_synthetic_trace(small_spec(task, dim=4), n, seed)
    assert_same_bundle(bundle, parse_trace(json.loads(dumps_trace(bundle))))


# -- profiles and clusters ---------------------------------------------------


def test_t5_like_profiles_load_in_order(tmp_path):
    ps = [profile(m, energy=e, params=p) for m, e, p in
          [("t5-s", 1, 60e6), ("t5-b", 2, 220e6), ("t5-l", 4, 770e6), ("t5-xl", 9, 3000e6)]]
    path = tmp_path / "p.json"
    path.write_text(dumps_profiles(ps))
    back = load_profiles(path)
    assert [p.param_count for p in back] == [60_000_000, 220_000_000, 770_000_000, 3_000_000_000]
    assert back == ps


def test_profile_invariants(tmp_path):
    with pytest.raises(InvariantError):
        profile("x", energy=0.0)
    with pytest.raises(InvariantError):
        profile("x", latency=-1.0)
    with pytest.raises(InvariantError):
        profile("x", accuracy=1.5)
    path = tmp_path / "p.json"
    path.write_text(dumps_profiles([profile("b", params=2), profile("a", params=1)]))
    with pytest.raises(InvariantError):
        load_profiles(path)
    doc = json.loads(dumps_profiles([profile("a")]))
    doc["profiles"][0]["energy_per_request"] = 0
    path.write_text(json.dumps(doc))
    with pytest.raises(InvariantError):
        load_profiles(path)


def test_cluster_round_trip_and_invariants(tmp_path):
    c = cluster(3)
    path = tmp_path / "c.json"
    path.write_text(dumps_cluster(c))
    back = load_cluster(path)
    assert back.gpus == c.gpus
    np.testing.assert_array_equal(back.transmission, c.transmission)
    gpus = (GPU("a", 1e9, 10, 100), GPU("b", 1e9, 10, 100))
    with pytest.raises(InvariantError):
        ClusterSpec(gpus, np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(InvariantError):
        ClusterSpec(gpus, np.array([[0.0, -1.0], [-1.0, 0.0]]))
    with pytest.raises(InvariantError):
        ClusterSpec(gpus, np.array([[3.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(InvariantError):
        GPU("x", 1e9, 100, 10)


def test_records_are_immutable():
    rec = generate_synthetic_trace(small_spec(), 1, seed=0).records[0]
    with pytest.raises(TypeError):
        rec.outputs["a"] = np.zeros(5)
    with pytest.raises(ValueError):
        rec.outputs["a"][0] = 1.0
