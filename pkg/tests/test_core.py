import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zsvl.core import (
    CentroidSet,
    DetectedObject,
    FusionWeights,
    Prediction,
    Sample,
    ScoreBundle,
    TaskKind,
    Toggles,
    read_samples,
    sample_from_dict,
    sample_to_dict,
    validate_sample,
    write_samples,
)
from zsvl.errors import ContractError, InputError

FOUR = ("a", "b", "c", "d")


def test_task_kind_is_exhaustive():
    assert {k.value for k in TaskKind} == {"VQA_YESNO", "VQA_NUMBER", "VQA_OTHER", "VCR_Q2A", "VCR_QA2R", "SNLI_VE"}
    assert TaskKind.VQA_NUMBER.family == "vqa"
    assert TaskKind.VCR_QA2R.family == "vcr"
    assert TaskKind.SNLI_VE.family == "ve"


def test_validate_well_formed_vcr():
    s = Sample("x", TaskKind.VCR_Q2A, "img.png", "why?", FOUR, reference=2)
    assert validate_sample(s) == []


def test_validate_vcr_three_candidates():
    s = Sample("x", TaskKind.VCR_Q2A, "img.png", "why?", FOUR[:3])
    assert validate_sample(s) == ["candidate count 3 ≠ 4"]


def test_validate_snli_with_candidate():
    s = Sample("x", TaskKind.SNLI_VE, "img.png", "a dog runs", ("a",))
    assert validate_sample(s) == ["SNLI-VE must have 0 candidates"]


def test_validate_vqa_reference_count_and_empty_query():
    s = Sample("x", TaskKind.VQA_YESNO, "img.png", "  ", reference=("yes",) * 9)
    problems = validate_sample(s)
    assert "query is empty" in problems
    assert any("9 answers" in p for p in problems)


def test_validate_snli_bad_label():
    s = Sample("x", TaskKind.SNLI_VE, "img.png", "a dog", reference="entailment")
    assert validate_sample(s) == ["SNLI-VE reference 'entailment' not in C/N/E"]


def test_detected_object_clamping():
    o = DetectedObject((-5, 2, 20, 4), "dog", "brown", 0.5)
    c = o.clamped(10, 10)
    assert c.box == (0, 2, 10, 4)
    assert DetectedObject((12, 12, 3, 3), "dog").clamped(10, 10) is None
    with pytest.raises(InputError):
        DetectedObject((0, 0, 1, 1), " ")
    with pytest.raises(InputError):
        DetectedObject((0, 0, 1, 1), "dog", confidence=1.5)


def test_score_bundle_contract():
    b = ScoreBundle.from_rows([(1, 2, 3, 4), (5, 6, 7, 8)])
    assert len(b) == 2
    assert b.s_question.tolist() == [3.0, 7.0]
    with pytest.raises(ValueError):
        b.s_caption[0] = 1.0
    with pytest.raises(ContractError):
        ScoreBundle([1.0], [1.0, 2.0], [1.0], [1.0])


def test_weights_and_centroids_validate():
    assert FusionWeights().to_dict() == {"k1": 1.0, "k2": 1.0, "k3": 1.0, "n_regions": 5, "top_k": 10}
    with pytest.raises(ContractError):
        FusionWeights(k1=-1)
    with pytest.raises(ContractError):
        FusionWeights(top_k=0)
    assert FusionWeights(n_regions=0).n_regions == 0
    with pytest.raises(ContractError):
        CentroidSet(0.3, 0.2, 0.4)
    assert CentroidSet.from_value({"C": 0.1, "N": 0.2, "E": 0.3}) == CentroidSet(0.1, 0.2, 0.3)


def test_toggles_default_all_on():
    t = Toggles()
    assert t.use_regions and t.use_question_prior and t.use_caption_prior and t.use_answer_filter
    assert not t.use_provided_caption and not t.use_provided_boxes


def test_prediction_round_trip():
    b = ScoreBundle.from_rows([(0.5, 0.1, 0.2, 0.3)])
    p = Prediction("s", 0, "red", ("red",), b, (1.1,), {"template": "x <slot>"})
    q = Prediction.from_dict(json.loads(json.dumps(p.to_dict())))
    assert q.to_dict() == p.to_dict()


_text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=20).filter(
    lambda s: s.strip())
_box = st.tuples(*[st.floats(0, 100, allow_nan=False)] * 2, *[st.floats(0.5, 50, allow_nan=False)] * 2)
_obj = st.builds(DetectedObject, _box, _text, st.none() | _text, st.floats(0, 1))


@st.composite
def samples(draw):
    task = draw(st.sampled_from(list(TaskKind)))
    if task.family == "vcr":
        cands, ref = tuple(draw(st.lists(_text, min_size=4, max_size=4))), draw(st.integers(0, 3))
    elif task.family == "ve":
        cands, ref = (), draw(st.sampled_from("CNE"))
    else:
        cands, ref = tuple(draw(st.lists(_text, max_size=5))), tuple(draw(st.lists(_text, min_size=10, max_size=10)))
    return Sample(draw(_text), task, draw(_text), draw(_text), cands,
                  draw(st.none() | _text), draw(st.none() | st.lists(_obj, max_size=3).map(tuple)), ref,
                  draw(st.dictionaries(st.text(max_size=5), st.integers(), max_size=2)))


@given(samples())
def test_valid_samples_round_trip(sample):
    assert validate_sample(sample) == []
    again = sample_from_dict(json.loads(json.dumps(sample_to_dict(sample))))
    assert again == sample


@given(samples())
def test_validate_is_pure(sample):
    before = sample_to_dict(sample)
    assert validate_sample(sample) == validate_sample(sample)
    assert sample_to_dict(sample) == before


def test_jsonl_round_trip(tmp_path):
    s = [Sample("a", TaskKind.SNLI_VE, "i.png", "h", reference="E"),
         Sample("b", TaskKind.VCR_QA2R, "i.png", "ans", FOUR, provided_boxes=(DetectedObject((0, 0, 2, 2), "x"),),
                reference=1)]
    write_samples(tmp_path / "s.jsonl", s)
    assert read_samples(tmp_path / "s.jsonl") == s


def test_score_bundle_arrays_are_float64():
    b = ScoreBundle([1, 2], [0, 0], [0, 0], [0, 0])
    assert b.s_clip_global.dtype == np.float64
