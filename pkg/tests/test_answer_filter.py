from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from zsvl.answer_filter import (
    DEFAULT_TOP_K,
    SLOT,
    AnswerVocabulary,
    DeclarativeTemplate,
    classify_numeric,
    length_normalized_logprob,
    load_demonstrations,
    numeric_report,
    route_candidates,
    to_declarative,
    topk_answers,
)
from zsvl.backends.stub import StubAnswerScorer
from zsvl.core import TaskKind
from zsvl.errors import ContractError, InputError

# question -> expected template, written out by hand from the rule table
RULE_CASES = {
    "What color is the car?": "The car is <slot>",
    "How many dogs are there?": "There are <slot> dogs",
    "How many people are in the photo?": "There are <slot> people in the photo",
    "What is the man holding?": "The man is holding <slot>",
    "What kind of dog is this?": "This is <slot> dog",
    "What is the table made of?": "The table is made of <slot>",
    "What is this?": "This is <slot>",
    "Where is the cat?": "The cat is in <slot>",
    "Who is holding the umbrella?": "<slot> is holding the umbrella",
    "Is the man wearing a hat?": "<slot>, the man is wearing a hat",
    "Are there any clouds?": "<slot>, there are any clouds",
    "Which hand is raised?": "The hand is raised is <slot>",
}


@pytest.mark.parametrize("question,expected", sorted(RULE_CASES.items()))
def test_rule_table(question, expected):
    t = to_declarative(question)
    assert t.text == expected
    assert not t.out_of_coverage


def test_fallback_flags_out_of_coverage():
    t = to_declarative("Why?", "q9")
    assert t.text == "The answer is <slot>. Why?"
    assert t.out_of_coverage and t.question_id == "q9"
    with pytest.raises(InputError):
        to_declarative("   ")


def test_converter_is_preferred_and_checked():
    assert to_declarative("What is it?", converter=lambda q: "It is a <slot>").text == "It is a <slot>"
    # a converter output without a slot falls back to the rules
    assert to_declarative("What color is the car?", converter=lambda q: "no slot").text == "The car is <slot>"

    def broken(q):
        raise RuntimeError("model down")

    assert to_declarative("How many dogs are there?", converter=broken).text == "There are <slot> dogs"


def test_template_invariants():
    with pytest.raises(ContractError):
        DeclarativeTemplate("no slot")
    with pytest.raises(ContractError):
        DeclarativeTemplate("<slot> <slot>")
    with pytest.raises(ContractError):
        DeclarativeTemplate(" <slot> ")
    assert DeclarativeTemplate("It is <slot>").fill("red") == "It is red"


_words = st.sampled_from(["what", "is", "the", "how", "many", "dog", "are", "there", "color", "who", "where",
                          "does", "man", "holding", "?", "which", "a", "of", "kind", "in", "why", "3"])


@given(st.lists(_words, min_size=1, max_size=10).map(" ".join).filter(str.strip))
def test_exactly_one_slot_for_any_question(q):
    t = to_declarative(q)
    assert t.text.count(SLOT) == 1
    assert t.text.replace(SLOT, "").strip()


def test_corpus_questions_have_one_slot():
    corpus = Path(__file__).parent / "data" / "questions.txt"
    for q in corpus.read_text(encoding="utf-8").splitlines():
        if q.strip():
            assert to_declarative(q).text.count(SLOT) == 1, q


@pytest.mark.parametrize("answer,expected", [
    ("3", True), ("three", True), ("red", False), ("twenty", True), ("10 feet", True), ("5ft", True),
    ("1,000", True), ("2.5", True), ("3 dogs", False), ("", False), ("one way", False), ("100%", True),
])
def test_classify_numeric(answer, expected):
    assert classify_numeric(answer) is expected


def test_vocabulary_and_routing():
    v = AnswerVocabulary.from_answers(["yes", "no", "2", "red", "three", "10 feet", "dog"])
    assert v.numeric == ["2", "three", "10 feet"]
    assert route_candidates(TaskKind.VQA_YESNO, v) == ["yes", "no"]
    assert route_candidates(TaskKind.VQA_NUMBER, v) == v.numeric
    assert route_candidates(TaskKind.VQA_OTHER, v) == list(v.answers)
    for task in (TaskKind.VCR_Q2A, TaskKind.VCR_QA2R, TaskKind.SNLI_VE):
        with pytest.raises(ContractError):
            route_candidates(task, v)
    with pytest.raises(InputError):
        AnswerVocabulary.from_answers(["a", "a"])
    with pytest.raises(ContractError):
        route_candidates(TaskKind.VQA_OTHER, AnswerVocabulary((), ()))
    report = numeric_report(v, 4)
    assert report["found"] == 3 and report["difference"] == -1


@given(st.lists(st.sampled_from(["1", "2", "two", "red", "blue", "5 m", "cat", "yes", "0.5", "eleven"]),
                unique=True, min_size=1))
def test_number_route_is_subset(answers):
    v = AnswerVocabulary.from_answers(answers)
    num = route_candidates(TaskKind.VQA_NUMBER, v)
    other = route_candidates(TaskKind.VQA_OTHER, v)
    assert set(num) | set(other) <= set(v.answers)
    assert num == [a for a in v.answers if classify_numeric(a)]


def test_vocab_file_round_trip(tmp_path):
    p = tmp_path / "v.txt"
    p.write_text("yes\nno\n\n4\n", encoding="utf-8")
    assert AnswerVocabulary.load(p).answers == ("yes", "no", "4")


def test_topk_examples():
    t = DeclarativeTemplate("It is <slot>")
    s = StubAnswerScorer(scores={"a": 0.1, "b": 0.9, "c": 0.4})
    assert topk_answers(t, ["a", "b", "c"], 2, s) == ["b", "c"]
    assert topk_answers(t, ["a", "b", "c"], 10, s) == ["b", "c", "a"]
    tie = StubAnswerScorer(scores={"a": 0.5, "b": 0.5, "c": 0.5})
    assert topk_answers(t, ["c", "a", "b"], 2, tie) == ["c", "a"]
    dropped = []
    topk_answers(t, ["a", "b", "c"], 1, s, record=dropped)
    assert dropped == [("c", 0.4), ("a", 0.1)]
    with pytest.raises(ContractError):
        topk_answers(t, ["a"], 0, s)
    assert DEFAULT_TOP_K[TaskKind.VQA_OTHER] == 10
    assert DEFAULT_TOP_K[TaskKind.VQA_NUMBER] == 4


@given(st.lists(st.text(min_size=1, max_size=6), min_size=1, max_size=30, unique=True), st.integers(1, 40))
def test_topk_is_subset_and_sorted(cands, k):
    s = StubAnswerScorer(seed=1)
    t = DeclarativeTemplate("The answer is <slot>")
    out = topk_answers(t, cands, k, s)
    scores = dict(zip(cands, s.score_answers(t.text, cands)))
    assert len(out) == min(k, len(cands))
    assert set(out) <= set(cands)
    assert all(scores[a] >= scores[b] for a, b in zip(out, out[1:]))


def test_length_normalized_logprob():
    assert length_normalized_logprob([-1.0, -3.0]) == -2.0
    assert length_normalized_logprob([]) == float("-inf")


def test_packaged_demonstrations():
    d = load_demonstrations()
    assert d.version.startswith("demos-")
    assert len(d.pairs) >= 5
    for q, t in d.pairs:
        assert q.endswith("?") and t.count(SLOT) == 1
    assert d.as_context().startswith("Question: ")


def test_demonstrations_from_file(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("# version: x1\nQuestion: Is it red?\nTemplate: <slot>, it is red\n", encoding="utf-8")
    d = load_demonstrations(p)
    assert d.version == "x1" and d.pairs == (("Is it red?", "<slot>, it is red"),)
