"""VQA answer-candidate routing and filtering.

Questions become declarative templates with one ``<slot>``; the answer
vocabulary is routed by answer type (yes/no, numeric subset, everything) and
the answer scorer keeps the top-K candidates for the slot.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

from .core import TaskKind
from .errors import ContractError, InputError

log = logging.getLogger(__name__)

SLOT = "<slot>"
FALLBACK = "The answer is <slot>. {question}"

DEFAULT_TOP_K = {TaskKind.VQA_YESNO: 2, TaskKind.VQA_NUMBER: 4, TaskKind.VQA_OTHER: 10}


@dataclass(frozen=True)
class DeclarativeTemplate:
    text: str
    question_id: str | None = None
    out_of_coverage: bool = False

    def __post_init__(self):
        if self.text.count(SLOT) != 1:
            raise ContractError(f"template must contain exactly one {SLOT}: {self.text!r}")
        if not self.text.replace(SLOT, "").strip():
            raise ContractError("template has no text around the slot")

    def fill(self, answer: str) -> str:
        return self.text.replace(SLOT, answer)


# ---------------------------------------------------------------------------
# question -> template rules

_PRONOUNS = {"it", "he", "she", "they", "this", "that", "these", "those", "there", "you", "we", "i"}
_DETERMINERS = {"the", "a", "an", "his", "her", "their", "its", "my", "your", "our", "this", "that",
                "these", "those", "some", "any", "all", "both", "each", "every"}
_PREPOSITIONS = {"on", "in", "at", "of", "with", "by", "near", "under", "over", "behind", "inside",
                 "outside", "from", "to", "for", "above", "below", "beside", "next", "into", "onto",
                 "through", "during", "without", "about", "against", "between", "like"}
_AUX = ("is", "are", "was", "were", "does", "do", "did", "can", "could", "will", "would",
        "has", "have", "had", "should", "may", "might", "must")


def _clean(question: str) -> str:
    q = " ".join(question.strip().split())
    return q.rstrip("?.! ").strip()


def _cap(text: str) -> str:
    return text[:1].upper() + text[1:] if text else text


def _split_subject(words: list[str]) -> int:
    """Length of the leading noun phrase in ``words`` (at least 1)."""
    if not words:
        return 0
    if words[0] in _PRONOUNS:
        return 1
    if words[0] not in _DETERMINERS:
        return 1
    i = 1
    while i < len(words):
        w = words[i]
        if w in _PREPOSITIONS or w in _DETERMINERS or w.endswith("ing") or (w.endswith("ed") and len(w) > 3):
            break
        i += 1
    if i == len(words) or i == 1:
        # no boundary found: determiner plus one word
        return min(2, len(words))
    return i


def _yes_no(aux: str, rest: str) -> str:
    words = rest.split()
    k = _split_subject(words)
    subject, tail = " ".join(words[:k]), " ".join(words[k:])
    body = f"{subject} {aux} {tail}".strip()
    return f"{SLOT}, {body}"


def _how_many(rest: str) -> str | None:
    m = re.match(r"^(?P<np>.+?) (?P<aux>are|is|were|was) there(?P<tail>.*)$", rest)
    if m:
        return f"There are {SLOT} {m['np']}{m['tail']}"
    m = re.match(r"^(?P<np>.+?) (?P<aux>do|does|did|can|could) (?P<subj>.+)$", rest)
    if m:
        words = m["subj"].split()
        k = _split_subject(words)
        subj, tail = " ".join(words[:k]), " ".join(words[k:])
        return _cap(" ".join(p for p in (subj, tail, SLOT, m["np"]) if p))
    m = re.match(r"^(?P<np>.+?) (?P<aux>are|is|were|was) (?P<tail>.+)$", rest)
    if m:
        return f"There are {SLOT} {m['np']} {m['tail']}"
    if rest:
        return f"There are {SLOT} {rest}"
    return None


def _rule_convert(question: str) -> str | None:
    q = _clean(question)
    low = q.lower()
    if not low:
        return None

    m = re.match(r"^how many (?P<rest>.+)$", low)
    if m:
        return _how_many(m["rest"])

    m = re.match(r"^what (?:color|colour) (?P<aux>is|are|was|were) (?P<np>.+)$", low)
    if m:
        return f"{_cap(m['np'])} {m['aux']} {SLOT}"

    m = re.match(r"^what (?:kind|type|sort|breed) of (?P<noun>.+?) (?P<aux>is|are) (?P<np>.+)$", low)
    if m:
        return f"{_cap(m['np'])} {m['aux']} {SLOT} {m['noun']}"

    m = re.match(r"^what (?P<aux>is|are) (?P<np>.+?) (?P<verb>\w+ing)(?P<tail>(?: .+)?)$", low)
    if m and m["np"].split()[0] in _DETERMINERS | _PRONOUNS:
        return f"{_cap(m['np'])} {m['aux']} {m['verb']}{m['tail']} {SLOT}"

    m = re.match(r"^what (?P<aux>is|are) (?P<np>.+?) made of$", low)
    if m:
        return f"{_cap(m['np'])} {m['aux']} made of {SLOT}"

    m = re.match(r"^what (?P<aux>is|are) (?P<np>this|that|these|those|it)$", low)
    if m:
        return f"{_cap(m['np'])} {m['aux']} {SLOT}"

    m = re.match(r"^what (?P<aux>is|are|was|were) (?P<np>(?:the|this|that|these|those|his|her|their|its) .+)$", low)
    if m:
        return f"{_cap(m['np'])} {m['aux']} {SLOT}"

    m = re.match(r"^what (?P<noun>\w+) (?P<aux>is|are) (?P<np>this|that|these|those|it)$", low)
    if m:
        return f"{_cap(m['np'])} {m['aux']} {SLOT}"

    m = re.match(r"^what (?P<noun>\w+) (?P<aux>is|are) (?P<tail>being \w+.*)$", low)
    if m:
        return f"The {m['noun']} {m['tail']} {m['aux']} {SLOT}"

    m = re.match(r"^what (?P<noun>\w+) (?P<aux>is|are) (?P<np>the .+?) (?P<verb>\w+ing)(?P<tail>(?: .+)?)$", low)
    if m:
        return f"{_cap(m['np'])} {m['aux']} {m['verb']}{m['tail']} {SLOT}"

    m = re.match(r"^what (?P<noun>\w+) (?P<aux>is|are) (?P<np>the .+?) in$", low)
    if m:
        return f"{_cap(m['np'])} {m['aux']} in {SLOT}"

    m = re.match(r"^where (?P<aux>is|are|was|were) (?P<np>.+)$", low)
    if m:
        words = m["np"].split()
        k = _split_subject(words)
        subj, tail = " ".join(words[:k]), " ".join(words[k:])
        return _cap(" ".join(p for p in (subj, m["aux"], tail, "in", SLOT) if p))

    m = re.match(r"^who (?P<aux>is|are|was|were) (?P<tail>.+)$", low)
    if m:
        return f"{SLOT} {m['aux']} {m['tail']}"

    m = re.match(r"^which (?P<rest>.+)$", low)
    if m:
        return f"The {m['rest']} is {SLOT}"

    m = re.match(r"^(?P<aux>%s) (?P<rest>.+)$" % "|".join(_AUX), low)
    if m:
        return _yes_no(m["aux"], m["rest"])

    return None


def to_declarative(question: str, question_id: str | None = None,
                   converter: Callable[[str], str] | None = None) -> DeclarativeTemplate:
    """Rewrite a question as a statement with one ``<slot>`` for the answer.

    ``converter`` (e.g. a few-shot T5 model) is tried first; the built-in rule
    table is used otherwise. Anything that still lacks exactly one slot falls
    back to ``"The answer is <slot>. <question>"`` and is flagged as out of
    coverage.
    """
    if not question or not question.strip():
        raise InputError("question is empty")
    text = None
    if converter is not None:
        try:
            text = converter(question)
        except Exception as exc:  # backend failure degrades to the rule table
            log.warning("template conversion failed for %r: %s", question, exc)
    if not text or text.count(SLOT) != 1:
        text = _rule_convert(question)
    if text and text.count(SLOT) == 1 and text.replace(SLOT, "").strip():
        return DeclarativeTemplate(text, question_id)
    return DeclarativeTemplate(FALLBACK.format(question=question.strip()), question_id, out_of_coverage=True)


# ---------------------------------------------------------------------------
# numeric answers

CARDINALS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
             "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
             "nineteen", "twenty")
UNITS = ("feet", "foot", "ft", "inches", "inch", "in", "meters", "meter", "m", "cm", "mm", "km",
         "miles", "mile", "mph", "kph", "years", "year", "yrs", "months", "days", "hours", "hour",
         "minutes", "minute", "min", "seconds", "lbs", "lb", "pounds", "pound", "kg", "oz",
         "degrees", "percent", "%", "people", "dollars", "cents")
_DIGITS = re.compile(r"^\d+(?:\.\d+)?$|^\d{1,3}(?:,\d{3})+$|^\.\d+$")
_DIGITS_UNIT = re.compile(r"^(?P<num>\d+(?:[.,]\d+)?) ?(?P<unit>[a-z%]+)$")


def classify_numeric(answer: str) -> bool:
    """True for cardinal words zero..twenty, digit strings, and ``"<digits> <unit>"``."""
    a = " ".join(answer.strip().lower().split())
    if not a:
        return False
    if a in CARDINALS or _DIGITS.match(a):
        return True
    m = _DIGITS_UNIT.match(a)
    return bool(m and m["unit"] in UNITS)


@dataclass(frozen=True)
class AnswerVocabulary:
    answers: tuple[str, ...]
    numeric_subset: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.answers)) != len(self.answers):
            dupes = sorted({a for a in self.answers if self.answers.count(a) > 1})
            raise InputError(f"answer vocabulary has duplicates: {dupes[:10]}")
        if any(not 0 <= i < len(self.answers) for i in self.numeric_subset):
            raise ContractError("numeric_subset has out-of-range indices")

    def __len__(self) -> int:
        return len(self.answers)

    @classmethod
    def from_answers(cls, answers: Sequence[str]) -> "AnswerVocabulary":
        answers = tuple(answers)
        return cls(answers, tuple(i for i, a in enumerate(answers) if classify_numeric(a)))

    @classmethod
    def load(cls, path: str | Path) -> "AnswerVocabulary":
        with open(path, encoding="utf-8") as f:
            answers = [line.rstrip("\n") for line in f if line.strip()]
        return cls.from_answers(answers)

    @property
    def numeric(self) -> list[str]:
        return [self.answers[i] for i in self.numeric_subset]


def numeric_report(vocab: AnswerVocabulary, expected: int) -> dict:
    """Numeric-subset size against an expected count, with the answers involved."""
    numeric = vocab.numeric
    return {
        "expected": expected,
        "found": len(numeric),
        "difference": len(numeric) - expected,
        "numeric_answers": numeric,
    }


def route_candidates(task: TaskKind, vocab: AnswerVocabulary) -> list[str]:
    if len(vocab) == 0:
        raise ContractError("answer vocabulary is empty")
    if task is TaskKind.VQA_YESNO:
        return ["yes", "no"]
    if task is TaskKind.VQA_NUMBER:
        return vocab.numeric
    if task is TaskKind.VQA_OTHER:
        return list(vocab.answers)
    raise ContractError(f"{task.value} does not draw candidates from the VQA vocabulary")


def topk_answers(template: DeclarativeTemplate, candidates: Sequence[str], k: int, scorer,
                 record: list | None = None) -> list[str]:
    """The ``min(k, len(candidates))`` best candidates, best first; ties keep input order.

    If ``record`` is given, every dropped candidate is appended to it as
    ``(candidate, score)`` for later inspection.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if not candidates:
        raise ContractError("topk_answers needs at least one candidate")
    scores = scorer.score_answers(template.text, list(candidates))
    if len(scores) != len(candidates) or not all(math.isfinite(s) for s in scores):
        raise ContractError("answer scorer must return one finite score per candidate")
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], i))
    keep = order[:k]
    if record is not None:
        record.extend((candidates[i], float(scores[i])) for i in order[k:])
    if log.isEnabledFor(logging.DEBUG) and len(order) > k:
        log.debug("filtered out %d candidates for %r", len(order) - k, template.text)
    return [candidates[i] for i in keep]


def length_normalized_logprob(token_logprobs: Sequence[float]) -> float:
    """Mean token log-probability; ``-inf`` for an empty span."""
    if not token_logprobs:
        return -math.inf
    return math.fsum(token_logprobs) / len(token_logprobs)


@dataclass(frozen=True)
class Demonstrations:
    pairs: tuple[tuple[str, str], ...]
    version: str

    def as_context(self) -> str:
        return "".join(f"Question: {q}\nTemplate: {t}\n\n" for q, t in self.pairs)


def load_demonstrations(path: str | Path | None = None) -> Demonstrations:
    """Parse ``Question:`` / ``Template:`` pairs; defaults to the packaged file."""
    if path is None:
        text = resources.files("zsvl.data").joinpath("demonstrations.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    version = "v0"
    pairs, question = [], None
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("# version:"):
            version = line.split(":", 1)[1].strip()
        elif line.startswith("Question:"):
            question = line[len("Question:"):].strip()
        elif line.startswith("Template:") and question is not None:
            template = line[len("Template:"):].strip()
            if template.count(SLOT) != 1:
                raise InputError(f"demonstration template lacks a single slot: {template!r}")
            pairs.append((question, template))
            question = None
    return Demonstrations(tuple(pairs), version)
