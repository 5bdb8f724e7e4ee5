"""VQA answer normalization, the consensus soft score, and per-type reports."""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .core import VQA_HUMAN_ANSWERS, Prediction, Sample, TaskKind
from .errors import ContractError, InputError

# punctuation handling mirrors the official VQAv2 evaluator
_PUNCT = [";", "/", "[", "]", '"', "{", "}", "(", ")", "=", "+", "\\", "_", "-", ">", "<", "@", "`", ",", "?", "!"]
_PERIOD = re.compile(r"(?<!\d)\.|\.(?!\d)")
_COMMA_NUM = re.compile(r"(\d)(,)(\d)")
_ARTICLES = {"a", "an", "the"}
_NUMBER_WORDS = {
    "none": "0", "zero": "0", "one": "1", "two": "2", "three": "3", "four": "4", "five": "5",
    "six": "6", "seven": "7", "eight": "8", "nine": "9", "ten": "10",
}
_CONTRACTIONS = {
    "aint": "ain't", "arent": "aren't", "cant": "can't", "couldnt": "couldn't", "didnt": "didn't",
    "doesnt": "doesn't", "dont": "don't", "hadnt": "hadn't", "hasnt": "hasn't", "havent": "haven't",
    "hes": "he's", "im": "i'm", "isnt": "isn't", "itd": "it'd", "itll": "it'll", "ive": "i've",
    "lets": "let's", "shes": "she's", "shouldnt": "shouldn't", "thats": "that's", "theres": "there's",
    "theyre": "they're", "theyve": "they've", "wasnt": "wasn't", "werent": "weren't", "whats": "what's",
    "wheres": "where's", "whos": "who's", "wont": "won't", "wouldnt": "wouldn't", "youre": "you're",
    "youve": "you've",
}


def normalize_answer(text: str) -> str:
    t = " ".join(str(text).lower().split())
    for p in _PUNCT:
        if p + " " in t or " " + p in t or _COMMA_NUM.search(t):
            t = t.replace(p, "")
        else:
            t = t.replace(p, " ")
    t = _PERIOD.sub("", t)
    words = []
    for w in t.split():
        w = _NUMBER_WORDS.get(w, w)
        if w in _ARTICLES:
            continue
        words.append(_CONTRACTIONS.get(w, w))
    return " ".join(words)


def vqa_soft_score(predicted: str, human_answers: Sequence[str]) -> float:
    """Mean over the ten leave-one-out subsets of ``min(matches / 3, 1)``."""
    if len(human_answers) != VQA_HUMAN_ANSWERS:
        raise ContractError(f"expected {VQA_HUMAN_ANSWERS} human answers, got {len(human_answers)}")
    pred = normalize_answer(predicted)
    hits = [normalize_answer(a) == pred for a in human_answers]
    total = sum(hits)
    acc = sum((min(Fraction(total - h, 3), Fraction(1)) for h in hits), Fraction(0))
    return float(acc / len(hits))


VQA_TYPE_NAMES = {TaskKind.VQA_YESNO: "Yes/No", TaskKind.VQA_NUMBER: "Number", TaskKind.VQA_OTHER: "Other"}
REPORT_COLUMNS = {
    "vqa": ("Yes/No", "Number", "Other", "All"),
    "ve": ("C", "N", "E", "All"),
    "vcr": ("Q2A", "QA2R"),
}


@dataclass
class Report:
    task: str
    scores: dict[str, float]
    counts: dict[str, int]
    config_digest: str | None = None
    weights: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "scores": self.scores,
            "counts": self.counts,
            "config_digest": self.config_digest,
            "weights": self.weights,
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(d["task"], d["scores"], d["counts"], d.get("config_digest"), d.get("weights"),
                   d.get("extra") or {})

    def table(self) -> str:
        cols = [c for c in REPORT_COLUMNS.get(self.task, ()) if c in self.scores] or sorted(self.scores)
        head = "| " + " | ".join(cols) + " |"
        rule = "|" + "|".join("---" for _ in cols) + "|"
        vals = "| " + " | ".join(f"{self.scores[c]:.2f}" for c in cols) + " |"
        cnts = "| " + " | ".join(str(self.counts.get(c, 0)) for c in cols) + " |"
        return "\n".join([head, rule, vals, cnts])


def _family(samples: Iterable[Sample]) -> str:
    fams = {s.task.family for s in samples}
    if len(fams) != 1:
        raise ContractError(f"evaluate expects one task family, got {sorted(fams) or 'none'}")
    return fams.pop()


def _pct(values: list[float]) -> float:
    return 100.0 * math.fsum(values) / len(values) if values else 0.0


def per_sample_score(pred: Prediction, sample: Sample) -> float:
    if sample.task.family == "vqa":
        answer = pred.answer
        if answer is None and pred.candidates is not None:
            answer = pred.candidates[int(pred.label)]
        if answer is None:
            raise InputError(f"VQA prediction {pred.sample_id} carries no answer text")
        return vqa_soft_score(answer, sample.reference)
    if sample.task is TaskKind.SNLI_VE:
        return float(pred.label == sample.reference)
    return float(int(pred.label) == int(sample.reference))


def _bucket(sample: Sample) -> str:
    if sample.task.family == "vqa":
        return VQA_TYPE_NAMES[sample.task]
    if sample.task is TaskKind.SNLI_VE:
        return sample.reference
    return "Q2A" if sample.task is TaskKind.VCR_Q2A else "QA2R"


def evaluate(predictions: Iterable[Prediction], samples: Iterable[Sample],
             config_digest: str | None = None, weights: dict | None = None) -> Report:
    """Per-type and overall scores in percent.

    VQA uses the consensus soft score; VCR and SNLI-VE use accuracy. VCR
    reports its two subtasks separately and has no combined column.
    """
    samples = list(samples)
    by_id = {s.id: s for s in samples}
    preds = {}
    for p in predictions:
        if p.sample_id not in by_id:
            raise InputError(f"prediction for unknown sample {p.sample_id!r}")
        preds[p.sample_id] = p
    missing = sorted(set(by_id) - set(preds))
    if missing:
        raise InputError(f"{len(missing)} samples have no prediction: {missing[:20]}")
    family = _family(samples)
    buckets: dict[str, list[float]] = defaultdict(list)
    overall = []
    for sid in sorted(by_id):
        s = by_id[sid]
        v = per_sample_score(preds[sid], s)
        buckets[_bucket(s)].append(v)
        overall.append(v)
    scores = {k: _pct(v) for k, v in buckets.items()}
    counts = {k: len(v) for k, v in buckets.items()}
    if family != "vcr":
        scores["All"] = _pct(overall)
        counts["All"] = len(overall)
    return Report(family, dict(sorted(scores.items())), dict(sorted(counts.items())), config_digest, weights)


def digest(obj) -> str:
    """Short stable digest of any JSON-serializable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
