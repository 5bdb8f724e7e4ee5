"""Domain types shared by every stage of the pipeline.

All records are frozen dataclasses so they can be handed to worker threads
without copying. ``Sample`` round-trips through :func:`sample_to_dict` /
:func:`sample_from_dict`, which define the canonical JSONL interchange
format between dataset ingestion and inference.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractError, InputError


class TaskKind(str, enum.Enum):
    VQA_YESNO = "VQA_YESNO"
    VQA_NUMBER = "VQA_NUMBER"
    VQA_OTHER = "VQA_OTHER"
    VCR_Q2A = "VCR_Q2A"
    VCR_QA2R = "VCR_QA2R"
    SNLI_VE = "SNLI_VE"

    @property
    def family(self) -> str:
        if self in VQA_TASKS:
            return "vqa"
        if self in VCR_TASKS:
            return "vcr"
        return "ve"


VQA_TASKS = frozenset({TaskKind.VQA_YESNO, TaskKind.VQA_NUMBER, TaskKind.VQA_OTHER})
VCR_TASKS = frozenset({TaskKind.VCR_Q2A, TaskKind.VCR_QA2R})

# VQAv2 ``answer_type`` annotation values.
VQA_ANSWER_TYPES = {
    "yes/no": TaskKind.VQA_YESNO,
    "number": TaskKind.VQA_NUMBER,
    "other": TaskKind.VQA_OTHER,
}

ENTAILMENT_LABELS = ("C", "N", "E")
VCR_CANDIDATES = 4
VQA_HUMAN_ANSWERS = 10


Box = tuple[float, float, float, float]


@dataclass(frozen=True)
class DetectedObject:
    """One detector output. ``box`` is pixel ``(x, y, w, h)``."""

    box: Box
    category: str
    attribute: str | None = None
    confidence: float = 1.0

    def __post_init__(self):
        if not self.category or not self.category.strip():
            raise InputError("detected object needs a non-empty category")
        object.__setattr__(self, "box", tuple(float(v) for v in self.box))
        if len(self.box) != 4:
            raise InputError(f"box must have 4 numbers, got {self.box!r}")
        if not 0.0 <= float(self.confidence) <= 1.0:
            raise InputError(f"confidence must lie in [0, 1], got {self.confidence}")
        object.__setattr__(self, "confidence", float(self.confidence))

    def clamped(self, width: int, height: int) -> "DetectedObject | None":
        """Clip the box to ``width x height``; None when nothing is left."""
        x, y, w, h = self.box
        x0, y0 = max(0.0, x), max(0.0, y)
        x1, y1 = min(float(width), x + w), min(float(height), y + h)
        if x1 <= x0 or y1 <= y0:
            return None
        return DetectedObject((x0, y0, x1 - x0, y1 - y0), self.category, self.attribute, self.confidence)

    def to_dict(self) -> dict:
        return {
            "box": list(self.box),
            "category": self.category,
            "attribute": self.attribute,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectedObject":
        return cls(
            box=tuple(d["box"]),
            category=d["category"],
            attribute=d.get("attribute"),
            confidence=float(d.get("confidence", 1.0)),
        )


@dataclass(frozen=True)
class Sample:
    """One evaluation unit.

    ``reference`` depends on the task: the 10 human answers for VQA, the gold
    candidate index for VCR and one of ``C``/``N``/``E`` for SNLI-VE. For
    QA2R samples ``query`` already holds the gold answer text; the original
    question is kept under ``metadata["question"]``.
    """

    id: str
    task: TaskKind
    image_ref: str
    query: str
    candidates: tuple[str, ...] = ()
    provided_caption: str | None = None
    provided_boxes: tuple[DetectedObject, ...] | None = None
    reference: Any = None
    metadata: dict = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "task", TaskKind(self.task))
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if self.provided_boxes is not None:
            object.__setattr__(self, "provided_boxes", tuple(self.provided_boxes))
        if isinstance(self.reference, list):
            object.__setattr__(self, "reference", tuple(self.reference))


def validate_sample(sample: Sample) -> list[str]:
    """Return every broken invariant of ``sample`` as a message; ``[]`` if valid."""
    problems = []
    if not sample.id:
        problems.append("sample id is empty")
    if not sample.query or not sample.query.strip():
        problems.append("query is empty")
    n = len(sample.candidates)
    task = sample.task
    if task in VCR_TASKS:
        if n != VCR_CANDIDATES:
            problems.append(f"candidate count {n} ≠ {VCR_CANDIDATES}")
        ref = sample.reference
        if ref is not None and (not isinstance(ref, int) or isinstance(ref, bool) or not 0 <= ref < max(n, 1)):
            problems.append(f"VCR reference {ref!r} is not a valid candidate index")
    elif task is TaskKind.SNLI_VE:
        if n != 0:
            problems.append("SNLI-VE must have 0 candidates")
        if sample.reference is not None and sample.reference not in ENTAILMENT_LABELS:
            problems.append(f"SNLI-VE reference {sample.reference!r} not in C/N/E")
    else:
        ref = sample.reference
        if ref is not None and len(ref) != VQA_HUMAN_ANSWERS:
            problems.append(f"VQA reference has {len(ref)} answers, expected {VQA_HUMAN_ANSWERS}")
    if any(not c or not str(c).strip() for c in sample.candidates):
        problems.append("empty candidate text")
    return problems


def sample_to_dict(sample: Sample) -> dict:
    ref = sample.reference
    if isinstance(ref, tuple):
        ref = list(ref)
    return {
        "id": sample.id,
        "task": sample.task.value,
        "image_ref": sample.image_ref,
        "query": sample.query,
        "candidates": list(sample.candidates),
        "provided_caption": sample.provided_caption,
        "provided_boxes": None
        if sample.provided_boxes is None
        else [o.to_dict() for o in sample.provided_boxes],
        "reference": ref,
        "metadata": sample.metadata,
    }


def sample_from_dict(d: dict) -> Sample:
    boxes = d.get("provided_boxes")
    return Sample(
        id=str(d["id"]),
        task=TaskKind(d["task"]),
        image_ref=d["image_ref"],
        query=d["query"],
        candidates=tuple(d.get("candidates") or ()),
        provided_caption=d.get("provided_caption"),
        provided_boxes=None if boxes is None else tuple(DetectedObject.from_dict(b) for b in boxes),
        reference=d.get("reference"),
        metadata=dict(d.get("metadata") or {}),
    )


def write_samples(path: str | Path, samples: Iterable[Sample]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            f.write(json.dumps(sample_to_dict(s), ensure_ascii=False, sort_keys=True) + "\n")


def read_samples(path: str | Path) -> list[Sample]:
    return list(iter_jsonl(path, sample_from_dict))


def iter_jsonl(path: str | Path, convert=lambda d: d) -> Iterator[Any]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield convert(json.loads(line))
            except (KeyError, ValueError, TypeError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc


@dataclass(frozen=True)
class ScoreBundle:
    """Per-candidate score channels, one float64 array each."""

    s_clip_global: np.ndarray
    s_clip_region: np.ndarray
    s_question: np.ndarray
    s_caption: np.ndarray

    CHANNELS = ("s_clip_global", "s_clip_region", "s_question", "s_caption")

    def __post_init__(self):
        lengths = set()
        for name in self.CHANNELS:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            if arr.ndim != 1:
                raise ContractError(f"{name} must be 1-D")
            lengths.add(arr.shape[0])
        if len(lengths) != 1:
            raise ContractError(f"score channels have unequal lengths {sorted(lengths)}")

    def __len__(self) -> int:
        return self.s_clip_global.shape[0]

    def to_dict(self) -> dict:
        return {name: getattr(self, name).tolist() for name in self.CHANNELS}

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "ScoreBundle":
        """Build from ``(global, region, question, caption)`` rows, one per candidate."""
        arr = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), arr[:, 3].copy())


@dataclass(frozen=True)
class FusionWeights:
    k1: float = 1.0
    k2: float = 1.0
    k3: float = 1.0
    n_regions: int = 5
    top_k: int = 10

    def __post_init__(self):
        for name in ("k1", "k2", "k3"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ContractError(f"{name} must be a finite non-negative number, got {v}")
            object.__setattr__(self, name, v)
        if int(self.n_regions) != self.n_regions or self.n_regions < 0:
            raise ContractError(f"n_regions must be an integer >= 0, got {self.n_regions}")
        if int(self.top_k) != self.top_k or self.top_k < 1:
            raise ContractError(f"top_k must be an integer >= 1, got {self.top_k}")
        object.__setattr__(self, "n_regions", int(self.n_regions))
        object.__setattr__(self, "top_k", int(self.top_k))

    def to_dict(self) -> dict:
        return {"k1": self.k1, "k2": self.k2, "k3": self.k3, "n_regions": self.n_regions, "top_k": self.top_k}


@dataclass(frozen=True)
class CentroidSet:
    c_contradiction: float
    c_neutral: float
    c_entailment: float

    def __post_init__(self):
        vals = (self.c_contradiction, self.c_neutral, self.c_entailment)
        if not all(math.isfinite(v) for v in vals):
            raise ContractError(f"centroids must be finite, got {vals}")
        if not vals[0] <= vals[1] <= vals[2]:
            raise ContractError(f"centroids must satisfy C <= N <= E, got {vals}")

    def as_dict(self) -> dict[str, float]:
        return {"C": self.c_contradiction, "N": self.c_neutral, "E": self.c_entailment}

    @classmethod
    def from_value(cls, value) -> "CentroidSet":
        """Accept ``[c, n, e]`` or ``{"C": .., "N": .., "E": ..}``."""
        if isinstance(value, CentroidSet):
            return value
        if isinstance(value, dict):
            return cls(float(value["C"]), float(value["N"]), float(value["E"]))
        c, n, e = value
        return cls(float(c), float(n), float(e))


@dataclass(frozen=True)
class Toggles:
    """Which fine-grained channels are active in a run.

    ``use_global`` is not one of the published ablation columns; turning it
    off gives the text-only configuration.
    """

    use_global: bool = True
    use_regions: bool = True
    use_question_prior: bool = True
    use_caption_prior: bool = True
    use_answer_filter: bool = True
    use_provided_caption: bool = False
    use_provided_boxes: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class Prediction:
    sample_id: str
    label: int | str
    answer: str | None = None
    candidates: tuple[str, ...] | None = None
    scores: ScoreBundle | None = None
    totals: tuple[float, ...] | None = None
    extra: dict = field(default_factory=dict, hash=False)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"sample_id": self.sample_id, "label": self.label}
        if self.answer is not None:
            d["answer"] = self.answer
        if self.candidates is not None:
            d["candidates"] = list(self.candidates)
        if self.scores is not None:
            d["scores"] = self.scores.to_dict()
        if self.totals is not None:
            d["totals"] = list(self.totals)
        if self.extra:
            d["extra"] = self.extra
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Prediction":
        scores = d.get("scores")
        return cls(
            sample_id=str(d["sample_id"]),
            label=d["label"],
            answer=d.get("answer"),
            candidates=tuple(d["candidates"]) if d.get("candidates") is not None else None,
            scores=ScoreBundle(**scores) if scores else None,
            totals=tuple(d["totals"]) if d.get("totals") is not None else None,
            extra=dict(d.get("extra") or {}),
        )
