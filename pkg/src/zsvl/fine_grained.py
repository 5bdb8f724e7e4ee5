"""Visual and textual fine-grained signals.

Visual: rank detected objects by how close their ``"<attribute> <category>"``
phrase is to the query in sentence-embedding space, keep the top N, crop them
and score each answer against its best-matching crop.

Textual: cosine priors between the query (or a caption) and each answer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import images
from .backends import JointEmbedder, SentenceEmbedder, alignment_score, cosine_rows
from .core import DetectedObject
from .errors import ContractError, InputError


@dataclass(frozen=True)
class RegionSet:
    image_ref: str
    regions: tuple[tuple[DetectedObject, float], ...] = ()

    def __post_init__(self):
        scores = [s for _, s in self.regions]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ContractError("region scores must be non-increasing")

    def __len__(self) -> int:
        return len(self.regions)

    @property
    def objects(self) -> list[DetectedObject]:
        return [o for o, _ in self.regions]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.regions]


def object_phrase(obj: DetectedObject) -> str:
    words = [obj.category]
    if obj.attribute and obj.attribute.strip():
        words.insert(0, obj.attribute)
    return " ".join(" ".join(words).lower().split())


def region_scores(query: str, objects: Sequence[DetectedObject], sentence: SentenceEmbedder) -> np.ndarray:
    """Cosine between the query and every object phrase, in detection order."""
    if not objects:
        return np.zeros(0)
    q = sentence.sentence_embed(query)
    phrases = np.stack([sentence.sentence_embed(object_phrase(o)) for o in objects])
    return np.clip(cosine_rows(q, phrases), -1.0, 1.0)


def select_regions(query: str, objects: Sequence[DetectedObject], n: int,
                   sentence: SentenceEmbedder, image_ref: str = "") -> RegionSet:
    """Top-``n`` objects by query/phrase cosine.

    Ties go to the higher detector confidence, then the earlier detection.
    """
    if n < 0:
        raise ContractError(f"n must be >= 0, got {n}")
    if not query or not query.strip():
        raise InputError("region selection needs a non-empty query")
    if n == 0 or not objects:
        return RegionSet(image_ref)
    scores = region_scores(query, objects, sentence)
    order = sorted(range(len(objects)), key=lambda i: (-scores[i], -objects[i].confidence, i))
    return RegionSet(image_ref, tuple((objects[i], float(scores[i])) for i in order[:n]))


crop_region = images.crop_region


def region_vectors(region_set: RegionSet, joint: JointEmbedder) -> np.ndarray:
    """Joint-space vectors of each selected crop, shape ``(len(region_set), dim)``."""
    if not region_set.regions:
        return np.zeros((0, joint.dim))
    return np.stack([joint.embed_image(crop_region(region_set.image_ref, o.box)) for o in region_set.objects])


def best_region_alignment(text: str, region_set: RegionSet, joint: JointEmbedder) -> float:
    """Max alignment of ``text`` over the selected crops; 0 when there are none."""
    if not region_set.regions:
        return 0.0
    t = joint.embed_text(text)
    return max(alignment_score(v, t) for v in region_vectors(region_set, joint))


def _prior(anchor: str, candidates: Sequence[str], sentence: SentenceEmbedder) -> list[float]:
    if not candidates:
        raise ContractError("prior scores need at least one candidate")
    if not anchor or not anchor.strip():
        raise InputError("prior anchor text is empty")
    a = sentence.sentence_embed(anchor)
    rows = np.stack([sentence.sentence_embed(c) for c in candidates])
    return np.clip(cosine_rows(a, rows), -1.0, 1.0).tolist()


def question_prior(query: str, candidates: Sequence[str], sentence: SentenceEmbedder) -> list[float]:
    return _prior(query, candidates, sentence)


def caption_prior(caption: str, candidates: Sequence[str], sentence: SentenceEmbedder) -> list[float]:
    return _prior(caption, candidates, sentence)
