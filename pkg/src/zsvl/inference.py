"""Turning per-candidate scores into predictions.

Question answering (VQA, VCR) fuses four channels per candidate::

    total = global + k1 * best_region + k2 * question_prior + k3 * caption_prior

and picks the argmax. Visual entailment has no candidates: each sample gets a
joint-space score and a caption score, each channel is split into tertiles
over the whole evaluation set, and the sample is labelled with the closest
tertile centroid.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import fine_grained as fg
from .answer_filter import (
    DEFAULT_TOP_K,
    AnswerVocabulary,
    route_candidates,
    to_declarative,
    topk_answers,
)
from .backends import Backends, cosine, dot_rows
from .core import (
    ENTAILMENT_LABELS,
    VCR_TASKS,
    VQA_TASKS,
    CentroidSet,
    DetectedObject,
    FusionWeights,
    Prediction,
    Sample,
    ScoreBundle,
    TaskKind,
    Toggles,
)
from .errors import BackendError, ContractError, InputError, ZsvlError

DEFAULT_TOGGLES = Toggles()


def _with_sample_id(fn):
    """Re-raise failures inside ``fn(sample, ...)`` tagged with the sample id."""

    @functools.wraps(fn)
    def wrapper(sample, *args, **kwargs):
        try:
            return fn(sample, *args, **kwargs)
        except ZsvlError as exc:
            if str(exc).startswith(f"[{sample.id}]"):
                raise
            raise type(exc)(f"[{sample.id}] {exc}") from exc
        except Exception as exc:
            raise BackendError(f"{type(exc).__name__}: {exc}", sample_id=sample.id) from exc

    return wrapper


def resolve_caption(sample: Sample, backends: Backends, toggles: Toggles = DEFAULT_TOGGLES) -> str:
    if toggles.use_provided_caption:
        if not sample.provided_caption:
            raise InputError("use_provided_caption is on but the sample has no caption")
        return sample.provided_caption
    if backends.captioner is None:
        raise ContractError("caption prior needs a captioner backend")
    return backends.captioner.caption(sample.image_ref)


def resolve_objects(sample: Sample, backends: Backends, toggles: Toggles = DEFAULT_TOGGLES) -> list[DetectedObject]:
    if toggles.use_provided_boxes:
        if sample.provided_boxes is None:
            raise InputError("use_provided_boxes is on but the sample has no boxes")
        return list(sample.provided_boxes)
    if backends.detector is None:
        raise ContractError("region selection needs a detector backend")
    return backends.detector.detect(sample.image_ref)


def sample_regions(sample: Sample, weights: FusionWeights, backends: Backends,
                   toggles: Toggles = DEFAULT_TOGGLES) -> fg.RegionSet:
    if not toggles.use_regions or weights.n_regions == 0:
        return fg.RegionSet(sample.image_ref)
    objects = resolve_objects(sample, backends, toggles)
    return fg.select_regions(sample.query, objects, weights.n_regions, backends.sentence, sample.image_ref)


@_with_sample_id
def build_score_bundle(sample: Sample, candidates: Sequence[str], weights: FusionWeights,
                       backends: Backends, toggles: Toggles = DEFAULT_TOGGLES,
                       prompts: Sequence[str] | None = None) -> ScoreBundle:
    """Fill the four score channels for ``candidates``.

    ``prompts`` are the texts given to the joint text encoder (filled
    templates for VQA); the priors always compare against the bare
    candidates. Disabled channels are all zeros.
    """
    if not candidates:
        raise ContractError("build_score_bundle needs at least one candidate")
    prompts = list(candidates) if prompts is None else list(prompts)
    if len(prompts) != len(candidates):
        raise ContractError("prompts and candidates differ in length")
    n = len(candidates)
    zeros = np.zeros(n)

    text_vecs = None
    if toggles.use_global or (toggles.use_regions and weights.n_regions > 0):
        text_vecs = np.stack([backends.joint.embed_text(p) for p in prompts])

    s_global = zeros
    if toggles.use_global:
        s_global = dot_rows(text_vecs, backends.joint.embed_image(sample.image_ref))

    s_region = zeros
    regions = sample_regions(sample, weights, backends, toggles)
    if len(regions):
        region_vecs = fg.region_vectors(regions, backends.joint)
        s_region = np.array([dot_rows(region_vecs, t).max() for t in text_vecs])

    s_question = zeros
    if toggles.use_question_prior:
        s_question = np.asarray(fg.question_prior(sample.query, candidates, backends.sentence))

    s_caption = zeros
    if toggles.use_caption_prior:
        caption = resolve_caption(sample, backends, toggles)
        s_caption = np.asarray(fg.caption_prior(caption, candidates, backends.sentence))

    return ScoreBundle(s_global, s_region, s_question, s_caption)


def fused_totals(bundle: ScoreBundle, weights: FusionWeights) -> np.ndarray:
    for name in ScoreBundle.CHANNELS:
        if np.isnan(getattr(bundle, name)).any():
            raise ContractError(f"NaN in score channel {name}")
    return (bundle.s_clip_global
            + weights.k1 * bundle.s_clip_region
            + weights.k2 * bundle.s_question
            + weights.k3 * bundle.s_caption)


def fuse_and_pick(bundle: ScoreBundle, weights: FusionWeights, sample_id: str = "") -> Prediction:
    """Weighted sum of the channels; the first maximal candidate wins."""
    if len(bundle) == 0:
        raise ContractError("cannot pick from an empty score bundle")
    totals = fused_totals(bundle, weights)
    best = int(np.argmax(totals))
    return Prediction(sample_id, best, scores=bundle, totals=tuple(totals.tolist()))


@_with_sample_id
def infer_vqa(sample: Sample, weights: FusionWeights, backends: Backends, vocab: AnswerVocabulary | None = None,
              toggles: Toggles = DEFAULT_TOGGLES, top_k: int | None = None) -> Prediction:
    """Route, filter and fuse one VQA question.

    Explicit ``sample.candidates`` take precedence over the vocabulary route.
    """
    if sample.task not in VQA_TASKS:
        raise ContractError(f"infer_vqa got a {sample.task.value} sample")
    template = to_declarative(sample.query, sample.id, converter=backends.converter)
    if sample.candidates:
        candidates = list(sample.candidates)
    elif vocab is not None:
        candidates = route_candidates(sample.task, vocab)
    else:
        raise ContractError("VQA inference needs either sample candidates or an answer vocabulary")
    if not candidates:
        raise InputError(f"no candidates routed for {sample.task.value}")
    dropped: list[tuple[str, float]] = []
    if toggles.use_answer_filter:
        if backends.answer_scorer is None:
            raise ContractError("answer filtering needs an answer_scorer backend")
        k = top_k if top_k is not None else weights.top_k
        candidates = topk_answers(template, candidates, k, backends.answer_scorer, record=dropped)
    prompts = [template.fill(a) for a in candidates]
    bundle = build_score_bundle(sample, candidates, weights, backends, toggles, prompts=prompts)
    pred = fuse_and_pick(bundle, weights, sample.id)
    extra = {"template": template.text}
    if template.out_of_coverage:
        extra["out_of_coverage"] = True
    if dropped:
        extra["filtered_out"] = len(dropped)
    return Prediction(sample.id, pred.label, candidates[pred.label], tuple(candidates),
                      pred.scores, pred.totals, extra)


@_with_sample_id
def infer_vcr(sample: Sample, weights: FusionWeights, backends: Backends,
              toggles: Toggles = DEFAULT_TOGGLES) -> Prediction:
    """Q2A uses the question as query; QA2R samples already carry the gold answer as query."""
    if sample.task not in VCR_TASKS:
        raise ContractError(f"infer_vcr got a {sample.task.value} sample")
    if len(sample.candidates) != 4:
        raise InputError(f"VCR sample has {len(sample.candidates)} candidates, expected 4")
    if sample.task is TaskKind.VCR_QA2R and not (sample.query and sample.query.strip()):
        raise InputError("QA2R sample lacks the correct-answer text used as its query")
    bundle = build_score_bundle(sample, sample.candidates, weights, backends, toggles)
    pred = fuse_and_pick(bundle, weights, sample.id)
    return Prediction(sample.id, pred.label, sample.candidates[pred.label], sample.candidates,
                      pred.scores, pred.totals)


def default_top_k(task: TaskKind) -> int:
    return DEFAULT_TOP_K.get(task, 10)


# ---------------------------------------------------------------------------
# visual entailment


@dataclass(frozen=True)
class EntailmentScores:
    sample_id: str
    s_clip: float
    s_caption: float

    def __post_init__(self):
        if not (math.isfinite(self.s_clip) and math.isfinite(self.s_caption)):
            raise ContractError(f"non-finite entailment scores for {self.sample_id}")


@_with_sample_id
def entailment_scores(sample: Sample, weights: FusionWeights, backends: Backends,
                      toggles: Toggles = DEFAULT_TOGGLES) -> EntailmentScores:
    if sample.task is not TaskKind.SNLI_VE:
        raise ContractError(f"entailment scoring got a {sample.task.value} sample")
    hypothesis = sample.query
    s_clip = 0.0
    needs_text = toggles.use_global or (toggles.use_regions and weights.n_regions > 0)
    if needs_text:
        t = backends.joint.embed_text(hypothesis)
        if toggles.use_global:
            s_clip = float(np.dot(backends.joint.embed_image(sample.image_ref), t))
        regions = sample_regions(sample, weights, backends, toggles)
        if len(regions):
            best = float(dot_rows(fg.region_vectors(regions, backends.joint), t).max())
            s_clip = s_clip + weights.k1 * best
    s_caption = 0.0
    if toggles.use_caption_prior:
        caption = resolve_caption(sample, backends, toggles)
        s_caption = cosine(backends.sentence.sentence_embed(caption), backends.sentence.sentence_embed(hypothesis))
    return EntailmentScores(sample.id, s_clip, s_caption)


def compute_entailment_scores(samples: Iterable[Sample], weights: FusionWeights, backends: Backends,
                              toggles: Toggles = DEFAULT_TOGGLES) -> list[EntailmentScores]:
    return [entailment_scores(s, weights, backends, toggles) for s in samples]


def tertile_sizes(n: int) -> tuple[int, int, int]:
    """Group sizes differing by at most one, smaller groups at the low end."""
    base, rem = divmod(n, 3)
    return base, base + (rem == 2), base + (rem >= 1)


def cluster_centroids(scores: Sequence[float]) -> CentroidSet:
    """Sort, cut into three contiguous groups, and average each group.

    The lowest group is the contradiction centroid, the highest the
    entailment centroid.
    """
    values = sorted(float(s) for s in scores)
    if len(values) < 3:
        raise InputError(f"need at least 3 scores to form centroids, got {len(values)}")
    if not all(math.isfinite(v) for v in values):
        raise InputError("centroid scores must be finite")
    a, b, _ = tertile_sizes(len(values))
    groups = (values[:a], values[a:a + b], values[a + b:])
    c, n, e = (math.fsum(g) / len(g) for g in groups)
    # rounding can break the order by an ulp when neighbouring groups hold equal values
    n = max(n, c)
    e = max(e, n)
    return CentroidSet(c, n, e)


# E first so equal distances resolve towards entailment
_TIE_ORDER = ("E", "N", "C")


def entailment_distances(es: EntailmentScores, clip_centroids: CentroidSet,
                         caption_centroids: CentroidSet, k2: float) -> dict[str, float]:
    clip = clip_centroids.as_dict()
    cap = caption_centroids.as_dict()
    return {lab: abs(clip[lab] - es.s_clip) + k2 * abs(cap[lab] - es.s_caption) for lab in ENTAILMENT_LABELS}


def predict_entailment(es: EntailmentScores, clip_centroids: CentroidSet,
                       caption_centroids: CentroidSet, k2: float) -> str:
    d = entailment_distances(es, clip_centroids, caption_centroids, k2)
    return min(_TIE_ORDER, key=lambda lab: d[lab])


def infer_entailment(samples: Sequence[Sample], weights: FusionWeights, backends: Backends,
                     toggles: Toggles = DEFAULT_TOGGLES, clip_centroids: CentroidSet | None = None,
                     caption_centroids: CentroidSet | None = None,
                     scores: Sequence[EntailmentScores] | None = None):
    """Score every sample, then cluster, then label: the clustering is a barrier.

    Returns ``(predictions, clip_centroids, caption_centroids)``.
    """
    if scores is None:
        scores = compute_entailment_scores(samples, weights, backends, toggles)
    if clip_centroids is None:
        clip_centroids = cluster_centroids([s.s_clip for s in scores])
    if caption_centroids is None:
        caption_centroids = cluster_centroids([s.s_caption for s in scores])
    preds = []
    for es in scores:
        label = predict_entailment(es, clip_centroids, caption_centroids, weights.k2)
        preds.append(Prediction(es.sample_id, label, extra={
            "s_clip": es.s_clip,
            "s_caption": es.s_caption,
            "distances": entailment_distances(es, clip_centroids, caption_centroids, weights.k2),
        }))
    return preds, clip_centroids, caption_centroids
