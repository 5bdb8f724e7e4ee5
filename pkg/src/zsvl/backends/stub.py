"""Deterministic stand-ins for every model role.

Every stub output is a pure function of ``(seed, input digest)``. Vectors
come from the ``pcg64-normal-v1`` expansion: the first 64 bits of the
input's SHA-256 and the instance seed feed a ``SeedSequence`` that drives a
PCG64 generator, whose standard normals form the vector. Changing the
expansion means bumping ``EXPANSION``, which also changes cache keys.

Canned outputs (captions, detections, answer scores, fixed vectors) can be
passed directly or loaded from a JSON fixture file; image keys may be the
pixel content digest, the full locator, or the file's base name.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from typing import Mapping, Sequence

import numpy as np

from .. import images
from ..core import DetectedObject
from ..errors import ContractError, InputError

EXPANSION = "pcg64-normal-v1"
SLOT = "<slot>"

_WORD = re.compile(r"[a-z0-9]+")

SYNTH_CATEGORIES = ("dog", "cat", "person", "car", "pizza", "table", "tree", "ball", "bus", "flowers")
SYNTH_ATTRIBUTES = (None, "red", "yellow", "black", "white", "small", "large", "wooden")


def hash64(data: str | bytes) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "big")


def expand(seed: int, h: int, dim: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, h])))
    return rng.standard_normal(dim)


def load_fixture(path: str | os.PathLike | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _image_keys(image_ref: str) -> list[str]:
    path, crop = images.parse_ref(image_ref)
    keys = [images.content_digest(image_ref), image_ref]
    if crop is None:
        keys.append(os.path.basename(path))
    return keys


def _lookup_image(mapping: Mapping, image_ref: str):
    for key in _image_keys(image_ref):
        if key in mapping:
            return mapping[key]
    return None


class StubJointEmbedder:
    impl_id = "stub"

    def __init__(self, dim: int = 16, seed: int = 0, normalize: bool = False,
                 image_vectors: Mapping | None = None, text_vectors: Mapping | None = None,
                 fixture: str | None = None):
        fx = load_fixture(fixture)
        self.dim = int(dim)
        self.seed = int(seed)
        self.normalized = bool(normalize)
        self.version = f"{EXPANSION}/seed={self.seed}/dim={self.dim}/norm={int(self.normalized)}"
        self.image_vectors = {**fx.get("image_vectors", {}), **(image_vectors or {})}
        self.text_vectors = {**fx.get("text_vectors", {}), **(text_vectors or {})}

    def _finish(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ContractError(f"canned vector has shape {v.shape}, expected ({self.dim},)")
        if self.normalized:
            v = v / np.linalg.norm(v)
        return v

    def embed_image(self, image_ref: str) -> np.ndarray:
        canned = _lookup_image(self.image_vectors, image_ref)
        if canned is not None:
            return self._finish(canned)
        h = hash64("image\0" + images.content_digest(image_ref))
        return self._finish(expand(self.seed, h, self.dim))

    def embed_text(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise InputError("cannot embed empty text")
        if text in self.text_vectors:
            return self._finish(self.text_vectors[text])
        return self._finish(expand(self.seed, hash64("text\0" + text), self.dim))


class StubSentenceEmbedder:
    """Hashed bag-of-words vectors: texts sharing words get positive cosine."""

    impl_id = "stub"

    def __init__(self, dim: int = 32, seed: int = 0, vectors: Mapping | None = None,
                 fixture: str | None = None):
        fx = load_fixture(fixture)
        self.dim = int(dim)
        self.seed = int(seed)
        self.version = f"{EXPANSION}/bow/seed={self.seed}/dim={self.dim}"
        self.vectors = {**fx.get("sentence_vectors", {}), **(vectors or {})}

    def sentence_embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise InputError("cannot embed empty text")
        if text in self.vectors:
            v = np.asarray(self.vectors[text], dtype=np.float64)
            if v.shape != (self.dim,) or not np.any(v):
                raise ContractError(f"canned sentence vector for {text!r} is malformed")
            return v
        v = np.zeros(self.dim)
        for word in _WORD.findall(text.lower()):
            v += expand(self.seed, hash64("word\0" + word), self.dim)
        if np.linalg.norm(v) < 1e-12:
            v = expand(self.seed, hash64("sentence\0" + text), self.dim)
        return v


class StubCaptioner:
    impl_id = "stub"

    def __init__(self, captions: Mapping | None = None, default: str | None = "an image",
                 fixture: str | None = None):
        fx = load_fixture(fixture)
        self.captions = {**fx.get("captions", {}), **(captions or {})}
        self.default = default
        self.version = "canned-v1"

    def caption(self, image_ref: str) -> str:
        text = _lookup_image(self.captions, image_ref)
        if text is None:
            # also surfaces unreadable files as InputError
            images.load_image(image_ref)
            if self.default is None:
                raise InputError(f"no caption available for {image_ref!r}")
            return self.default
        return text


class PrecomputedCaptioner(StubCaptioner):
    """Captions produced offline by a real captioning model; no fallback text."""

    impl_id = "precomputed"

    def __init__(self, path: str):
        super().__init__(default=None, fixture=path)
        self.version = "file:" + os.path.basename(path)


class StubDetector:
    """Canned detections; optionally ``synthesize`` seeded pseudo-random objects for unmapped images."""

    impl_id = "stub"

    def __init__(self, detections: Mapping | None = None, synthesize: int = 0, seed: int = 0,
                 fixture: str | None = None, strict: bool = False):
        fx = load_fixture(fixture)
        raw = {**fx.get("detections", {}), **(detections or {})}
        self.detections = {k: [o if isinstance(o, DetectedObject) else DetectedObject.from_dict(o) for o in v]
                           for k, v in raw.items()}
        self.synthesize = int(synthesize)
        self.seed = int(seed)
        self.strict = strict
        self.version = f"canned-v1/synth={self.synthesize}/seed={self.seed}"

    def _synth(self, image_ref: str, width: int, height: int) -> list[DetectedObject]:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([self.seed, hash64("detect\0" + images.content_digest(image_ref))])))
        out = []
        for _ in range(self.synthesize):
            w = max(1.0, float(rng.uniform(0.2, 0.6)) * width)
            h = max(1.0, float(rng.uniform(0.2, 0.6)) * height)
            x = float(rng.uniform(0, width - w))
            y = float(rng.uniform(0, height - h))
            out.append(DetectedObject(
                (round(x, 2), round(y, 2), round(w, 2), round(h, 2)),
                SYNTH_CATEGORIES[int(rng.integers(len(SYNTH_CATEGORIES)))],
                SYNTH_ATTRIBUTES[int(rng.integers(len(SYNTH_ATTRIBUTES)))],
                round(float(rng.uniform(0.3, 1.0)), 4),
            ))
        return out

    def detect(self, image_ref: str) -> list[DetectedObject]:
        width, height = images.image_size(image_ref)
        canned = _lookup_image(self.detections, image_ref)
        if canned is None:
            if self.strict:
                raise InputError(f"no detections recorded for {image_ref!r}")
            canned = self._synth(image_ref, width, height)
        out = []
        for obj in canned:
            clamped = obj.clamped(width, height)
            if clamped is not None:
                out.append(clamped)
        return out


class PrecomputedDetector(StubDetector):
    """Detections exported offline (e.g. from a bottom-up-attention detector)."""

    impl_id = "precomputed"

    def __init__(self, path: str):
        super().__init__(fixture=path, strict=True)
        self.version = "file:" + os.path.basename(path)


class StubAnswerScorer:
    """Per-candidate plausibility: canned value if given, else a hash-derived log-prob in [-5, 0)."""

    impl_id = "stub"

    def __init__(self, scores: Mapping[str, float] | None = None, seed: int = 0,
                 fixture: str | None = None):
        fx = load_fixture(fixture)
        self.scores = {**fx.get("answer_scores", {}), **(scores or {})}
        self.seed = int(seed)
        self.version = f"canned-v1/seed={self.seed}"

    def score_answers(self, template: str, candidates: Sequence[str]) -> list[float]:
        if template.count(SLOT) != 1:
            raise ContractError(f"template must contain exactly one {SLOT}: {template!r}")
        if not candidates:
            raise ContractError("score_answers needs at least one candidate")
        out = []
        for cand in candidates:
            if cand in self.scores:
                out.append(float(self.scores[cand]))
            else:
                u = hash64(f"{self.seed}\0{template}\0{cand}") / 2.0**64
                out.append(-5.0 * u)
        return out
