"""Content-addressed on-disk cache for backend outputs.

Each key hashes ``(role, implementation, version, operation, input digest)``.
A record is one JSON value file named by that hash plus a ``.meta.json``
sidecar; both are written to a temp file and renamed into place, so readers
never observe partial writes and concurrent writers of the same key simply
replace identical content.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import images
from .backends import Backends
from .core import DetectedObject

log = logging.getLogger(__name__)

CACHE_ENV = "ZSVL_CACHE_DIR"
DEFAULT_DIR = ".zsvl-cache"


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CacheKey:
    role: str
    impl: str
    version: str
    op: str
    input_digest: str

    def digest(self) -> str:
        raw = "\x1f".join((self.role, self.impl, self.version, self.op, self.input_digest))
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()


def _encode(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return {"__ndarray__": value.tolist(), "dtype": str(value.dtype)}
    if isinstance(value, DetectedObject):
        return {"__object__": value.to_dict()}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _decode(value: Any) -> Any:
    if isinstance(value, dict):
        if "__ndarray__" in value:
            return np.asarray(value["__ndarray__"], dtype=value["dtype"])
        if "__object__" in value:
            return DetectedObject.from_dict(value["__object__"])
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


class FileCache:
    """Memoizes producer results on disk, with an in-process front layer."""

    def __init__(self, root: str | os.PathLike | None = None, memory: bool = True):
        root = root or os.environ.get(CACHE_ENV) or DEFAULT_DIR
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._memory: dict[str, Any] | None = {} if memory else None
        self._lock = threading.Lock()
        self.producer_calls = 0
        self.hits = 0
        self.misses = 0
        self.writes_by_op: dict[str, int] = {}

    def path_for(self, key: CacheKey) -> Path:
        d = key.digest()
        return self.root / d[:2] / f"{d}.json"

    def _count(self, attr: str, op: str | None = None) -> None:
        with self._lock:
            setattr(self, attr, getattr(self, attr) + 1)
            if op is not None:
                self.writes_by_op[op] = self.writes_by_op.get(op, 0) + 1

    def get_or_compute(self, key: CacheKey, producer: Callable[[], Any]) -> Any:
        d = key.digest()
        if self._memory is not None and d in self._memory:
            self._count("hits")
            return self._memory[d]
        path = self.path_for(key)
        try:
            with open(path, encoding="utf-8") as f:
                record = json.load(f)
            if record.get("key") != d:
                raise ValueError("record key does not match its file name")
            value = _decode(record["value"])
            self._count("hits")
        except FileNotFoundError:
            value = self._produce(key, producer, path)
        except (ValueError, KeyError, TypeError) as exc:
            log.warning("corrupt cache record %s (%s); recomputing", path, exc)
            value = self._produce(key, producer, path)
        if self._memory is not None:
            self._memory[d] = value
        return value

    def _produce(self, key: CacheKey, producer: Callable[[], Any], path: Path) -> Any:
        self._count("misses")
        value = producer()
        self._count("producer_calls", key.op)
        path.parent.mkdir(parents=True, exist_ok=True)
        encoded = _encode(value)
        _atomic_write(path, json.dumps({"key": key.digest(), "value": encoded}, sort_keys=True))
        meta = {"role": key.role, "impl": key.impl, "version": key.version, "op": key.op,
                "input": key.input_digest, "written": time.time()}
        _atomic_write(path.with_suffix(".meta.json"), json.dumps(meta, sort_keys=True))
        # hand back what a later hit would decode, so misses and hits agree exactly
        return _decode(json.loads(json.dumps(encoded)))

    def records(self) -> list[Path]:
        return sorted(p for p in self.root.glob("*/*.json")
                      if not p.name.endswith(".meta.json") and not p.name.startswith(".tmp-"))


class _Cached:
    role = ""

    def __init__(self, inner, cache: FileCache):
        self.inner = inner
        self.cache = cache

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def _key(self, op: str, digest: str) -> CacheKey:
        return CacheKey(self.role, self.inner.impl_id, self.inner.version, op, digest)


class CachedJointEmbedder(_Cached):
    role = "joint_embedder"

    def embed_image(self, image_ref: str) -> np.ndarray:
        key = self._key("embed_image", images.content_digest(image_ref))
        return self.cache.get_or_compute(key, lambda: np.asarray(self.inner.embed_image(image_ref), dtype=np.float64))

    def embed_text(self, text: str) -> np.ndarray:
        key = self._key("embed_text", text_digest(text))
        return self.cache.get_or_compute(key, lambda: np.asarray(self.inner.embed_text(text), dtype=np.float64))


class CachedSentenceEmbedder(_Cached):
    role = "sentence_embedder"

    def sentence_embed(self, text: str) -> np.ndarray:
        key = self._key("sentence_embed", text_digest(text))
        return self.cache.get_or_compute(key, lambda: np.asarray(self.inner.sentence_embed(text), dtype=np.float64))


class CachedCaptioner(_Cached):
    role = "captioner"

    def caption(self, image_ref: str) -> str:
        key = self._key("caption", images.content_digest(image_ref))
        return self.cache.get_or_compute(key, lambda: self.inner.caption(image_ref))


class CachedDetector(_Cached):
    role = "detector"

    def detect(self, image_ref: str) -> list[DetectedObject]:
        key = self._key("detect", images.content_digest(image_ref))
        return self.cache.get_or_compute(key, lambda: list(self.inner.detect(image_ref)))


class CachedAnswerScorer(_Cached):
    role = "answer_scorer"

    def score_answers(self, template: str, candidates: Sequence[str]) -> list[float]:
        payload = json.dumps([template, list(candidates)], ensure_ascii=False)
        key = self._key("score_answers", text_digest(payload))
        return self.cache.get_or_compute(key, lambda: [float(s) for s in self.inner.score_answers(template, candidates)])


def cached_backends(backends: Backends, cache: FileCache) -> Backends:
    wrap = lambda cls, b: None if b is None else cls(b, cache)  # noqa: E731
    return Backends(
        joint=wrap(CachedJointEmbedder, backends.joint),
        sentence=wrap(CachedSentenceEmbedder, backends.sentence),
        captioner=wrap(CachedCaptioner, backends.captioner),
        detector=wrap(CachedDetector, backends.detector),
        answer_scorer=wrap(CachedAnswerScorer, backends.answer_scorer),
        converter=backends.converter,
    )
