"""Model-role interfaces, the shared vector math, and the backend registry.

Five roles are reached only through these protocols:

* joint embedder: ``embed_image`` / ``embed_text`` into one contrastive space
* sentence embedder: ``sentence_embed`` for cosine priors
* captioner: ``caption``
* detector: ``detect``
* answer scorer: ``score_answers`` over a slotted declarative template

Deterministic stubs live in :mod:`zsvl.backends.stub`; adapters around real
pretrained models in :mod:`zsvl.backends.hf` (imported lazily).
"""

from __future__ import annotations

import importlib
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from ..core import DetectedObject
from ..errors import ContractError

ROLES = ("joint_embedder", "sentence_embedder", "captioner", "detector", "answer_scorer")


@runtime_checkable
class JointEmbedder(Protocol):
    impl_id: str
    version: str
    dim: int
    normalized: bool

    def embed_image(self, image_ref: str) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...


@runtime_checkable
class SentenceEmbedder(Protocol):
    impl_id: str
    version: str
    dim: int

    def sentence_embed(self, text: str) -> np.ndarray: ...


@runtime_checkable
class Captioner(Protocol):
    impl_id: str
    version: str

    def caption(self, image_ref: str) -> str: ...


@runtime_checkable
class Detector(Protocol):
    impl_id: str
    version: str

    def detect(self, image_ref: str) -> list[DetectedObject]: ...


@runtime_checkable
class AnswerScorer(Protocol):
    impl_id: str
    version: str

    def score_answers(self, template: str, candidates: Sequence[str]) -> list[float]: ...


def alignment_score(v_img, v_text) -> float:
    """Inner product of an image and a text vector from the same joint space."""
    a = np.asarray(v_img, dtype=np.float64)
    b = np.asarray(v_text, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError(f"alignment_score needs equal 1-D shapes, got {a.shape} and {b.shape}")
    return float(np.dot(a, b))


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError(f"cosine needs equal 1-D shapes, got {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ContractError("cosine is undefined for a zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def dot_rows(rows, v) -> np.ndarray:
    """``rows @ v`` computed one row at a time.

    A matrix product may round differently depending on which rows share a
    batch; per-row dots make every score independent of its neighbours.
    """
    v = np.asarray(v, dtype=np.float64)
    m = np.asarray(rows, dtype=np.float64).reshape(-1, v.shape[0])
    return np.array([float(np.dot(r, v)) for r in m], dtype=np.float64)


def cosine_rows(query, rows) -> np.ndarray:
    """Cosine of ``query`` against every row of ``rows``."""
    q = np.asarray(query, dtype=np.float64)
    m = np.asarray(rows, dtype=np.float64).reshape(-1, q.shape[0])
    return np.array([cosine(r, q) for r in m], dtype=np.float64)


@dataclass(frozen=True)
class BackendConfig:
    role: str
    impl: str
    settings: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ContractError(f"unknown backend role {self.role!r}; expected one of {ROLES}")
        if not self.impl:
            raise ContractError(f"backend for {self.role} needs an implementation id")


# role -> impl id -> "module:factory"
_REGISTRY: dict[str, dict[str, str]] = {
    "joint_embedder": {
        "stub": "zsvl.backends.stub:StubJointEmbedder",
        "hf-clip": "zsvl.backends.hf:ClipJointEmbedder",
    },
    "sentence_embedder": {
        "stub": "zsvl.backends.stub:StubSentenceEmbedder",
        "sentence-transformers": "zsvl.backends.hf:SentenceTransformerEmbedder",
    },
    "captioner": {
        "stub": "zsvl.backends.stub:StubCaptioner",
        "precomputed": "zsvl.backends.stub:PrecomputedCaptioner",
        "hf-captioner": "zsvl.backends.hf:ImageToTextCaptioner",
    },
    "detector": {
        "stub": "zsvl.backends.stub:StubDetector",
        "precomputed": "zsvl.backends.stub:PrecomputedDetector",
    },
    "answer_scorer": {
        "stub": "zsvl.backends.stub:StubAnswerScorer",
        "hf-t5": "zsvl.backends.hf:T5AnswerScorer",
    },
}


# consumed here, never forwarded to factories
_PIPELINE_SETTINGS = frozenset({"serial", "use_for_conversion"})


def register(role: str, impl: str, target: str) -> None:
    """Make ``module:attr`` buildable as ``impl`` for ``role``."""
    if role not in ROLES:
        raise ContractError(f"unknown backend role {role!r}")
    _REGISTRY[role][impl] = target


def build_backend(config: BackendConfig) -> Any:
    try:
        target = _REGISTRY[config.role][config.impl]
    except KeyError:
        known = sorted(_REGISTRY.get(config.role, {}))
        raise ContractError(f"no {config.role} implementation {config.impl!r}; known: {known}") from None
    module_name, attr = target.split(":")
    factory = getattr(importlib.import_module(module_name), attr)
    settings = {k: v for k, v in config.settings.items() if k not in _PIPELINE_SETTINGS}
    backend = factory(**settings)
    if config.settings.get("serial"):
        backend.serial = True
    return backend


class _Serialized:
    """Proxy that funnels every method call through one lock."""

    def __init__(self, inner):
        self._inner = inner
        self._lock = threading.Lock()

    def __getattr__(self, name):
        attr = getattr(self._inner, name)
        if not callable(attr):
            return attr

        def call(*args, **kwargs):
            with self._lock:
                return attr(*args, **kwargs)

        return call


def serialize_if_needed(backend):
    return _Serialized(backend) if getattr(backend, "serial", False) else backend


@dataclass
class Backends:
    joint: JointEmbedder
    sentence: SentenceEmbedder
    captioner: Captioner | None = None
    detector: Detector | None = None
    answer_scorer: AnswerScorer | None = None
    converter: Callable[[str], str] | None = None

    @classmethod
    def from_configs(cls, configs: dict[str, BackendConfig]) -> "Backends":
        built = {role: serialize_if_needed(build_backend(cfg)) for role, cfg in configs.items()}
        missing = [r for r in ("joint_embedder", "sentence_embedder") if r not in built]
        if missing:
            raise ContractError(f"backend configuration lacks required roles {missing}")
        scorer = built.get("answer_scorer")
        converter = None
        if scorer is not None and configs["answer_scorer"].settings.get("use_for_conversion"):
            converter = getattr(scorer, "convert", None)
        return cls(
            joint=built["joint_embedder"],
            sentence=built["sentence_embedder"],
            captioner=built.get("captioner"),
            detector=built.get("detector"),
            answer_scorer=scorer,
            converter=converter,
        )

    @classmethod
    def stub(cls, **overrides) -> "Backends":
        from . import stub

        parts = dict(
            joint=stub.StubJointEmbedder(),
            sentence=stub.StubSentenceEmbedder(),
            captioner=stub.StubCaptioner(),
            detector=stub.StubDetector(),
            answer_scorer=stub.StubAnswerScorer(),
        )
        parts.update(overrides)
        return cls(**parts)
