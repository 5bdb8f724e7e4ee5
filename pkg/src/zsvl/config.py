"""Run configuration: YAML documents layered over packaged per-task defaults.

A config has flat sections mirroring :class:`RunConfig`::

    task: vqa                  # vqa | vcr-q2a | vcr-qa2r | vcr | ve
    data: {samples: ..., image_root: ..., vocab: ...}
    backends: {joint_embedder: {impl: stub, dim: 16}, ...}
    weights: {k1: 1.0, k2: 1.0, k3: 1.0, n_regions: 5}
    top_k: {yes/no: 2, number: 4, other: 10}
    toggles: {use_regions: true, ...}
    centroids: {clip: clip-b16, caption: [0.22, 0.34, 0.43]}
    cache_dir: .zsvl-cache
    out_dir: out
    seed: 0
    workers: 4
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import yaml

from .backends import ROLES, BackendConfig
from .core import VQA_ANSWER_TYPES, CentroidSet, FusionWeights, TaskKind, Toggles
from .errors import ContractError, InputError
from .metrics import digest

TASK_CHOICES = ("vqa", "vcr", "vcr-q2a", "vcr-qa2r", "ve")

TASK_KINDS = {
    "vqa": (TaskKind.VQA_YESNO, TaskKind.VQA_NUMBER, TaskKind.VQA_OTHER),
    "vcr": (TaskKind.VCR_Q2A, TaskKind.VCR_QA2R),
    "vcr-q2a": (TaskKind.VCR_Q2A,),
    "vcr-qa2r": (TaskKind.VCR_QA2R,),
    "ve": (TaskKind.SNLI_VE,),
}

_DEFAULT_FILES = {"vqa": "vqa.yaml", "ve": "ve.yaml", "vcr": "vcr.yaml"}

# Hand-tuned (C, N, E) centroids reported for the full SNLI-VE validation set.
# Alignment presets are tied to a joint-embedder variant, with or without regions.
TUNED_CENTROIDS = {
    "clip-b16": (0.23, 0.26, 0.27),
    "clip-b16-regions": (0.47, 0.54, 0.55),
    "clip-l14": (0.17, 0.22, 0.23),
    "clip-l14-regions": (0.37, 0.45, 0.46),
    "caption-generated": (0.22, 0.34, 0.43),
    "caption-gt": (0.29, 0.48, 0.60),
}

_DATA_PATH_KEYS = ("samples", "vocab", "vqa_questions", "vqa_annotations", "coco_captions",
                   "snli_ve", "flickr_captions", "vcr", "stub_fixture")
_ANSWER_TYPE_NAMES = {kind: name for name, kind in VQA_ANSWER_TYPES.items()}
_NON_SEMANTIC = ("cache_dir", "out_dir", "workers")


def _family(task: str) -> str:
    return "vcr" if task.startswith("vcr") else task


def default_document(task: str) -> dict:
    if task not in TASK_CHOICES:
        raise ContractError(f"unknown task {task!r}; choose from {TASK_CHOICES}")
    text = resources.files("zsvl.data").joinpath(_DEFAULT_FILES[_family(task)]).read_text(encoding="utf-8")
    doc = yaml.safe_load(text)
    doc["task"] = task
    return doc


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str) -> tuple[list[str], Any]:
    """``weights.k1=0.5`` -> (["weights", "k1"], 0.5); values are parsed as YAML scalars."""
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise InputError(f"override {item!r} is not of the form key=value")
    return key.strip().split("."), yaml.safe_load(raw) if raw.strip() else ""


def apply_overrides(doc: dict, overrides: Iterable[str]) -> dict:
    doc = copy.deepcopy(doc)
    for item in overrides:
        path, value = parse_override(item)
        node = doc
        for part in path[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[path[-1]] = value
    return doc


def _centroids(value) -> CentroidSet | None:
    if value is None:
        return None
    if isinstance(value, str):
        if value not in TUNED_CENTROIDS:
            raise InputError(f"unknown centroid preset {value!r}; known: {sorted(TUNED_CENTROIDS)}")
        value = TUNED_CENTROIDS[value]
    return CentroidSet.from_value(value)


def _resolve_path(base: Path | None, value):
    if value is None or value == "" or base is None or os.path.isabs(str(value)):
        return value
    return str(base / value)


@dataclass
class RunConfig:
    task: str
    data: dict = field(default_factory=dict)
    backends: dict[str, BackendConfig] = field(default_factory=dict)
    weights: FusionWeights = field(default_factory=FusionWeights)
    top_k: dict[str, int] = field(default_factory=dict)
    toggles: Toggles = field(default_factory=Toggles)
    clip_centroids: CentroidSet | None = None
    caption_centroids: CentroidSet | None = None
    cache_dir: str | None = None
    out_dir: str = "out"
    seed: int = 0
    workers: int = 4
    document: dict = field(default_factory=dict, repr=False)

    @property
    def family(self) -> str:
        return _family(self.task)

    @property
    def kinds(self) -> tuple[TaskKind, ...]:
        return TASK_KINDS[self.task]

    @classmethod
    def from_document(cls, doc: dict, base_dir: Path | None = None) -> "RunConfig":
        """Build from an already merged document; relative paths resolve against ``base_dir``."""
        doc = copy.deepcopy(doc)
        task = doc.get("task")
        if task not in TASK_CHOICES:
            raise InputError(f"config task must be one of {TASK_CHOICES}, got {task!r}")
        data = dict(doc.get("data") or {})
        for key in _DATA_PATH_KEYS + ("image_root",):
            if key in data:
                data[key] = _resolve_path(base_dir, data[key])
        doc["data"] = data

        backends = {}
        for role, spec in (doc.get("backends") or {}).items():
            if spec is None:
                continue
            spec = dict(spec)
            impl = spec.pop("impl", None)
            for key in ("fixture", "path"):
                if key in spec:
                    spec[key] = _resolve_path(base_dir, spec[key])
            backends[role] = BackendConfig(role, impl, spec)
            doc["backends"][role] = {"impl": impl, **spec}

        w = dict(doc.get("weights") or {})
        unknown = set(w) - {"k1", "k2", "k3", "n_regions", "top_k"}
        if unknown:
            raise InputError(f"unknown weight keys {sorted(unknown)}")
        weights = FusionWeights(**w)

        t = dict(doc.get("toggles") or {})
        unknown = set(t) - set(Toggles().to_dict())
        if unknown:
            raise InputError(f"unknown toggles {sorted(unknown)}")
        toggles = Toggles(**{k: bool(v) for k, v in t.items()})
        if toggles.use_answer_filter and _family(task) != "vqa":
            raise InputError("use_answer_filter only applies to VQA; set toggles.use_answer_filter=false")

        top_k = {str(k): int(v) for k, v in (doc.get("top_k") or {}).items()}
        if any(v < 1 for v in top_k.values()):
            raise InputError(f"top_k values must be >= 1, got {top_k}")

        cents = doc.get("centroids") or {}
        if doc.get("cache_dir"):
            doc["cache_dir"] = _resolve_path(base_dir, doc["cache_dir"])
        doc["out_dir"] = _resolve_path(base_dir, doc.get("out_dir") or "out")
        return cls(
            task=task,
            data=data,
            backends=backends,
            weights=weights,
            top_k=top_k,
            toggles=toggles,
            clip_centroids=_centroids(cents.get("clip")),
            caption_centroids=_centroids(cents.get("caption")),
            cache_dir=doc.get("cache_dir") or None,
            out_dir=doc["out_dir"],
            seed=int(doc.get("seed", 0)),
            workers=max(1, int(doc.get("workers", 4))),
            document=doc,
        )

    def replace(self, **changes) -> "RunConfig":
        """Copy with sections overridden, e.g. ``replace(toggles={...}, weights={...})``."""
        doc = merge(self.document, changes)
        return RunConfig.from_document(doc)

    def resolved(self) -> dict:
        return copy.deepcopy(self.document)

    def digest(self) -> str:
        """Identity of everything that affects results; cache/output locations excluded."""
        doc = {k: v for k, v in self.document.items() if k not in _NON_SEMANTIC}
        return digest(doc)

    def top_k_for(self, kind: TaskKind) -> int:
        for key in (_ANSWER_TYPE_NAMES.get(kind), kind.value):
            if key in self.top_k:
                return self.top_k[key]
        return self.weights.top_k

    def check_paths(self) -> None:
        missing = [f"data.{k}={self.data[k]}" for k in _DATA_PATH_KEYS
                   if self.data.get(k) and not os.path.exists(self.data[k])]
        for role, b in self.backends.items():
            for key in ("fixture", "path"):
                p = b.settings.get(key)
                if p and not os.path.exists(p):
                    missing.append(f"backends.{role}.{key}={p}")
        if missing:
            raise InputError("config references missing paths: " + ", ".join(missing))

    def with_stub_backends(self) -> "RunConfig":
        """Swap every role to the stub implementation, keeping any stub fixture."""
        fixture = self.data.get("stub_fixture")
        stubs = {}
        for role in ROLES:
            spec: dict = {"impl": "stub"}
            cur = self.document.get("backends", {}).get(role) or {}
            if cur.get("impl") == "stub":
                spec = dict(cur)
            elif fixture:
                spec["fixture"] = fixture
            stubs[role] = spec
        doc = copy.deepcopy(self.document)
        doc["backends"] = stubs
        return RunConfig.from_document(doc)


def load_config(path: str | os.PathLike | None = None, task: str | None = None,
                overrides: Iterable[str] = (), cache_dir: str | None = None,
                out_dir: str | None = None) -> RunConfig:
    """Packaged defaults for the task, then the YAML file, then ``--set`` overrides."""
    user: dict = {}
    base_dir = None
    if path is not None:
        with open(path, encoding="utf-8") as f:
            user = yaml.safe_load(f) or {}
        if not isinstance(user, dict):
            raise InputError(f"{path}: config must be a mapping")
        base_dir = Path(path).resolve().parent
    user = apply_overrides(user, overrides)
    task = task or user.get("task")
    if task is None:
        raise InputError("no task given: pass --task or set `task:` in the config")
    # overrides of --task must not keep the other family's top_k or toggles
    doc = merge(default_document(task), {k: v for k, v in user.items() if k != "task"})
    doc["task"] = task
    # a role given by the user replaces the default wholesale; settings of
    # one implementation mean nothing to another
    for role, spec in (user.get("backends") or {}).items():
        doc["backends"][role] = copy.deepcopy(spec)
    if cache_dir is not None:
        doc["cache_dir"] = str(Path(cache_dir).resolve())
    if out_dir is not None:
        doc["out_dir"] = str(Path(out_dir).resolve())
    return RunConfig.from_document(doc, base_dir)
