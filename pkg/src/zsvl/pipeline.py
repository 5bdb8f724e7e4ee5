"""Orchestration: load samples, build cached backends, run, ablate and sweep.

Every file written here is named after the run-config digest, so changing
any result-affecting setting writes new files instead of replacing old ones.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import datasets
from .answer_filter import AnswerVocabulary
from .backends import Backends
from .cache import FileCache, _atomic_write, cached_backends
from .config import RunConfig
from .core import Prediction, Sample, Toggles, read_samples
from .errors import InputError
from .inference import (
    entailment_scores,
    infer_entailment,
    infer_vcr,
    infer_vqa,
    resolve_caption,
    resolve_objects,
)
from .metrics import REPORT_COLUMNS, Report, digest, evaluate

log = logging.getLogger(__name__)

ABLATION_PRESETS: dict[str, dict] = {
    "baseline": {"use_regions": False, "use_question_prior": False, "use_caption_prior": False},
    "question": {"use_regions": False, "use_question_prior": True, "use_caption_prior": False},
    "region": {"use_regions": True, "use_question_prior": False, "use_caption_prior": False},
    "caption": {"use_regions": False, "use_question_prior": False, "use_caption_prior": True},
    "all": {"use_regions": True, "use_question_prior": True, "use_caption_prior": True},
    "region_gt": {"use_regions": True, "use_question_prior": False, "use_caption_prior": False,
                  "use_provided_boxes": True},
    "caption_gt": {"use_regions": False, "use_question_prior": False, "use_caption_prior": True,
                   "use_provided_caption": True},
    "all_gt": {"use_regions": True, "use_question_prior": True, "use_caption_prior": True,
               "use_provided_caption": True, "use_provided_boxes": True},
    "text_only": {"use_global": False, "use_regions": False, "use_question_prior": True,
                  "use_caption_prior": True},
    "text_only_gt": {"use_global": False, "use_regions": False, "use_question_prior": True,
                     "use_caption_prior": True, "use_provided_caption": True},
}
DEFAULT_ABLATION = ("baseline", "question", "region", "caption", "all")


# ---------------------------------------------------------------------------
# inputs


def _join_root(sample: Sample, root: str) -> Sample:
    if not root or os.path.isabs(sample.image_ref):
        return sample
    return dataclasses.replace(sample, image_ref=os.path.join(root, sample.image_ref))


def load_samples(config: RunConfig) -> list[Sample]:
    """Samples for the configured task, from canonical JSONL or a native layout."""
    data = config.data
    root = data.get("image_root") or ""
    if data.get("samples"):
        samples = [_join_root(s, root) for s in read_samples(data["samples"])]
    elif config.family == "vqa" and data.get("vqa_questions"):
        samples = datasets.load_vqa(data["vqa_questions"], data["vqa_annotations"],
                                    data.get("coco_captions"), image_root=root,
                                    image_pattern=data.get("image_pattern", datasets.COCO_VAL_PATTERN))
    elif config.family == "ve" and data.get("snli_ve"):
        samples = datasets.load_snli_ve(data["snli_ve"], data.get("flickr_captions"), image_root=root)
    elif config.family == "vcr" and data.get("vcr"):
        samples = datasets.load_vcr(data["vcr"], image_root=root)
    else:
        raise InputError(f"config gives no sample source for task {config.task!r} "
                         "(set data.samples or the native dataset paths)")
    kinds = set(config.kinds)
    samples = [s for s in samples if s.task in kinds]
    limit = data.get("limit")
    if limit is not None:
        samples = samples[: int(limit)]
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate sample ids in input")
    return samples


def load_vocab(config: RunConfig) -> AnswerVocabulary | None:
    path = config.data.get("vocab")
    return AnswerVocabulary.load(path) if path else None


def open_cache(config: RunConfig) -> FileCache:
    return FileCache(config.cache_dir)


def build_backends(config: RunConfig, cache: FileCache | None = None) -> Backends:
    raw = Backends.from_configs(config.backends)
    return cached_backends(raw, cache) if cache is not None else raw


def check_ready(config: RunConfig, backends: Backends, samples: Sequence[Sample],
                vocab: AnswerVocabulary | None) -> None:
    """Fail before any work if the toggles ask for a role nobody provides."""
    t, problems = config.toggles, []
    if t.use_regions and config.weights.n_regions > 0 and not t.use_provided_boxes and backends.detector is None:
        problems.append("regions are on but no detector backend is configured (or set use_provided_boxes)")
    if t.use_caption_prior and not t.use_provided_caption and backends.captioner is None:
        problems.append("caption prior is on but no captioner backend is configured")
    if config.family == "vqa":
        if t.use_answer_filter and backends.answer_scorer is None:
            problems.append("answer filtering is on but no answer_scorer backend is configured")
        if vocab is None and any(not s.candidates for s in samples):
            problems.append("VQA samples without candidates need data.vocab")
    if problems:
        raise InputError("; ".join(problems))


# ---------------------------------------------------------------------------
# run


@dataclass
class RunResult:
    config_digest: str
    predictions: list[Prediction]
    report: Report
    failures: dict[str, str] = field(default_factory=dict)
    predictions_path: Path | None = None
    report_path: Path | None = None
    producer_calls: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures


def _map_samples(fn: Callable[[Sample], object], samples: Sequence[Sample], workers: int):
    """Apply ``fn`` with a bounded pool; returns ``(results, failures)`` in input order."""

    def guarded(s: Sample):
        try:
            return fn(s), None
        except Exception as exc:  # skipped and reported, never aborts the run
            log.warning("sample %s failed: %s", s.id, exc)
            return None, f"{type(exc).__name__}: {exc}"

    if workers <= 1 or len(samples) <= 1:
        outcomes = [guarded(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(guarded, samples))
    results, failures = [], {}
    for s, (value, err) in zip(samples, outcomes):
        if err is None:
            results.append(value)
        else:
            failures[s.id] = err
    return results, failures


def predict(config: RunConfig, samples: Sequence[Sample], backends: Backends,
            vocab: AnswerVocabulary | None) -> tuple[list[Prediction], dict[str, str], dict]:
    """Predictions, per-sample failures and task-specific extras (centroids for VE)."""
    weights, toggles = config.weights, config.toggles
    if config.family == "vqa":
        fn = lambda s: infer_vqa(s, weights, backends, vocab, toggles, top_k=config.top_k_for(s.task))  # noqa: E731
        preds, failures = _map_samples(fn, samples, config.workers)
        return preds, failures, {}
    if config.family == "vcr":
        preds, failures = _map_samples(lambda s: infer_vcr(s, weights, backends, toggles), samples, config.workers)
        return preds, failures, {}
    scores, failures = _map_samples(lambda s: entailment_scores(s, weights, backends, toggles),
                                    samples, config.workers)
    # clustering needs every score, so it runs only after the pool drains
    preds, clip_c, cap_c = infer_entailment([], weights, backends, toggles, config.clip_centroids,
                                            config.caption_centroids, scores=scores)
    return preds, failures, {"centroids": {"clip": clip_c.as_dict(), "caption": cap_c.as_dict()}}


def _report(config: RunConfig, preds: Sequence[Prediction], samples: Sequence[Sample],
            failures: dict, extra: dict) -> Report:
    kept = {p.sample_id for p in preds}
    scored = [s for s in samples if s.id in kept and s.reference is not None]
    weights = {**config.weights.to_dict(), "top_k_by_type": dict(config.top_k)}
    if scored:
        ids = {s.id for s in scored}
        report = evaluate([p for p in preds if p.sample_id in ids], scored, config.digest(), weights)
    else:
        report = Report(config.family, {}, {}, config.digest(), weights)
    report.extra = {
        **extra,
        "config": config.resolved(),
        "failures": dict(sorted(failures.items())),
        "n_samples": len(samples),
        "n_predictions": len(preds),
        "toggles": config.toggles.to_dict(),
    }
    return report


def output_paths(config: RunConfig) -> tuple[Path, Path]:
    out = Path(config.out_dir)
    d = config.digest()
    return out / f"predictions-{d}.jsonl", out / f"report-{d}.json"


def write_outputs(config: RunConfig, preds: Sequence[Prediction], report: Report) -> tuple[Path, Path]:
    pred_path, report_path = output_paths(config)
    pred_path.parent.mkdir(parents=True, exist_ok=True)
    d = config.digest()
    weights = config.weights.to_dict()
    lines = [json.dumps({**p.to_dict(), "config_digest": d, "weights": weights}, sort_keys=True, ensure_ascii=False)
             for p in preds]
    _atomic_write(pred_path, "".join(line + "\n" for line in lines))
    _atomic_write(report_path, report.to_json())
    return pred_path, report_path


def run(config: RunConfig, backends: Backends | None = None, cache: FileCache | None = None,
        write: bool = True) -> RunResult:
    config.check_paths()
    samples = load_samples(config)
    vocab = load_vocab(config)
    if backends is None:
        cache = cache or open_cache(config)
        backends = build_backends(config, cache)
    check_ready(config, backends, samples, vocab)
    before = cache.producer_calls if cache else 0
    preds, failures, extra = predict(config, samples, backends, vocab)
    report = _report(config, preds, samples, failures, extra)
    result = RunResult(config.digest(), preds, report, failures,
                       producer_calls=(cache.producer_calls - before) if cache else 0)
    if write:
        result.predictions_path, result.report_path = write_outputs(config, preds, report)
    return result


def read_predictions(path) -> list[Prediction]:
    out = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(Prediction.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise InputError(f"{path}:{n}: bad prediction record ({exc})") from exc
    return out


def evaluate_file(config: RunConfig, predictions_path) -> Report:
    """Re-score an existing predictions file against the configured samples."""
    preds = read_predictions(predictions_path)
    samples = load_samples(config)
    ids = {p.sample_id for p in preds}
    # samples that failed at run time have no prediction and were never scored
    scored = [s for s in samples if s.id in ids and s.reference is not None]
    weights = {**config.weights.to_dict(), "top_k_by_type": dict(config.top_k)}
    return evaluate([p for p in preds if p.sample_id in {s.id for s in scored}], scored, config.digest(), weights)


# ---------------------------------------------------------------------------
# precompute


def precompute(config: RunConfig, backends: Backends | None = None, cache: FileCache | None = None) -> dict:
    """Warm the cache with everything ``run`` will ask the backends for.

    Captions, detections and global image embeddings are fetched per sample,
    then the scoring pass fills text embeddings and answer scores. Re-running
    is free: every value is already cached.
    """
    config.check_paths()
    samples = load_samples(config)
    vocab = load_vocab(config)
    cache = cache or open_cache(config)
    if backends is None:
        backends = build_backends(config, cache)
    check_ready(config, backends, samples, vocab)
    t = config.toggles
    before = dict(cache.writes_by_op)

    def warm(s: Sample):
        if t.use_caption_prior and not t.use_provided_caption:
            resolve_caption(s, backends, t)
        if t.use_regions and config.weights.n_regions > 0 and not t.use_provided_boxes:
            resolve_objects(s, backends, t)
        if t.use_global:
            backends.joint.embed_image(s.image_ref)
        if config.family == "vqa":
            infer_vqa(s, config.weights, backends, vocab, t, top_k=config.top_k_for(s.task))
        elif config.family == "vcr":
            infer_vcr(s, config.weights, backends, t)
        else:
            entailment_scores(s, config.weights, backends, t)

    _, failures = _map_samples(warm, samples, config.workers)
    written = {op: n - before.get(op, 0) for op, n in sorted(cache.writes_by_op.items())
               if n - before.get(op, 0)}
    return {
        "samples": len(samples),
        "records_written": written,
        "producer_calls": sum(written.values()),
        "failed": sorted(failures),
        "failures": failures,
    }


# ---------------------------------------------------------------------------
# ablation and region sweep


def _toggle_set(item) -> tuple[str, dict]:
    if isinstance(item, str):
        if item not in ABLATION_PRESETS:
            raise InputError(f"unknown ablation preset {item!r}; known: {sorted(ABLATION_PRESETS)}")
        return item, ABLATION_PRESETS[item]
    item = dict(item)
    name = str(item.pop("name", None) or digest(item))
    unknown = set(item) - set(Toggles().to_dict())
    if unknown:
        raise InputError(f"unknown toggles in set {name!r}: {sorted(unknown)}")
    return name, item


def _variant(config: RunConfig, toggles: dict) -> RunConfig:
    """Config with presence toggles fully specified, so names map to exact settings."""
    base = {"use_global": True, "use_provided_caption": False, "use_provided_boxes": False}
    return config.replace(toggles={**base, **toggles})


@dataclass
class AblationResult:
    rows: list[tuple[str, Report]]
    table: str
    table_path: Path | None = None
    failures: dict[str, dict] = field(default_factory=dict)


def ablation_table(family: str, rows: Sequence[tuple[str, Report]]) -> str:
    cols = list(REPORT_COLUMNS[family])
    lines = ["| Setting | " + " | ".join(cols) + " | n |",
             "|---|" + "|".join("---:" for _ in cols) + "|---:|"]
    for name, rep in rows:
        vals = [f"{rep.scores[c]:.2f}" if c in rep.scores else "-" for c in cols]
        n = rep.extra.get("n_predictions", sum(rep.counts.values()))
        lines.append(f"| {name} | " + " | ".join(vals) + f" | {n} |")
    return "\n".join(lines) + "\n"


def ablate(config: RunConfig, toggle_sets: Iterable = DEFAULT_ABLATION, backends: Backends | None = None,
           cache: FileCache | None = None, write: bool = True) -> AblationResult:
    sets = [_toggle_set(t) for t in toggle_sets]
    if not sets:
        raise InputError("ablate needs at least one toggle set")
    cache = cache or open_cache(config)
    backends = backends or build_backends(config, cache)
    rows, failures = [], {}
    for name, toggles in sets:
        res = run(_variant(config, toggles), backends=backends, cache=cache, write=write)
        rows.append((name, res.report))
        if res.failures:
            failures[name] = res.failures
    table = ablation_table(config.family, rows)
    result = AblationResult(rows, table, failures=failures)
    if write:
        d = digest([config.digest(), [[n, t] for n, t in sets]])
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.table_path = out / f"ablation-{d}.md"
        _atomic_write(result.table_path, table)
        payload = {"config_digest": config.digest(), "sets": {n: t for n, t in sets},
                   "reports": [[n, r.to_dict()] for n, r in rows]}
        _atomic_write(out / f"ablation-{d}.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return result


@dataclass
class SweepResult:
    rows: list[tuple[int, Report]]
    csv: str
    csv_path: Path | None = None
    failures: dict[int, dict] = field(default_factory=dict)


def region_sweep(config: RunConfig, n_values: Sequence[int], backends: Backends | None = None,
                 cache: FileCache | None = None, write: bool = True) -> SweepResult:
    """One run per region count; cached region embeddings are shared across runs."""
    n_values = [int(n) for n in n_values]
    if not n_values or any(n < 0 for n in n_values):
        raise InputError(f"n_values must be non-empty and non-negative, got {n_values}")
    cache = cache or open_cache(config)
    backends = backends or build_backends(config, cache)
    cols = list(REPORT_COLUMNS[config.family])
    rows, failures = [], {}
    lines = ["n_regions," + ",".join(cols)]
    for n in n_values:
        res = run(config.replace(weights={"n_regions": n}), backends=backends, cache=cache, write=write)
        rows.append((n, res.report))
        if res.failures:
            failures[n] = res.failures
        lines.append(f"{n}," + ",".join(repr(res.report.scores.get(c, float("nan"))) for c in cols))
    text = "\n".join(lines) + "\n"
    result = SweepResult(rows, text, failures=failures)
    if write:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.csv_path = out / f"region-sweep-{digest([config.digest(), n_values])}.csv"
        _atomic_write(result.csv_path, text)
    return result
