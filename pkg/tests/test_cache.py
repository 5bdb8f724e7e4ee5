import json
import logging
import multiprocessing as mp
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zsvl.backends import Backends
from zsvl.backends.stub import StubJointEmbedder
from zsvl.cache import CacheKey, FileCache, cached_backends, text_digest
from zsvl.core import DetectedObject

KEY = CacheKey("captioner", "stub", "v1", "caption", "abc")


def test_miss_then_hit(tmp_path):
    cache = FileCache(tmp_path)
    calls = []
    produce = lambda: calls.append(1) or "a dog"  # noqa: E731
    assert cache.get_or_compute(KEY, produce) == "a dog"
    assert cache.get_or_compute(KEY, produce) == "a dog"
    assert len(calls) == 1
    # a fresh process-level cache reads the durable record
    fresh = FileCache(tmp_path)
    assert fresh.get_or_compute(KEY, produce) == "a dog"
    assert len(calls) == 1 and fresh.producer_calls == 0 and fresh.hits == 1
    meta = json.loads(cache.path_for(KEY).with_suffix(".meta.json").read_text())
    assert meta["role"] == "captioner" and meta["version"] == "v1" and meta["op"] == "caption"


def test_key_composition():
    assert KEY.digest() == CacheKey("captioner", "stub", "v1", "caption", "abc").digest()
    variants = [CacheKey("captioner", "stub", "v2", "caption", "abc"),
                CacheKey("captioner", "hf", "v1", "caption", "abc"),
                CacheKey("detector", "stub", "v1", "caption", "abc"),
                CacheKey("captioner", "stub", "v1", "detect", "abc"),
                CacheKey("captioner", "stub", "v1", "caption", "abd")]
    assert len({KEY.digest(), *(v.digest() for v in variants)}) == 6


def test_distinct_versions_do_not_share_records(tmp_path, png):
    img = png()
    cache = FileCache(tmp_path)
    a = cached_backends(Backends.stub(joint=StubJointEmbedder(seed=1)), cache).joint.embed_image(img)
    b = cached_backends(Backends.stub(joint=StubJointEmbedder(seed=2)), cache).joint.embed_image(img)
    assert not np.array_equal(a, b)
    assert cache.producer_calls == 2


def test_corrupt_record_recomputes_with_warning(tmp_path, caplog):
    cache = FileCache(tmp_path, memory=False)
    cache.get_or_compute(KEY, lambda: [1.0, 2.0])
    cache.path_for(KEY).write_text("{truncated")
    with caplog.at_level(logging.WARNING, logger="zsvl.cache"):
        assert cache.get_or_compute(KEY, lambda: [1.0, 2.0]) == [1.0, 2.0]
    assert "corrupt" in caplog.text
    assert cache.producer_calls == 2
    assert json.loads(cache.path_for(KEY).read_text())["value"] == [1.0, 2.0]


def test_values_round_trip_exactly(tmp_path):
    cache = FileCache(tmp_path, memory=False)
    vec = np.array([0.1, 1 / 3, -2e-17])
    objs = [DetectedObject((1.5, 2, 3, 4), "dog", "brown", 0.25)]
    k1, k2 = CacheKey("j", "s", "1", "v", "1"), CacheKey("d", "s", "1", "d", "1")
    first = cache.get_or_compute(k1, lambda: vec)
    assert first.tobytes() == vec.tobytes()
    assert cache.get_or_compute(k1, lambda: None).tobytes() == vec.tobytes()
    assert cache.get_or_compute(k2, lambda: objs) == objs
    assert cache.get_or_compute(k2, lambda: None) == objs


def test_concurrent_threads_one_record(tmp_path):
    cache = FileCache(tmp_path, memory=False)
    barrier = threading.Barrier(8)
    out = []

    def worker():
        barrier.wait()
        out.append(cache.get_or_compute(KEY, lambda: "same value"))

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert out == ["same value"] * 8
    assert cache.records() == [cache.path_for(KEY)]
    assert json.loads(cache.path_for(KEY).read_text())["value"] == "same value"
    assert not list(tmp_path.glob("*/.tmp-*"))


def _proc_worker(root, barrier, queue):
    barrier.wait()
    cache = FileCache(root, memory=False)
    queue.put(cache.get_or_compute(KEY, lambda: {"caption": "a cat", "n": 3}))


def test_concurrent_processes_one_record(tmp_path):
    ctx = mp.get_context("fork")
    barrier, queue = ctx.Barrier(4), ctx.Queue()
    procs = [ctx.Process(target=_proc_worker, args=(str(tmp_path), barrier, queue)) for _ in range(4)]
    for p in procs:
        p.start()
    results = [queue.get(timeout=30) for _ in procs]
    for p in procs:
        p.join(timeout=30)
        assert p.exitcode == 0
    assert results == [{"caption": "a cat", "n": 3}] * 4
    cache = FileCache(tmp_path)
    assert cache.records() == [cache.path_for(KEY)]
    assert cache.get_or_compute(KEY, lambda: pytest.fail("should hit")) == {"caption": "a cat", "n": 3}


def test_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("ZSVL_CACHE_DIR", str(tmp_path / "envcache"))
    assert FileCache().root == tmp_path / "envcache"
    assert FileCache(tmp_path / "explicit").root == tmp_path / "explicit"


_text = st.text(min_size=1, max_size=20).filter(str.strip)


@settings(max_examples=40)
@given(st.lists(_text, min_size=1, max_size=6), st.integers(0, 3))
def test_cache_bypass_comparison(tmp_path_factory, texts, seed):
    root = tmp_path_factory.mktemp("bypass")
    plain = Backends.stub(joint=StubJointEmbedder(seed=seed))
    wrapped = cached_backends(plain, FileCache(root))
    reread = cached_backends(plain, FileCache(root))
    template = "The answer is <slot>"
    for t in texts:
        direct = plain.joint.embed_text(t)
        assert wrapped.joint.embed_text(t).tobytes() == direct.tobytes()
        assert reread.joint.embed_text(t).tobytes() == direct.tobytes()
        assert wrapped.sentence.sentence_embed(t).tobytes() == plain.sentence.sentence_embed(t).tobytes()
    assert wrapped.answer_scorer.score_answers(template, texts) == plain.answer_scorer.score_answers(template, texts)
    assert reread.answer_scorer.score_answers(template, texts) == plain.answer_scorer.score_answers(template, texts)


def test_wrapped_backends_cover_images(tmp_path, png):
    img = png(16, 16)
    plain = Backends.stub()
    wrapped = cached_backends(plain, FileCache(tmp_path))
    assert wrapped.joint.embed_image(img).tobytes() == plain.joint.embed_image(img).tobytes()
    assert wrapped.captioner.caption(img) == plain.captioner.caption(img)
    assert wrapped.detector.detect(img) == plain.detector.detect(img)
    assert wrapped.joint.dim == plain.joint.dim
    assert text_digest("a") != text_digest("b")
