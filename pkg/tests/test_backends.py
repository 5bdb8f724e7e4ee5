import json
import math
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from zsvl import images
from zsvl.backends import (
    AnswerScorer,
    BackendConfig,
    Backends,
    Captioner,
    Detector,
    JointEmbedder,
    SentenceEmbedder,
    alignment_score,
    build_backend,
    cosine,
    serialize_if_needed,
)
from zsvl.backends.stub import (
    PrecomputedCaptioner,
    PrecomputedDetector,
    StubAnswerScorer,
    StubCaptioner,
    StubDetector,
    StubJointEmbedder,
    StubSentenceEmbedder,
    expand,
    hash64,
)
from zsvl.core import DetectedObject
from zsvl.errors import ContractError, InputError


def test_alignment_examples():
    v = np.array([1.0, 1.0])
    assert alignment_score(v, v) == 2.0
    assert alignment_score([1, 0], [0, 1]) == 0.0
    assert alignment_score([1, 2], [3, 4]) == 11.0
    with pytest.raises(ContractError):
        alignment_score([1, 2], [1, 2, 3])


def test_cosine_examples():
    v = np.array([0.3, -2.0, 5.0])
    assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([1, 1], [1, 0]) == pytest.approx(0.7071, abs=1e-4)
    assert cosine([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    with pytest.raises(ContractError):
        cosine([0, 0], [1, 0])


@given(st.integers(1, 12).flatmap(lambda n: st.tuples(*[st.lists(st.floats(-1e3, 1e3), min_size=n, max_size=n)] * 2)))
def test_symmetry_and_range(pair):
    a, b = np.array(pair[0]), np.array(pair[1])
    assert abs(alignment_score(a, b) - alignment_score(b, a)) <= 1e-9 * max(1.0, abs(alignment_score(a, b)))
    if np.linalg.norm(a) > 1e-6 and np.linalg.norm(b) > 1e-6:
        c = cosine(a, b)
        assert abs(c - cosine(b, a)) <= 1e-9
        assert -1 - 1e-9 <= c <= 1 + 1e-9


def test_joint_stub_determinism_and_shape(png):
    a, b = png(seed=1), png(seed=2)
    j = StubJointEmbedder(dim=16)
    va = j.embed_image(a)
    assert va.shape == (16,)
    assert np.array_equal(va, j.embed_image(a))
    assert cosine(va, j.embed_image(b)) < 1
    # seeded by the content hash, independent of the file name
    assert np.array_equal(va, expand(0, hash64("image\0" + images.content_digest(a)), 16))
    assert np.array_equal(j.embed_text("a dog"), j.embed_text("a dog"))
    assert np.array_equal(j.embed_text("x"), expand(0, hash64("text\0x"), 16))
    assert j.embed_text("x").shape == va.shape
    with pytest.raises(InputError):
        j.embed_text("  ")


def test_joint_stub_same_pixels_same_vector(tmp_path, png):
    src = png(seed=5)
    copy = tmp_path / "copy.png"
    Image.open(src).save(copy)
    j = StubJointEmbedder()
    assert np.array_equal(j.embed_image(src), j.embed_image(str(copy)))


def test_joint_stub_normalize_and_canned(png):
    img = png()
    j = StubJointEmbedder(dim=3, normalize=True, text_vectors={"hi": [3, 0, 4]})
    assert np.linalg.norm(j.embed_image(img)) == pytest.approx(1.0)
    assert j.embed_text("hi").tolist() == [0.6, 0.0, 0.8]


def test_unreadable_image_is_input_error(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    with pytest.raises(InputError, match="bad.png"):
        StubJointEmbedder().embed_image(str(bad))
    with pytest.raises(InputError):
        StubCaptioner().caption(str(tmp_path / "missing.png"))
    with pytest.raises(InputError):
        StubDetector().detect(str(tmp_path / "missing.png"))


def test_sentence_stub():
    s = StubSentenceEmbedder(dim=8)
    v = s.sentence_embed("a red car")
    assert v.shape == (8,)
    assert np.array_equal(v, s.sentence_embed("a red car"))
    assert np.linalg.norm(s.sentence_embed("?!")) > 0
    with pytest.raises(InputError):
        s.sentence_embed("")
    # shared words give related vectors
    assert cosine(v, s.sentence_embed("red car")) > 0.5


@given(st.text(min_size=1, max_size=30).filter(str.strip))
def test_sentence_stub_never_zero(text):
    assert np.linalg.norm(StubSentenceEmbedder(dim=8).sentence_embed(text)) > 0


def test_captioner_stub(png, tmp_path):
    img = png()
    digest = images.content_digest(img)
    c = StubCaptioner(captions={digest: "a pizza on a table"})
    assert c.caption(img) == "a pizza on a table"
    assert c.caption(png()) == "an image"
    fixture = tmp_path / "fx.json"
    fixture.write_text(json.dumps({"captions": {digest: "from file"}}))
    assert PrecomputedCaptioner(str(fixture)).caption(img) == "from file"
    with pytest.raises(InputError):
        PrecomputedCaptioner(str(fixture)).caption(png())


def test_detector_stub(png, tmp_path):
    img = png(10, 10)
    canned = [DetectedObject((1, 1, 3, 3), "dog", "brown", 0.9), DetectedObject((5, 5, 20, 20), "cat")]
    d = StubDetector(detections={images.content_digest(img): canned})
    out = d.detect(img)
    assert out[0] == canned[0]
    assert out[1].box == (5, 5, 5, 5)  # clamped to the image
    assert StubDetector().detect(png()) == []
    synth = StubDetector(synthesize=4, seed=3)
    objs = synth.detect(img)
    assert len(objs) == 4 and objs == synth.detect(img)
    for o in objs:
        x, y, w, h = o.box
        assert x >= 0 and y >= 0 and x + w <= 10 + 1e-9 and y + h <= 10 + 1e-9
    fixture = tmp_path / "det.json"
    fixture.write_text(json.dumps({"detections": {images.content_digest(img): [canned[0].to_dict()]}}))
    assert PrecomputedDetector(str(fixture)).detect(img) == [canned[0]]
    with pytest.raises(InputError):
        PrecomputedDetector(str(fixture)).detect(png())


def test_answer_scorer_stub():
    s = StubAnswerScorer(scores={"a": 0.1, "b": 0.9, "c": 0.4})
    assert s.score_answers("It is <slot>", ["a", "b", "c"]) == [0.1, 0.9, 0.4]
    assert len(s.score_answers("It is <slot>", ["zzz"])) == 1
    with pytest.raises(ContractError):
        s.score_answers("no slot here", ["a"])
    with pytest.raises(ContractError):
        s.score_answers("<slot> and <slot>", ["a"])


@given(st.lists(st.text(min_size=1, max_size=8), min_size=1, max_size=8, unique=True), st.randoms())
def test_answer_scorer_permutation(cands, rnd):
    s = StubAnswerScorer(seed=7)
    perm = list(cands)
    rnd.shuffle(perm)
    base = dict(zip(cands, s.score_answers("The <slot> is here", cands)))
    again = s.score_answers("The <slot> is here", perm)
    assert again == [base[c] for c in perm]
    assert all(math.isfinite(v) for v in again)


def test_stubs_satisfy_protocols():
    b = Backends.stub()
    assert isinstance(b.joint, JointEmbedder)
    assert isinstance(b.sentence, SentenceEmbedder)
    assert isinstance(b.captioner, Captioner)
    assert isinstance(b.detector, Detector)
    assert isinstance(b.answer_scorer, AnswerScorer)


def test_registry_builds_from_config():
    j = build_backend(BackendConfig("joint_embedder", "stub", {"dim": 8, "seed": 2}))
    assert j.dim == 8 and j.seed == 2
    with pytest.raises(ContractError):
        BackendConfig("painter", "stub")
    with pytest.raises(ContractError):
        BackendConfig("captioner", "")
    with pytest.raises(ContractError, match="known"):
        build_backend(BackendConfig("captioner", "nope"))


def test_distinct_versions_for_distinct_settings():
    assert StubJointEmbedder(seed=1).version != StubJointEmbedder(seed=2).version
    assert StubSentenceEmbedder(dim=8).version != StubSentenceEmbedder(dim=16).version


def test_serial_backends_are_locked():
    class Probe:
        serial = True
        impl_id, version = "probe", "1"

        def __init__(self):
            self.active = 0
            self.peak = 0

        def caption(self, ref):
            self.active += 1
            self.peak = max(self.peak, self.active)
            threading.Event().wait(0.002)
            self.active -= 1
            return "x"

    probe = Probe()
    wrapped = serialize_if_needed(probe)
    threads = [threading.Thread(target=wrapped.caption, args=("a",)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert probe.peak == 1
    assert wrapped.version == "1"

    cfg = {"joint_embedder": BackendConfig("joint_embedder", "stub", {"serial": True}),
           "sentence_embedder": BackendConfig("sentence_embedder", "stub")}
    b = Backends.from_configs(cfg)
    assert type(b.joint).__name__ == "_Serialized"
    assert b.captioner is None


def test_from_configs_needs_core_roles():
    with pytest.raises(ContractError):
        Backends.from_configs({"captioner": BackendConfig("captioner", "stub")})


# --- images ---------------------------------------------------------------

def test_crop_region_examples(png):
    img = png(10, 10)
    full = images.load_image(img)
    assert images.crop_region(img, (0, 0, 10, 10)) == img
    ref = images.crop_region(img, (2, 2, 4, 4))
    crop = images.load_image(ref)
    assert crop.size == (4, 4)
    assert crop.tobytes() == full.crop((2, 2, 6, 6)).tobytes()
    half = images.crop_region(img, (6, -3, 10, 6))
    assert images.parse_ref(half)[1] == (6, 0, 4, 3)
    with pytest.raises(InputError):
        images.crop_region(img, (20, 20, 3, 3))


def test_nested_crop_composes(png):
    img = png(12, 12)
    outer = images.crop_region(img, (2, 3, 8, 8))
    inner = images.crop_region(outer, (1, 1, 2, 2))
    assert images.parse_ref(inner)[1] == (3, 4, 2, 2)
    assert images.load_image(inner).tobytes() == images.load_image(img).crop((3, 4, 5, 6)).tobytes()


def test_pixel_box_rounds_outward():
    assert images.pixel_box((1.4, 1.6, 2.2, 2.2), 10, 10) == (1, 1, 3, 3)
