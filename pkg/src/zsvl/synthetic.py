"""Small seeded datasets for smoke runs and tests under stub backends.

``make_fixture`` writes tiny PNG images, canonical sample JSONL, a VQA answer
vocabulary, a stub fixture (canned captions) and a ready-to-run config.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .core import DetectedObject, Sample, TaskKind, write_samples
from .datasets import PERSON_NAMES

CATEGORIES = ("dog", "cat", "car", "pizza", "bus", "horse", "umbrella", "kite")
ATTRIBUTES = ("red", "white", "black", "brown", "yellow", "blue")
NUMBERS = tuple(str(i) for i in range(11))
OTHER = ("frisbee", "grass", "table", "tennis", "wood", "metal", "sitting", "standing", "eating", "kitchen")
VOCAB = ("yes", "no") + NUMBERS + ("twenty", "5 feet") + ATTRIBUTES + CATEGORIES + OTHER

_KINDS = (TaskKind.VQA_YESNO, TaskKind.VQA_NUMBER, TaskKind.VQA_OTHER)


def _image(path: Path, rng: np.random.Generator) -> tuple[int, int]:
    w, h = int(rng.integers(20, 33)), int(rng.integers(20, 33))
    pixels = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    Image.fromarray(pixels, "RGB").save(path, format="PNG")
    return w, h


def _boxes(rng: np.random.Generator, w: int, h: int, categories, k: int = 3) -> tuple[DetectedObject, ...]:
    out = []
    for i in range(k):
        bw, bh = float(rng.integers(4, w // 2 + 1)), float(rng.integers(4, h // 2 + 1))
        x, y = float(rng.integers(0, w - int(bw) + 1)), float(rng.integers(0, h - int(bh) + 1))
        attr = ATTRIBUTES[int(rng.integers(len(ATTRIBUTES)))]
        out.append(DetectedObject((x, y, bw, bh), categories[i % len(categories)], attr, 1.0))
    return tuple(out)


def _humans(rng: np.random.Generator, gold: str, pool) -> tuple[str, ...]:
    """Ten annotator answers: mostly the gold answer, some noise."""
    agree = int(rng.integers(4, 11))
    noise = [str(pool[int(rng.integers(len(pool)))]) for _ in range(10 - agree)]
    return tuple([gold] * agree + noise)


def vqa_samples(rng, images) -> list[Sample]:
    out = []
    for i, (ref, w, h) in enumerate(images):
        kind = _KINDS[i % 3]
        cat = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
        attr = ATTRIBUTES[int(rng.integers(len(ATTRIBUTES)))]
        if kind is TaskKind.VQA_YESNO:
            query, gold, pool = f"Is there a {cat} in the picture?", ("yes", "no")[i % 2], ("yes", "no")
        elif kind is TaskKind.VQA_NUMBER:
            query, gold, pool = f"How many {cat}s are there?", NUMBERS[int(rng.integers(1, 6))], NUMBERS
        else:
            query, gold, pool = f"What color is the {cat}?", attr, ATTRIBUTES
        out.append(Sample(
            id=f"vqa-{i:03d}", task=kind, image_ref=ref, query=query,
            provided_caption=f"a {attr} {cat} next to a table",
            provided_boxes=_boxes(rng, w, h, (cat, "table", "person")),
            reference=_humans(rng, gold, pool),
        ))
    return out


def vcr_samples(rng, images) -> list[Sample]:
    out = []
    for i, (ref, w, h) in enumerate(images):
        a, b = PERSON_NAMES[i % len(PERSON_NAMES)], PERSON_NAMES[(i + 5) % len(PERSON_NAMES)]
        cat = CATEGORIES[i % len(CATEGORIES)]
        answers = (f"{a} is feeding the {cat}.", f"{a} is waiting for {b}.",
                   f"{b} is selling the {cat}.", f"{a} and {b} are arguing.")
        rationales = (f"{a} holds food near the {cat}.", f"{b} is looking at a watch.",
                      f"There is a price tag on the {cat}.", f"{a} is frowning at {b}.")
        gold, rgold = int(rng.integers(4)), int(rng.integers(4))
        boxes = _boxes(rng, w, h, ("person", "person", cat))
        question = f"What is {a} doing?"
        meta = {"question": question}
        out.append(Sample(f"vcr-{i:03d}-q2a", TaskKind.VCR_Q2A, ref, question, answers,
                          provided_boxes=boxes, reference=gold, metadata=meta))
        out.append(Sample(f"vcr-{i:03d}-qa2r", TaskKind.VCR_QA2R, ref, answers[gold], rationales,
                          provided_boxes=boxes, reference=rgold, metadata=meta))
    return out


def ve_samples(rng, images) -> list[Sample]:
    out = []
    for i, (ref, w, h) in enumerate(images):
        cat = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
        attr = ATTRIBUTES[int(rng.integers(len(ATTRIBUTES)))]
        label = ("C", "N", "E")[i % 3]
        hyp = {"E": f"There is a {cat}.", "N": f"The {cat} is waiting for its owner.",
               "C": "The room is completely empty."}[label]
        out.append(Sample(f"ve-{i:03d}", TaskKind.SNLI_VE, ref, hyp,
                          provided_caption=f"a {attr} {cat} in a park",
                          provided_boxes=_boxes(rng, w, h, (cat, "tree", "person")),
                          reference=label))
    return out


def make_fixture(root, task: str = "vqa", n: int = 30, seed: int = 0) -> Path:
    """Write a self-contained stub dataset under ``root``; returns the config path.

    ``n`` is the number of samples (for VCR, the number of Q2A/QA2R pairs is
    ``n // 2``).
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_images = max(1, n // 2) if task.startswith("vcr") else n
    images = []
    for i in range(n_images):
        name = f"images/img_{i:03d}.png"
        w, h = _image(root / name, rng)
        images.append((name, w, h))

    family = "vcr" if task.startswith("vcr") else task
    build = {"vqa": vqa_samples, "vcr": vcr_samples, "ve": ve_samples}[family]
    samples = build(rng, images)
    write_samples(root / "samples.jsonl", samples)
    (root / "vocab.txt").write_text("".join(a + "\n" for a in VOCAB), encoding="utf-8")

    # canned captions that differ from the provided ones, keyed by file name
    captions = {}
    for i, (name, _, _) in enumerate(images):
        cat = CATEGORIES[(i * 3) % len(CATEGORIES)]
        captions[Path(name).name] = f"a photo of a {cat} and a {ATTRIBUTES[i % len(ATTRIBUTES)]} table"
    fixture = {"captions": captions}
    (root / "stub_fixture.json").write_text(json.dumps(fixture, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    stub = {"impl": "stub", "seed": seed}
    config = {
        "task": task,
        "data": {"samples": "samples.jsonl", "image_root": ".", "vocab": "vocab.txt",
                 "stub_fixture": "stub_fixture.json"},
        "backends": {
            "joint_embedder": {**stub, "dim": 16},
            "sentence_embedder": {**stub, "dim": 32},
            "captioner": {"impl": "stub", "fixture": "stub_fixture.json"},
            "detector": {**stub, "synthesize": 8},
            "answer_scorer": dict(stub),
        },
        "cache_dir": "cache",
        "out_dir": "out",
        "workers": 4,
    }
    if family != "vqa":
        del config["backends"]["answer_scorer"]
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    return path
