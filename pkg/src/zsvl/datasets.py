"""Readers for the native VQAv2, SNLI-VE and VCR annotation layouts.

Each loader returns canonical :class:`~zsvl.core.Sample` records; paths to
images are built from an image root so the records stay portable.
"""

from __future__ import annotations

import json
import os
import re
from pathlib import Path
from typing import Any

from .backends.stub import hash64
from .core import (
    VQA_ANSWER_TYPES,
    VQA_HUMAN_ANSWERS,
    DetectedObject,
    Sample,
    TaskKind,
    iter_jsonl,
)
from .errors import InputError

COCO_VAL_PATTERN = "COCO_val2014_{image_id:012d}.jpg"

SNLI_LABELS = {
    "entailment": "E", "neutral": "N", "contradiction": "C",
    "e": "E", "n": "N", "c": "C",
}

# gender-neutral names for VCR person tags
PERSON_NAMES = (
    "Casey", "Riley", "Jessie", "Jackie", "Avery", "Jaime", "Peyton", "Kerry",
    "Jody", "Kendall", "Skyler", "Frankie", "Pat", "Quinn", "Morgan", "Rowan",
)


def _read_json(path) -> Any:
    p = Path(path)
    if p.stat().st_size == 0:
        return None
    with open(p, encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: not valid JSON ({exc})") from exc


def load_coco_captions(path) -> dict[int, str]:
    """First caption (lowest annotation id) per image id."""
    data = _read_json(path) or {}
    best: dict[int, tuple[int, str]] = {}
    for ann in data.get("annotations", []):
        img, aid = int(ann["image_id"]), int(ann.get("id", 0))
        if img not in best or aid < best[img][0]:
            best[img] = (aid, ann["caption"].strip())
    return {k: v[1] for k, v in best.items()}


def load_vqa(questions_path, annotations_path, captions_path=None, image_root: str = "",
             image_pattern: str = COCO_VAL_PATTERN) -> list[Sample]:
    """One sample per question, typed by the annotation's ``answer_type``."""
    questions = (_read_json(questions_path) or {}).get("questions", [])
    if not questions:
        return []
    annotations = (_read_json(annotations_path) or {}).get("annotations", [])
    ann_by_qid = {}
    for ann in annotations:
        ann_by_qid[ann.get("question_id")] = ann
    captions = load_coco_captions(captions_path) if captions_path else {}

    q_ids = [q.get("question_id") for q in questions]
    unmatched = [qid for qid in q_ids if qid not in ann_by_qid]
    if unmatched:
        raise InputError(f"{len(unmatched)} questions lack annotations: {unmatched[:20]}")

    samples, bad = [], []
    for q in questions:
        qid = q.get("question_id")
        ann = ann_by_qid[qid]
        try:
            image_id = int(q["image_id"])
            if int(ann["image_id"]) != image_id:
                raise ValueError("image id differs between question and annotation")
            task = VQA_ANSWER_TYPES[ann["answer_type"]]
            answers = tuple(a["answer"] for a in ann["answers"])
            if len(answers) != VQA_HUMAN_ANSWERS or not q["question"].strip():
                raise ValueError("malformed answers or question")
        except (KeyError, ValueError, TypeError):
            bad.append(qid)
            continue
        samples.append(Sample(
            id=str(qid),
            task=task,
            image_ref=os.path.join(image_root, image_pattern.format(image_id=image_id)),
            query=q["question"].strip(),
            provided_caption=captions.get(image_id),
            reference=answers,
            metadata={
                "image_id": image_id,
                "question_type": ann.get("question_type"),
                "multiple_choice_answer": ann.get("multiple_choice_answer"),
            },
        ))
    if bad:
        raise InputError(f"{len(bad)} malformed VQA records: {bad[:20]}")
    return samples


def _load_caption_map(path) -> dict[str, str]:
    """Captions keyed by image file name and by bare id.

    Accepts a JSON object ``{image: caption}`` or the Flickr30k token file
    (``1000092795.jpg#0<TAB>caption``, first caption per image kept).
    """
    out: dict[str, str] = {}
    if str(path).endswith(".json"):
        data = _read_json(path) or {}
        items = data.items()
    else:
        items = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                if "\t" not in line:
                    continue
                key, cap = line.rstrip("\n").split("\t", 1)
                name, _, idx = key.partition("#")
                if idx in ("", "0"):
                    items.append((name, cap))
    for key, cap in items:
        key = str(key)
        out.setdefault(key, cap.strip())
        out.setdefault(os.path.splitext(key)[0], cap.strip())
    return out


def load_snli_ve(path, captions_path=None, image_root: str = "") -> list[Sample]:
    captions = _load_caption_map(captions_path) if captions_path else {}
    samples = []
    for i, rec in enumerate(iter_jsonl(path)):
        image = rec.get("Flikr30kID") or rec.get("Flickr30kID") or rec.get("image")
        if image is None and rec.get("Flickr30K_ID") is not None:
            image = f"{rec['Flickr30K_ID']}.jpg"
        hypothesis = rec.get("sentence2") or rec.get("hypothesis")
        raw_label = rec.get("gold_label", rec.get("label"))
        sid = str(rec.get("pairID") or rec.get("id") or i)
        if image is None or not hypothesis:
            raise InputError(f"SNLI-VE record {sid} lacks an image or hypothesis")
        label = SNLI_LABELS.get(str(raw_label).strip().lower())
        if label is None:
            raise InputError(f"SNLI-VE record {sid} has unknown label {raw_label!r}")
        image = str(image)
        caption = captions.get(image) or captions.get(os.path.splitext(image)[0])
        samples.append(Sample(
            id=sid,
            task=TaskKind.SNLI_VE,
            image_ref=os.path.join(image_root, image),
            query=hypothesis.strip(),
            provided_caption=caption,
            reference=label,
            metadata={"premise": rec.get("sentence1")} if rec.get("sentence1") else {},
        ))
    return samples


_SPACE_BEFORE_PUNCT = re.compile(r" ([?.!,;:)'](?:\s|$))")


def detokenize(tokens, objects, names: dict[int, str]) -> str:
    """Join VCR tokens, rewriting object tags like ``[0, 2]`` into words."""
    words = []
    for tok in tokens:
        if isinstance(tok, list):
            labels = [names.get(i) or objects[i] for i in tok]
            if len(labels) == 1:
                words.append(labels[0])
            else:
                words.append(", ".join(labels[:-1]) + " and " + labels[-1])
        else:
            words.append(str(tok))
    text = " ".join(words)
    text = _SPACE_BEFORE_PUNCT.sub(r"\1", text + " ").strip()
    return text.replace(" n't", "n't").replace(" 's", "'s")


def person_names(annot_id: str, objects) -> dict[int, str]:
    """Map each person index to a name from the fixed list, rotated per question."""
    offset = hash64("vcr-names\0" + str(annot_id)) % len(PERSON_NAMES)
    names, k = {}, 0
    for i, obj in enumerate(objects):
        if obj == "person":
            names[i] = PERSON_NAMES[(offset + k) % len(PERSON_NAMES)]
            k += 1
    return names


def _vcr_boxes(rec: dict, image_root: str) -> tuple[DetectedObject, ...] | None:
    boxes = rec.get("boxes")
    if boxes is None and rec.get("metadata_fn"):
        meta_path = os.path.join(image_root, rec["metadata_fn"])
        if os.path.exists(meta_path):
            boxes = (_read_json(meta_path) or {}).get("boxes")
    if boxes is None:
        return None
    objects = rec.get("objects", [])
    out = []
    for i, b in enumerate(boxes):
        x1, y1, x2, y2 = (float(v) for v in b[:4])
        conf = float(b[4]) if len(b) > 4 else 1.0
        category = objects[i] if i < len(objects) else "object"
        out.append(DetectedObject((x1, y1, x2 - x1, y2 - y1), category, None, conf))
    return tuple(out)


def load_vcr(path, image_root: str = "") -> list[Sample]:
    """Two samples per record: ``<id>-q2a`` and ``<id>-qa2r``.

    QA2R uses the gold answer as its query and the rationales as candidates.
    """
    samples = []
    for i, rec in enumerate(iter_jsonl(path)):
        aid = str(rec.get("annot_id", i))
        answers, rationales = rec.get("answer_choices", []), rec.get("rationale_choices", [])
        if len(answers) != 4 or len(rationales) != 4:
            raise InputError(f"VCR record {aid}: expected 4 answers and 4 rationales, "
                             f"got {len(answers)} and {len(rationales)}")
        if rec.get("answer_label") is None:
            raise InputError(f"VCR record {aid} has no answer_label; QA2R needs the gold answer")
        objects = rec.get("objects", [])
        names = person_names(aid, objects)
        question = detokenize(rec["question"], objects, names)
        ans_text = tuple(detokenize(a, objects, names) for a in answers)
        rat_text = tuple(detokenize(r, objects, names) for r in rationales)
        boxes = _vcr_boxes(rec, image_root)
        image_ref = os.path.join(image_root, rec["img_fn"])
        gold = int(rec["answer_label"])
        meta = {"annot_id": aid, "question": question, "img_fn": rec["img_fn"]}
        samples.append(Sample(f"{aid}-q2a", TaskKind.VCR_Q2A, image_ref, question, ans_text,
                              provided_boxes=boxes, reference=gold, metadata=dict(meta)))
        rlabel = rec.get("rationale_label")
        samples.append(Sample(f"{aid}-qa2r", TaskKind.VCR_QA2R, image_ref, ans_text[gold], rat_text,
                              provided_boxes=boxes, reference=None if rlabel is None else int(rlabel),
                              metadata=dict(meta)))
    return samples
