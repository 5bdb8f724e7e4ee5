"""Adapters around pretrained checkpoints (CLIP, sentence-transformers, T5, captioners).

Heavy imports happen inside constructors so the rest of the package works
without torch. None of these are exercised by the default test run.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import images
from ..errors import BackendError, ContractError, InputError

log = logging.getLogger(__name__)

SLOT = "<slot>"
T5_MASK = "<extra_id_0>"
T5_END = "<extra_id_1>"


def _device(device: str | None):
    import torch

    if device:
        return torch.device(device)
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")


class ClipJointEmbedder:
    impl_id = "hf-clip"

    def __init__(self, model: str = "openai/clip-vit-base-patch16", normalize: bool = True,
                 device: str | None = None):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self._torch = torch
        self.device = _device(device)
        self.model = CLIPModel.from_pretrained(model).to(self.device).eval()
        self.processor = CLIPProcessor.from_pretrained(model)
        self.dim = int(self.model.config.projection_dim)
        self.normalized = bool(normalize)
        self.version = f"{model}/norm={int(self.normalized)}"

    def _out(self, feats) -> np.ndarray:
        v = feats[0].detach().float().cpu().numpy().astype(np.float64)
        if self.normalized:
            v = v / np.linalg.norm(v)
        return v

    def embed_image(self, image_ref: str) -> np.ndarray:
        im = images.load_image(image_ref)
        with self._torch.no_grad():
            inputs = self.processor(images=im, return_tensors="pt").to(self.device)
            return self._out(self.model.get_image_features(**inputs))

    def embed_text(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise InputError("cannot embed empty text")
        with self._torch.no_grad():
            inputs = self.processor(text=[text], return_tensors="pt", padding=True,
                                    truncation=True, max_length=77).to(self.device)
            return self._out(self.model.get_text_features(**inputs))


class SentenceTransformerEmbedder:
    impl_id = "sentence-transformers"

    def __init__(self, model: str = "sentence-transformers/all-roberta-large-v1", device: str | None = None):
        from sentence_transformers import SentenceTransformer

        self.model = SentenceTransformer(model, device=device)
        self.dim = int(self.model.get_sentence_embedding_dimension())
        self.version = model

    def sentence_embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise InputError("cannot embed empty text")
        v = np.asarray(self.model.encode([text])[0], dtype=np.float64)
        if not np.any(v):
            raise BackendError(f"sentence embedder returned a zero vector for {text!r}")
        return v


class ImageToTextCaptioner:
    impl_id = "hf-captioner"

    def __init__(self, model: str = "Salesforce/blip-image-captioning-base", device: str | None = None,
                 max_new_tokens: int = 30):
        from transformers import pipeline

        self.pipe = pipeline("image-to-text", model=model, device=device)
        self.max_new_tokens = max_new_tokens
        self.version = model

    def caption(self, image_ref: str) -> str:
        out = self.pipe(images.load_image(image_ref), max_new_tokens=self.max_new_tokens)
        text = out[0]["generated_text"].strip()
        if not text:
            raise BackendError(f"captioner produced empty text for {image_ref!r}")
        return text


class T5AnswerScorer:
    """Span-infilling plausibility of each answer under a T5 checkpoint.

    The demonstrations file is prepended to every encoder input; the score
    of an answer is the length-normalized log-probability of its tokens in
    the ``<extra_id_0> answer <extra_id_1>`` target.
    """

    impl_id = "hf-t5"

    def __init__(self, model: str = "t5-large", demonstrations: str | None = None,
                 device: str | None = None, batch_size: int = 64):
        import torch
        from transformers import AutoTokenizer, T5ForConditionalGeneration

        from ..answer_filter import load_demonstrations

        self._torch = torch
        self.device = _device(device)
        self.tokenizer = AutoTokenizer.from_pretrained(model)
        self.model = T5ForConditionalGeneration.from_pretrained(model).to(self.device).eval()
        self.demonstrations = load_demonstrations(demonstrations)
        # demo slots are spelled out so they never collide with T5 sentinel tokens
        self._context = self.demonstrations.as_context().replace(SLOT, "[mask]")
        self.batch_size = batch_size
        demo_tag = Path(demonstrations).name if demonstrations else "builtin"
        self.version = f"{model}/demos={demo_tag}/lennorm-v1"

    def score_answers(self, template: str, candidates: Sequence[str]) -> list[float]:
        from ..answer_filter import length_normalized_logprob

        if template.count(SLOT) != 1:
            raise ContractError(f"template must contain exactly one {SLOT}: {template!r}")
        if not candidates:
            raise ContractError("score_answers needs at least one candidate")
        torch = self._torch
        prompt = self._context + template.replace(SLOT, T5_MASK)
        enc = self.tokenizer([prompt], return_tensors="pt", truncation=True).to(self.device)
        scores: list[float] = []
        with torch.no_grad():
            encoder_out = self.model.get_encoder()(**enc)
            for start in range(0, len(candidates), self.batch_size):
                chunk = list(candidates[start:start + self.batch_size])
                targets = [f"{T5_MASK} {c} {T5_END}" for c in chunk]
                lab = self.tokenizer(targets, return_tensors="pt", padding=True).input_ids.to(self.device)
                n = lab.shape[0]
                hidden = encoder_out.last_hidden_state.expand(n, -1, -1)
                mask = enc.attention_mask.expand(n, -1)
                labels = lab.masked_fill(lab == self.tokenizer.pad_token_id, -100)
                logits = self.model(encoder_outputs=(hidden,), attention_mask=mask, labels=labels).logits
                logp = torch.log_softmax(logits.float(), dim=-1)
                tok = torch.gather(logp, 2, lab.clamp(min=0).unsqueeze(-1)).squeeze(-1)
                end_id = self.tokenizer.convert_tokens_to_ids(T5_END)
                for row in range(n):
                    ids = lab[row].tolist()
                    # answer tokens sit between the leading mask and the closing sentinel
                    stop = ids.index(end_id) if end_id in ids else len(ids)
                    scores.append(length_normalized_logprob(tok[row, 1:stop].tolist()))
        return scores

    def convert(self, question: str) -> str:
        prompt = self._context + f"Question: {question}\nTemplate:"
        enc = self.tokenizer([prompt], return_tensors="pt", truncation=True).to(self.device)
        with self._torch.no_grad():
            out = self.model.generate(**enc, max_new_tokens=32)
        text = self.tokenizer.decode(out[0], skip_special_tokens=False)
        text = text.replace("<pad>", "").replace("</s>", "").strip()
        return text.replace(T5_MASK, SLOT).replace("[mask]", SLOT)
