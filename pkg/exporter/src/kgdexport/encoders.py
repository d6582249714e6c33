"""Embedding backends for the exporter.

Three model specs are understood:

- ``hf:/path/to/checkpoint`` - a real CLIP checkpoint on local disk, loaded
  through transformers (never downloads). This is the production path.
- ``tiny:<seed>`` - the genuine CLIP architecture instantiated at toy size
  with seeded random weights and a character-level tokenizer built on the
  fly. Runs the same code path as ``hf:`` with no files or network; meant
  for bring-up and tests, not for meaningful semantics.
- ``hash:<dim>[:<seed>]`` - deterministic keyed-hash unit vectors, text
  only, no torch required.

Every loading failure raises EncoderError with a diagnostic; the CLI maps
that to exit code 1.
"""

import hashlib
import json
import struct
import tempfile
from pathlib import Path

import numpy as np


class EncoderError(Exception):
    pass


class HashEncoder:
    """Keyed-hash unit vectors; text only."""

    name = "hash"

    def __init__(self, dim, seed=0):
        if dim < 2:
            raise EncoderError(f"hash encoder dimension must be >= 2, got {dim}")
        self.dim = int(dim)
        self.seed = int(seed)

    def encode_texts(self, texts):
        rows = []
        for text in texts:
            digest = hashlib.sha256(
                struct.pack("<Q", self.seed) + text.encode("utf-8")
            ).digest()
            key = int.from_bytes(digest[:16], "little")
            rng = np.random.Generator(np.random.Philox(key=key))
            v = rng.standard_normal(self.dim)
            rows.append(v / np.linalg.norm(v))
        return np.stack(rows)

    def encode_images(self, images):
        raise EncoderError("the hash backend cannot encode images; use hf: or tiny:")


def _import_torch_stack():
    try:
        import torch
        from transformers import (
            CLIPConfig,
            CLIPImageProcessor,
            CLIPModel,
            CLIPTokenizer,
        )
    except ImportError as exc:
        raise EncoderError(
            f"torch/transformers are required for this backend ({exc}); "
            "install the 'clip' extra"
        ) from exc
    return torch, CLIPConfig, CLIPImageProcessor, CLIPModel, CLIPTokenizer


class ClipEncoder:
    """Real CLIP text/image towers; greedy batch encode, CPU, no grad."""

    def __init__(self, model, tokenizer, image_processor, torch, name):
        self._model = model.eval()
        self._tokenizer = tokenizer
        self._image_processor = image_processor
        self._torch = torch
        self.name = name
        self.dim = int(model.config.projection_dim)

    @classmethod
    def from_local_checkpoint(cls, path):
        torch, _, CLIPImageProcessor, CLIPModel, CLIPTokenizer = _import_torch_stack()
        path = Path(path)
        if not path.exists():
            raise EncoderError(f"model checkpoint not found: {path}")
        try:
            model = CLIPModel.from_pretrained(path, local_files_only=True)
            tokenizer = CLIPTokenizer.from_pretrained(path, local_files_only=True)
            image_processor = CLIPImageProcessor.from_pretrained(path, local_files_only=True)
        except Exception as exc:
            raise EncoderError(f"failed to load CLIP checkpoint at {path}: {exc}") from exc
        return cls(model, tokenizer, image_processor, torch, name=f"hf:{path}")

    @classmethod
    def tiny_seeded(cls, seed=0):
        torch, CLIPConfig, CLIPImageProcessor, _, CLIPTokenizer = _import_torch_stack()
        from transformers import CLIPModel

        # character-level vocabulary so the real tokenizer runs offline
        chars = [chr(c) for c in range(ord("a"), ord("z") + 1)]
        chars += [chr(c) for c in range(ord("0"), ord("9") + 1)]
        chars += [",", ".", "-", "'", "(", ")", ":", ";", '"']
        vocab = {ch: i for i, ch in enumerate(chars)}
        for ch in chars:
            vocab[ch + "</w>"] = len(vocab)
        vocab["<|startoftext|>"] = len(vocab)
        vocab["<|endoftext|>"] = len(vocab)
        with tempfile.TemporaryDirectory() as td:
            vocab_file = Path(td) / "vocab.json"
            merges_file = Path(td) / "merges.txt"
            vocab_file.write_text(json.dumps(vocab), encoding="utf-8")
            merges_file.write_text("#version: 0.2\n", encoding="utf-8")
            tokenizer = CLIPTokenizer(str(vocab_file), str(merges_file))
        config = CLIPConfig(
            text_config=dict(
                vocab_size=len(vocab),
                hidden_size=32,
                intermediate_size=64,
                num_hidden_layers=2,
                num_attention_heads=2,
                max_position_embeddings=77,
                bos_token_id=tokenizer.bos_token_id,
                eos_token_id=tokenizer.eos_token_id,
            ),
            vision_config=dict(
                hidden_size=32,
                intermediate_size=64,
                num_hidden_layers=2,
                num_attention_heads=2,
                image_size=32,
                patch_size=16,
            ),
            projection_dim=16,
        )
        torch.manual_seed(int(seed))
        model = CLIPModel(config)
        image_processor = CLIPImageProcessor(
            size={"shortest_edge": 32}, crop_size={"height": 32, "width": 32}
        )
        return cls(model, tokenizer, image_processor, torch, name=f"tiny:{seed}")

    def encode_texts(self, texts):
        torch = self._torch
        batch = self._tokenizer(
            list(texts), padding=True, truncation=True, return_tensors="pt"
        )
        with torch.no_grad():
            pooled = self._model.text_model(
                input_ids=batch["input_ids"], attention_mask=batch["attention_mask"]
            ).pooler_output
            emb = self._model.text_projection(pooled)
        return emb.double().cpu().numpy()

    def encode_images(self, images):
        torch = self._torch
        batch = self._image_processor(images=list(images), return_tensors="pt")
        with torch.no_grad():
            pooled = self._model.vision_model(
                pixel_values=batch["pixel_values"]
            ).pooler_output
            emb = self._model.visual_projection(pooled)
        return emb.double().cpu().numpy()


def load_encoder(spec):
    """Instantiate a backend from its spec string."""
    kind, _, rest = spec.partition(":")
    if kind == "hf":
        if not rest:
            raise EncoderError("hf: spec needs a checkpoint path, e.g. hf:/models/clip")
        return ClipEncoder.from_local_checkpoint(rest)
    if kind == "tiny":
        return ClipEncoder.tiny_seeded(int(rest) if rest else 0)
    if kind == "hash":
        parts = rest.split(":") if rest else []
        if not parts or not parts[0]:
            raise EncoderError("hash: spec needs a dimension, e.g. hash:64 or hash:64:7")
        dim = int(parts[0])
        seed = int(parts[1]) if len(parts) > 1 else 0
        return HashEncoder(dim, seed)
    raise EncoderError(f"unknown model spec {spec!r}; use hf:PATH, tiny:SEED, or hash:DIM[:SEED]")
