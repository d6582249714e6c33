"""Synthetic two-domain benchmark generator.

Emits a complete, self-consistent fixture set on disk: category anchors in
embedding space, a labeled "source" split, a shifted unlabeled "target"
split with imperfect teacher probabilities, a held-out labeled probe split,
text embeddings for category names/definitions/hyponyms clustered around
the anchors (mimicking how a contrastive text encoder aligns with visual
features), and a matching lexicon. All files are byte-deterministic in the
spec and seed.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embio import ProposalBatch, save_embeddings, save_proposals
from .errors import ConfigError
from .linalg import row_softmax

# Generation constants: within-category feature spread, how tightly the
# text embeddings hug their anchor, how the domain shift points at a
# confusable neighbor category, and how noisy/biased the stored teacher is.
FEATURE_NOISE = 0.30
NAME_NOISE = 0.15
DEFINITION_NOISE = 0.15
HYPONYM_NOISE = 0.80
HYPONYMS_PER_CATEGORY = 6
CONFUSION_MIX = 0.3
TEACHER_BIAS = 0.3
TEACHER_TEMP = 0.10
TEACHER_NOISE = 0.15
IMAGE_SIZE = (640.0, 480.0)

MANIFEST_NAME = "synth_manifest.json"


@dataclass(frozen=True)
class SynthSpec:
    n_categories: int = 3
    dim: int = 32
    shift: float = 1.5
    n_images: int = 600
    proposals_per_image: int = 4
    seed: int = 42

    def validate(self):
        if self.n_categories < 2:
            raise ConfigError(f"need at least 2 categories, got {self.n_categories}")
        if self.dim < 2 or self.n_images < 1 or self.proposals_per_image < 1:
            raise ConfigError("dim must be >= 2 and image/proposal counts positive")
        if self.shift < 0:
            raise ConfigError("shift must be nonnegative")
        return self


def _unit_rows(rng, n, dim):
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _draw_split(rng, anchors, offsets, labels, noise):
    raw = anchors[labels] + offsets[labels] + noise * rng.standard_normal(
        (labels.size, anchors.shape[1])
    )
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _random_boxes(rng, count):
    w, h = IMAGE_SIZE
    x1 = rng.uniform(0.0, w - 40.0, size=count)
    y1 = rng.uniform(0.0, h - 40.0, size=count)
    bw = rng.uniform(20.0, 160.0, size=count)
    bh = rng.uniform(20.0, 160.0, size=count)
    x2 = np.minimum(x1 + bw, w)
    y2 = np.minimum(y1 + bh, h)
    return np.stack([x1, y1, x2, y2], axis=1)


def synth_generate(spec: SynthSpec, output_dir):
    """Write the full fixture set and return the manifest path."""
    spec.validate()
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    n_c, dim = spec.n_categories, spec.dim

    anchors = _unit_rows(rng, n_c, dim)
    # Domain shift: part random direction, part pull toward the next
    # category's anchor, so a source-trained boundary cuts into the shifted
    # clusters (the systematic classification failure being adapted away).
    rand_dirs = _unit_rows(rng, n_c, dim)
    confuse = anchors[(np.arange(n_c) + 1) % n_c] - anchors
    shift_dirs = rand_dirs + CONFUSION_MIX * confuse
    shift_dirs = shift_dirs / np.linalg.norm(shift_dirs, axis=1, keepdims=True) * spec.shift
    no_shift = np.zeros_like(anchors)

    # Labeled source split (anchors without shift).
    n_source = spec.n_images * spec.proposals_per_image
    source_labels = rng.integers(0, n_c, size=n_source)
    source_feats = _draw_split(rng, anchors, no_shift, source_labels, FEATURE_NOISE)

    # Unlabeled target split plus its ground truth sidecar.
    n_target = spec.n_images * spec.proposals_per_image
    target_labels = rng.integers(0, n_c, size=n_target)
    target_feats = _draw_split(rng, anchors, shift_dirs, target_labels, FEATURE_NOISE)

    # Held-out labeled probe split from the target distribution.
    n_probe_images = max(1, spec.n_images // 4)
    n_probe = n_probe_images * spec.proposals_per_image
    probe_labels = rng.integers(0, n_c, size=n_probe)
    probe_feats = _draw_split(rng, anchors, shift_dirs, probe_labels, FEATURE_NOISE)

    # Imperfect stored teacher: softmax of noisy similarities against
    # *biased* prototypes, giving systematic (not just random) label errors.
    biased = anchors + TEACHER_BIAS * _unit_rows(rng, n_c, dim)
    biased /= np.linalg.norm(biased, axis=1, keepdims=True)
    sims = target_feats @ biased.T
    noisy = (sims + TEACHER_NOISE * rng.standard_normal(sims.shape)) / TEACHER_TEMP
    teacher_probs = row_softmax(noisy)

    # Text embeddings cluster around the anchors: names and definitions hug
    # them tightly, hyponym definitions spread wider.
    name_emb = _draw_split(rng, anchors, no_shift, np.arange(n_c), NAME_NOISE)
    def_emb = _draw_split(rng, anchors, no_shift, np.arange(n_c), DEFINITION_NOISE)
    hyp_owner = np.repeat(np.arange(n_c), HYPONYMS_PER_CATEGORY)
    hyp_emb = _draw_split(rng, anchors, no_shift, hyp_owner, HYPONYM_NOISE)

    # Hierarchy order: per category, definition first then its hyponyms.
    prompt_rows = []
    for i in range(n_c):
        prompt_rows.append(def_emb[i])
        for j in range(HYPONYMS_PER_CATEGORY):
            prompt_rows.append(hyp_emb[i * HYPONYMS_PER_CATEGORY + j])
    prompt_emb = np.stack(prompt_rows)

    lexicon = []
    for i in range(n_c):
        lexicon.append(
            {
                "category": f"category_{i:02d}",
                "definition": f"synthetic object class {i:02d} drawn around anchor {i:02d}",
                "hyponyms": [
                    {
                        "name": f"variant_{i:02d}_{j}",
                        "definition": f"variant {j} of synthetic object class {i:02d}",
                    }
                    for j in range(HYPONYMS_PER_CATEGORY)
                ],
            }
        )

    batches = []
    for img in range(spec.n_images):
        rows = np.arange(
            img * spec.proposals_per_image, (img + 1) * spec.proposals_per_image
        )
        batches.append(
            ProposalBatch(
                image_id=f"target_{img:05d}",
                image_size=IMAGE_SIZE,
                boxes=_random_boxes(rng, rows.size),
                probs=teacher_probs[rows],
                feature_rows=rows,
                features_file="target_features.kgde",
            )
        )

    save_embeddings(out / "target_features.kgde", target_feats)
    save_embeddings(out / "source_features.kgde", source_feats)
    save_embeddings(out / "probe_features.kgde", probe_feats)
    save_embeddings(out / "category_embeddings.kgde", name_emb)
    save_embeddings(out / "definition_embeddings.kgde", def_emb)
    save_embeddings(out / "prompt_embeddings.kgde", prompt_emb)
    save_proposals(out / "proposals.jsonl", batches)
    (out / "lexicon.json").write_text(
        json.dumps(lexicon, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    for name, labels in (
        ("source_labels.json", source_labels),
        ("probe_labels.json", probe_labels),
        ("target_labels.json", target_labels),
    ):
        (out / name).write_text(
            json.dumps({"labels": [int(v) for v in labels]}, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    manifest = {
        "category_embeddings": "category_embeddings.kgde",
        "definition_embeddings": "definition_embeddings.kgde",
        "lexicon": "lexicon.json",
        "probe_features": "probe_features.kgde",
        "probe_labels": "probe_labels.json",
        "prompt_embeddings": "prompt_embeddings.kgde",
        "proposals": "proposals.jsonl",
        "source_features": "source_features.kgde",
        "source_labels": "source_labels.json",
        "spec": {
            "dim": spec.dim,
            "n_categories": spec.n_categories,
            "n_images": spec.n_images,
            "proposals_per_image": spec.proposals_per_image,
            "seed": spec.seed,
            "shift": spec.shift,
        },
        "target_labels": "target_labels.json",
    }
    manifest_path = out / MANIFEST_NAME
    manifest_path.write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return manifest_path
