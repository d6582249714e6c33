"""Build a language graph from a tiny lexicon and watch the GCN learn it.

The prompt nodes are encoded with the deterministic stub encoder, the
two-layer graph network is trained to name each node's owning category, and
the resulting per-proposal probabilities calibrate a deliberately wrong
teacher prediction.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from kgdistill import (
    GcnOptimizer,
    expand_prompts,
    gcn_forward,
    gcn_step,
    lkg_calibrate,
    lkg_extract,
    parse_lexicon,
    stub_encode,
)

LEXICON = [
    {
        "category": "car",
        "definition": "a motor vehicle with four wheels",
        "hyponyms": [
            {"name": "cab", "definition": "a car driven by a person who takes passengers"},
            {"name": "coupe", "definition": "a car with a fixed roof and two doors"},
        ],
    },
    {
        "category": "bicycle",
        "definition": "a wheeled vehicle that has two wheels and is moved by foot pedals",
        "hyponyms": [
            {"name": "mountain bike", "definition": "a bicycle with a sturdy frame"},
        ],
    },
    {
        "category": "bird",
        "definition": "warm-blooded egg-laying vertebrates characterized by feathers",
        "hyponyms": [],
    },
]

with tempfile.TemporaryDirectory() as td:
    path = Path(td) / "lexicon.json"
    path.write_text(json.dumps(LEXICON))
    entries = parse_lexicon(path)

prompts = expand_prompts(entries, "hierarchy")
print(f"{len(prompts)} prompt nodes, owners {prompts.owner}")

dim = 16
graph = lkg_extract(prompts, lambda t: stub_encode(t, dim, seed=0), hidden_dim=12, seed=0)

opt = GcnOptimizer(method="adam", lr=0.05)
for step in range(120):
    _, loss = gcn_step(graph, None, opt)
    if step % 30 == 0 or step == 119:
        print(f"step {step:3d}: node cross-entropy {loss:.4f}")

# Proposal features: one sits on top of the "car" definition embedding, so
# the graph should assign it to category 0 with confidence.
feats = np.stack([graph.node_features[0], stub_encode("unrelated noise", dim, seed=9)])
q_f, _, _ = gcn_forward(graph, feats)
print("\ngraph probabilities for the two proposals:\n", np.round(q_f, 3))

teacher = np.array([[0.2, 0.5, 0.3], [1 / 3, 1 / 3, 1 / 3]])  # teacher prefers bicycle
calibrated = lkg_calibrate(teacher, q_f)
print("teacher said:", teacher[0], "-> calibrated:", np.round(calibrated[0], 3))
print("argmax moved from", int(teacher[0].argmax()), "to", int(calibrated[0].argmax()))
