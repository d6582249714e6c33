"""Knowledge-graph-calibrated pseudo-labeling engine.

Builds language and vision knowledge graphs from precomputed embeddings,
calibrates teacher predictions through them, and drives a mean-teacher
self-training loop for adapting a classifier to unlabeled target data.
"""

from .adapt import (
    AdaptationConfig,
    CalibratedLabels,
    ClassifierHead,
    HeadOptimizer,
    data_from_manifest,
    evaluate_head,
    fit_head,
    fuse_labels,
    load_adaptation_data,
    load_head,
    run_adaptation,
    student_step,
    teacher_ema,
    threshold_filter,
)
from .embio import (
    ProposalBatch,
    load_embeddings,
    load_proposals,
    save_embeddings,
    save_proposals,
    square_crop,
    stub_encode,
)
from .lexicon import (
    DEFINITIONS,
    HIERARCHY,
    NAMES,
    LexiconEntry,
    PromptSet,
    expand_prompts,
    parse_lexicon,
)
from .linalg import affinity, row_softmax, smoothing_solve, sym_normalize
from .lkg import (
    GcnOptimizer,
    GcnParams,
    LanguageKnowledgeGraph,
    gcn_forward,
    gcn_loss_and_grad,
    gcn_step,
    lkg_calibrate,
    lkg_extract,
    load_lkg,
    save_lkg,
)
from .synth import SynthSpec, synth_generate
from .vkg import (
    DYNAMIC,
    DYNAMIC_NO_SMOOTH,
    STATIC,
    CentroidBatch,
    VisionKnowledgeGraph,
    batch_centroids,
    load_vkg,
    save_vkg,
    vkg_calibrate,
    vkg_init,
    vkg_update,
)

__version__ = "0.1.0"
