"""The end-to-end adaptation loop.

A linear classification head stands in for the detector's classifier:
teacher "inference" applies the teacher head to precomputed proposal
features (the stored fixture probabilities seed iteration 0). Each
iteration thresholds the teacher's proposals, calibrates the survivors
through the language and/or vision graphs, fuses the calibrated
probabilities into soft targets, takes one student and one graph-training
step, updates the teacher by EMA, and feeds the batch centroids to the
vision graph. Everything is driven by one seed and is bit-reproducible.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lexicon as lex
from . import lkg as lkgmod
from . import vkg as vkgmod
from .embio import ProposalBatch, load_embeddings, load_proposals, save_embeddings, stub_encode
from .errors import (
    AdaptationAborted,
    ConfigError,
    DimMismatch,
    DivergedStudent,
    KgdError,
    TooFewCategories,
    ZeroVector,
)
from .linalg import row_softmax

FUSION_KGD = "kgd"
FUSION_MT = "mt"
FUSION_LKG = "lkg"
FUSION_VKG = "vkg"
FUSION_MODES = (FUSION_KGD, FUSION_MT, FUSION_LKG, FUSION_VKG)


@dataclass
class AdaptationConfig:
    """Knobs of the adaptation loop; defaults follow the reference settings.

    ``ema_rate`` 0.9999 and ``lr`` 5e-6 are tuned for full-scale training
    lengths; desk-scale runs (hundreds of iterations) should override them,
    see ``desk_benchmark``.
    """

    tau: float = 0.25
    ema_rate: float = 0.9999
    vkg_lambda: float = 0.99
    vkg_alpha: float = 0.5
    lkg_mode: str = lex.HIERARCHY
    vkg_mode: str = vkgmod.DYNAMIC
    fusion: str = FUSION_KGD
    iterations: int = 100
    batch_size: int = 2
    lr: float = 5e-6
    weight_decay: float = 1e-4
    cosine_schedule: bool = True
    seed: int = 0
    gcn_hidden_dim: int = 256
    gcn_optimizer: str = "adam"
    gcn_lr: float = 1e-3
    normalize_features: bool = True
    temperature: float = 1.0
    hyponym_text: str = "definition"
    raw_smoothing: bool = False

    def validate(self):
        if not (0.0 <= self.tau < 1.0):
            raise ConfigError(f"tau must lie in [0, 1), got {self.tau}")
        if not (0.0 < self.ema_rate < 1.0):
            raise ConfigError(f"ema_rate must lie in (0, 1), got {self.ema_rate}")
        if not (0.0 < self.vkg_lambda <= 1.0):
            raise ConfigError(f"vkg_lambda must lie in (0, 1], got {self.vkg_lambda}")
        if not (0.0 < self.vkg_alpha < 1.0):
            raise ConfigError(f"vkg_alpha must lie in (0, 1), got {self.vkg_alpha}")
        if self.lr <= 0 or self.gcn_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be nonnegative")
        if self.iterations < 0 or self.batch_size < 1:
            raise ConfigError("iterations must be >= 0 and batch_size >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.lkg_mode not in lex.PROMPT_MODES:
            raise ConfigError(f"lkg_mode must be one of {lex.PROMPT_MODES}")
        if self.vkg_mode not in vkgmod.VKG_MODES:
            raise ConfigError(f"vkg_mode must be one of {vkgmod.VKG_MODES}")
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of {FUSION_MODES}")
        return self

    @classmethod
    def desk_benchmark(cls, **overrides):
        """Desk-scale settings for the synthetic benchmark (seconds, not days).

        Full-scale rates would leave the head frozen over a few hundred
        iterations, so the benchmark raises them and sharpens the vision
        calibration temperature; everything stays configurable.
        """
        base = dict(
            ema_rate=0.99,
            iterations=500,
            lr=0.01,
            weight_decay=1e-4,
            gcn_lr=5e-3,
            temperature=0.05,
            seed=42,
        )
        base.update(overrides)
        return cls(**base).validate()

    @property
    def uses_lkg(self):
        return self.fusion in (FUSION_KGD, FUSION_LKG)

    @property
    def uses_vkg(self):
        return self.fusion in (FUSION_KGD, FUSION_VKG)


@dataclass
class ClassifierHead:
    weights: np.ndarray  # d x N_c
    bias: np.ndarray  # N_c

    def logits(self, features):
        f = np.asarray(features, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] != self.weights.shape[0]:
            raise DimMismatch(
                f"features must be M x {self.weights.shape[0]}, got {f.shape}"
            )
        return f @ self.weights + self.bias

    def predict_probs(self, features):
        return row_softmax(self.logits(features))

    def copy(self):
        return ClassifierHead(weights=self.weights.copy(), bias=self.bias.copy())


def init_head(dim, n_categories, seed=0):
    rng = np.random.Generator(np.random.Philox(key=seed))
    return ClassifierHead(
        weights=lkgmod.glorot_uniform(rng, dim, n_categories),
        bias=np.zeros(n_categories),
    )


@dataclass
class CalibratedLabels:
    """Kept proposals with their fused soft targets (rows sum to 1)."""

    boxes: np.ndarray  # K x 4, pass-through from the teacher
    p_tilde: np.ndarray  # K x N_c
    kept: np.ndarray  # bool mask over the original M proposals


def threshold_filter(batch: ProposalBatch, tau: float) -> ProposalBatch:
    """Keep proposals whose max probability is >= tau, preserving order."""
    if not (0.0 <= tau < 1.0):
        raise ConfigError(f"tau must lie in [0, 1), got {tau}")
    if len(batch) == 0:
        return batch
    keep = batch.probs.max(axis=1) >= tau
    return dataclasses.replace(
        batch,
        boxes=batch.boxes[keep],
        probs=batch.probs[keep],
        feature_rows=batch.feature_rows[keep],
    )


def minmax_renorm(scores):
    """Min-max scale each row to [0, 1], then renormalize to sum 1.

    Constant rows degenerate to the uniform distribution. Both maps are
    monotone, so the row argmax is preserved.
    """
    s = np.asarray(scores, dtype=np.float64)
    lo = s.min(axis=1, keepdims=True)
    hi = s.max(axis=1, keepdims=True)
    span = hi - lo
    flat = (span == 0.0).ravel()
    scaled = np.where(span == 0.0, 1.0, (s - lo) / np.where(span == 0.0, 1.0, span))
    scaled[flat] = 1.0
    return scaled / scaled.sum(axis=1, keepdims=True)


def fuse_labels(p_l, p_v):
    """Fuse the two calibrated probability lists into soft targets."""
    a = np.asarray(p_l, dtype=np.float64)
    b = np.asarray(p_v, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"calibrated lists disagree: {a.shape} vs {b.shape}")
    return minmax_renorm(a + b)


@dataclass
class HeadOptimizer:
    """AdamW with decoupled weight decay and an optional cosine lr schedule."""

    lr: float = 5e-6
    weight_decay: float = 1e-4
    cosine_schedule: bool = True
    total_steps: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    moments: dict = field(default_factory=dict)

    def step_lr(self):
        if not self.cosine_schedule or self.total_steps <= 0:
            return self.lr
        frac = min(self.t, self.total_steps) / self.total_steps
        return self.lr * (1.0 + np.cos(np.pi * frac)) / 2.0

    def update(self, name, w, grad, decay):
        lr = self.step_lr()
        m, v = self.moments.get(name, (np.zeros_like(w), np.zeros_like(w)))
        m = self.beta1 * m + (1 - self.beta1) * grad
        v = self.beta2 * v + (1 - self.beta2) * grad * grad
        self.moments[name] = (m, v)
        m_hat = m / (1 - self.beta1 ** (self.t + 1))
        v_hat = v / (1 - self.beta2 ** (self.t + 1))
        out = w - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if decay:
            out = out - lr * self.weight_decay * w
        return out


def soft_cross_entropy(head: ClassifierHead, features, p_tilde):
    """Mean soft-target cross-entropy and its exact head gradients."""
    q = head.predict_probs(features)
    p = np.asarray(p_tilde, dtype=np.float64)
    if p.shape != q.shape:
        raise DimMismatch(f"targets {p.shape} vs predictions {q.shape}")
    m = p.shape[0]
    loss = -float((p * np.log(np.maximum(q, 1e-300))).sum()) / m
    dlogits = (q - p) / m
    f = np.asarray(features, dtype=np.float64)
    return loss, {"weights": f.T @ dlogits, "bias": dlogits.sum(axis=0)}


def student_step(head: ClassifierHead, features, labels: CalibratedLabels, opt: HeadOptimizer):
    """One optimizer step on the student head; returns the loss.

    A batch with no kept proposals is a no-op with loss 0. Weight decay is
    decoupled (AdamW) and applied to the weights only.
    """
    if labels.p_tilde.shape[0] == 0:
        return 0.0
    loss, grads = soft_cross_entropy(head, features, labels.p_tilde)
    if not np.isfinite(loss):
        raise DivergedStudent(f"non-finite classification loss: {loss}")
    head.weights = opt.update("weights", head.weights, grads["weights"], decay=True)
    head.bias = opt.update("bias", head.bias, grads["bias"], decay=False)
    opt.t += 1
    if not (np.isfinite(head.weights).all() and np.isfinite(head.bias).all()):
        raise DivergedStudent("non-finite head parameters after step")
    return loss


def teacher_ema(teacher: ClassifierHead, student: ClassifierHead, rate: float) -> ClassifierHead:
    """Momentum update of the teacher toward the student."""
    if teacher.weights.shape != student.weights.shape or teacher.bias.shape != student.bias.shape:
        raise DimMismatch("teacher/student head shapes differ")
    if not (0.0 <= rate <= 1.0):
        raise ConfigError(f"ema rate must lie in [0, 1], got {rate}")
    return ClassifierHead(
        weights=rate * teacher.weights + (1.0 - rate) * student.weights,
        bias=rate * teacher.bias + (1.0 - rate) * student.bias,
    )


def evaluate_head(head: ClassifierHead, features, labels):
    preds = head.predict_probs(features).argmax(axis=1)
    return float((preds == np.asarray(labels)).mean())


def fit_head(features, labels, n_categories, seed=0, steps=300, lr=0.05):
    """Deterministic supervised fit of a linear head (source pretraining)."""
    f = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    head = init_head(f.shape[1], n_categories, seed=seed)
    onehot = np.zeros((y.size, n_categories))
    onehot[np.arange(y.size), y] = 1.0
    opt = HeadOptimizer(lr=lr, weight_decay=0.0, cosine_schedule=True, total_steps=steps)
    labels_all = CalibratedLabels(boxes=np.zeros((y.size, 4)), p_tilde=onehot, kept=np.ones(y.size, bool))
    for _ in range(steps):
        student_step(head, f, labels_all, opt)
    return head


def _normalize_rows(x, what):
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroVector(what, int(zero[0]))
    return x / norms[:, None]


@dataclass
class AdaptationData:
    """Everything the loop consumes, already loaded and cross-checked."""

    entries: list  # lexicon entries
    batches: list  # ProposalBatch per image, feature_rows into ``features``
    features: np.ndarray  # target proposal features
    prompt_provider: object  # matrix or callable for lkg_extract
    category_matrix: np.ndarray  # N_c x d for vkg_init
    probe: tuple | None = None  # (features, labels)
    source: tuple | None = None  # (features, labels)

    @property
    def n_categories(self):
        return len(self.entries)


def _gather_features(directory, batches):
    """Concatenate the embedding files referenced by the batches and remap rows."""
    directory = Path(directory)
    offsets = {}
    blocks = []
    total = 0
    for b in batches:
        if b.features_file not in offsets:
            block = load_embeddings(directory / b.features_file)
            offsets[b.features_file] = total
            total += block.shape[0]
            blocks.append(block)
    features = np.vstack(blocks)
    remapped = []
    for b in batches:
        off = offsets[b.features_file]
        if len(b) and b.feature_rows.max() + off >= total:
            raise DimMismatch(
                f"{b.image_id}: feature row {int(b.feature_rows.max())} out of range"
            )
        remapped.append(dataclasses.replace(b, feature_rows=b.feature_rows + off))
    return features, remapped


def load_adaptation_data(
    lexicon_path,
    proposals_path,
    config: AdaptationConfig,
    prompt_embeddings=None,
    category_embeddings=None,
    probe=None,
    source=None,
):
    """Assemble AdaptationData from fixture files.

    ``prompt_embeddings`` / ``category_embeddings`` are optional embedding
    file paths; when absent, the deterministic stub encoder stands in for
    the text encoder at the feature dimension. ``probe`` and ``source`` are
    (features_path, labels_path) pairs.
    """
    entries = lex.parse_lexicon(lexicon_path)
    if len(entries) < 2:
        raise TooFewCategories(f"need at least 2 categories, lexicon has {len(entries)}")
    raw_batches = load_proposals(proposals_path, n_categories=len(entries))
    features, batches = _gather_features(Path(proposals_path).parent, raw_batches)
    for b in batches:
        if len(b) == 0:
            continue
    if config.normalize_features:
        features = _normalize_rows(features, "feature")

    dim = features.shape[1]
    if prompt_embeddings is not None:
        prompt_provider = load_embeddings(prompt_embeddings)
    else:
        prompt_provider = lambda text: stub_encode(text, dim, config.seed)  # noqa: E731
    if category_embeddings is not None:
        category_matrix = load_embeddings(category_embeddings)
    else:
        category_matrix = np.stack([stub_encode(e.category, dim, config.seed) for e in entries])
    if category_matrix.shape != (len(entries), dim):
        raise DimMismatch(
            f"category embeddings must be {len(entries)} x {dim}, got {category_matrix.shape}"
        )

    def load_pair(pair):
        if pair is None:
            return None
        feats = load_embeddings(pair[0])
        if config.normalize_features:
            feats = _normalize_rows(feats, "feature")
        payload = json.loads(Path(pair[1]).read_text(encoding="utf-8"))
        labels = np.asarray(payload["labels"], dtype=np.int64)
        if labels.size != feats.shape[0]:
            raise DimMismatch(
                f"{pair[1]}: {labels.size} labels for {feats.shape[0]} feature rows"
            )
        return feats, labels

    return AdaptationData(
        entries=entries,
        batches=batches,
        features=features,
        prompt_provider=prompt_provider,
        category_matrix=category_matrix,
        probe=load_pair(probe),
        source=load_pair(source),
    )


def data_from_manifest(manifest_path, config: AdaptationConfig):
    """Load AdaptationData as described by a manifest JSON (synth output)."""
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    root = manifest_path.parent

    def p(key):
        return root / doc[key] if key in doc and doc[key] else None

    prompt_key = {
        lex.NAMES: "category_embeddings",
        lex.DEFINITIONS: "definition_embeddings",
        lex.HIERARCHY: "prompt_embeddings",
    }[config.lkg_mode]
    probe = (p("probe_features"), p("probe_labels")) if p("probe_features") else None
    source = (p("source_features"), p("source_labels")) if p("source_features") else None
    return load_adaptation_data(
        p("lexicon"),
        p("proposals"),
        config,
        prompt_embeddings=p(prompt_key),
        category_embeddings=p("category_embeddings"),
        probe=probe,
        source=source,
    )


def _config_echo(config: AdaptationConfig):
    return {k: getattr(config, k) for k in sorted(vars(config))}


def _save_head(head: ClassifierHead, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {
        "bias_file": "bias.kgde",
        "dim": int(head.weights.shape[0]),
        "n_categories": int(head.weights.shape[1]),
        "weights_file": "weights.kgde",
    }
    (directory / "head.json").write_text(
        json.dumps(header, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    save_embeddings(directory / "weights.kgde", head.weights)
    save_embeddings(directory / "bias.kgde", head.bias.reshape(1, -1))


def load_head(directory):
    directory = Path(directory)
    header = json.loads((directory / "head.json").read_text(encoding="utf-8"))
    return ClassifierHead(
        weights=load_embeddings(directory / header["weights_file"]),
        bias=load_embeddings(directory / header["bias_file"]).ravel(),
    )


def run_adaptation(config: AdaptationConfig, data: AdaptationData, output_dir):
    """Run the full loop and write report plus checkpoints under output_dir.

    Returns the report dict. Identical config/seed/data produce
    byte-identical outputs; checkpoint paths inside the report are relative
    to output_dir for that reason.
    """
    config.validate()
    if data.n_categories < 2:
        raise TooFewCategories("adaptation needs at least 2 categories")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = output_dir / "checkpoints"

    report_warnings = []
    if config.ema_rate >= 0.9999 and config.iterations < 10_000:
        report_warnings.append(
            f"ema_rate={config.ema_rate} barely moves the teacher over "
            f"{config.iterations} iterations; desk-scale runs typically use 0.99"
        )

    prompts = lex.expand_prompts(data.entries, config.lkg_mode, config.hyponym_text)
    graph = None
    gcn_opt = None
    if config.uses_lkg:
        graph = lkgmod.lkg_extract(
            prompts,
            data.prompt_provider,
            hidden_dim=config.gcn_hidden_dim,
            seed=config.seed,
        )
        if graph.feature_dim != data.features.shape[1]:
            raise DimMismatch(
                f"prompt embeddings have dim {graph.feature_dim}, "
                f"features have dim {data.features.shape[1]}"
            )
        gcn_opt = lkgmod.GcnOptimizer(method=config.gcn_optimizer, lr=config.gcn_lr)

    vision = None
    if config.uses_vkg:
        vision = vkgmod.vkg_init(
            data.category_matrix,
            lam=config.vkg_lambda,
            alpha=config.vkg_alpha,
            mode=config.vkg_mode,
            raw_smoothing=config.raw_smoothing,
        )

    dim = data.features.shape[1]
    if data.source is not None:
        student = fit_head(data.source[0], data.source[1], data.n_categories, seed=config.seed)
    else:
        student = init_head(dim, data.n_categories, seed=config.seed)
    source_only = student.copy()
    teacher = student.copy()

    head_opt = HeadOptimizer(
        lr=config.lr,
        weight_decay=config.weight_decay,
        cosine_schedule=config.cosine_schedule,
        total_steps=config.iterations,
    )
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    order = []

    iteration_log = []
    n_images = len(data.batches)
    def run_iteration(it, picked):
        nonlocal teacher
        kept_feats = []
        kept_probs = []
        kept_boxes = []
        for idx in picked:
            batch = data.batches[idx]
            if len(batch) == 0:
                continue
            feats = data.features[batch.feature_rows]
            if it == 0:
                probs = batch.probs
            else:
                probs = teacher.predict_probs(feats)
            batch = dataclasses.replace(batch, probs=probs)
            batch = threshold_filter(batch, config.tau)
            if len(batch):
                kept_feats.append(data.features[batch.feature_rows])
                kept_probs.append(batch.probs)
                kept_boxes.append(batch.boxes)
        if kept_feats:
            f_kept = np.vstack(kept_feats)
            p_hat = np.vstack(kept_probs)
            boxes = np.vstack(kept_boxes)
        else:
            f_kept = np.zeros((0, dim))
            p_hat = np.zeros((0, data.n_categories))
            boxes = np.zeros((0, 4))
        kept_count = f_kept.shape[0]

        if kept_count:
            arms = []
            if config.uses_lkg:
                q_f, _, _ = lkgmod.gcn_forward(graph, f_kept)
                arms.append(lkgmod.lkg_calibrate(p_hat, q_f))
            if config.uses_vkg:
                arms.append(vkgmod.vkg_calibrate(vision, f_kept, p_hat, config.temperature))
            if not arms:
                arms.append(p_hat)
            p_tilde = minmax_renorm(sum(arms))
        else:
            p_tilde = np.zeros((0, data.n_categories))
        labels = CalibratedLabels(boxes=boxes, p_tilde=p_tilde, kept=np.ones(kept_count, bool))

        loss_cls = student_step(student, f_kept, labels, head_opt)
        loss_lkg = None
        if config.uses_lkg:
            _, loss_lkg = lkgmod.gcn_step(graph, f_kept, gcn_opt)
        teacher = teacher_ema(teacher, student, config.ema_rate)
        if config.uses_vkg:
            centroids = vkgmod.batch_centroids(f_kept, p_hat)
            vkgmod.vkg_update(vision, centroids)
        return {
            "iteration": it,
            "kept_count": int(kept_count),
            "loss_cls": float(loss_cls),
            "loss_lkg": None if loss_lkg is None else float(loss_lkg),
        }

    for it in range(config.iterations):
        picked = []
        for _ in range(min(config.batch_size, n_images) if n_images else 0):
            if not order:
                order = list(rng.permutation(n_images))
            picked.append(order.pop(0))
        try:
            iteration_log.append(run_iteration(it, picked))
        except KgdError as exc:
            ids = ", ".join(data.batches[i].image_id for i in picked) or "none"
            raise AdaptationAborted(
                f"iteration {it} (images: {ids}): {type(exc).__name__}: {exc}"
            ) from exc

    probe = {}
    if data.probe is not None:
        probe_feats, probe_labels = data.probe
        probe = {
            "source_only_accuracy": evaluate_head(source_only, probe_feats, probe_labels),
            "student_accuracy": evaluate_head(student, probe_feats, probe_labels),
            "teacher_accuracy": evaluate_head(teacher, probe_feats, probe_labels),
        }

    checkpoints = {}
    _save_head(teacher, ckpt_dir / "teacher_head")
    checkpoints["teacher_head"] = "checkpoints/teacher_head"
    _save_head(student, ckpt_dir / "student_head")
    checkpoints["student_head"] = "checkpoints/student_head"
    if graph is not None:
        lkgmod.save_lkg(graph, ckpt_dir / "lkg")
        checkpoints["lkg"] = "checkpoints/lkg"
    if vision is not None:
        vkgmod.save_vkg(vision, ckpt_dir / "vkg")
        checkpoints["vkg"] = "checkpoints/vkg"

    report = {
        "checkpoints": checkpoints,
        "config": _config_echo(config),
        "iterations": iteration_log,
        "probe": probe,
        "warnings": report_warnings,
    }
    (output_dir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return report
