"""Command-line surface: extraction, calibration, adaptation, fixtures, validation.

One JSON config file can drive every subcommand; explicit flags win over
config values. Exit codes are pinned for scripting: 0 success, 2 bad
input/usage, 1 internal error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import adapt as adaptmod
from . import embio
from . import lexicon as lex
from . import lkg as lkgmod
from . import synth as synthmod
from . import vkg as vkgmod
from .errors import KgdError

log = logging.getLogger("kgd")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2

_CONFIG_KEYS = set(vars(adaptmod.AdaptationConfig())) | {
    "lexicon",
    "proposals",
    "manifest",
    "prompt_embeddings",
    "category_embeddings",
    "output_dir",
    "stub_dim",
}


def _load_config(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise KgdError("config file must hold a JSON object")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise KgdError(f"config file has unknown keys {sorted(unknown)}")
    return doc


def _merged(args, key, default=None):
    """Flag value if given, else config-file value, else default."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    return args.config_values.get(key, default)


def _build_adaptation_config(args, desk_defaults=False):
    base = (
        adaptmod.AdaptationConfig.desk_benchmark()
        if desk_defaults
        else adaptmod.AdaptationConfig()
    )
    values = {}
    for key in vars(base):
        merged = _merged(args, key, getattr(base, key))
        values[key] = merged
    return adaptmod.AdaptationConfig(**values).validate()


def _require_path(path, what):
    if path is None:
        raise KgdError(f"missing required {what}")
    p = Path(path)
    if not p.exists():
        raise KgdError(f"{what} not found: {p}")
    return p


def _output_dir(args):
    out = Path(_merged(args, "output_dir", "kgd-output"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_lkg_extract(args):
    lexicon_path = _require_path(_merged(args, "lexicon"), "lexicon path")
    entries = lex.parse_lexicon(lexicon_path)
    mode = _merged(args, "lkg_mode", lex.HIERARCHY)
    prompts = lex.expand_prompts(entries, mode, _merged(args, "hyponym_text", "definition"))
    emb_path = _merged(args, "prompt_embeddings")
    seed = int(_merged(args, "seed", 0))
    if emb_path is not None:
        provider = embio.load_embeddings(_require_path(emb_path, "prompt embeddings"))
    else:
        dim = int(_merged(args, "stub_dim", 64))
        provider = lambda text: embio.stub_encode(text, dim, seed)  # noqa: E731
    graph = lkgmod.lkg_extract(
        prompts, provider, hidden_dim=int(_merged(args, "gcn_hidden_dim", 256)), seed=seed
    )
    out = _output_dir(args) / "lkg"
    lkgmod.save_lkg(graph, out)
    log.info("wrote language-graph checkpoint with %d nodes to %s", graph.n_nodes, out)
    print(out)
    return EXIT_OK


def cmd_vkg_init(args):
    emb_path = _require_path(_merged(args, "category_embeddings"), "category embeddings")
    graph = vkgmod.vkg_init(
        embio.load_embeddings(emb_path),
        lam=float(_merged(args, "vkg_lambda", 0.99)),
        alpha=float(_merged(args, "vkg_alpha", 0.5)),
        mode=_merged(args, "vkg_mode", vkgmod.DYNAMIC),
    )
    out = _output_dir(args) / "vkg"
    vkgmod.save_vkg(graph, out)
    log.info("wrote vision-graph checkpoint with %d nodes to %s", graph.n_categories, out)
    print(out)
    return EXIT_OK


def cmd_calibrate(args):
    proposals_path = _require_path(_merged(args, "proposals"), "proposals path")
    if args.lkg is None and args.vkg is None:
        raise KgdError("calibrate needs --lkg and/or --vkg checkpoints")
    graph = lkgmod.load_lkg(_require_path(args.lkg, "lkg checkpoint")) if args.lkg else None
    vision = vkgmod.load_vkg(_require_path(args.vkg, "vkg checkpoint")) if args.vkg else None
    n_c = graph.n_categories if graph else vision.n_categories
    tau = float(_merged(args, "tau", 0.25))
    temperature = float(_merged(args, "temperature", 1.0))

    batches = embio.load_proposals(proposals_path, n_categories=n_c)
    root = proposals_path.parent
    out_path = _output_dir(args) / "calibrated.jsonl"
    features_cache = {}
    with open(out_path, "w", encoding="utf-8") as fh:
        for batch in batches:
            if batch.features_file not in features_cache:
                features_cache[batch.features_file] = embio.load_embeddings(
                    root / batch.features_file
                )
            feats_all = features_cache[batch.features_file]
            kept = adaptmod.threshold_filter(batch, tau)
            feats = feats_all[kept.feature_rows]
            arms = []
            record = {"image_id": batch.image_id, "kept": int(len(kept))}
            if graph is not None:
                q_f, _, _ = lkgmod.gcn_forward(graph, feats)
                p_l = lkgmod.lkg_calibrate(kept.probs, q_f)
                arms.append(p_l)
                record["p_l"] = [[float(v) for v in row] for row in p_l]
            if vision is not None:
                p_v = vkgmod.vkg_calibrate(vision, feats, kept.probs, temperature)
                arms.append(p_v)
                record["p_v"] = [[float(v) for v in row] for row in p_v]
            if len(kept):
                p_tilde = adaptmod.minmax_renorm(sum(arms))
            else:
                p_tilde = np.zeros((0, n_c))
            record["boxes"] = [[float(v) for v in row] for row in kept.boxes]
            record["p_tilde"] = [[float(v) for v in row] for row in p_tilde]
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    log.info("wrote calibrated labels to %s", out_path)
    print(out_path)
    return EXIT_OK


def _synth_spec(args):
    fields = dict(
        n_categories=int(_merged(args, "categories", 3)),
        dim=int(_merged(args, "dim", 32)),
        shift=float(_merged(args, "shift", 1.5)),
        n_images=int(_merged(args, "images", 600)),
        proposals_per_image=int(_merged(args, "proposals_per_image", 4)),
        seed=int(_merged(args, "seed", 42)),
    )
    return synthmod.SynthSpec(**fields).validate()


def cmd_synth(args):
    out = _output_dir(args)
    manifest = synthmod.synth_generate(_synth_spec(args), out)
    log.info("wrote synthetic fixtures to %s", out)
    print(manifest)
    return EXIT_OK


def cmd_adapt(args):
    out = _output_dir(args)
    config = _build_adaptation_config(args, desk_defaults=args.synthetic is not None)
    if args.synthetic is not None:
        if args.synthetic == "default":
            spec = synthmod.SynthSpec(seed=config.seed)
        else:
            doc = json.loads(_require_path(args.synthetic, "synthetic spec").read_text())
            spec = synthmod.SynthSpec(**doc).validate()
        manifest = synthmod.synth_generate(spec, out / "synth")
        data = adaptmod.data_from_manifest(manifest, config)
    elif _merged(args, "manifest") is not None:
        manifest = _require_path(_merged(args, "manifest"), "manifest")
        data = adaptmod.data_from_manifest(manifest, config)
    else:
        lexicon_path = _require_path(_merged(args, "lexicon"), "lexicon path")
        proposals_path = _require_path(_merged(args, "proposals"), "proposals path")
        prompt_emb = _merged(args, "prompt_embeddings")
        cat_emb = _merged(args, "category_embeddings")
        data = adaptmod.load_adaptation_data(
            lexicon_path,
            proposals_path,
            config,
            prompt_embeddings=prompt_emb,
            category_embeddings=cat_emb,
        )
    report = adaptmod.run_adaptation(config, data, out)
    if report["probe"]:
        log.info(
            "teacher probe accuracy %.4f (source-only %.4f)",
            report["probe"]["teacher_accuracy"],
            report["probe"]["source_only_accuracy"],
        )
    print(out / "report.json")
    return EXIT_OK


def cmd_validate(args):
    checked = 0
    lexicon_path = _merged(args, "lexicon")
    manifest_path = _merged(args, "manifest")
    proposals_path = _merged(args, "proposals")
    embedding_paths = list(args.embeddings or [])
    n_categories = None

    if manifest_path:
        root = Path(_require_path(manifest_path, "manifest")).parent
        doc = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
        lexicon_path = lexicon_path or (root / doc["lexicon"])
        proposals_path = proposals_path or (root / doc["proposals"])
        for key in (
            "prompt_embeddings",
            "category_embeddings",
            "definition_embeddings",
            "source_features",
            "probe_features",
        ):
            if doc.get(key):
                embedding_paths.append(root / doc[key])

    if lexicon_path:
        entries = lex.parse_lexicon(_require_path(lexicon_path, "lexicon"))
        n_categories = len(entries)
        lex.expand_prompts(entries, lex.HIERARCHY)
        checked += 1
        log.info("lexicon ok: %d categories", n_categories)
    for path in embedding_paths:
        m = embio.load_embeddings(_require_path(path, "embedding file"))
        checked += 1
        log.info("embedding file ok: %s (%dx%d)", path, m.shape[0], m.shape[1])
    if proposals_path:
        proposals_path = _require_path(proposals_path, "proposals")
        batches = embio.load_proposals(proposals_path, n_categories=n_categories)
        root = proposals_path.parent
        sizes = {}
        for b in batches:
            if b.features_file not in sizes:
                sizes[b.features_file] = embio.load_embeddings(root / b.features_file).shape[0]
            if len(b) and int(b.feature_rows.max()) >= sizes[b.features_file]:
                raise KgdError(
                    f"{b.image_id}: feature row {int(b.feature_rows.max())} out of range"
                )
        checked += 1
        log.info("proposals ok: %d batches", len(batches))
    if checked == 0:
        raise KgdError("nothing to validate: pass --lexicon/--proposals/--embeddings/--manifest")
    print(f"ok: {checked} artifact group(s) valid")
    return EXIT_OK


def build_parser():
    # SUPPRESS keeps a flag given before the subcommand from being clobbered
    # by the subparser's default when it is shared via ``parents``.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="master RNG seed")
    common.add_argument("--output-dir", dest="output_dir", help="directory for all outputs")
    common.add_argument(
        "--log-level",
        dest="log_level",
        choices=["error", "warn", "info", "debug"],
        help="logging verbosity (default warn)",
    )

    parser = argparse.ArgumentParser(
        prog="kgd",
        description="Knowledge-graph-calibrated pseudo-labeling engine",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lkg-extract", parents=[common], help="build a language-graph checkpoint")
    p.add_argument("--lexicon", help="lexicon JSON file")
    p.add_argument("--mode", dest="lkg_mode", choices=list(lex.PROMPT_MODES))
    p.add_argument("--hyponym-text", dest="hyponym_text", choices=["definition", "name"])
    p.add_argument("--prompt-embeddings", dest="prompt_embeddings")
    p.add_argument("--stub-dim", dest="stub_dim", type=int)
    p.add_argument("--hidden-dim", dest="gcn_hidden_dim", type=int)
    p.set_defaults(func=cmd_lkg_extract)

    p = sub.add_parser("vkg-init", parents=[common], help="build a vision-graph checkpoint")
    p.add_argument("--category-embeddings", dest="category_embeddings")
    p.add_argument("--lambda", dest="vkg_lambda", type=float)
    p.add_argument("--alpha", dest="vkg_alpha", type=float)
    p.add_argument("--mode", dest="vkg_mode", choices=list(vkgmod.VKG_MODES))
    p.set_defaults(func=cmd_vkg_init)

    p = sub.add_parser("calibrate", parents=[common], help="calibrate stored teacher proposals")
    p.add_argument("--proposals")
    p.add_argument("--lkg", help="language-graph checkpoint directory")
    p.add_argument("--vkg", help="vision-graph checkpoint directory")
    p.add_argument("--tau", type=float)
    p.add_argument("--temperature", type=float)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("adapt", parents=[common], help="run the adaptation loop")
    p.add_argument("--synthetic", nargs="?", const="default", help="'default' or a spec JSON path")
    p.add_argument("--manifest")
    p.add_argument("--lexicon")
    p.add_argument("--proposals")
    p.add_argument("--prompt-embeddings", dest="prompt_embeddings")
    p.add_argument("--category-embeddings", dest="category_embeddings")
    p.add_argument("--fusion", choices=list(adaptmod.FUSION_MODES))
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--ema-rate", dest="ema_rate", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--lkg-mode", dest="lkg_mode", choices=list(lex.PROMPT_MODES))
    p.add_argument("--vkg-mode", dest="vkg_mode", choices=list(vkgmod.VKG_MODES))
    p.add_argument("--temperature", type=float)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic fixtures")
    p.add_argument("--categories", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--shift", type=float)
    p.add_argument("--images", type=int)
    p.add_argument("--proposals-per-image", dest="proposals_per_image", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", parents=[common], help="validate fixture files")
    p.add_argument("--lexicon")
    p.add_argument("--proposals")
    p.add_argument("--embeddings", nargs="*")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    level = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
             "debug": logging.DEBUG}[getattr(args, "log_level", None) or "warn"]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        config_path = getattr(args, "config", None)
        args.config_values = _load_config(config_path) if config_path else {}
        return args.func(args)
    except (KgdError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - internal failures
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
