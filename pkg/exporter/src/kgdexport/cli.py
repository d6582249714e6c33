"""CLI: export-lexicon and export-embeddings.

Exit codes: 0 success, 1 model load/internal failure, 2 input error,
3 partial success (some categories skipped; see the manifest's skip list).
"""

import argparse
import json
import sys
from pathlib import Path

from .encoders import EncoderError, load_encoder
from .export import ExportError, ExportManifest, export_crop_embeddings, export_lexicon, export_text_embeddings
from .kgde import KgdeError
from .wndb import WordNetDb, WordNetError

EXIT_OK = 0
EXIT_MODEL = 1
EXIT_INPUT = 2
EXIT_PARTIAL = 3


def cmd_export_lexicon(args):
    db = WordNetDb.discover(args.wordnet_dir)
    categories = Path(args.categories).read_text(encoding="utf-8").splitlines()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n, skipped = export_lexicon(categories, db, out)
    manifest = ExportManifest(
        model="",
        categories=[c for c in categories if c.strip()],
        outputs={"lexicon": out.name},
        skipped=skipped,
    )
    manifest.write(out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote {n} categories to {out}")
    if skipped:
        for rec in skipped:
            print(f"skipped {rec['category']!r}: {rec['reason']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_export_embeddings(args):
    encoder = load_encoder(args.model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.mode == "text":
        texts = [t for t in Path(args.input).read_text(encoding="utf-8").splitlines() if t.strip()]
        shape = export_text_embeddings(texts, encoder, out, normalize=args.normalize)
        source = args.input
    else:
        shape = export_crop_embeddings(args.input, encoder, out, normalize=args.normalize)
        source = args.input
    manifest = ExportManifest(
        model=encoder.name,
        outputs={"embeddings": out.name},
        proposal_source=str(source),
    )
    manifest.write(out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote {shape[0]}x{shape[1]} embeddings to {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kgd-export",
        description="Export lexicon and embedding fixtures in the engine's formats",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export-lexicon", help="resolve categories against WordNet")
    p.add_argument("--categories", required=True, help="text file, one category per line")
    p.add_argument("--out", required=True, help="lexicon JSON output path")
    p.add_argument("--wordnet-dir", help="WordNet database directory (defaults to $WNSEARCHDIR)")
    p.set_defaults(func=cmd_export_lexicon)

    p = sub.add_parser("export-embeddings", help="encode texts or image crops")
    p.add_argument("--mode", choices=["text", "crops"], required=True)
    p.add_argument("--in", dest="input", required=True,
                   help="text file (one prompt per line) or boxes JSON for crops")
    p.add_argument("--out", required=True, help="embedding file output path")
    p.add_argument("--model", default="hf:.", help="hf:PATH | tiny:SEED | hash:DIM[:SEED]")
    p.add_argument("--no-normalize", dest="normalize", action="store_false",
                   help="keep raw encoder norms instead of unit rows")
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EncoderError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (WordNetError, ExportError, KgdeError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
