"""Offline exporter: real WordNet + real CLIP in, engine fixture formats out."""

from .encoders import ClipEncoder, EncoderError, HashEncoder, load_encoder
from .export import ExportError, ExportManifest, export_crop_embeddings, export_lexicon, export_text_embeddings
from .kgde import read_kgde, write_kgde
from .wndb import WordNetDb, WordNetError

__version__ = "0.1.0"
