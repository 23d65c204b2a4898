"""Cascaded interaction network for natural language inference, built on a small numpy autograd core."""

from .data import ExampleRecord, Vocabulary, build_vocab, load_jsonl, tokenize_pair
from .encoder import EncoderConfig
from .features import DenseNetConfig
from .model import ABLATIONS, CIRN, ModelConfig

__all__ = [
    "ABLATIONS",
    "CIRN",
    "DenseNetConfig",
    "EncoderConfig",
    "ExampleRecord",
    "ModelConfig",
    "Vocabulary",
    "build_vocab",
    "load_jsonl",
    "tokenize_pair",
]
__version__ = "0.1.0"
