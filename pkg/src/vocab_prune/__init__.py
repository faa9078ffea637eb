"""Language-aware vocabulary pruning for BPE transformer checkpoints."""

__version__ = "0.1.0"

from .prune import Closure, PruneConfig, PruneMap, PruneReport, prune  # noqa: E402
from .scripts import ScriptTag, SurfaceConvention, classify_char, classify_token  # noqa: E402
from .tokenizer import TokenizerDef, parse_tokenizer, serialize_tokenizer  # noqa: E402

__all__ = [
    "Closure",
    "PruneConfig",
    "PruneMap",
    "PruneReport",
    "ScriptTag",
    "SurfaceConvention",
    "TokenizerDef",
    "classify_char",
    "classify_token",
    "parse_tokenizer",
    "prune",
    "serialize_tokenizer",
]
