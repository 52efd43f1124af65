"""Python bindings for the Chimera part-compositional pipeline core."""

import json
import os

from . import _core
from ._core import (
    DEFAULT_WORLD_SEED,
    ChimeraError,
    __version__,
    derive_seed,
    fid,
    kid,
    mmd2_unbiased,
    parteval_questions,
    parteval_score,
    render_prompt,
)

# Installed wheels carry their own copy; in-tree builds use the source data dir.
_PACKAGED_TAXONOMY = os.path.join(os.path.dirname(__file__), "data", "taxonomy.txt")
DEFAULT_TAXONOMY = _PACKAGED_TAXONOMY if os.path.exists(_PACKAGED_TAXONOMY) else _core.DEFAULT_TAXONOMY


def validate_taxonomy(path=None):
    """Load and validate a taxonomy file; returns {"domains", "parts", "atoms"}."""
    return _core.validate_taxonomy(path or DEFAULT_TAXONOMY)


def generate_corpus(n, seed=0, mix_ratio=0.5, taxonomy=None):
    """Corpus records as dicts (same content as `chimera corpus gen`)."""
    return [json.loads(line) for line in _core.generate_corpus(n, seed, mix_ratio, taxonomy or DEFAULT_TAXONOMY)]


class World(_core.World):
    """Embedding world over a taxonomy (default: the shipped one)."""

    def __init__(self, taxonomy=None, seed=DEFAULT_WORLD_SEED, dim=64):
        super().__init__(taxonomy or DEFAULT_TAXONOMY, seed, dim)


__all__ = [
    "DEFAULT_TAXONOMY",
    "DEFAULT_WORLD_SEED",
    "ChimeraError",
    "World",
    "derive_seed",
    "fid",
    "generate_corpus",
    "kid",
    "mmd2_unbiased",
    "parteval_questions",
    "parteval_score",
    "render_prompt",
    "validate_taxonomy",
]
