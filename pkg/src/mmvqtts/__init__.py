"""Multi-speaker, multi-lingual TTS over discrete VQ acoustic tokens.

Modules: corpus, alignment, selection, frontend, features, txt2vec, vec2wav,
synthesis, plus the pipeline/cli/service plumbing. Submodules are imported
on demand so ``import mmvqtts`` stays cheap.
"""

from .errors import StageError, VQTTSError

__version__ = "0.1.0"

__all__ = ["StageError", "VQTTSError", "__version__"]
