"""Extract per-token, per-layer MoE router gate logits into MOER traces."""

from .corpus import DEFAULT_TEXTS
from .extract import (
    ExtractionJob,
    RevisionResult,
    RouterSpec,
    UnsupportedModelError,
    extract,
    extract_from_model,
    find_router_modules,
    router_spec_from_config,
    step_from_revision,
)
from .moer import moer_bytes, write_moer

__version__ = "0.1.0"
