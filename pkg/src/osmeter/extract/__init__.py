"""Prompt-driven feature extraction with a text-search baseline."""

from osmeter.extract.baseline import baseline_text_search
from osmeter.extract.cache import ResponseCache
from osmeter.extract.features import (
    BOOLEAN_FEATURES,
    ExtractionSettings,
    FeatureExtraction,
    extract_corpus,
    extract_features,
    merge_fragments,
    read_features,
    write_features,
)
from osmeter.extract.providers import (
    LiveProvider,
    ProviderError,
    ProviderRequest,
    ProviderResponse,
    RateLimiter,
    RateLimitError,
    StubProvider,
)
from osmeter.extract.templates import TEMPLATE_IDS, PromptError, build_prompt, load_template
from osmeter.extract.validate import SchemaError, validate_response

__all__ = [
    "BOOLEAN_FEATURES", "ExtractionSettings", "FeatureExtraction", "LiveProvider", "PromptError",
    "ProviderError", "ProviderRequest", "ProviderResponse", "RateLimitError", "RateLimiter",
    "ResponseCache", "SchemaError", "StubProvider", "TEMPLATE_IDS", "baseline_text_search",
    "build_prompt", "extract_corpus", "extract_features", "load_template", "merge_fragments",
    "read_features", "validate_response", "write_features",
]
