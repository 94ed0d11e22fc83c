"""Frame-level SSL speech embedding export.

Writes 768-dim HuBERT embeddings at 50 Hz into the FeatureFile binary
format; the consumer reads them with its own reader, nothing is shared
beyond the wire format.
"""

from .extractor import ExtractorConfig, extract_embeddings

__all__ = ["ExtractorConfig", "extract_embeddings"]
