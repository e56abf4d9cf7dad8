"""Span-based joint entity and relation extraction with a three-stream attention encoder."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

from .data import AnnotatedDocument, Dataset, EntityMention, RelationMention, TypeSchema
from .model import JointExtractor, ModelConfig
from .tagging import decode_labels, encode_labels

__all__ = [
    "AnnotatedDocument", "Dataset", "EntityMention", "RelationMention", "TypeSchema",
    "JointExtractor", "ModelConfig", "decode_labels", "encode_labels", "__version__",
]
