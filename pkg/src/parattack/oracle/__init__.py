"""Oracle wire protocol, transports, caching, masks, and synthetic stand-ins."""

from .cache import IouCache, JudgeCache, cached_evaluate
from .client import (
    AutoencoderClient,
    EmbeddingClient,
    JudgeClient,
    OracleClient,
    OracleEndpoint,
    SegmentationClient,
)
from .dataset import QuerySample, load_samples, save_samples
from .masks import BinaryMask, mask_iou
from .protocol import (
    OracleError,
    ProtocolError,
    RemoteOracleError,
    TransportError,
)

__all__ = [
    "AutoencoderClient",
    "BinaryMask",
    "EmbeddingClient",
    "IouCache",
    "JudgeCache",
    "JudgeClient",
    "OracleClient",
    "OracleEndpoint",
    "OracleError",
    "ProtocolError",
    "QuerySample",
    "RemoteOracleError",
    "SegmentationClient",
    "TransportError",
    "cached_evaluate",
    "load_samples",
    "mask_iou",
    "save_samples",
]
