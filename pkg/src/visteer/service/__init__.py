from .app import ServiceConfig, create_app
from .sessions import (
    PROTOCOL_VERSION,
    LiveSession,
    SessionConfig,
    SessionManager,
    Subscriber,
    decode_raster,
    encode_raster,
    prompt_from_wire,
    rollout_result_dict,
)

__all__ = [
    "PROTOCOL_VERSION",
    "LiveSession",
    "ServiceConfig",
    "SessionConfig",
    "SessionManager",
    "Subscriber",
    "create_app",
    "decode_raster",
    "encode_raster",
    "prompt_from_wire",
    "rollout_result_dict",
]
