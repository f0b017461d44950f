"""Wire-level HTTP/2: frames and static-table header compression."""

from .frames import (
    DEFAULT_INITIAL_WINDOW,
    DEFAULT_MAX_FRAME_SIZE,
    HEADER_SIZE,
    ErrorCode,
    Flags,
    Frame,
    FrameError,
    FrameReader,
    FrameTooLarge,
    FrameType,
    NeedMoreBytes,
    ProtocolViolation,
    Setting,
    decode_frame,
    encode_frame,
)
from .hpack import DecodeError, HeaderList, hpack_decode, hpack_encode

__all__ = [
    "DEFAULT_INITIAL_WINDOW",
    "DEFAULT_MAX_FRAME_SIZE",
    "HEADER_SIZE",
    "DecodeError",
    "ErrorCode",
    "Flags",
    "Frame",
    "FrameError",
    "FrameReader",
    "FrameTooLarge",
    "FrameType",
    "HeaderList",
    "NeedMoreBytes",
    "ProtocolViolation",
    "Setting",
    "decode_frame",
    "encode_frame",
    "hpack_decode",
    "hpack_encode",
]
