"""
Binary PPM (P6, maxval 255) reading and writing.
"""

from __future__ import annotations

import logging

import numpy as np

from ecfnet.exceptions import MalformedHeader
from ecfnet.exceptions import ShapeError
from ecfnet.exceptions import TruncatedPayload
from ecfnet.tensor import Tensor

__all__ = [
    "decode_ppm",
    "encode_ppm",
    "load_ppm",
    "quantize",
    "save_ppm",
]

logger = logging.getLogger(__name__)

WHITESPACE = b" \t\n\r\x0b\x0c"


def _header_fields(data):
    """Return the four header tokens and the offset of the first pixel byte"""
    fields = []
    offset = 0
    while len(fields) < 4:  # noqa: PLR2004
        while offset < len(data) and (data[offset] in WHITESPACE or data[offset : offset + 1] == b"#"):
            if data[offset : offset + 1] == b"#":
                end = data.find(b"\n", offset)
                offset = len(data) if end < 0 else end + 1
            else:
                offset += 1
        start = offset
        while offset < len(data) and data[offset] not in WHITESPACE and data[offset : offset + 1] != b"#":
            offset += 1
        if start == offset:
            raise MalformedHeader(f"header ends after {len(fields)} of 4 fields")
        fields.append(bytes(data[start:offset]))
    if offset >= len(data) or data[offset] not in WHITESPACE:
        raise MalformedHeader("header must end with a single whitespace byte")
    return fields, offset + 1


def decode_ppm(data):
    """Decode P6 bytes into a (1, 3, h, w) float32 tensor in [0, 1]"""
    fields, offset = _header_fields(data)
    if fields[0] != b"P6":
        raise MalformedHeader(f"expected magic P6, got {fields[0]!r}")
    try:
        width, height, maxval = (int(field) for field in fields[1:])
    except ValueError as error:
        raise MalformedHeader(f"non-numeric header field in {fields[1:]}") from error
    if width < 1 or height < 1:
        raise MalformedHeader(f"image size must be positive, got {width}x{height}")
    if maxval != 255:  # noqa: PLR2004
        raise MalformedHeader(f"only maxval 255 is supported, got {maxval}")
    size = width * height * 3
    payload = data[offset : offset + size]
    if len(payload) < size:
        raise TruncatedPayload(f"expected {size} pixel bytes, got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Tensor((pixels.transpose(2, 0, 1)[None] / 255).astype(np.float32))


def quantize(image):
    """Map [0, 1] values to 0..255 bytes, rounding half to even"""
    array = image.data if isinstance(image, Tensor) else np.asarray(image)
    return np.rint(np.clip(array.astype(np.float64), 0, 1) * 255).astype(np.uint8)


def encode_ppm(image):
    array = image.data if isinstance(image, Tensor) else np.asarray(image)
    if array.ndim == 4:  # noqa: PLR2004
        if array.shape[0] != 1:
            raise ShapeError(f"can only write a single image, got a batch of {array.shape[0]}", axis="batch")
        array = array[0]
    if array.ndim != 3 or array.shape[0] != 3:  # noqa: PLR2004
        raise ShapeError(f"expected a (3, h, w) image, got shape {array.shape}", axis="channel")
    _, height, width = array.shape
    pixels = quantize(array).transpose(1, 2, 0)
    return f"P6\n{width} {height}\n255\n".encode() + pixels.tobytes()


def load_ppm(path):
    with open(path, "rb") as stream:
        data = stream.read()
    return decode_ppm(data)


def save_ppm(image, path):
    data = encode_ppm(image)
    with open(path, "wb") as stream:
        stream.write(data)
    logger.debug("wrote %s (%d bytes)", path, len(data))
