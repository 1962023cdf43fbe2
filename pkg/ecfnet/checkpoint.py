"""
ECFN checkpoint container.

Layout, little-endian::

    magic     4 bytes  b"ECFN"
    version   uint32
    config    uint32 length + UTF-8 JSON of the ModelConfig
    count     uint32
    entries   count x (uint16 name length, name, uint32 ndim, ndim x uint32 dims, float32 data)
    crc       uint32   CRC-32 of every byte before it
"""

from __future__ import annotations

import json
import logging
import struct
import zlib

import numpy as np

from ecfnet.exceptions import BadMagic
from ecfnet.exceptions import ChecksumMismatch
from ecfnet.exceptions import ParameterShapeMismatch
from ecfnet.exceptions import UnsupportedVersion
from ecfnet.model import ModelConfig
from ecfnet.model import build
from ecfnet.signals import checkpoint_saved

__all__ = [
    "FORMAT_VERSION",
    "MAGIC",
    "dumps",
    "load",
    "loads",
    "save",
]

logger = logging.getLogger(__name__)

MAGIC = b"ECFN"
FORMAT_VERSION = 1

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


def dumps(model):
    config = json.dumps(model.config.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    parameters = list(model.named_parameters())
    chunks = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(config)), config, _U32.pack(len(parameters))]
    for name, parameter in parameters:
        encoded = name.encode()
        chunks.append(_U16.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(parameter.data.ndim))
        chunks.extend(_U32.pack(size) for size in parameter.shape)
        chunks.append(parameter.data.astype("<f4").tobytes())
    payload = b"".join(chunks)
    return payload + _U32.pack(zlib.crc32(payload) & 0xFFFFFFFF)


def save(model, path):
    data = dumps(model)
    with open(path, "wb") as stream:
        stream.write(data)
    logger.debug("saved checkpoint %s (%d bytes)", path, len(data))
    checkpoint_saved.send(sender=model.__class__, model=model, path=path)


class _Reader:
    def __init__(self, payload):
        self.payload = payload
        self.offset = 0

    def take(self, size):
        if self.offset + size > len(self.payload):
            raise ChecksumMismatch("checkpoint payload ends early")
        chunk = self.payload[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, layout):
        return layout.unpack(self.take(layout.size))[0]


def loads(data, config=None, dtype=np.float32):
    """
    Rebuild a model from checkpoint bytes.

    With ``config`` the stored parameters are loaded into a model of that
    config instead of the stored one; every parameter must then agree in
    name and shape.
    """
    if len(data) < len(MAGIC) + 4 * _U32.size:
        raise ChecksumMismatch(f"checkpoint is truncated ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise BadMagic(f"not an ECFN checkpoint (starts with {bytes(data[:4])!r})")
    payload, stored = data[:-4], _U32.unpack(data[-4:])[0]
    actual = zlib.crc32(payload) & 0xFFFFFFFF
    if actual != stored:
        raise ChecksumMismatch(f"checksum mismatch: stored {stored:08x}, computed {actual:08x}")

    reader = _Reader(payload)
    reader.take(len(MAGIC))
    version = reader.unpack(_U32)
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    stored_config = ModelConfig.from_dict(json.loads(reader.take(reader.unpack(_U32)).decode()))
    model = build(config or stored_config, seed=0, dtype=dtype)
    parameters = dict(model.named_parameters())

    count = reader.unpack(_U32)
    seen = set()
    for _ in range(count):
        name = reader.take(reader.unpack(_U16)).decode()
        shape = tuple(reader.unpack(_U32) for _ in range(reader.unpack(_U32)))
        size = int(np.prod(shape))
        values = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
        parameter = parameters.get(name)
        if parameter is None:
            raise ParameterShapeMismatch(f"model has no parameter {name}", parameter=name)
        if parameter.shape != shape:
            raise ParameterShapeMismatch(
                f"parameter {name} has shape {parameter.shape} in the model but {shape} in the checkpoint",
                parameter=name,
            )
        parameter.assign(values)
        seen.add(name)
    missing = [name for name in parameters if name not in seen]
    if missing:
        raise ParameterShapeMismatch(f"checkpoint has no value for parameter {missing[0]}", parameter=missing[0])
    return model


def load(path, config=None, dtype=np.float32):
    with open(path, "rb") as stream:
        data = stream.read()
    logger.debug("loading checkpoint %s (%d bytes)", path, len(data))
    return loads(data, config=config, dtype=dtype)
