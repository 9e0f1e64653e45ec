"""
Checkpoint container.

    magic  b"AMGC"
    u16    version (little-endian)
    records until end of file:
        u32    name length, then the UTF-8 name
        u8     dtype tag (1 float64, 2 int64, 3 uint8)
        u8     rank, then rank x u32 extents
        payload, little-endian, C order

Records are written in insertion order, so save -> load -> save is byte-identical.
"""
import json
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Union

import numpy as np

from components.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"AMGC"
VERSION = 1
DTYPE_TAGS = {1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
CONFIG_KEY = "meta.config"
STEP_KEY = "meta.step"


def _tag(array: np.ndarray) -> int:
    if array.dtype == np.uint8:
        return 3
    if array.dtype.kind in ("i", "u", "b"):
        return 2
    if array.dtype.kind == "f":
        return 1
    raise CheckpointError(f"cannot store dtype {array.dtype}")


def encode_checkpoint(arrays: Dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<H", VERSION)]
    for name, array in arrays.items():
        array = np.asarray(array)
        tag = _tag(array)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", tag, array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob: bytes) -> Dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError(f"not a checkpoint: magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 6:
        raise CheckpointError("checkpoint truncated inside the header")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}; this build reads version {VERSION}")
    arrays: Dict[str, np.ndarray] = OrderedDict()
    offset = 6
    try:
        while offset < len(blob):
            (length,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            if offset + length > len(blob):
                raise CheckpointError("checkpoint truncated inside a record name")
            name = blob[offset:offset + length].decode("utf-8")
            offset += length
            tag, rank = struct.unpack_from("<BB", blob, offset)
            offset += 2
            if tag not in DTYPE_TAGS:
                raise CheckpointError(f"record {name} has unknown dtype tag {tag}")
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            dtype = DTYPE_TAGS[tag]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if offset + nbytes > len(blob):
                raise CheckpointError(f"checkpoint truncated inside record {name}")
            data = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
            arrays[name] = data.reshape(shape).astype(dtype.newbyteorder("="), copy=True)
            offset += nbytes
    except struct.error as exc:
        raise CheckpointError(f"checkpoint truncated: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"corrupt record name: {exc}") from exc
    return arrays


def save_checkpoint(path: Union[str, Path], arrays: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(arrays))
    logger.info("checkpoint written to %s (%d records)", path, len(arrays))
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint {path} does not exist") from exc
    return decode_checkpoint(blob)


def config_record(config_json: str) -> np.ndarray:
    return np.frombuffer(config_json.encode("utf-8"), dtype=np.uint8).copy()


def read_config_record(arrays: Dict[str, np.ndarray]) -> dict:
    if CONFIG_KEY not in arrays:
        raise CheckpointError(f"checkpoint has no {CONFIG_KEY} record")
    try:
        return json.loads(arrays[CONFIG_KEY].tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt {CONFIG_KEY} record: {exc}") from exc


def load_backbone_weights(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Exported backbone weights: a container whose records are named backbone.<i>.weight / .bias."""
    arrays = load_checkpoint(path)
    picked = OrderedDict((k, v) for k, v in arrays.items() if k.startswith("backbone."))
    if not picked:
        raise CheckpointError(f"{path} holds no backbone.* records")
    return picked
