"""
Named-tensor container: magic, version, then per tensor its name, shape and
raw little-endian float64 data. Paired with a JSON sidecar for model config.
"""
import json
import logging
import struct

import numpy as np

from services.autodiff import parameter
from services.errors import ValidationError

logger = logging.getLogger(__name__)

MAGIC = b"FTTN"
CONTAINER_VERSION = 1
HEADER_BYTES = 12


def write_tensors(params, path):
    """
    Args:
        params (dict): name -> Tensor, written in insertion order
        path (str): destination file
    """
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", CONTAINER_VERSION, len(params)))
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            shape = tensor.shape
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", len(shape)))
            f.write(struct.pack(f"<{len(shape)}I", *shape))
            f.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    logger.debug(f"Wrote {len(params)} tensors to {path}")


def read_tensors(path):
    """Read a container back into name -> parameter Tensor"""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValidationError("not a tensor container (bad magic)", path=str(path))
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CONTAINER_VERSION:
        raise ValidationError(f"unsupported container version {version}", path=str(path))
    offset = HEADER_BYTES
    params = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).astype(np.float64)
            offset += 8 * size
            params[name] = parameter(data.reshape(shape), name=name)
    except (struct.error, ValueError) as e:
        raise ValidationError(f"truncated tensor container ({e})", path=str(path)) from e
    return params


def write_sidecar(data, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def read_sidecar(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
