"""Tensor file format: one JSON header line followed by a little-endian payload.

Layout (see FILE_FORMATS.md)::

    {"format": "projdet-tensor", "version": 1, "dtype": "<f8", "shape": [2, 3]}\\n
    <row-major IEEE-754 little-endian bytes>
"""

import json
from typing import Union

import numpy as np

from .exceptions import CheckpointError
from .tensor import Tensor

FORMAT_NAME = "projdet-tensor"
FORMAT_VERSION = 1
SUPPORTED_DTYPES = ("<f8", "<f4")


def dumps(value: Union[Tensor, np.ndarray]) -> bytes:
    array = value.data if isinstance(value, Tensor) else np.asarray(value)
    if array.dtype.kind != "f":
        array = array.astype(np.float64)
    array = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<"))
    dtype = array.dtype.str
    if dtype not in SUPPORTED_DTYPES:
        raise CheckpointError(f"unsupported dtype {dtype}")
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "dtype": dtype, "shape": list(array.shape)}
    return json.dumps(header, sort_keys=True).encode("ascii") + b"\n" + array.tobytes(order="C")


def loads(blob: bytes) -> np.ndarray:
    """
    Decode bytes produced by :func:`dumps`.

    Raises:
        CheckpointError: If the header is malformed or the payload is truncated
    """
    newline = blob.find(b"\n")
    if newline < 0:
        raise CheckpointError("tensor blob has no header line")
    try:
        header = json.loads(blob[:newline].decode("ascii"))
    except (UnicodeDecodeError, ValueError) as e:
        raise CheckpointError(f"unreadable tensor header: {str(e)}")
    if header.get("format") != FORMAT_NAME or header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"not a {FORMAT_NAME} v{FORMAT_VERSION} blob")
    dtype = header.get("dtype")
    if dtype not in SUPPORTED_DTYPES:
        raise CheckpointError(f"unsupported dtype {dtype}")
    shape = tuple(int(n) for n in header["shape"])
    payload = blob[newline + 1:]
    expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
    if len(payload) != expected:
        raise CheckpointError(f"payload holds {len(payload)} bytes, header promises {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(np.dtype(dtype).newbyteorder("="))


def save_tensor(path: str, value: Union[Tensor, np.ndarray]) -> str:
    try:
        with open(path, "wb") as f:
            f.write(dumps(value))
    except IOError as e:
        raise CheckpointError(f"Failed to write tensor to {path}: {str(e)}")
    return path


def load_tensor(path: str) -> Tensor:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except IOError as e:
        raise CheckpointError(f"Failed to read tensor from {path}: {str(e)}")
    return Tensor(loads(blob))
