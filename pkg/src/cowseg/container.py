"""Portable tensor container (``.cowt``).

Layout: magic ``COWT``, one version byte, then zero or more blocks. Each block
is a UTF-8 header line ``name dtype shape`` (shape as comma-separated dims,
``-`` for a scalar) followed by the raw little-endian array bytes.
"""

from __future__ import annotations

import os
from typing import Mapping

import numpy as np

from .core import CowError

MAGIC = b"COWT"
VERSION = 1
DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "u8": np.dtype("u1")}
_CODES = {("f", 4): "f32", ("f", 8): "f64", ("u", 1): "u8", ("b", 1): "u8"}


class FormatError(CowError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})" if offset is not None else message)


class VersionError(FormatError):
    pass


def encode_blocks(blocks: Mapping[str, np.ndarray]) -> bytes:
    out = [MAGIC, bytes([VERSION])]
    for name, arr in blocks.items():
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"block name {name!r} must be non-empty without whitespace")
        arr = np.asarray(arr)
        code = _CODES.get((arr.dtype.kind, arr.dtype.itemsize))
        if code is None:
            raise ValueError(f"block {name!r}: unsupported dtype {arr.dtype}")
        shape = ",".join(str(d) for d in arr.shape) if arr.ndim else "-"
        out.append(f"{name} {code} {shape}\n".encode("utf-8"))
        out.append(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
    return b"".join(out)


def decode_blocks(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic bytes, not a COWT container", 0)
    if len(data) < 5:
        raise FormatError("truncated before version byte", len(data))
    if data[4] != VERSION:
        raise VersionError(f"unsupported container version {data[4]} (expected {VERSION})", 4)
    blocks: dict[str, np.ndarray] = {}
    pos = 5
    while pos < len(data):
        end = data.find(b"\n", pos)
        if end < 0:
            raise FormatError("unterminated block header", pos)
        try:
            name, code, shape_s = data[pos:end].decode("utf-8").split(" ")
            shape = () if shape_s == "-" else tuple(int(d) for d in shape_s.split(","))
            dtype = DTYPES[code]
        except (UnicodeDecodeError, ValueError, KeyError):
            raise FormatError("malformed block header", pos) from None
        if any(d < 0 for d in shape):
            raise FormatError("negative dimension in block header", pos)
        if name in blocks:
            raise FormatError(f"duplicate block {name!r}", pos)
        start = end + 1
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if start + nbytes > len(data):
            raise FormatError(f"block {name!r} truncated: need {nbytes} bytes, have {len(data) - start}", start)
        blocks[name] = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize, offset=start).reshape(shape).copy()
        pos = start + nbytes
    return blocks


def write_container(path: str | os.PathLike, blocks: Mapping[str, np.ndarray]) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode_blocks(blocks))
    os.replace(tmp, path)


def read_container(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_blocks(fh.read())


def text_block(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def block_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")
