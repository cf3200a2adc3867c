"""Bit-exact persistence: P5 PGM images, the DTN1 tensor container, and
the checkpoint container (JSON metadata header + raw float64 payload).

All writers go through an atomic write-temp-then-rename path.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

TENSOR_MAGIC = b"DTN1"
CHECKPOINT_MAGIC = b"CKP1"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# PGM (binary P5, maxval 255 or 65535)
# ---------------------------------------------------------------------------

def load_pgm(path) -> np.ndarray:
    """Read a P5 PGM into a float64 image scaled to [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] == b"P2":
        raise FormatError("ASCII PGM (P2) is not supported; use binary P5")
    if data[:2] != b"P5":
        raise FormatError(f"not a P5 PGM: magic {data[:2]!r}")
    # header tokens: magic, width, height, maxval; '#' comments allowed
    pos, tokens = 2, []
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as e:
        raise FormatError(f"malformed PGM header: {e}") from None
    if maxval not in (255, 65535):
        raise FormatError(f"unsupported maxval {maxval}")
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype(np.uint8)
    count = width * height
    payload = data[pos:pos + count * dtype.itemsize]
    if len(payload) != count * dtype.itemsize:
        raise FormatError(
            f"truncated payload: expected {count * dtype.itemsize} bytes, "
            f"got {len(payload)}")
    img = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    return (img / maxval).reshape(height, width)


def save_pgm(image: np.ndarray, path, maxval: int = 255):
    """Quantize [0,1] image (round half away from zero) and write P5."""
    if maxval not in (255, 65535):
        raise FormatError(f"unsupported maxval {maxval}")
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    q = np.floor(image * maxval + 0.5).astype(np.uint32)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n{maxval}\n".encode()
    if maxval == 255:
        payload = q.astype(np.uint8).tobytes()
    else:
        payload = q.astype(">u2").tobytes()
    atomic_write(path, header + payload)


# ---------------------------------------------------------------------------
# DTN1 tensor container
# ---------------------------------------------------------------------------

def tensor_bytes(tensor: np.ndarray) -> bytes:
    t = np.ascontiguousarray(tensor, dtype=np.float64)
    head = TENSOR_MAGIC + struct.pack("<I", t.ndim)
    head += struct.pack(f"<{t.ndim}I", *t.shape)
    return head + t.astype("<f8").tobytes()


def save_tensor(path, tensor: np.ndarray):
    atomic_write(path, tensor_bytes(tensor))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    return tensor_from_bytes(data)


def tensor_from_bytes(data: bytes) -> np.ndarray:
    if data[:4] != TENSOR_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {TENSOR_MAGIC!r}")
    (rank,) = struct.unpack_from("<I", data, 4)
    shape = struct.unpack_from(f"<{rank}I", data, 8)
    off = 8 + 4 * rank
    count = int(np.prod(shape)) if rank else 1
    expected = off + 8 * count
    if len(data) != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected} bytes, "
            f"got {len(data)}")
    arr = np.frombuffer(data, dtype="<f8", count=count, offset=off)
    return arr.reshape(shape).astype(np.float64)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: dict, metadata: dict):
    """params: name -> float64 ndarray.  Layout:
    magic | u32 header length | JSON header | concatenated payloads.

    The JSON header carries the metadata document plus the parameter
    table (name, shape, dtype, byte offset into the payload region).
    """
    names = sorted(params)
    table, payload = [], bytearray()
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype=np.float64)
        table.append({"name": name, "shape": list(arr.shape),
                      "dtype": "f8", "offset": len(payload)})
        payload += arr.astype("<f8").tobytes()
    header = {"version": CHECKPOINT_VERSION, "metadata": metadata,
              "params": table}
    hbytes = json.dumps(header, sort_keys=True,
                        separators=(",", ":")).encode()
    blob = (CHECKPOINT_MAGIC + struct.pack("<I", len(hbytes)) + hbytes
            + bytes(payload))
    atomic_write(path, blob)


def load_checkpoint(path):
    """Returns (params dict, metadata dict)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}")
    (hlen,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8:8 + hlen].decode())
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version "
                          f"{header.get('version')}")
    base = 8 + hlen
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        off = base + entry["offset"]
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off)
        params[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return params, header["metadata"]


def write_manifest(path, config: dict, seed, extra: dict | None = None):
    """Every command writes one of these next to its outputs."""
    import numpy
    from . import __version__
    doc = {"config": config, "seed": seed,
           "versions": {"csdmp": __version__, "numpy": numpy.__version__}}
    if extra:
        doc.update(extra)
    atomic_write(path, (json.dumps(doc, sort_keys=True, indent=2) + "\n")
                 .encode())


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
