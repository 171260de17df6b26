"""Binary wire format for protocol messages, plus the tensor archive format.

Frame layout, little-endian throughout:

    4-byte magic "SLL1"
    1-byte kind: bits 0-4 message kind, bit 6 labels-present, bit 7 fp64 payload
    8-byte batch_id (unsigned)
    4-byte rank, then rank x 4-byte dims
    payload floats (fp32 unless the fp64 bit is set)
    optional label block: dims[0] x 8-byte signed labels

The fp64 bit exists so the framed transport can carry double-precision
trajectories bit-exactly; fp32 frames are byte-identical with the bit clear.

Tensor archives use the same layout rules: magic "SLLA", 4-byte count, then per
tensor a 4-byte name length, UTF-8 name, rank/dims as above, fp32 payload.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

MAGIC = b"SLL1"
ARCHIVE_MAGIC = b"SLLA"
MAX_RANK = 8

KINDS = ("SmashedData", "GradientReturn", "TopForward", "TopGradient", "Control")
_KIND_ID = {k: i for i, k in enumerate(KINDS)}

_LABEL_BIT = 1 << 6
_FP64_BIT = 1 << 7


class FrameError(ValueError):
    pass


@dataclass
class Message:
    kind: str
    batch_id: int
    payload: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in _KIND_ID:
            raise FrameError(f"unknown message kind {self.kind!r}")
        if self.batch_id < 0:
            raise FrameError("batch_id must be non-negative")
        if self.labels is not None and self.kind != "SmashedData":
            raise FrameError(f"labels not allowed on {self.kind}")

    def __eq__(self, other):
        if not isinstance(other, Message):
            return NotImplemented
        same_labels = (self.labels is None) == (other.labels is None) and \
            (self.labels is None or np.array_equal(self.labels, other.labels))
        return (self.kind == other.kind and self.batch_id == other.batch_id
                and self.payload.dtype == other.payload.dtype
                and self.payload.shape == other.payload.shape
                and np.array_equal(self.payload, other.payload)
                and same_labels)


def frame_encode(msg: Message) -> bytes:
    payload = np.ascontiguousarray(msg.payload)
    if payload.dtype == np.float64:
        fp64 = True
    elif payload.dtype == np.float32:
        fp64 = False
    else:
        raise FrameError(f"payload dtype must be fp32 or fp64, got {payload.dtype}")
    if not np.all(np.isfinite(payload)):
        raise FrameError("payload must be finite")
    if payload.ndim > MAX_RANK:
        raise FrameError(f"rank {payload.ndim} > {MAX_RANK}")
    if msg.labels is not None and (payload.ndim == 0
                                   or msg.labels.shape != (payload.shape[0],)):
        raise FrameError("labels must be one per leading payload row")
    kind_byte = _KIND_ID[msg.kind]
    if msg.labels is not None:
        kind_byte |= _LABEL_BIT
    if fp64:
        kind_byte |= _FP64_BIT
    parts = [MAGIC,
             bytes([kind_byte]),
             np.uint64(msg.batch_id).tobytes(),
             np.uint32(payload.ndim).tobytes(),
             np.asarray(payload.shape, dtype="<u4").tobytes(),
             payload.astype("<f8" if fp64 else "<f4", copy=False).tobytes()]
    if msg.labels is not None:
        parts.append(msg.labels.astype("<i8").tobytes())
    return b"".join(parts)


def frame_decode(buf: bytes, offset: int = 0):
    """Decode one frame starting at offset; returns (Message, next_offset).

    Raises FrameError on bad magic or truncation; never yields a partial
    message.
    """
    view = memoryview(buf)

    def take(n):
        nonlocal offset
        if offset + n > len(view):
            raise FrameError("truncated frame")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FrameError("bad magic")
    kind_byte = take(1)[0]
    kind_id = kind_byte & 0x1F
    if kind_id >= len(KINDS):
        raise FrameError(f"unknown kind id {kind_id}")
    has_labels = bool(kind_byte & _LABEL_BIT)
    fp64 = bool(kind_byte & _FP64_BIT)
    batch_id = int(np.frombuffer(take(8), dtype="<u8")[0])
    rank = int(np.frombuffer(take(4), dtype="<u4")[0])
    if rank > MAX_RANK:
        raise FrameError(f"rank {rank} > {MAX_RANK}")
    dims = tuple(int(d) for d in np.frombuffer(take(4 * rank), dtype="<u4"))
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    itemsize = 8 if fp64 else 4
    payload = np.frombuffer(take(count * itemsize),
                            dtype="<f8" if fp64 else "<f4").reshape(dims).copy()
    labels = None
    if has_labels:
        if rank == 0:
            raise FrameError("labels on a rank-0 payload")
        labels = np.frombuffer(take(8 * dims[0]), dtype="<i8").copy()
    return Message(KINDS[kind_id], batch_id, payload, labels), offset


# ---------------------------------------------------------------------------
# tensor archive (checkpoints)

def save_tensors(path, tensors: dict) -> None:
    parts = [ARCHIVE_MAGIC, np.uint32(len(tensors)).tobytes()]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        if arr.ndim > MAX_RANK:
            raise FrameError(f"rank {arr.ndim} > {MAX_RANK} for tensor {name!r}")
        encoded = name.encode("utf-8")
        parts += [np.uint32(len(encoded)).tobytes(), encoded,
                  np.uint32(arr.ndim).tobytes(),
                  np.asarray(arr.shape, dtype="<u4").tobytes(),
                  arr.tobytes()]
    data = b"".join(parts)
    with open(path, "wb") as f:
        f.write(data)


def load_tensors(path) -> dict:
    with open(path, "rb") as f:
        buf = f.read()
    view = memoryview(buf)
    offset = 0

    def take(n):
        nonlocal offset
        if offset + n > len(view):
            raise FrameError("truncated archive")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    if bytes(take(4)) != ARCHIVE_MAGIC:
        raise FrameError("bad archive magic")
    count = int(np.frombuffer(take(4), dtype="<u4")[0])
    out = {}
    for _ in range(count):
        name_len = int(np.frombuffer(take(4), dtype="<u4")[0])
        name = bytes(take(name_len)).decode("utf-8")
        rank = int(np.frombuffer(take(4), dtype="<u4")[0])
        if rank > MAX_RANK:
            raise FrameError(f"rank {rank} > {MAX_RANK}")
        dims = tuple(int(d) for d in np.frombuffer(take(4 * rank), dtype="<u4"))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        out[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).copy()
    if offset != len(view):
        raise FrameError("trailing bytes after archive")
    return out
