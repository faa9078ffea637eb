"""Binary tensor container I/O and vocabulary-axis row gathering.

Layout: an unsigned 64-bit little-endian header length N, then N bytes of
UTF-8 JSON mapping tensor names to ``{"dtype", "shape", "data_offsets"}``
(plus an optional ``__metadata__`` string map), then the data region.

Tensor payloads are handled as opaque bytes; nothing here ever interprets a
value numerically.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AxisMismatch, CorruptHeader, MissingTensor, OverlappingTensors, SizeMismatch
from .prune import PruneMap

DTYPE_WIDTH = {
    "F32": 4,
    "F16": 2,
    "BF16": 2,
    # carried through untouched when they appear on non-vocab tensors
    "F64": 8,
    "I64": 8,
    "U64": 8,
    "I32": 4,
    "U32": 4,
    "I16": 2,
    "U16": 2,
    "I8": 1,
    "U8": 1,
    "BOOL": 1,
    "F8_E4M3": 1,
    "F8_E5M2": 1,
}
VOCAB_DTYPES = ("F32", "F16", "BF16")


@dataclass(frozen=True)
class TensorEntry:
    name: str
    dtype: str
    shape: tuple[int, ...]
    data_offsets: tuple[int, int]

    @property
    def nbytes(self) -> int:
        return self.data_offsets[1] - self.data_offsets[0]

    @property
    def width(self) -> int:
        return DTYPE_WIDTH[self.dtype]


@dataclass
class Container:
    entries: dict[str, TensorEntry]
    data: memoryview
    metadata: dict[str, str] | None = None

    def tensor_bytes(self, name: str) -> memoryview:
        e = self.entries[name]
        return self.data[e.data_offsets[0]:e.data_offsets[1]]


@dataclass
class SurgeryPlan:
    embedding_tensor: str
    output_tensor: str | None
    vocab_axis: int
    map: PruneMap
    original_size: int = field(default=0)


def read_container(data: bytes | bytearray | memoryview) -> Container:
    buf = memoryview(data)
    if len(buf) < 8:
        raise CorruptHeader(f"file is {len(buf)} bytes; a container needs at least 8")
    (n,) = struct.unpack("<Q", buf[:8])
    if n > len(buf) - 8:
        raise CorruptHeader(f"header length {n} exceeds the {len(buf) - 8} bytes that follow it")
    try:
        header = json.loads(bytes(buf[8:8 + n]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeader(f"header is not UTF-8 JSON: {exc}") from None
    if not isinstance(header, dict):
        raise CorruptHeader("header must be a JSON object")
    region = buf[8 + n:]

    metadata = header.pop("__metadata__", None)
    if metadata is not None and not (
        isinstance(metadata, dict) and all(isinstance(v, str) for v in metadata.values())
    ):
        raise CorruptHeader("__metadata__ must map strings to strings")

    entries: dict[str, TensorEntry] = {}
    for name, info in header.items():
        try:
            dtype = info["dtype"]
            shape = tuple(int(x) for x in info["shape"])
            begin, end = (int(x) for x in info["data_offsets"])
        except (KeyError, TypeError, ValueError):
            raise CorruptHeader(f"tensor {name!r}: entry needs dtype, shape and data_offsets") from None
        if dtype not in DTYPE_WIDTH:
            raise CorruptHeader(f"tensor {name!r}: unknown dtype {dtype!r}")
        if any(x < 0 for x in shape) or not 0 <= begin <= end:
            raise CorruptHeader(f"tensor {name!r}: negative extent or inverted offsets")
        if end > len(region):
            raise SizeMismatch(f"tensor {name!r}: offsets [{begin}, {end}) run past the {len(region)}-byte data region")
        expected = math.prod(shape) * DTYPE_WIDTH[dtype]
        if end - begin != expected:
            raise SizeMismatch(
                f"tensor {name!r}: offsets span {end - begin} bytes but shape {list(shape)} x {dtype} needs {expected}"
            )
        entries[name] = TensorEntry(name, dtype, shape, (begin, end))

    spans = sorted((e.data_offsets, e.name) for e in entries.values() if e.nbytes)
    for (a, a_name), (b, b_name) in zip(spans, spans[1:]):
        if b[0] < a[1]:
            raise OverlappingTensors(f"tensors {a_name!r} and {b_name!r} share bytes [{b[0]}, {min(a[1], b[1])})")
    return Container(entries, region, metadata)


def write_container(tensors: list[tuple[TensorEntry, bytes | memoryview]], metadata: dict[str, str] | None = None) -> bytes:
    """Serialize tensors contiguously in the given order.

    The header is padded with spaces to a multiple of 8 bytes so the data
    region stays aligned.
    """
    header: dict[str, object] = {}
    if metadata is not None:
        header["__metadata__"] = metadata
    offset = 0
    for entry, payload in tensors:
        size = len(payload) if not isinstance(payload, memoryview) else payload.nbytes
        header[entry.name] = {
            "dtype": entry.dtype,
            "shape": list(entry.shape),
            "data_offsets": [offset, offset + size],
        }
        offset += size
    raw = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    raw += b" " * (-len(raw) % 8)
    out = bytearray(struct.pack("<Q", len(raw)))
    out += raw
    for _, payload in tensors:
        out += payload
    return bytes(out)


def container_items(c: Container) -> list[tuple[TensorEntry, memoryview]]:
    """Entries in on-disk data order with their payloads."""
    ordered = sorted(c.entries.values(), key=lambda e: (e.data_offsets, e.name))
    return [(e, c.tensor_bytes(e.name)) for e in ordered]


def gather_rows(entry: TensorEntry, payload: bytes | memoryview, axis: int, pmap: PruneMap, original_size: int | None = None) -> tuple[TensorEntry, bytes]:
    """Keep only the slices along ``axis`` listed in ``pmap.kept``.

    Returns the reshaped entry (offsets left for the writer to assign) and the
    gathered bytes; output slice i is a byte copy of input slice kept[i].
    """
    if not 0 <= axis < len(entry.shape):
        raise AxisMismatch(f"tensor {entry.name!r} has no axis {axis} (shape {list(entry.shape)})")
    extent = entry.shape[axis]
    if original_size is not None and extent != original_size:
        raise AxisMismatch(
            f"tensor {entry.name!r}: extent {extent} along axis {axis} != vocabulary size {original_size}"
        )
    if pmap.kept and pmap.kept[-1] >= extent:
        raise AxisMismatch(f"tensor {entry.name!r}: kept id {pmap.kept[-1]} beyond extent {extent}")
    outer = math.prod(entry.shape[:axis])
    inner = math.prod(entry.shape[axis + 1:]) * entry.width
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(outer, extent, inner)
    out = raw[:, np.asarray(pmap.kept, dtype=np.intp), :]
    shape = list(entry.shape)
    shape[axis] = len(pmap.kept)
    return TensorEntry(entry.name, entry.dtype, tuple(shape), (0, out.nbytes)), out.tobytes()


def apply_surgery(c: Container, plan: SurgeryPlan) -> bytes:
    """Rewrite a container with the vocabulary tensors gathered per ``plan``."""
    targets = [plan.embedding_tensor]
    if plan.output_tensor is not None:
        targets.append(plan.output_tensor)
    for name in targets:
        if name not in c.entries:
            raise MissingTensor(f"tensor {name!r} is not in the container (have {sorted(c.entries)[:8]}...)")
        if c.entries[name].dtype not in VOCAB_DTYPES:
            raise AxisMismatch(f"tensor {name!r} has dtype {c.entries[name].dtype}; vocabulary tensors must be one of {VOCAB_DTYPES}")
    tensors: list[tuple[TensorEntry, bytes | memoryview]] = []
    for entry, payload in container_items(c):
        if entry.name in targets:
            entry, payload = gather_rows(entry, payload, plan.vocab_axis, plan.map, plan.original_size or None)
        tensors.append((entry, payload))
    return write_container(tensors, c.metadata)


def read_file(path: str | Path) -> Container:
    return read_container(Path(path).read_bytes())
