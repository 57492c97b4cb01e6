"""Checkpoint container: load, validate, save, and compare model checkpoints.

File layout (bit-exact): an 8-byte little-endian unsigned header length N,
then N bytes of UTF-8 JSON mapping tensor names to
``{"dtype": tag, "shape": [...], "data_offsets": [begin, end]}`` plus an
optional ``"__metadata__"`` string map, then one raw byte buffer addressed by
those offsets. Offsets are relative to the start of the buffer.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import ml_dtypes
import numpy as np

from .errors import FormatError, UnsupportedDtype

# Tags as stored in TensorData.dtype (lowercase) -> numpy dtype.
DTYPES: dict[str, np.dtype] = {
    "f32": np.dtype(np.float32),
    "f16": np.dtype(np.float16),
    "bf16": np.dtype(ml_dtypes.bfloat16),
    "f64": np.dtype(np.float64),
}

# Tags as they appear in the file header.
_FILE_TAGS = {"F32": "f32", "F16": "f16", "BF16": "bf16", "F64": "f64"}
_TAG_TO_FILE = {v: k for k, v in _FILE_TAGS.items()}

ITEMSIZE = {tag: dt.itemsize for tag, dt in DTYPES.items()}


def promoted_dtype(tag: str) -> np.dtype:
    """Working precision for arithmetic: half floats promote to f32."""
    return np.dtype(np.float64) if tag == "f64" else np.dtype(np.float32)


@dataclass(frozen=True)
class TensorData:
    """One named tensor: raw row-major bytes plus dtype/shape description."""

    name: str
    dtype: str
    shape: tuple[int, ...]
    data: bytes

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise UnsupportedDtype(f"tensor {self.name!r}: unknown dtype {self.dtype!r}")
        if any(d < 0 for d in self.shape):
            raise FormatError(f"tensor {self.name!r}: negative dimension in {self.shape}")
        expected = math.prod(self.shape) * ITEMSIZE[self.dtype]
        if len(self.data) != expected:
            raise FormatError(
                f"tensor {self.name!r}: buffer holds {len(self.data)} bytes, "
                f"shape {self.shape} with dtype {self.dtype} needs {expected}"
            )

    @property
    def num_elements(self) -> int:
        return math.prod(self.shape)

    def to_array(self) -> np.ndarray:
        """View in the tensor's native dtype."""
        return np.frombuffer(self.data, dtype=DTYPES[self.dtype]).reshape(self.shape)

    def to_working(self) -> np.ndarray:
        """Copy promoted to working precision (f16/bf16 -> f32, f64 stays)."""
        return self.to_array().astype(promoted_dtype(self.dtype))

    @classmethod
    def from_array(cls, name: str, arr: np.ndarray, dtype: str) -> "TensorData":
        """Pack an array, rounding into the target dtype."""
        out = np.ascontiguousarray(arr, dtype=DTYPES[dtype])
        return cls(name=name, dtype=dtype, shape=tuple(arr.shape), data=out.tobytes())


def _structure_fingerprint(tensors: dict[str, TensorData]) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        t = tensors[name]
        h.update(name.encode("utf-8"))
        h.update(b"\0")
        h.update(t.dtype.encode("ascii"))
        h.update(repr(t.shape).encode("ascii"))
        h.update(b"\n")
    return h.hexdigest()


@dataclass
class Checkpoint:
    """Ordered name->tensor map with free-form string metadata.

    The fingerprint hashes structure only (names, dtypes, shapes), never
    values: merging requires structural equality, not value equality.
    """

    tensors: dict[str, TensorData]
    metadata: dict[str, str] = field(default_factory=dict)
    fingerprint: str = ""

    def __post_init__(self):
        if not self.fingerprint:
            self.fingerprint = _structure_fingerprint(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def astype(self, dtype: str) -> "Checkpoint":
        """Re-encode every tensor in the given dtype."""
        if dtype not in DTYPES:
            raise UnsupportedDtype(f"unknown dtype {dtype!r}")
        tensors = {
            name: TensorData.from_array(name, t.to_array().astype(DTYPES[dtype]), dtype)
            for name, t in self.tensors.items()
        }
        return Checkpoint(tensors=tensors, metadata=dict(self.metadata))


@dataclass
class CompatibilityReport:
    compatible: bool
    mismatches: list[tuple[str, str]]


def check_compatibility(a: Checkpoint, b: Checkpoint) -> CompatibilityReport:
    """Structural comparison; reports every violation, never raises."""
    mismatches: list[tuple[str, str]] = []
    for name in a.tensors:
        if name not in b.tensors:
            mismatches.append((name, "missing in b"))
    for name in b.tensors:
        if name not in a.tensors:
            mismatches.append((name, "missing in a"))
    for name, ta in a.tensors.items():
        tb = b.tensors.get(name)
        if tb is None:
            continue
        if ta.dtype != tb.dtype:
            mismatches.append((name, f"dtype {ta.dtype} vs {tb.dtype}"))
        if ta.shape != tb.shape:
            mismatches.append((name, f"shape {list(ta.shape)} vs {list(tb.shape)}"))
    mismatches.sort()
    return CompatibilityReport(compatible=not mismatches, mismatches=mismatches)


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint file, materializing every declared tensor."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: file too short for header ({len(raw)} bytes)")
    (header_len,) = struct.unpack("<Q", raw[:8])
    if 8 + header_len > len(raw):
        raise FormatError(f"{path}: header length {header_len} exceeds file size")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid JSON ({exc})") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header must be a JSON object")

    buffer = raw[8 + header_len :]
    metadata: dict[str, str] = {}
    tensors: dict[str, TensorData] = {}
    spans: list[tuple[int, int, str]] = []

    for name, entry in header.items():
        if name == "__metadata__":
            if not isinstance(entry, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in entry.items()
            ):
                raise FormatError(f"{path}: __metadata__ must map strings to strings")
            metadata = dict(entry)
            continue
        if not isinstance(entry, dict):
            raise FormatError(f"{path}: tensor {name!r}: entry must be an object")
        try:
            file_tag = entry["dtype"]
            shape = entry["shape"]
            begin, end = entry["data_offsets"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: tensor {name!r}: malformed entry ({exc})") from exc
        if file_tag not in _FILE_TAGS:
            raise UnsupportedDtype(f"{path}: tensor {name!r}: unsupported dtype tag {file_tag!r}")
        tag = _FILE_TAGS[file_tag]
        if not isinstance(shape, list) or not all(isinstance(d, int) and d >= 0 for d in shape):
            raise FormatError(f"{path}: tensor {name!r}: bad shape {shape!r}")
        if not (isinstance(begin, int) and isinstance(end, int) and 0 <= begin <= end <= len(buffer)):
            raise FormatError(
                f"{path}: tensor {name!r}: offsets [{begin}, {end}] out of bounds "
                f"(buffer has {len(buffer)} bytes)"
            )
        expected = math.prod(shape) * ITEMSIZE[tag]
        if end - begin != expected:
            raise FormatError(
                f"{path}: tensor {name!r}: offsets span {end - begin} bytes, "
                f"shape {shape} with dtype {tag} needs {expected}"
            )
        spans.append((begin, end, name))
        tensors[name] = TensorData(name=name, dtype=tag, shape=tuple(shape), data=buffer[begin:end])

    spans.sort()
    for (b1, e1, n1), (b2, e2, n2) in zip(spans, spans[1:]):
        if b2 < e1 and e2 > b1:  # zero-length spans may share a position
            raise FormatError(f"{path}: tensors {n1!r} and {n2!r} declare overlapping offsets")

    return Checkpoint(tensors=tensors, metadata=metadata)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write a checkpoint. Layout is canonical: names sorted, JSON key-sorted,
    so identical checkpoints always serialize to identical bytes."""
    header: dict[str, object] = {}
    if ckpt.metadata:
        header["__metadata__"] = dict(sorted(ckpt.metadata.items()))
    offset = 0
    chunks: list[bytes] = []
    for name in sorted(ckpt.tensors):
        t = ckpt.tensors[name]
        header[name] = {
            "dtype": _TAG_TO_FILE[t.dtype],
            "shape": list(t.shape),
            "data_offsets": [offset, offset + len(t.data)],
        }
        chunks.append(t.data)
        offset += len(t.data)
    blob = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)
