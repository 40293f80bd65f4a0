"""Attention trace container: the file format that decouples model inference
from detection math.

Byte layout (all integers little-endian):

    offset 0   magic ``b"ATSC"``
    offset 4   format version, uint32
    offset 8   metadata byte length, uint64
    offset 16  metadata, UTF-8 JSON (header fields + per-record manifest;
               pooled hidden vectors live here)
    then, per record in manifest order:
        per recorded layer in ascending order:
            T * H * V float32 values, row-major [T, H, V]
        if the header declares response texts:
            uint32 byte length + UTF-8 text

A loaded :class:`TraceFile` is immutable (tensors are marked read-only) and
safe to share across threads.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Union

import numpy as np

MAGIC = b"ATSC"
FORMAT_VERSION = 1

# Per-(step, head) visual attention mass may not exceed the softmax row mass.
MASS_TOLERANCE = 1e-5

ByteSink = Union[str, Path, BinaryIO]
ByteSource = Union[str, Path, bytes, BinaryIO]


class TraceError(ValueError):
    """Base class for trace container failures."""


class TraceFormatError(TraceError):
    """The bytes are not a trace file, or the version is unsupported."""


class TraceTruncationError(TraceError):
    """The payload ended before the declared shapes were satisfied."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class TraceValidationError(TraceError):
    """Header/record invariants do not hold."""

    def __init__(self, violations: list[str]):
        super().__init__("invalid trace: " + "; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class TraceHeader:
    model_id: str
    num_samples: int
    layers_recorded: tuple[int, ...]
    heads: int
    visual_span_len: int
    has_pooled_hidden: bool = False
    has_response_text: bool = False
    hidden_dim: int = 0
    format_version: int = FORMAT_VERSION
    note: str = ""


@dataclass
class SampleRecord:
    """One probe sample: per-layer attention blocks of shape [T, H, V],
    plus optional pooled hidden state and response text."""

    sample_id: str
    attention: dict[int, np.ndarray]
    pooled_hidden: np.ndarray | None = None
    response_text: str | None = None

    @property
    def steps(self) -> int:
        block = next(iter(self.attention.values()))
        return int(block.shape[0])


@dataclass(frozen=True)
class TraceFile:
    header: TraceHeader
    records: tuple[SampleRecord, ...] = field(default_factory=tuple)


def _header_violations(header: TraceHeader) -> list[str]:
    out = []
    if header.num_samples < 1:
        out.append("header: num_samples must be >= 1")
    if header.heads < 1:
        out.append("header: heads must be >= 1")
    if header.visual_span_len < 1:
        out.append("header: visual_span_len must be >= 1")
    layers = header.layers_recorded
    if len(layers) == 0:
        out.append("header: layers_recorded is empty")
    if any(l < 0 for l in layers):
        out.append("header: layer indices must be >= 0")
    if any(a >= b for a, b in zip(layers, layers[1:])):
        out.append("header: layers_recorded must be strictly increasing")
    if header.has_pooled_hidden != (header.hidden_dim > 0):
        out.append("header: hidden_dim must be > 0 iff has_pooled_hidden")
    return out


def _record_violations(header: TraceHeader, record: SampleRecord, index: int) -> list[str]:
    out = []
    who = f"record {index} ({record.sample_id!r})"
    got_layers = tuple(sorted(record.attention))
    if got_layers != header.layers_recorded:
        out.append(f"{who}: layers {got_layers} do not match header {header.layers_recorded}")
        return out
    steps = None
    for layer in header.layers_recorded:
        block = record.attention[layer]
        if block.ndim != 3:
            out.append(f"{who}: layer {layer} block must be 3-D [T, H, V], got ndim={block.ndim}")
            continue
        t, h, v = block.shape
        shape_ok = True
        if t < 1:
            out.append(f"{who}: layer {layer} axis T must be >= 1")
            shape_ok = False
        if h != header.heads:
            out.append(f"{who}: layer {layer} axis H is {h}, header says {header.heads}")
            shape_ok = False
        if v != header.visual_span_len:
            out.append(f"{who}: layer {layer} axis V is {v}, header says {header.visual_span_len}")
            shape_ok = False
        if steps is None:
            steps = t
        elif t != steps:
            out.append(f"{who}: layer {layer} axis T is {t}, other layers have {steps}")
        if not shape_ok:
            continue
        if not np.isfinite(block).all():
            out.append(f"{who}: layer {layer} has non-finite attention values")
            continue
        if (block < 0).any() or (block > 1).any():
            out.append(f"{who}: layer {layer} attention value out of [0, 1]")
        mass = block.sum(axis=2, dtype=np.float64)
        if (mass > 1 + MASS_TOLERANCE).any():
            out.append(f"{who}: layer {layer} visual mass exceeds row mass")
    if header.has_pooled_hidden:
        if record.pooled_hidden is None:
            out.append(f"{who}: pooled_hidden absent but header declares it")
        elif record.pooled_hidden.shape != (header.hidden_dim,):
            out.append(
                f"{who}: pooled_hidden has length {record.pooled_hidden.shape}, "
                f"header says {header.hidden_dim}"
            )
        elif not np.isfinite(record.pooled_hidden).all():
            out.append(f"{who}: pooled_hidden has non-finite entries")
    elif record.pooled_hidden is not None:
        out.append(f"{who}: pooled_hidden present but header does not declare it")
    if header.has_response_text and record.response_text is None:
        out.append(f"{who}: response_text absent but header declares it")
    if not header.has_response_text and record.response_text is not None:
        out.append(f"{who}: response_text present but header does not declare it")
    return out


def validate_trace(trace: TraceFile) -> list[str]:
    """Return all invariant violations, empty when the trace is well-formed.

    Pure and deterministic; violations name the record, field and constraint.
    """
    out = _header_violations(trace.header)
    if len(trace.records) != trace.header.num_samples:
        out.append(
            f"trace has {len(trace.records)} records, header says {trace.header.num_samples}"
        )
    for i, record in enumerate(trace.records):
        out.extend(_record_violations(trace.header, record, i))
    return out


def _as_f32(block: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(block), dtype="<f4")


def _metadata_doc(header: TraceHeader, records: Iterable[SampleRecord]) -> dict:
    # Coerce to builtin types: numpy scalars are common callers' currency
    # but are not JSON-serializable.
    doc = {
        "model_id": str(header.model_id),
        "num_samples": int(header.num_samples),
        "layers_recorded": [int(l) for l in header.layers_recorded],
        "heads": int(header.heads),
        "visual_span_len": int(header.visual_span_len),
        "has_pooled_hidden": bool(header.has_pooled_hidden),
        "has_response_text": bool(header.has_response_text),
        "hidden_dim": int(header.hidden_dim),
        "note": str(header.note),
        "records": [],
    }
    for record in records:
        entry: dict = {"sample_id": str(record.sample_id), "steps": int(record.steps)}
        if header.has_pooled_hidden:
            # float() of a float32 is exact; json round-trips the repr exactly.
            entry["pooled_hidden"] = [float(x) for x in record.pooled_hidden]
        doc["records"].append(entry)
    return doc


def write_trace(header: TraceHeader, records: list[SampleRecord], destination: ByteSink) -> int:
    """Serialize to the container format; returns the number of bytes written.

    Raises :class:`TraceValidationError` when the header/record invariants do
    not hold (nothing is written in that case).
    """
    trace = TraceFile(header=header, records=tuple(records))
    violations = validate_trace(trace)
    if violations:
        raise TraceValidationError(violations)

    blobs: list[bytes] = []
    meta = json.dumps(_metadata_doc(header, records), ensure_ascii=False).encode("utf-8")
    blobs.append(MAGIC)
    blobs.append(struct.pack("<I", header.format_version))
    blobs.append(struct.pack("<Q", len(meta)))
    blobs.append(meta)
    for record in records:
        for layer in header.layers_recorded:
            blobs.append(_as_f32(record.attention[layer]).tobytes())
        if header.has_response_text:
            text = record.response_text.encode("utf-8")
            blobs.append(struct.pack("<I", len(text)))
            blobs.append(text)

    payload = b"".join(blobs)
    if isinstance(destination, (str, Path)):
        with open(destination, "wb") as fh:
            fh.write(payload)
    else:
        destination.write(payload)
    return len(payload)


class _Cursor:
    """Sequential reader that turns short reads into truncation errors."""

    def __init__(self, fh: BinaryIO):
        self._fh = fh
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        data = self._fh.read(n)
        if data is None or len(data) < n:
            raise TraceTruncationError(f"unexpected end of data while reading {what}", self.offset)
        self.offset += n
        return data


def read_trace(source: ByteSource) -> TraceFile:
    """Parse a trace container; the result satisfies all invariants.

    Raises :class:`TraceFormatError` on bad magic or unsupported version and
    :class:`TraceTruncationError` (with byte offset) on short payloads. Never
    returns a partially-read trace.
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return read_trace(fh)
    if isinstance(source, bytes):
        return read_trace(io.BytesIO(source))

    cur = _Cursor(source)
    magic = cur.take(4, "magic bytes")
    if magic != MAGIC:
        raise TraceFormatError(f"not a trace file (magic {magic!r})")
    (version,) = struct.unpack("<I", cur.take(4, "format version"))
    if version != FORMAT_VERSION:
        raise TraceFormatError(f"unsupported trace format version {version}")
    (meta_len,) = struct.unpack("<Q", cur.take(8, "metadata length"))
    try:
        doc = json.loads(cur.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TraceFormatError(f"corrupt metadata: {exc}") from exc

    try:
        header = TraceHeader(
            model_id=doc["model_id"],
            num_samples=int(doc["num_samples"]),
            layers_recorded=tuple(int(l) for l in doc["layers_recorded"]),
            heads=int(doc["heads"]),
            visual_span_len=int(doc["visual_span_len"]),
            has_pooled_hidden=bool(doc["has_pooled_hidden"]),
            has_response_text=bool(doc["has_response_text"]),
            hidden_dim=int(doc["hidden_dim"]),
            format_version=version,
            note=str(doc.get("note", "")),
        )
        manifest = doc["records"]
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"corrupt metadata: {exc}") from exc
    if not isinstance(manifest, list):
        raise TraceFormatError("corrupt metadata: record manifest is not a list")

    violations = _header_violations(header)
    if violations:
        raise TraceValidationError(violations)
    if len(manifest) != header.num_samples:
        raise TraceFormatError(
            f"manifest lists {len(manifest)} records, header says {header.num_samples}"
        )

    records = []
    for i, entry in enumerate(manifest):
        try:
            sample_id = str(entry["sample_id"])
            steps = int(entry["steps"])
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceFormatError(f"corrupt manifest entry {i}: {exc}") from exc
        if steps < 1:
            raise TraceFormatError(f"corrupt manifest entry {i}: steps must be >= 1")
        pooled = None
        if header.has_pooled_hidden:
            try:
                pooled = np.asarray([float(x) for x in entry["pooled_hidden"]], dtype=np.float32)
            except (KeyError, TypeError, ValueError) as exc:
                raise TraceFormatError(f"corrupt manifest entry {i}: {exc}") from exc
            pooled.flags.writeable = False
        attention = {}
        shape = (steps, header.heads, header.visual_span_len)
        count = steps * header.heads * header.visual_span_len
        for layer in header.layers_recorded:
            raw = cur.take(count * 4, f"record {i} layer {layer} tensor")
            block = np.frombuffer(raw, dtype="<f4").reshape(shape)
            block.flags.writeable = False
            attention[layer] = block
        text = None
        if header.has_response_text:
            (text_len,) = struct.unpack("<I", cur.take(4, f"record {i} text length"))
            try:
                text = cur.take(text_len, f"record {i} response text").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise TraceFormatError(f"record {i}: response text is not UTF-8") from exc
        records.append(
            SampleRecord(
                sample_id=sample_id,
                attention=attention,
                pooled_hidden=pooled,
                response_text=text,
            )
        )

    trace = TraceFile(header=header, records=tuple(records))
    violations = validate_trace(trace)
    if violations:
        raise TraceValidationError(violations)
    return trace
