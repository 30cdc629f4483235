"""The ``.meso`` model container.

Layout (all integers little-endian)::

    offset 0   b"MESO"
    offset 4   u32  format version
    offset 8   u64  header length H (includes trailing space padding)
    offset 16  H bytes of UTF-8 JSON, space-padded so the payload starts 8-aligned
    16 + H     payload: raw little-endian float32 tensors in directory order,
               each starting on an 8-byte boundary

Directory offsets are relative to the start of the payload. Adam moments are
not stored; fine-tuning restarts the optimiser.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .architectures import ArchitectureSpec, Block, ConvBlockSpec, Model
from . import layers as L
from .errors import CorruptionError, FormatError, IncompleteModelError

MAGIC = b"MESO"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_ALIGN = 8
_LE_F32 = np.dtype("<f4")


def _pad(n: int) -> int:
    return -n % _ALIGN


def _header(model: Model, directory: dict) -> dict:
    spec = model.spec
    bn = model.blocks[0].bn if model.blocks else None
    return {
        "architecture": spec.name,
        "class_names": list(spec.class_names),
        "num_classes": spec.num_classes,
        "input_size": spec.input_size,
        "in_channels": spec.in_channels,
        "blocks": [[b.filters, b.kernel, b.pool] for b in spec.blocks],
        "dense_hidden": spec.dense_hidden,
        "dropout_rate": spec.dropout_rate,
        "bn_epsilon": bn.epsilon if bn else 1e-3,
        "bn_momentum": bn.momentum if bn else 0.99,
        "seed": model.seed,
        "tensors": directory,
    }


def to_bytes(model: Model) -> bytes:
    directory = {}
    chunks = []
    offset = 0
    for name, arr in model.named_tensors():
        raw = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
        directory[name] = {"shape": list(arr.shape), "offset": offset, "length": len(raw)}
        chunks.append(raw + b"\0" * _pad(len(raw)))
        offset += len(raw) + _pad(len(raw))
    header = json.dumps(_header(model, directory), separators=(",", ":")).encode("utf-8")
    header += b" " * _pad(_PREFIX.size + len(header))
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)


def save(model: Model, path) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    data = to_bytes(model)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_header(data: bytes) -> tuple[dict, int, int]:
    """Parse prefix and JSON header; returns ``(header, version, payload_start)``."""
    if len(data) < _PREFIX.size:
        raise CorruptionError(f"file is {len(data)} bytes, shorter than the {_PREFIX.size}-byte prefix")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version < 1 or version > VERSION:
        raise FormatError(f"unsupported format version {version} (this build reads <= {VERSION})")
    start = _PREFIX.size + hlen
    if start > len(data):
        raise CorruptionError("header extends past end of file")
    try:
        header = json.loads(data[_PREFIX.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict) or not isinstance(header.get("tensors"), dict):
        raise CorruptionError("header lacks a tensor directory")
    return header, version, start


def _spec_from_header(h: dict) -> ArchitectureSpec:
    try:
        return ArchitectureSpec(
            name=h["architecture"],
            blocks=tuple(ConvBlockSpec(*b) for b in h["blocks"]),
            num_classes=int(h["num_classes"]),
            class_names=tuple(h["class_names"]),
            input_size=int(h["input_size"]),
            in_channels=int(h["in_channels"]),
            dense_hidden=int(h["dense_hidden"]),
            dropout_rate=float(h["dropout_rate"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptionError(f"bad architecture description in header: {exc}") from None


def _expected_shapes(spec: ArchitectureSpec) -> dict[str, tuple[int, ...]]:
    shapes = {}
    cin = spec.in_channels
    for i, b in enumerate(spec.blocks):
        shapes[f"block{i}.conv.weights"] = (b.filters, cin, b.kernel, b.kernel)
        for part in ("conv.bias", "bn.gamma", "bn.beta", "bn.running_mean", "bn.running_var"):
            shapes[f"block{i}.{part}"] = (b.filters,)
        cin = b.filters
    shapes["hidden.weights"] = (spec.flatten_size, spec.dense_hidden)
    shapes["hidden.bias"] = (spec.dense_hidden,)
    shapes["head.weights"] = (spec.dense_hidden, spec.num_classes)
    shapes["head.bias"] = (spec.num_classes,)
    return shapes


def from_bytes(data: bytes) -> Model:
    header, _, start = read_header(data)
    spec = _spec_from_header(header)
    directory = header["tensors"]
    expected = _expected_shapes(spec)

    missing = [k for k in expected if k not in directory]
    if missing:
        raise IncompleteModelError(f"model file lacks tensors: {', '.join(missing)}")
    unknown = [k for k in directory if k not in expected]
    if unknown:
        raise CorruptionError(f"unexpected tensors in directory: {', '.join(unknown)}")

    payload = len(data) - start
    spans = []
    tensors = {}
    for name, entry in directory.items():
        try:
            shape = tuple(int(s) for s in entry["shape"])
            off, length = int(entry["offset"]), int(entry["length"])
        except (KeyError, TypeError, ValueError):
            raise CorruptionError(f"malformed directory entry for {name}") from None
        if shape != expected[name]:
            raise CorruptionError(f"{name}: shape {shape} != expected {expected[name]}")
        if length != 4 * int(np.prod(shape)):
            raise CorruptionError(f"{name}: byte length {length} inconsistent with shape {shape}")
        if off < 0 or off + length > payload:
            raise CorruptionError(f"{name}: bytes [{off}, {off + length}) outside payload of {payload}")
        spans.append((off, off + length, name))
        arr = np.frombuffer(data, dtype=_LE_F32, count=length // 4, offset=start + off)
        tensors[name] = arr.astype(np.float32).reshape(shape)
    spans.sort()
    for (a0, a1, an), (b0, b1, bname) in zip(spans, spans[1:]):
        if b0 < a1:
            raise CorruptionError(f"tensors {an} and {bname} overlap")

    blocks = []
    for i, b in enumerate(spec.blocks):
        t = lambda part: tensors[f"block{i}.{part}"]  # noqa: E731
        blocks.append(
            Block(
                L.Conv2d(t("conv.weights"), t("conv.bias")),
                L.BatchNorm(
                    t("bn.gamma"),
                    t("bn.beta"),
                    t("bn.running_mean"),
                    t("bn.running_var"),
                    float(header.get("bn_epsilon", 1e-3)),
                    float(header.get("bn_momentum", 0.99)),
                ),
                L.MaxPool(b.pool),
            )
        )
    return Model(
        spec,
        blocks,
        L.Dense(tensors["hidden.weights"], tensors["hidden.bias"]),
        L.Dense(tensors["head.weights"], tensors["head.bias"]),
        int(header.get("seed", 0)),
    )


def load(path) -> Model:
    with open(path, "rb") as fh:
        data = fh.read()
    return from_bytes(data)
