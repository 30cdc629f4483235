import json
import struct

import numpy as np
import pytest

from mesonet.architectures import ARCH_NAMES, build, forward, spec_by_name
from mesonet.errors import CorruptionError, FormatError, IncompleteModelError
from mesonet.persistence import from_bytes, load, read_header, save, to_bytes


def _rewrite_header(data, edit):
    header, _, start = read_header(data)
    edit(header)
    raw = json.dumps(header).encode()
    raw += b" " * (-(16 + len(raw)) % 8)
    return b"MESO" + struct.pack("<IQ", 1, len(raw)) + raw + data[start:]


@pytest.fixture(scope="module")
def small():
    return build(spec_by_name("meso4").with_input_size(32), 5)


@pytest.mark.parametrize("arch", ARCH_NAMES)
def test_round_trip_bitwise(arch, tmp_path):
    model = build(spec_by_name(arch), 17)
    rng = np.random.default_rng(0)
    for b in model.blocks:
        b.bn.running_mean[:] = rng.standard_normal(b.bn.running_mean.shape)
    path = tmp_path / "m.meso"
    save(model, path)
    loaded = load(path)
    assert loaded.spec == model.spec and loaded.seed == 17
    for (n1, a), (n2, b) in zip(model.named_tensors(), loaded.named_tensors()):
        assert n1 == n2 and a.dtype == b.dtype and a.tobytes() == b.tobytes()
    x = rng.random((2, 3, 256, 256), dtype=np.float32)
    assert forward(model, x)[0].tobytes() == forward(loaded, x)[0].tobytes()


def test_byte_identical_saves(small, tmp_path):
    save(small, tmp_path / "a.meso")
    save(small, tmp_path / "b.meso")
    assert (tmp_path / "a.meso").read_bytes() == (tmp_path / "b.meso").read_bytes()
    assert not [p for p in tmp_path.iterdir() if p.suffix == ".tmp"]


def test_header_and_length(small):
    data = to_bytes(small)
    header, version, start = read_header(data)
    assert version == 1 and start % 8 == 0
    assert set(header["tensors"]) == {n for n, _ in small.named_tensors()}
    body = sum(e["length"] + (-e["length"] % 8) for e in header["tensors"].values())
    assert len(data) == start + body
    for e in header["tensors"].values():
        assert e["offset"] % 8 == 0


def test_truncation(small):
    data = to_bytes(small)
    for cut in (3, 10, 40, len(data) - 4):
        with pytest.raises(CorruptionError):
            from_bytes(data[:cut])


def test_bad_magic_and_version(small):
    data = to_bytes(small)
    with pytest.raises(FormatError, match="magic"):
        from_bytes(b"XESO" + data[4:])
    with pytest.raises(FormatError, match="version"):
        from_bytes(data[:4] + struct.pack("<I", 2) + data[8:])


def test_single_byte_mutation(small):
    data = bytearray(to_bytes(small))
    header, _, start = read_header(bytes(data))
    entry = header["tensors"]["block2.conv.weights"]
    data[start + entry["offset"] + 9] ^= 0x40
    mutated = from_bytes(bytes(data))
    changed = [
        n for (n, a), (_, b) in zip(small.named_tensors(), mutated.named_tensors())
        if a.tobytes() != b.tobytes()
    ]
    assert changed == ["block2.conv.weights"]


def test_missing_tensor(small):
    data = _rewrite_header(to_bytes(small), lambda h: h["tensors"].pop("head.bias"))
    with pytest.raises(IncompleteModelError, match="head.bias"):
        from_bytes(data)


def test_overlapping_tensors(small):
    def overlap(h):
        h["tensors"]["head.bias"]["offset"] = h["tensors"]["head.weights"]["offset"]
    with pytest.raises(CorruptionError, match="overlap"):
        from_bytes(_rewrite_header(to_bytes(small), overlap))


def test_entry_outside_payload(small):
    def far(h):
        h["tensors"]["head.bias"]["offset"] = 10**9
    with pytest.raises(CorruptionError):
        from_bytes(_rewrite_header(to_bytes(small), far))


def test_shape_mismatch(small):
    def shape(h):
        h["tensors"]["head.bias"]["shape"] = [3]
    with pytest.raises(CorruptionError):
        from_bytes(_rewrite_header(to_bytes(small), shape))
