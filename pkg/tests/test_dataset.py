import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mesonet.dataset import DatasetManifest, balance, load_batch, scan_dataset, split
from mesonet.errors import DataError, FormatError
from mesonet.images import decode_image, decode_ppm, encode_ppm, read_image, write_ppm
from mesonet.preprocess import Image, to_tensor

from synth import make_tree


def _stub_tree(root, counts):
    for cls, n in counts.items():
        d = root / cls
        d.mkdir(parents=True)
        for i in range(n):
            (d / f"{i:05d}.ppm").touch()


def test_scan_counts_three_classes(tmp_path):
    counts = {"FaceSwap": 1450, "Bonafide": 1483, "DeepFake": 1538}
    _stub_tree(tmp_path, counts)
    (tmp_path / "DeepFake" / "notes.txt").write_text("ignored")
    m = scan_dataset(tmp_path)
    assert m.class_names == ("Bonafide", "DeepFake", "FaceSwap")
    assert len(m) == 4471
    assert m.counts == {"Bonafide": 1483, "DeepFake": 1538, "FaceSwap": 1450}
    assert scan_dataset(tmp_path) == m


def test_scan_single_class(tmp_path):
    _stub_tree(tmp_path, {"Real": 3})
    with pytest.raises(DataError):
        scan_dataset(tmp_path)


def test_scan_empty_class(tmp_path):
    _stub_tree(tmp_path, {"Real": 3, "DeepFake": 0})
    with pytest.raises(DataError):
        scan_dataset(tmp_path)


def test_scan_selected_classes(tmp_path):
    _stub_tree(tmp_path, {"Real": 2, "DeepFake": 2, "FaceSwap": 2})
    m = scan_dataset(tmp_path, ["DeepFake", "Real"])
    assert m.class_names == ("DeepFake", "Real") and len(m) == 4
    with pytest.raises(DataError):
        scan_dataset(tmp_path, ["DeepFake", "Missing"])


def _manifest(counts):
    samples = []
    for label, n in enumerate(counts):
        samples += [(f"c{label}/{i}", label) for i in range(n)]
    return DatasetManifest(".", tuple(f"c{i}" for i in range(len(counts))), tuple(samples))


def test_split_half():
    a, b = split(_manifest([10, 10]), 0.5, seed=4)
    assert a.counts == {"c0": 5, "c1": 5} and b.counts == {"c0": 5, "c1": 5}
    assert split(_manifest([10, 10]), 0.5, seed=4) == (a, b)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.integers(2, 30), min_size=2, max_size=4),
    st.floats(0.05, 0.95),
    st.integers(0, 2**31),
)
def test_split_partitions(counts, fraction, seed):
    m = _manifest(counts)
    a, b = split(m, fraction, seed)
    sa, sb = set(a.samples), set(b.samples)
    assert sa.isdisjoint(sb) and sa | sb == set(m.samples)
    for name in m.class_names:
        assert a.counts[name] >= 1 and b.counts[name] >= 1


def test_split_needs_two_per_class():
    with pytest.raises(DataError):
        split(_manifest([1, 5]), 0.5)


def test_balance():
    m = balance(_manifest([3, 7, 5]), seed=1)
    assert m.counts == {"c0": 3, "c1": 3, "c2": 3}


def test_load_batch_white_and_onehot(tmp_path):
    for cls in ("a", "b", "c"):
        (tmp_path / cls).mkdir()
    write_ppm(Image.filled(256, 256, (255, 255, 255)), tmp_path / "b" / "w.ppm")
    write_ppm(Image.filled(256, 256, (0, 0, 0)), tmp_path / "a" / "k.ppm")
    write_ppm(Image.filled(256, 256, (0, 0, 0)), tmp_path / "c" / "k.ppm")
    m = scan_dataset(tmp_path)
    batch = load_batch(m, [1])
    assert batch.x.shape == (1, 3, 256, 256) and np.all(batch.x == 1.0)
    assert batch.y.tolist() == [[0, 1, 0]]


REF_4X4 = bytes(range(0, 48 * 5, 5))  # 48 known channel bytes


def test_reference_4x4():
    data = b"P6\n# reference\n4 4\n255\n" + REF_4X4
    img = decode_ppm(data)
    assert (img.width, img.height) == (4, 4)
    assert img.pixels[0, 0].tolist() == [0, 5, 10]
    assert img.pixels[3, 3].tolist() == [225, 230, 235]
    # to_tensor on a 4x4 canvas: channel c of pixel (y, x) is byte (4y+x)*3+c over 255
    x = to_tensor([img], size=4)
    for y in range(4):
        for xx in range(4):
            for c in range(3):
                assert x[0, c, y, xx] == np.float32(REF_4X4[(4 * y + xx) * 3 + c]) / np.float32(255)


def test_minimal_red():
    img = decode_ppm(b"P6 1 1 255 \xff\x00\x00")
    assert (img.width, img.height) == (1, 1) and img.pixels[0, 0].tolist() == [255, 0, 0]


def test_unsupported_maxval():
    with pytest.raises(FormatError, match="65535"):
        decode_ppm(b"P6\n1 1\n65535\n" + b"\0" * 6)


def test_bad_magic_and_truncation():
    with pytest.raises(FormatError, match="offset 0"):
        decode_image(b"P3\n1 1\n255\n1 2 3")
    with pytest.raises(FormatError, match="truncated at offset"):
        decode_ppm(b"P6\n2 2\n255\n" + b"\0" * 5)


def test_gradient_round_trip(tmp_path):
    ys, xs = np.mgrid[0:16, 0:16]
    px = np.stack([xs * 16, ys * 16, xs + ys], axis=-1).astype(np.uint8)
    img = Image.from_array(px)
    assert np.array_equal(decode_ppm(encode_ppm(img)).pixels, px)
    write_ppm(img, tmp_path / "g.ppm")
    assert (tmp_path / "g.ppm").read_bytes() == encode_ppm(img)
    assert np.array_equal(read_image(tmp_path / "g.ppm").pixels, px)


def test_png_decode():
    PIL = pytest.importorskip("PIL.Image")
    px = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    buf = io.BytesIO()
    PIL.fromarray(px).save(buf, format="PNG")
    assert np.array_equal(decode_image(buf.getvalue()).pixels, px)


def test_aligned_tree_loads(tmp_path):
    make_tree(tmp_path, ["DeepFake", "Real"], 3, landmarks=True, unaligned_every=2)
    m = scan_dataset(tmp_path)
    batch = load_batch(m, range(len(m)))
    assert batch.x.shape == (6, 3, 256, 256)
    assert np.array_equal(batch.x, load_batch(m, range(len(m))).x)


def test_corrupt_image_is_data_error(tmp_path):
    _stub_tree(tmp_path, {"a": 1, "b": 1})
    with pytest.raises(DataError):
        load_batch(scan_dataset(tmp_path), [0])
