"""Image file codecs: binary PPM (always) and PNG (when Pillow is installed)."""

from __future__ import annotations

import io

import numpy as np

from .errors import FormatError
from .preprocess import Image

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_WS = b" \t\n\r\v\f"


def _ppm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` integer header fields after the magic; return them and the data offset."""
    pos = 2
    fields = []
    while len(fields) < count:
        while pos < len(data) and (data[pos] in _WS or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                end = data.find(b"\n", pos)
                if end < 0:
                    raise FormatError(f"PPM header comment unterminated at offset {pos}")
                pos = end
            pos += 1
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError(f"PPM header: expected integer at offset {start}")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or data[pos] not in _WS:
        raise FormatError(f"PPM header: expected whitespace at offset {pos}")
    return fields, pos + 1


def decode_ppm(data: bytes) -> Image:
    if data[:2] != b"P6":
        raise FormatError(f"bad magic {data[:2]!r} at offset 0, expected b'P6'")
    (width, height, maxval), offset = _ppm_tokens(data, 3)
    if width < 1 or height < 1:
        raise FormatError(f"PPM extents must be positive, got {width}x{height}")
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval} (only 255)")
    need = width * height * 3
    have = len(data) - offset
    if have < need:
        raise FormatError(f"PPM truncated at offset {len(data)}: need {need} pixel bytes, have {have}")
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset)
    return Image(width, height, px.reshape(height, width, 3).copy())


def encode_ppm(image: Image) -> bytes:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(image.pixels, dtype=np.uint8).tobytes()


def decode_png(data: bytes) -> Image:
    try:
        from PIL import Image as PILImage
    except ImportError:  # pragma: no cover - depends on environment
        raise FormatError("PNG input needs Pillow (pip install 'artifact[png]')") from None
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            if im.mode not in ("RGB", "RGBA"):
                raise FormatError(f"unsupported PNG mode {im.mode}; need 8-bit RGB or RGBA")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FormatError:
        raise
    except Exception as exc:
        raise FormatError(f"cannot decode PNG: {exc}") from None
    return Image.from_array(arr)


def decode_image(data: bytes) -> Image:
    if data[:8] == PNG_SIGNATURE:
        return decode_png(data)
    return decode_ppm(data)


def read_image(path) -> Image:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return decode_image(data)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_ppm(image: Image, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(image))
