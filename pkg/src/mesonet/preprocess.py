"""Eye-landmark face alignment and image -> tensor conversion."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateLandmarkError, FormatError, ShapeError

CANONICAL_SIZE = 256
# Eye template as fractions of the output side.
LEFT_EYE_TEMPLATE = (0.35, 0.40)
RIGHT_EYE_TEMPLATE = (0.65, 0.40)

_EDGE_TOL = 1e-6


@dataclass
class Image:
    width: int
    height: int
    pixels: np.ndarray  # uint8 [height, width, 3]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ShapeError(f"image extents must be >= 1, got {self.width}x{self.height}")
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, 3):
            raise ShapeError(
                f"pixel buffer {self.pixels.shape} does not match {self.height}x{self.width}x3"
            )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        arr = np.asarray(arr, dtype=np.uint8)
        return cls(arr.shape[1], arr.shape[0], arr)

    @classmethod
    def filled(cls, width: int, height: int, rgb=(0, 0, 0)) -> "Image":
        px = np.empty((height, width, 3), np.uint8)
        px[...] = rgb
        return cls(width, height, px)


@dataclass
class LandmarkSet:
    left_eye: tuple[float, float]
    right_eye: tuple[float, float]
    extra: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        self.left_eye = (float(self.left_eye[0]), float(self.left_eye[1]))
        self.right_eye = (float(self.right_eye[0]), float(self.right_eye[1]))
        if self.left_eye == self.right_eye:
            raise DegenerateLandmarkError("left and right eye coincide")

    def check_bounds(self, width: int, height: int) -> None:
        for name, (x, y) in [("left_eye", self.left_eye), ("right_eye", self.right_eye)]:
            if not (0 <= x <= width - 1 and 0 <= y <= height - 1):
                raise DegenerateLandmarkError(
                    f"{name} at ({x}, {y}) lies outside a {width}x{height} image"
                )

    @classmethod
    def from_dict(cls, d: dict) -> "LandmarkSet":
        try:
            left, right = d["left_eye"], d["right_eye"]
        except KeyError as exc:
            raise FormatError(f"landmark file lacks {exc.args[0]!r}") from None
        extra = {k: tuple(v) for k, v in d.items() if k not in ("left_eye", "right_eye")}
        return cls(tuple(left), tuple(right), extra)


def sidecar_path(image_path) -> Path:
    """``faces/foo.ppm`` -> ``faces/foo.landmarks.json``."""
    p = Path(image_path)
    return p.with_name(p.stem + ".landmarks.json")


def load_landmarks(path) -> LandmarkSet:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid landmark JSON ({exc})") from None
    return LandmarkSet.from_dict(data)


@dataclass(frozen=True)
class SimilarityTransform:
    """p -> scale * R(angle) p + translation, in y-down pixel coordinates.

    ``R(angle) = [[cos, sin], [-sin, cos]]``, so a positive angle turns the
    image counter-clockwise as displayed.
    """

    scale: float
    angle: float
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")

    @property
    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return self.scale * np.array([[c, s], [-s, c]])

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix.T + np.asarray(self.translation)

    def inverse(self) -> "SimilarityTransform":
        inv = SimilarityTransform(1.0 / self.scale, -self.angle)
        tx, ty = inv.apply(self.translation)
        return SimilarityTransform(1.0 / self.scale, -self.angle, (-tx, -ty))

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """``self`` after ``other``."""
        tx, ty = self.apply(other.translation)
        return SimilarityTransform(self.scale * other.scale, self.angle + other.angle, (tx, ty))


def canonical_eyes(size: int = CANONICAL_SIZE) -> tuple[tuple[float, float], tuple[float, float]]:
    return (
        (LEFT_EYE_TEMPLATE[0] * size, LEFT_EYE_TEMPLATE[1] * size),
        (RIGHT_EYE_TEMPLATE[0] * size, RIGHT_EYE_TEMPLATE[1] * size),
    )


def compute_alignment(landmarks: LandmarkSet, size: int = CANONICAL_SIZE) -> SimilarityTransform:
    """Closed-form two-point similarity taking the eyes onto the template."""
    (lx, ly), (rx, ry) = landmarks.left_eye, landmarks.right_eye
    (clx, cly), (crx, cry) = canonical_eyes(size)
    dx, dy = rx - lx, ry - ly
    src_len = math.hypot(dx, dy)
    if src_len == 0:
        raise DegenerateLandmarkError("left and right eye coincide")
    cdx, cdy = crx - clx, cry - cly
    scale = math.hypot(cdx, cdy) / src_len
    angle = math.atan2(dy, dx) - math.atan2(cdy, cdx)
    t = SimilarityTransform(scale, angle)
    mx, my = t.apply((lx, ly))
    return SimilarityTransform(scale, angle, (clx - mx, cly - my))


def center_crop_transform(width: int, height: int, size: int = CANONICAL_SIZE) -> SimilarityTransform:
    """Largest centred square, rescaled so its pixel grid spans ``size`` pixels."""
    side = min(width, height)
    ox, oy = (width - side) // 2, (height - side) // 2
    s = size / side
    return SimilarityTransform(s, 0.0, (s * (0.5 - ox) - 0.5, s * (0.5 - oy) - 0.5))


def warp(image: Image, t: SimilarityTransform, size: int = CANONICAL_SIZE) -> Image:
    """Bilinear inverse-mapped resampling onto a ``size`` x ``size`` canvas.

    Output pixels whose source location falls outside the image are black.
    """
    inv = t.inverse()
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    m = inv.matrix
    tx, ty = inv.translation
    sx = m[0, 0] * xs + m[0, 1] * ys + tx
    sy = m[1, 0] * xs + m[1, 1] * ys + ty

    w, h = image.width, image.height
    inside = (
        (sx >= -_EDGE_TOL) & (sx <= w - 1 + _EDGE_TOL) & (sy >= -_EDGE_TOL) & (sy <= h - 1 + _EDGE_TOL)
    )
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]

    src = image.pixels.astype(np.float64)
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bottom = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    out[~inside] = 0
    return Image(size, size, out)


def align_image(
    image: Image, landmarks: LandmarkSet | None = None, size: int = CANONICAL_SIZE
) -> Image:
    """Eye alignment when landmarks are given, centre-crop otherwise."""
    if landmarks is None:
        return warp(image, center_crop_transform(image.width, image.height, size), size)
    landmarks.check_bounds(image.width, image.height)
    return warp(image, compute_alignment(landmarks, size), size)


def to_tensor(images, size: int = CANONICAL_SIZE) -> np.ndarray:
    """Stack images into float32 ``[N,3,size,size]`` scaled to [0, 1]."""
    arrs = []
    for img in images:
        if img.width != size or img.height != size:
            raise ShapeError(f"expected {size}x{size} image, got {img.width}x{img.height}")
        arrs.append(img.pixels)
    if not arrs:
        return np.zeros((0, 3, size, size), np.float32)
    stacked = np.stack(arrs).transpose(0, 3, 1, 2).astype(np.float32)
    return stacked / np.float32(255.0)
