"""Directory datasets: ``root/<ClassName>/*.ppm`` plus optional landmark sidecars."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, FormatError
from .images import decode_image, read_image  # noqa: F401  (decode_image re-exported)
from .preprocess import CANONICAL_SIZE, align_image, load_landmarks, sidecar_path, to_tensor
from .training import ArrayData

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".ppm", ".png")


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    class_names: tuple[str, ...]
    samples: tuple[tuple[Path, int], ...]

    def __post_init__(self):
        n = len(self.class_names)
        for path, label in self.samples:
            if not 0 <= label < n:
                raise DataError(f"{path}: class index {label} outside [0, {n})")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def counts(self) -> dict[str, int]:
        c = Counter(label for _, label in self.samples)
        return {name: c.get(i, 0) for i, name in enumerate(self.class_names)}

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.samples], dtype=np.intp)

    def subset(self, indices: Sequence[int]) -> "DatasetManifest":
        return DatasetManifest(self.root, self.class_names, tuple(self.samples[i] for i in indices))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "class"])
            for p, label in self.samples:
                w.writerow([str(p), self.class_names[label]])


def _is_image(p: Path) -> bool:
    return p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES


def scan_dataset(root, classes: Sequence[str] | None = None) -> DatasetManifest:
    """Class directories in lexicographic order, samples sorted by path."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    dirs = sorted(d.name for d in root.iterdir() if d.is_dir())
    if classes is not None:
        missing = sorted(set(classes) - set(dirs))
        if missing:
            raise DataError(f"{root}: class directories missing: {', '.join(missing)}")
        dirs = sorted(classes)
    if not dirs:
        raise DataError(f"{root} has no class subdirectories")
    if len(dirs) < 2:
        raise DataError(f"{root} has a single class ({dirs[0]}); need at least two")
    samples = []
    for label, name in enumerate(dirs):
        files = sorted(p for p in (root / name).iterdir() if _is_image(p))
        if not files:
            raise DataError(f"class directory {root / name} contains no images")
        samples.extend((p, label) for p in files)
    return DatasetManifest(root, tuple(dirs), tuple(samples))


def _per_class_indices(manifest: DatasetManifest) -> list[list[int]]:
    groups: list[list[int]] = [[] for _ in manifest.class_names]
    for i, (_, label) in enumerate(manifest.samples):
        groups[label].append(i)
    return groups


def split(
    manifest: DatasetManifest, fraction: float, seed: int = 0
) -> tuple[DatasetManifest, DatasetManifest]:
    """Stratified split; ``fraction`` of each class goes to the first manifest."""
    if not 0 < fraction < 1:
        raise DataError(f"split fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    first, second = [], []
    for name, idx in zip(manifest.class_names, _per_class_indices(manifest)):
        if len(idx) < 2:
            raise DataError(f"class {name!r} has {len(idx)} sample(s); cannot split")
        perm = rng.permutation(len(idx))
        k = min(max(int(round(len(idx) * fraction)), 1), len(idx) - 1)
        first.extend(idx[j] for j in perm[:k])
        second.extend(idx[j] for j in perm[k:])
    return manifest.subset(sorted(first)), manifest.subset(sorted(second))


def balance(manifest: DatasetManifest, seed: int = 0) -> DatasetManifest:
    """Downsample every class to the size of the smallest one."""
    groups = _per_class_indices(manifest)
    n = min(len(g) for g in groups)
    rng = np.random.default_rng(seed)
    keep = []
    for g in groups:
        keep.extend(g[j] for j in sorted(rng.choice(len(g), size=n, replace=False)))
    return manifest.subset(sorted(keep))


def load_image(path, align: bool = True, size: int = CANONICAL_SIZE):
    """Decode and align one file; returns ``(image, used_fallback)``."""
    try:
        img = read_image(path)
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc})") from None
    except FormatError as exc:
        raise DataError(str(exc)) from None
    side = sidecar_path(path)
    if align and side.exists():
        try:
            marks = load_landmarks(side)
            return align_image(img, marks, size), False
        except (FormatError, ValueError) as exc:
            raise DataError(f"{side}: {exc}") from None
    return align_image(img, None, size), True


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    indices: list[int] = field(default_factory=list)


def load_batch(
    manifest: DatasetManifest,
    indices: Sequence[int],
    align: bool = True,
    size: int = CANONICAL_SIZE,
) -> Batch:
    images = []
    for i in indices:
        path = manifest.samples[i][0]
        img, fallback = load_image(path, align, size)
        if fallback:
            log.debug("%s: no landmarks, centre-crop fallback", path)
        images.append(img)
    x = to_tensor(images, size)
    labels = [manifest.samples[i][1] for i in indices]
    y = np.zeros((len(labels), len(manifest.class_names)), np.float32)
    y[np.arange(len(labels)), labels] = 1.0
    return Batch(x, y, list(indices))


def load_arrays(manifest: DatasetManifest, size: int = CANONICAL_SIZE, align: bool = True) -> ArrayData:
    """Decode a whole manifest into memory for repeated epochs."""
    batch = load_batch(manifest, range(len(manifest)), align, size)
    return ArrayData(batch.x, manifest.labels, len(manifest.class_names))
