"""Binary -> multiclass transfer: reuse the feature extractor, widen the head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .architectures import ArchitectureSpec, Model, build
from .errors import ConfigError, IncompatibleArchitectureError, TransferSourceError

INIT_MODES = ("zeros", "mean_of_sources")


@dataclass(frozen=True)
class ClassMap:
    source_classes: tuple[str, ...]
    target_classes: tuple[str, ...]
    correspondence: dict[str, int]

    @classmethod
    def by_name(cls, source_classes, target_classes) -> "ClassMap":
        """Match source labels to the target label of the same name."""
        source_classes, target_classes = tuple(source_classes), tuple(target_classes)
        missing = [c for c in source_classes if c not in target_classes]
        if missing:
            raise ConfigError(f"source classes {missing} absent from target {target_classes}")
        return cls(
            source_classes,
            target_classes,
            {c: target_classes.index(c) for c in source_classes},
        )

    def validate(self) -> int:
        """Check the map and return the target index of the new class."""
        if set(self.correspondence) != set(self.source_classes):
            raise ConfigError("class map must cover every source class exactly once")
        absent = [c for c in self.source_classes if c not in self.target_classes]
        if absent:
            raise ConfigError(f"source classes {absent} absent from target classes")
        targets = list(self.correspondence.values())
        n = len(self.target_classes)
        if len(set(targets)) != len(targets) or any(not 0 <= t < n for t in targets):
            raise ConfigError(f"invalid target indices {targets}")
        unmapped = [i for i in range(n) if i not in targets]
        if len(unmapped) != 1:
            raise ConfigError(f"exactly one new target class expected, found {len(unmapped)}")
        return unmapped[0]


def _same_trunk(a: ArchitectureSpec, b: ArchitectureSpec) -> bool:
    return (
        a.blocks == b.blocks
        and a.dense_hidden == b.dense_hidden
        and a.input_shape == b.input_shape
    )


def transfer_binary_to_multiclass(
    binary: Model,
    target_spec: ArchitectureSpec,
    class_map: ClassMap | None = None,
    new_class_init: str = "zeros",
) -> Model:
    if binary.spec.num_classes != 2:
        raise TransferSourceError(f"source model has {binary.spec.num_classes} classes, need 2")
    if target_spec.num_classes != 3:
        raise ConfigError(f"target must have 3 classes, has {target_spec.num_classes}")
    if not _same_trunk(binary.spec, target_spec):
        raise IncompatibleArchitectureError(
            f"cannot transfer {binary.spec.name} into {target_spec.name}: conv stacks differ"
        )
    if new_class_init not in INIT_MODES:
        raise ConfigError(f"new_class_init must be one of {INIT_MODES}")
    if class_map is None:
        class_map = ClassMap.by_name(binary.spec.class_names, target_spec.class_names)
    if tuple(class_map.source_classes) != tuple(binary.spec.class_names):
        raise ConfigError("class map source labels do not match the binary model")
    if tuple(class_map.target_classes) != tuple(target_spec.class_names):
        raise ConfigError("class map target labels do not match the target spec")
    new_idx = class_map.validate()

    src = binary.copy()
    target = build(target_spec, seed=binary.seed)
    target.blocks = src.blocks
    target.hidden = src.hidden

    hid = target_spec.dense_hidden
    w = np.zeros((hid, 3), dtype=binary.head.weights.dtype)
    b = np.zeros(3, dtype=binary.head.bias.dtype)
    for s, name in enumerate(class_map.source_classes):
        t = class_map.correspondence[name]
        w[:, t] = binary.head.weights[:, s]
        b[t] = binary.head.bias[s]
    if new_class_init == "mean_of_sources":
        w[:, new_idx] = binary.head.weights.mean(axis=1)
        b[new_idx] = binary.head.bias.mean()
    target.head.weights = w
    target.head.bias = b
    return target


def load_binary_for_transfer(path) -> Model:
    from .persistence import load

    model = load(path)
    if model.spec.num_classes != 2:
        raise TransferSourceError(
            f"{path} holds a {model.spec.num_classes}-class model; transfer needs a binary one"
        )
    return model
