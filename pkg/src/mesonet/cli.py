"""Command-line entry point: align, train, transfer, eval, infer, inspect.

Exit codes: 0 success, 1 fatal configuration/data error, 2 some files failed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import persistence
from .architectures import ARCH_NAMES, build, spec_by_name
from .dataset import IMAGE_SUFFIXES, balance, load_arrays, load_image, scan_dataset, split
from .errors import ConfigError, MesoError
from .images import write_ppm
from .metrics import auc, classification_report, confusion_matrix, roc_curve
from .preprocess import CANONICAL_SIZE, align_image, load_landmarks, sidecar_path, to_tensor
from .training import TrainConfig, evaluate, fit
from .transfer import ClassMap, load_binary_for_transfer, transfer_binary_to_multiclass

log = logging.getLogger("mesonet")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2

CONFIG_KEYS = {
    "arch": str,
    "classes": lambda s: [c.strip() for c in s.split(",") if c.strip()],
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "seed": int,
    "balance": lambda s: _parse_bool(s),
    "align": lambda s: _parse_bool(s),
    "input_size": int,
    "val_fraction": float,
    "out": str,
    "history": str,
}

DEFAULTS = {
    "epochs": 10,
    "batch_size": 8,
    "learning_rate": 1e-3,
    "seed": 0,
    "balance": False,
    "align": True,
    "input_size": CANONICAL_SIZE,
}

# binary architecture -> the multiclass architecture sharing its conv stack
TRANSFER_TARGETS = {"meso4": "meso-multinet", "mesonet-plus": "meso-multinet-plus"}


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def read_config(path) -> dict:
    """Flat ``key = value`` file with ``#`` comments; unknown keys are errors."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def resolve(args: argparse.Namespace, key: str):
    """Flag, then config file, then MESO_SEED (seed only), then built-in default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in args.file_config:
        return args.file_config[key]
    if key == "seed" and os.environ.get("MESO_SEED"):
        try:
            return int(os.environ["MESO_SEED"])
        except ValueError:
            raise ConfigError(f"MESO_SEED must be an integer, got {os.environ['MESO_SEED']!r}")
    return DEFAULTS.get(key)


# -- align ------------------------------------------------------------------------


def cmd_align(args) -> int:
    src, dst = Path(args.input), Path(args.output)
    if not src.is_dir() or not os.access(src, os.R_OK):
        raise ConfigError(f"cannot read input directory {src}")
    files = sorted(p for p in src.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    failures = []
    fallbacks = 0
    for path in files:
        rel = path.relative_to(src)
        target = (dst / rel).with_suffix(".ppm")
        try:
            img, fallback = load_image(path, align=True, size=args.size)
            target.parent.mkdir(parents=True, exist_ok=True)
            write_ppm(img, target)
        except (MesoError, OSError) as exc:
            failures.append((rel, str(exc)))
            print(f"FAILED   {rel}: {exc}")
            continue
        fallbacks += fallback
        print(f"{'fallback' if fallback else 'aligned '} {rel} -> {target.relative_to(dst)}")
        if fallback:
            log.info("%s: no landmark sidecar, centre-crop fallback", rel)
    done = len(files) - len(failures)
    print(f"{done}/{len(files)} images written ({done - fallbacks} aligned, {fallbacks} centre-cropped)")
    if failures:
        print(f"{len(failures)} failure(s):")
        for rel, msg in failures:
            print(f"  {rel}: {msg}")
        return EXIT_PARTIAL
    return EXIT_OK


# -- train ------------------------------------------------------------------------


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=resolve(args, "epochs"),
        batch_size=resolve(args, "batch_size"),
        learning_rate=resolve(args, "learning_rate"),
        seed=resolve(args, "seed"),
    )


def cmd_train(args) -> int:
    config = _train_config(args)
    align = resolve(args, "align")
    seed = config.seed
    out = resolve(args, "out")
    if not out:
        raise ConfigError("--out is required")
    out = Path(out)

    manifest = scan_dataset(args.data, resolve(args, "classes"))
    if resolve(args, "balance"):
        manifest = balance(manifest, seed)

    if args.init_from:
        model = persistence.load(args.init_from)
        if tuple(model.class_names) != manifest.class_names:
            raise ConfigError(
                f"model classes {list(model.class_names)} != dataset classes {list(manifest.class_names)}"
            )
    else:
        arch = resolve(args, "arch")
        if not arch:
            raise ConfigError("--arch is required (or --init-from)")
        spec = spec_by_name(arch)
        if spec.num_classes != len(manifest.class_names):
            raise ConfigError(
                f"{arch} has a {spec.num_classes}-class head but {args.data} holds "
                f"{len(manifest.class_names)} classes: {', '.join(manifest.class_names)}"
            )
        spec = spec_by_name(arch, manifest.class_names).with_input_size(resolve(args, "input_size"))
        model = build(spec, seed)

    val_manifest = None
    if args.val:
        val_manifest = scan_dataset(args.val, manifest.class_names)
    elif resolve(args, "val_fraction"):
        manifest, val_manifest = split(manifest, 1.0 - resolve(args, "val_fraction"), seed)

    size = model.spec.input_size
    train_data = load_arrays(manifest, size, align)
    val_data = load_arrays(val_manifest, size, align) if val_manifest is not None else None
    history = fit(model, train_data, val_data, config)

    out.parent.mkdir(parents=True, exist_ok=True)
    persistence.save(model, out)
    hist_path = Path(resolve(args, "history") or out.with_suffix(".history.csv"))
    history.to_csv(hist_path)
    msg = f"final: train_loss={history.train_loss[-1]:.4f} train_acc={history.train_acc[-1]:.4f}"
    if history.val_loss is not None:
        msg += f" val_loss={history.val_loss[-1]:.4f} val_acc={history.val_acc[-1]:.4f}"
    print(msg)
    print(f"model written to {out}; history to {hist_path}")
    return EXIT_OK


# -- transfer -----------------------------------------------------------------------


def cmd_transfer(args) -> int:
    source = load_binary_for_transfer(args.source)
    expected = TRANSFER_TARGETS.get(source.spec.name)
    if args.to_arch not in ("meso-multinet", "meso-multinet-plus"):
        raise ConfigError(f"--to-arch must be a multiclass architecture, got {args.to_arch}")
    if expected is not None and args.to_arch != expected:
        raise ConfigError(f"{source.spec.name} can only transfer into {expected}")
    if args.new_class in source.class_names:
        raise ConfigError(f"{args.new_class!r} is already a source class")
    target_names = sorted([*source.class_names, args.new_class])
    spec = spec_by_name(args.to_arch, target_names).with_input_size(source.spec.input_size)
    cmap = ClassMap.by_name(source.class_names, target_names)
    model = transfer_binary_to_multiclass(source, spec, cmap, args.init)
    persistence.save(model, args.out)

    print(f"{'source class':<16}{'source idx':>10}  ->  {'target idx':>10}")
    for s, name in enumerate(source.class_names):
        print(f"{name:<16}{s:>10}  ->  {cmap.correspondence[name]:>10}")
    print(f"{args.new_class:<16}{'(new)':>10}  ->  {target_names.index(args.new_class):>10}  init={args.init}")
    print(f"wrote {args.to_arch} model to {args.out}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    model = persistence.load(args.model)
    names = list(model.class_names)
    root = Path(args.data)
    available = sorted(d.name for d in root.iterdir() if d.is_dir()) if root.is_dir() else []
    missing = [c for c in names if c not in available]
    if missing:
        raise ConfigError(
            f"model classes missing from {root}: {', '.join(missing)} "
            f"(dataset has: {', '.join(available) or 'nothing'})"
        )
    extra = [c for c in available if c not in names]
    if extra:
        log.warning("ignoring dataset classes unknown to the model: %s", ", ".join(extra))
    manifest = scan_dataset(root, names)
    data = load_arrays(manifest, model.spec.input_size, resolve(args, "align"))
    metrics, probs = evaluate(model, data)
    preds = np.argmax(probs, axis=1)
    cm = confusion_matrix(data.labels, preds, len(names), names)
    report = classification_report(cm)

    text = "Confusion matrix (rows = true, columns = predicted)\n" + cm.to_text() + "\n\n"
    text += report.to_text()
    doc = report.to_dict()
    doc["confusion_matrix"] = {"class_names": names, "counts": cm.counts.tolist()}
    doc["loss"] = metrics.loss

    # binary models always get a curve; multiclass ones on request, positive class vs the rest
    if len(names) == 2 or args.roc or args.roc_svg:
        pos = args.positive_class
        if pos not in names:
            raise ConfigError(f"positive class {pos!r} not among model classes {names}")
        p = names.index(pos)
        curve = roc_curve(probs[:, p], (data.labels == p).astype(int))
        area = auc(curve)
        doc["auc"] = area
        doc["positive_class"] = pos
        rest = "rest" if len(names) > 2 else names[1 - p]
        text += f"\nAUC-ROC ({pos} vs {rest}): {area:.4f}\n"
        if args.roc:
            curve.to_csv(args.roc)
        if args.roc_svg:
            Path(args.roc_svg).write_text(curve.to_svg(f"ROC: {pos} vs {rest}"))
        print(f"AUC: {area:.6f}")

    if args.report:
        Path(args.report).write_text(text)
    if args.report_json:
        import json

        Path(args.report_json).write_text(json.dumps(doc, indent=2) + "\n")
    print(text, end="")
    return EXIT_OK


# -- infer ----------------------------------------------------------------------------


def cmd_infer(args) -> int:
    from .images import read_image

    model = persistence.load(args.model)
    img = read_image(args.image)
    marks_path = Path(args.landmarks) if args.landmarks else sidecar_path(args.image)
    size = model.spec.input_size
    if marks_path.exists():
        aligned = align_image(img, load_landmarks(marks_path), size)
    else:
        print(f"note: no landmarks for {args.image}; using centre-crop fallback", file=sys.stderr)
        aligned = align_image(img, None, size)
    x = to_tensor([aligned], size)
    from .architectures import forward

    probs = forward(model, x)[0][0]
    for name, p in zip(model.class_names, probs):
        print(f"{name}: {p:.6f}")
    print(f"label: {model.class_names[int(np.argmax(probs))]}")
    return EXIT_OK


# -- inspect ----------------------------------------------------------------------------


def cmd_inspect(args) -> int:
    with open(args.model, "rb") as fh:
        data = fh.read()
    _, version, _ = persistence.read_header(data)
    model = persistence.from_bytes(data)
    spec = model.spec
    print(f"architecture: {spec.name}")
    print(f"file version: {version}")
    print(f"input: {spec.in_channels}x{spec.input_size}x{spec.input_size}")
    print(f"classes: {', '.join(spec.class_names)}")
    print(f"{'block':>5} {'filters':>8} {'kernel':>7} {'pool':>5} {'out':>5}")
    chain = spec.spatial_chain()
    for i, b in enumerate(spec.blocks):
        print(f"{i + 1:>5} {b.filters:>8} {f'{b.kernel}x{b.kernel}':>7} {b.pool:>5} {chain[i + 1]:>5}")
    print(f"flatten: {spec.flatten_size} -> dense {spec.dense_hidden} -> dense {spec.num_classes}")
    print(f"dropout: {spec.dropout_rate}")
    print(f"parameters: {model.parameter_count()}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # usage errors are fatal config errors; exit status 2 is reserved for partial failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FATAL, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mesonet", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="flat key=value config file (flags override it)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="align a directory tree of face images")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--size", type=int, default=CANONICAL_SIZE)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("train", help="train a model on a class-per-directory dataset")
    p.add_argument("--arch", choices=ARCH_NAMES)
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--out")
    p.add_argument("--history")
    p.add_argument("--init-from", help="continue training (fine-tune) an existing model file")
    p.add_argument("--classes", type=CONFIG_KEYS["classes"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--input-size", type=int)
    p.add_argument("--balance", action="store_true", default=None)
    p.add_argument("--align", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="binary -> multiclass weight transfer")
    p.add_argument("--from", dest="source", required=True)
    p.add_argument("--to-arch", required=True, choices=ARCH_NAMES)
    p.add_argument("--new-class", default="FaceSwap")
    p.add_argument("--init", default="zeros", choices=("zeros", "mean_of_sources"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("eval", help="confusion matrix, report and ROC on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report")
    p.add_argument("--report-json")
    p.add_argument("--roc")
    p.add_argument("--roc-svg")
    p.add_argument("--positive-class", default="DeepFake")
    p.add_argument("--align", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="class probabilities for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--landmarks")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("inspect", help="describe a model file")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_FATAL
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.file_config = read_config(args.config) if args.config else {}
        return args.func(args)
    except (MesoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
