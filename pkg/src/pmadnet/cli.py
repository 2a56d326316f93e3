"""Command-line surface: data preparation, training, evaluation, inference,
attention maps, and gradient verification.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every artifact-producing command writes a run manifest alongside its
outputs; reruns with identical argv and seed reproduce every artifact
byte-for-byte apart from the manifest timestamp.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys

import numpy as np

from . import imageio, imgproc, ops, viz
from .clsnet import CLASS_NAMES, ClsNetConfig, CSFECNet, make_classifier_input
from .data import (balance_classes, export_busi, load_busi, preprocess_sample,
                   split, synth_generate)
from .errors import (ConfigError, DetachedTensor, EmptyClass, InvalidFractions,
                     InvalidGamma, MissingGradient, NonFiniteValue,
                     NotScalarLoss, PmadnetError, UnknownLayer, WindowTooLarge)
from .gradcam import grad_cam
from .gradcheck import grad_check
from .imgproc import STAGE_NAMES, PreprocessConfig
from .opprobes import build_module_suite, build_suite
from .segnet import PMADLinkNet, SegNetConfig
from .tensor import Tensor
from .training import (TrainConfig, evaluate_classifier,
                       evaluate_segmentation, load_checkpoint,
                       save_checkpoint, train_classifier, train_segmentation)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

CAM_SNAPSHOT_EPOCHS = (16, 32, 64, 96)
STAGE_FILES = ("01_gamma.png", "02_smooth.png", "03_resize.png",
               "04_normalized.png")

_USAGE_ERRORS = (ConfigError, UnknownLayer, InvalidGamma, WindowTooLarge,
                 InvalidFractions)
_NUMERIC_ERRORS = (NonFiniteValue, NotScalarLoss, MissingGradient,
                   DetachedTensor)


# ---------------------------------------------------------------------------
# Config files

def parse_config_file(path: str) -> dict:
    """Read plain key=value lines; '#' starts a comment anywhere."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        values[key] = value
    return values


def _parse_bool(raw: str) -> bool:
    lowered = str(raw).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def apply_schema(overrides: dict, schema: dict) -> dict:
    """Typed defaults + file overrides; unknown keys are errors."""
    values = {key: default for key, (_, default) in schema.items()}
    for key, raw in overrides.items():
        if key not in schema:
            known = ", ".join(sorted(schema))
            raise ConfigError(f"unknown config key {key!r} (known keys: {known})")
        caster = schema[key][0]
        try:
            values[key] = caster(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from exc
    return values


def _resolve(args, schema: dict) -> dict:
    overrides = parse_config_file(args.config) if getattr(args, "config", None) else {}
    return apply_schema(overrides, schema)


_PREP_KEYS = {
    "gamma": (float, 0.8),
    "sigma": (float, 1.0),
    "kernel_size": (int, 5),
}

_TRAIN_KEYS = {
    **_PREP_KEYS,
    "learning_rate": (float, 0.001),
    "epochs": (int, 30),
    "batch_size": (int, 8),
    "plateau_patience": (int, 5),
    "plateau_factor": (float, 0.5),
    "min_improvement": (float, 1e-4),
    "focal_gamma": (float, 2.0),
    "include_dice": (_parse_bool, False),
    "float32": (_parse_bool, True),
    "val_fraction": (float, 0.2),
    "balance": (_parse_bool, False),
    "input_size": (int, 0),
    "stop_dice": (float, 0.0),
    "stop_accuracy": (float, 0.0),
}


def _train_config(values: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=values["learning_rate"], epochs=values["epochs"],
        batch_size=values["batch_size"], seed=seed,
        plateau_patience=values["plateau_patience"],
        plateau_factor=values["plateau_factor"],
        min_improvement=values["min_improvement"],
        include_dice=values["include_dice"],
        focal_gamma=values["focal_gamma"], float32=values["float32"],
    ).validate()


# ---------------------------------------------------------------------------
# Manifests

def git_blob_sha1(path: str) -> str:
    """Content hash of a file the way git stores blobs."""
    with open(path, "rb") as fh:
        data = fh.read()
    digest = hashlib.sha1(b"blob %d\x00" % len(data))
    digest.update(data)
    return digest.hexdigest()


def _manifest_path(out: str) -> str:
    if os.path.isdir(out):
        return os.path.join(out, "manifest.json")
    return out + ".manifest.json"


def write_manifest(out: str, argv, config: dict, seed,
                   inputs, checkpoint_path: str | None = None) -> str:
    """Record what produced the artifacts next to them.

    Output paths are listed relative to the manifest's own directory, and
    the named checkpoint is pinned by its git blob hash.
    """
    path = _manifest_path(out)
    base = os.path.dirname(path) or "."
    if os.path.isdir(out):
        outputs = sorted(
            os.path.relpath(os.path.join(walk_root, name), base)
            for walk_root, _, names in os.walk(out) for name in names
            if os.path.join(walk_root, name) != path)
    else:
        outputs = [os.path.relpath(out, base)]
    doc = {
        "command": list(argv),
        "config": config,
        "seed": seed,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "inputs": sorted(inputs),
        "outputs": outputs,
        "checkpoint_sha1": git_blob_sha1(checkpoint_path) if checkpoint_path else None,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# Shared plumbing

def _prep_config(values: dict, size: int) -> PreprocessConfig:
    return PreprocessConfig(gamma=values["gamma"], sigma=values["sigma"],
                            kernel_size=values["kernel_size"],
                            target_h=size, target_w=size)


def _load_dataset(data_dir: str, pcfg: PreprocessConfig) -> list:
    samples = load_busi(data_dir)
    if not samples:
        raise EmptyClass(f"no samples found under {data_dir}")
    return [preprocess_sample(s, pcfg) for s in samples]


def _seg_model_config(profile: str, input_size: int) -> SegNetConfig:
    cfg = SegNetConfig.tiny(input_size or 64) if profile == "tiny" \
        else SegNetConfig.paper()
    if profile == "paper" and input_size:
        cfg = SegNetConfig.from_dict({**cfg.to_dict(), "input_size": input_size})
    return cfg


def _cls_model_config(profile: str, input_size: int) -> ClsNetConfig:
    cfg = ClsNetConfig.tiny(input_size or 64) if profile == "tiny" \
        else ClsNetConfig.paper()
    if profile == "paper" and input_size:
        cfg = ClsNetConfig.from_dict({**cfg.to_dict(), "input_size": input_size})
    return cfg


def _loaded_model(path: str, want, command: str):
    model, state = load_checkpoint(path)
    if not isinstance(model, want):
        raise ConfigError(
            f"{command} needs a {want.__name__} checkpoint, "
            f"got {type(model).__name__} from {path}")
    model.eval()
    return model, state


def _predict_mask(model: PMADLinkNet, image: np.ndarray) -> np.ndarray:
    x = image[None, None].astype(np.float32)
    probs = model.forward(Tensor(x, requires_grad=False))
    return (probs.data[0, 1] > probs.data[0, 0]).astype(np.uint8)


def _single_image(args, values: dict, size: int) -> np.ndarray:
    pcfg = _prep_config(values, size)
    return imgproc.preprocess(imageio.load_gray(args.image), pcfg)


def _mask_for_classifier(args, image: np.ndarray) -> np.ndarray:
    if getattr(args, "mask", None):
        mask = imageio.load_mask(args.mask).astype(np.float64)
        resized = imgproc.resize_nearest(mask, *image.shape)
        return (resized > 0.5).astype(np.uint8)
    if getattr(args, "seg_checkpoint", None):
        seg, _ = _loaded_model(args.seg_checkpoint, PMADLinkNet, "--seg-checkpoint")
        return _predict_mask(seg, image)
    raise ConfigError("provide --mask or --seg-checkpoint to isolate the lesion")


# ---------------------------------------------------------------------------
# Commands

def cmd_preprocess(args, argv) -> int:
    schema = {**_PREP_KEYS, "target": (int, 256)}
    values = _resolve(args, schema)
    pcfg = _prep_config(values, values["target"])
    samples = load_busi(args.data_dir)
    if not samples:
        raise EmptyClass(f"no samples found under {args.data_dir}")
    os.makedirs(args.out, exist_ok=True)
    export_busi([preprocess_sample(s, pcfg) for s in samples], args.out)
    if args.dump_stages:
        for sample in samples:
            stage_dir = os.path.join(args.dump_stages, sample.id)
            os.makedirs(stage_dir, exist_ok=True)
            stages = imgproc.preprocess(sample.image, pcfg, return_stages=True)
            for fname, stage in zip(STAGE_FILES, STAGE_NAMES):
                imageio.save_image(os.path.join(stage_dir, fname), stages[stage])
    write_manifest(args.out, argv, values, args.seed, [args.data_dir])
    print(f"preprocessed {len(samples)} samples into {args.out}")
    return EXIT_OK


def cmd_synth_data(args, argv) -> int:
    schema = {"n_per_class": (int, 50), "size": (int, 64)}
    values = _resolve(args, schema)
    samples = synth_generate(values["n_per_class"], values["size"], args.seed)
    os.makedirs(args.out, exist_ok=True)
    export_busi(samples, args.out)
    write_manifest(args.out, argv, values, args.seed, [])
    print(f"wrote {len(samples)} synthetic samples into {args.out}")
    return EXIT_OK


def _run_training(args, argv, task: str) -> int:
    values = _resolve(args, _TRAIN_KEYS)
    if task == "seg":
        model_cfg = _seg_model_config(args.profile, values["input_size"])
    else:
        model_cfg = _cls_model_config(args.profile, values["input_size"])
    pcfg = _prep_config(values, model_cfg.input_size)
    samples = _load_dataset(args.data_dir, pcfg)
    if values["balance"]:
        samples = balance_classes(samples, np.random.default_rng([args.seed, 1]))
    fractions = (1.0 - values["val_fraction"], values["val_fraction"])
    dataset = split(samples, fractions, args.seed)
    tcfg = _train_config(values, args.seed)
    os.makedirs(args.out, exist_ok=True)

    if task == "seg":
        model = PMADLinkNet(model_cfg, np.random.default_rng(args.seed))
        trainer, stop_key, stop_metric = train_segmentation, "stop_dice", "dice"
    else:
        model = CSFECNet(model_cfg, np.random.default_rng(args.seed))
        trainer, stop_key, stop_metric = train_classifier, "stop_accuracy", "cls_accuracy"

    cam_source = (dataset.validation or dataset.train)[0]
    snapshots = []
    jsonl_path = os.path.join(args.out, "metrics.jsonl")
    with open(jsonl_path, "w") as jsonl:
        def on_epoch_end(epoch, report):
            jsonl.write(json.dumps(report.to_json_dict(), sort_keys=True) + "\n")
            if task == "seg" and epoch + 1 in CAM_SNAPSHOT_EPOCHS:
                cam = grad_cam(model, cam_source.image)
                snapshots.append((f"epoch {epoch + 1}", cam_source.image, cam))
            target = values[stop_key]
            return bool(target > 0 and getattr(report, stop_metric) >= target)

        model, reports = trainer(model, dataset, tcfg, on_epoch_end)

    ckpt_path = os.path.join(args.out, "checkpoint.pmad")
    save_checkpoint(model, {"epochs_run": len(reports), "seed": args.seed,
                            "profile": args.profile,
                            "final_loss": reports[-1].loss_total}, ckpt_path)
    viz.emit_curves(reports, os.path.join(args.out, "curves.csv"),
                    os.path.join(args.out, "curves.png"))
    if snapshots:
        viz.emit_cam_panel(snapshots, os.path.join(args.out, "cam_panel.png"))
    write_manifest(args.out, argv, values, args.seed, [args.data_dir],
                   checkpoint_path=ckpt_path)
    last = reports[-1]
    if task == "seg":
        print(f"epoch {len(reports)}: dice={last.dice:.4f} iou={last.iou:.4f} "
              f"loss={last.loss_total:.4f}")
    else:
        print(f"epoch {len(reports)}: accuracy={last.cls_accuracy:.4f} "
              f"f1={last.f1:.4f} loss={last.loss_total:.4f}")
    return EXIT_OK


def cmd_train_seg(args, argv) -> int:
    return _run_training(args, argv, "seg")


def cmd_train_cls(args, argv) -> int:
    return _run_training(args, argv, "cls")


def _run_eval(args, argv, task: str) -> int:
    values = _resolve(args, {**_PREP_KEYS, "focal_gamma": (float, 2.0),
                             "include_dice": (_parse_bool, False),
                             "float32": (_parse_bool, True)})
    want = PMADLinkNet if task == "seg" else CSFECNet
    model, _ = _loaded_model(args.checkpoint, want, f"eval-{task}")
    pcfg = _prep_config(values, model.config.input_size)
    samples = _load_dataset(args.data_dir, pcfg)
    tcfg = TrainConfig(focal_gamma=values["focal_gamma"],
                       include_dice=values["include_dice"],
                       float32=values["float32"])
    if task == "seg":
        report = evaluate_segmentation(model, samples, tcfg)
        summary = (f"dice={report.dice:.4f} iou={report.iou:.4f} "
                   f"pixel_accuracy={report.pixel_accuracy:.4f} "
                   f"loss={report.loss_total:.4f}")
    else:
        report = evaluate_classifier(model, samples, tcfg)
        summary = (f"accuracy={report.cls_accuracy:.4f} "
                   f"precision={report.precision:.4f} "
                   f"recall={report.recall:.4f} f1={report.f1:.4f}")
    out_dir = os.path.dirname(args.out)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(args.out, argv, values, args.seed,
                   [args.data_dir, args.checkpoint],
                   checkpoint_path=args.checkpoint)
    print(summary)
    return EXIT_OK


def cmd_eval_seg(args, argv) -> int:
    return _run_eval(args, argv, "seg")


def cmd_eval_cls(args, argv) -> int:
    return _run_eval(args, argv, "cls")


def cmd_segment(args, argv) -> int:
    values = _resolve(args, _PREP_KEYS)
    model, _ = _loaded_model(args.checkpoint, PMADLinkNet, "segment")
    image = _single_image(args, values, model.config.input_size)
    mask = _predict_mask(model, image)
    os.makedirs(args.out, exist_ok=True)
    imageio.save_mask(os.path.join(args.out, "mask.png"), mask)
    viz.emit_overlay(image, mask, os.path.join(args.out, "overlay.png"))
    write_manifest(args.out, argv, values, args.seed,
                   [args.image, args.checkpoint],
                   checkpoint_path=args.checkpoint)
    print(f"foreground fraction: {mask.mean():.4f}")
    return EXIT_OK


def cmd_classify(args, argv) -> int:
    values = _resolve(args, _PREP_KEYS)
    model, _ = _loaded_model(args.checkpoint, CSFECNet, "classify")
    image = _single_image(args, values, model.config.input_size)
    mask = _mask_for_classifier(args, image)
    x = make_classifier_input(image, mask)
    probs = model.forward(Tensor(x.data[None].astype(np.float32),
                                 requires_grad=False))
    scores = {name: float(p) for name, p in zip(CLASS_NAMES, probs.data[0])}
    label = CLASS_NAMES[int(np.argmax(probs.data[0]))]
    print(f"prediction: {label}")
    print(" ".join(f"{name}={scores[name]:.4f}" for name in CLASS_NAMES))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "prediction.json"), "w") as fh:
            json.dump({"label": label, "probabilities": scores}, fh,
                      indent=2, sort_keys=True)
            fh.write("\n")
        write_manifest(args.out, argv, values, args.seed,
                       [args.image, args.checkpoint],
                       checkpoint_path=args.checkpoint)
    return EXIT_OK


def cmd_gradcam(args, argv) -> int:
    values = _resolve(args, _PREP_KEYS)
    model, _ = load_checkpoint(args.checkpoint)
    model.eval()
    if isinstance(model, PMADLinkNet):
        image = _single_image(args, values, model.config.input_size)
        cam = grad_cam(model, image, layer_name=args.layer)
    elif isinstance(model, CSFECNet):
        image = _single_image(args, values, model.config.input_size)
        mask = _mask_for_classifier(args, image)
        x = make_classifier_input(image, mask)
        target = args.target
        if target and target.lstrip("-").isdigit():
            target = int(target)
        cam = grad_cam(model, x.data, target=target, layer_name=args.layer)
    else:
        raise ConfigError(f"gradcam cannot handle {type(model).__name__}")
    layer = args.layer or model.default_cam_layer()
    os.makedirs(args.out, exist_ok=True)
    imageio.save_image(os.path.join(args.out, "cam.png"), cam)
    viz.emit_cam_panel([(layer, image, cam)],
                       os.path.join(args.out, "cam_panel.png"))
    write_manifest(args.out, argv, {**values, "layer": layer}, args.seed,
                   [args.image, args.checkpoint],
                   checkpoint_path=args.checkpoint)
    print(f"cam over layer {layer}: peak={cam.max():.4f}")
    return EXIT_OK


def _network_probe_entries(seed: int):
    """Whole-network input-gradient probes at 32 px, eval mode."""

    def seg(rng):
        model = PMADLinkNet(SegNetConfig.tiny(32),
                            np.random.default_rng(int(rng.integers(2**31))))
        model.eval()
        w = Tensor(rng.standard_normal((1, 2, 32, 32)))
        return (lambda x: ops.mean_all(ops.mul(model.forward(x), w)),
                rng.standard_normal((1, 1, 32, 32)) * 0.5)

    def cls(rng):
        model = CSFECNet(ClsNetConfig.tiny(32),
                         np.random.default_rng(int(rng.integers(2**31))))
        model.eval()
        w = Tensor(rng.standard_normal((1, 3)))
        return (lambda x: ops.mean_all(ops.mul(model.forward(x), w)),
                rng.standard_normal((1, 3, 32, 32)) * 0.5)

    return [("pmad_linknet", seg), ("csfec_net", cls)]


def cmd_gradcheck(args, argv) -> int:
    schema = {"seeds": (int, 3), "eps": (float, 1e-5), "tol": (float, 1e-4),
              "max_coords": (int, 12), "network_tol": (float, 1e-3),
              "networks": (_parse_bool, True)}
    values = _resolve(args, schema)
    entries = [(name, make, values["seeds"], values["max_coords"], values["tol"])
               for name, make in build_suite() + build_module_suite()]
    if values["networks"] and args.profile == "tiny":
        entries += [(name, make, 1, min(4, values["max_coords"]),
                     values["network_tol"])
                    for name, make in _network_probe_entries(args.seed)]

    rows = []
    for index, (name, make, seeds, max_coords, tol) in enumerate(entries):
        worst, checked, excluded = 0.0, 0, 0
        for s in range(seeds):
            f, x0 = make(np.random.default_rng([args.seed, index, s]))
            try:
                result = grad_check(f, x0, eps=values["eps"], tol=tol,
                                    max_coords=max_coords,
                                    rng=np.random.default_rng([args.seed, index, s, 1]))
            except NonFiniteValue:
                # A blown-up probe should fail its own row, not kill the sweep.
                worst = float("inf")
                continue
            worst = max(worst, result.max_rel_error)
            checked += result.checked
            excluded += result.excluded
        rows.append({"name": name, "max_rel_error": float(worst),
                     "checked": int(checked), "excluded": int(excluded),
                     "tol": float(tol), "passed": bool(worst < tol)})

    width = max(len(row["name"]) for row in rows)
    print(f"{'probe':<{width}}  {'max_rel_err':>12}  {'checked':>7}  "
          f"{'excluded':>8}  status")
    for row in rows:
        status = "PASS" if row["passed"] else "FAIL"
        print(f"{row['name']:<{width}}  {row['max_rel_error']:>12.3e}  "
              f"{row['checked']:>7}  {row['excluded']:>8}  {status}")
    failed = [row["name"] for row in rows if not row["passed"]]
    print(f"{len(rows) - len(failed)}/{len(rows)} probes passed")

    if args.out:
        out_dir = os.path.dirname(args.out)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
            fh.write("\n")
        write_manifest(args.out, argv, values, args.seed, [])
    return EXIT_OK if not failed else EXIT_NUMERIC


def cmd_print_arch(args, argv) -> int:
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
        print(model.describe())
        return EXIT_OK
    seg = PMADLinkNet(_seg_model_config(args.profile, 0))
    cls = CSFECNet(_cls_model_config(args.profile, 0))
    print(seg.describe())
    print()
    print(cls.describe())
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and entry point

class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(sub, *, data_dir=False, out=False, checkpoint=False,
                image=False):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--profile", choices=("tiny", "paper"), default="tiny")
    if data_dir:
        sub.add_argument("--data-dir", required=True)
    if out is not False:
        sub.add_argument("--out", required=(out == "required"))
    if checkpoint:
        sub.add_argument("--checkpoint", required=True)
    if image:
        sub.add_argument("--image", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pmadnet",
                     description="Ultrasound lesion segmentation and "
                                 "classification toolkit")
    commands = parser.add_subparsers(dest="command", metavar="command")

    p = commands.add_parser("preprocess", help="run the image pipeline over a dataset")
    _add_common(p, data_dir=True, out="required")
    p.add_argument("--dump-stages", help="directory for per-stage images")
    p.set_defaults(func=cmd_preprocess)

    p = commands.add_parser("synth-data", help="generate the synthetic dataset")
    _add_common(p, out="required")
    p.set_defaults(func=cmd_synth_data)

    p = commands.add_parser("train-seg", help="train the segmentation network")
    _add_common(p, data_dir=True, out="required")
    p.set_defaults(func=cmd_train_seg)

    p = commands.add_parser("train-cls", help="train the classifier")
    _add_common(p, data_dir=True, out="required")
    p.set_defaults(func=cmd_train_cls)

    p = commands.add_parser("eval-seg", help="evaluate a segmentation checkpoint")
    _add_common(p, data_dir=True, out="required", checkpoint=True)
    p.set_defaults(func=cmd_eval_seg)

    p = commands.add_parser("eval-cls", help="evaluate a classifier checkpoint")
    _add_common(p, data_dir=True, out="required", checkpoint=True)
    p.set_defaults(func=cmd_eval_cls)

    p = commands.add_parser("segment", help="predict a mask for one image")
    _add_common(p, out="required", checkpoint=True, image=True)
    p.set_defaults(func=cmd_segment)

    p = commands.add_parser("classify", help="predict the class of one image")
    _add_common(p, out=True, checkpoint=True, image=True)
    p.add_argument("--mask", help="lesion mask image")
    p.add_argument("--seg-checkpoint", help="segmentation checkpoint to derive the mask")
    p.set_defaults(func=cmd_classify)

    p = commands.add_parser("gradcam", help="attention heatmap for one image")
    _add_common(p, out="required", checkpoint=True, image=True)
    p.add_argument("--mask", help="lesion mask image (classifier checkpoints)")
    p.add_argument("--seg-checkpoint", help="segmentation checkpoint to derive the mask")
    p.add_argument("--layer", help="captured layer name (default: the model's)")
    p.add_argument("--target", help="class name or index (classifier checkpoints)")
    p.set_defaults(func=cmd_gradcam)

    p = commands.add_parser("gradcheck", help="finite-difference audit of every primitive")
    _add_common(p, out=True)
    p.set_defaults(func=cmd_gradcheck)

    p = commands.add_parser("print-arch", help="describe the network wiring")
    _add_common(p, out=False)
    p.add_argument("--checkpoint", help="describe this checkpoint's model instead")
    p.set_defaults(func=cmd_print_arch)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(parser.format_usage(), file=sys.stderr, end="")
        print(f"pmadnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    if not getattr(args, "command", None):
        print(parser.format_usage(), file=sys.stderr, end="")
        return EXIT_USAGE
    try:
        return args.func(args, argv)
    except _USAGE_ERRORS as exc:
        print(f"pmadnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERIC_ERRORS as exc:
        print(f"pmadnet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PmadnetError, OSError) as exc:
        print(f"pmadnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
