"""Command-line front end wiring the pipeline into reproducible runs.

Subcommands: gen-data, train-detector, extract, train-classifier,
crossval, report, gradcheck.  Every run writes a ``run_manifest.json``
capturing the fully resolved configuration, and re-running from that
manifest reproduces the outputs byte for byte.  Exit codes: 0 success,
1 failure with a diagnostic, 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import irisauth
from irisauth import datagen, harness
from irisauth.checkpoint import load_checkpoint, save_checkpoint
from irisauth.classifier import ClassifierConfig
from irisauth.detect import (
    AnchorGridConfig, Box, DetectorConfig, DetectorTrainConfig,
    build_detector, detect_best_region, evaluate_detector, train_detector,
)
from irisauth.errors import (
    CheckpointError, ContractViolation, GradientError, ManifestError,
)
from irisauth.estimators import IrisClassifier
from irisauth.harness import ClassifierDataset, TrainConfig
from irisauth.preprocess import PipelineConfig, preprocess_pipeline

OUT_ROOT_ENV = "IRISAUTH_OUT"


def _out_dir(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ContractViolation(f"config file not found: {p}")
    doc = json.loads(p.read_text())
    # A run manifest is itself a valid config source.
    if isinstance(doc, dict) and "config" in doc and "command" in doc:
        doc = doc["config"]
    if not isinstance(doc, dict):
        raise ContractViolation(f"config file {p} must hold a JSON object")
    return doc


def _resolve(args, file_cfg: dict, key: str, default):
    """Priority: explicit flag > config file > built-in default."""
    flag = getattr(args, key.replace("-", "_"), None)
    if flag is not None:
        return flag
    if key in file_cfg:
        return file_cfg[key]
    return default


def _parse_widths(value, default):
    if value is None:
        return tuple(default)
    if isinstance(value, str):
        return tuple(int(v) for v in value.split(",") if v.strip())
    return tuple(int(v) for v in value)


def _write_run_manifest(out: Path, command: str, config: dict) -> None:
    doc = {
        "command": command,
        "config": config,
        "tool": {"name": "irisauth", "version": irisauth.__version__},
    }
    (out / "run_manifest.json").write_text(
        json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen_data(args) -> int:
    file_cfg = _load_config_file(args.config)
    # Keys here mirror the resolver keys so a run manifest replays as-is.
    cfg = {
        "ids": _resolve(args, file_cfg, "ids", 20),
        "per_id": _resolve(args, file_cfg, "per_id", 40),
        "size": _resolve(args, file_cfg, "size", 64),
        "spectrum": _resolve(args, file_cfg, "spectrum", "VW"),
        "eyelid": not args.no_eyelid if args.no_eyelid is not None else file_cfg.get("eyelid", True),
        "highlight": not args.no_highlight if args.no_highlight is not None else file_cfg.get("highlight", True),
        "seed": _resolve(args, file_cfg, "seed", 0),
    }
    spec = datagen.SynthSpec(
        num_identities=cfg["ids"],
        images_per_identity=cfg["per_id"],
        image_size=cfg["size"],
        spectrum=cfg["spectrum"],
        eyelid=cfg["eyelid"],
        highlight=cfg["highlight"],
        seed=cfg["seed"],
    )
    out = _out_dir(args.out)
    manifest = datagen.synth_dataset(spec, out)
    _write_run_manifest(out, "gen-data", cfg)
    report = datagen.class_report(manifest)
    print(f"wrote {report['images']} samples "
          f"({report['identities']} identities) to {out / 'manifest.json'}")
    return 0


def _detector_configs(args, file_cfg: dict) -> tuple[DetectorConfig, DetectorTrainConfig, dict]:
    # Defaults are the desk-scale recipe for 64px synthetic eyes: a deep
    # stride-4 backbone whose receptive field covers a whole iris, and
    # anchors sized 20-36px.
    widths = _parse_widths(_resolve(args, file_cfg, "widths", None), (16, 32, 32))
    strides = _parse_widths(_resolve(args, file_cfg, "strides", None), (2, 2, 1))
    kernel = _resolve(args, file_cfg, "kernel", 5)
    scales = tuple(_resolve(args, file_cfg, "scales", (5.0, 7.0, 9.0)))
    ratios = tuple(_resolve(args, file_cfg, "ratios", (0.5, 1.0, 2.0)))
    base_size = _resolve(args, file_cfg, "base_size", 4)
    overall = 1
    for s in strides:
        overall *= s
    cfg = DetectorConfig(
        backbone_widths=widths, block_strides=strides, kernel_size=kernel,
        anchor=AnchorGridConfig(stride=overall, scales=scales,
                                ratios=ratios, base_size=base_size),
        score_floor=_resolve(args, file_cfg, "score_floor", 0.05),
    )
    train_cfg = DetectorTrainConfig(
        epochs=_resolve(args, file_cfg, "epochs", 40),
        batch_size=_resolve(args, file_cfg, "batch", 8),
        lr=_resolve(args, file_cfg, "lr", 2e-3),
        smooth_l1_beta=_resolve(args, file_cfg, "smooth_l1_beta", 1.0 / 9.0),
        train_fraction=_resolve(args, file_cfg, "split", 0.2),
        seed=_resolve(args, file_cfg, "seed", 0),
    )
    resolved = {
        "widths": list(widths), "strides": list(strides), "kernel": kernel,
        "scales": list(scales), "ratios": list(ratios),
        "base_size": base_size, "score_floor": cfg.score_floor,
        "epochs": train_cfg.epochs, "batch": train_cfg.batch_size,
        "lr": train_cfg.lr, "smooth_l1_beta": train_cfg.smooth_l1_beta,
        "split": train_cfg.train_fraction,
        "seed": train_cfg.seed, "data": str(args.data),
    }
    return cfg, train_cfg, resolved


def _save_resume_state(path, final_arrays, opt_state) -> None:
    """Final-epoch weights + optimizer moments for exact resumption."""
    tensors = dict(final_arrays)
    tensors.update(opt_state.arrays())
    save_checkpoint(path, tensors, meta={"kind": "resume", "t": opt_state.t})


def _detector_meta(cfg: DetectorConfig) -> dict:
    return {
        "kind": "detector",
        "in_channels": cfg.in_channels,
        "backbone_widths": list(cfg.backbone_widths),
        "block_strides": list(cfg.block_strides),
        "kernel_size": cfg.kernel_size,
        "scales": list(cfg.anchor.scales),
        "ratios": list(cfg.anchor.ratios),
        "base_size": cfg.anchor.base_size,
        "nms_iou": cfg.nms_iou,
        "score_floor": cfg.score_floor,
    }


def _detector_from_meta(meta: dict) -> DetectorConfig:
    widths = tuple(meta["backbone_widths"])
    strides = tuple(meta.get("block_strides") or (2,) * len(widths))
    overall = 1
    for s in strides:
        overall *= s
    return DetectorConfig(
        in_channels=meta.get("in_channels", 3),
        backbone_widths=widths,
        block_strides=strides,
        kernel_size=meta.get("kernel_size", 3),
        anchor=AnchorGridConfig(stride=overall,
                                scales=tuple(meta["scales"]),
                                ratios=tuple(meta["ratios"]),
                                base_size=meta.get("base_size")),
        nms_iou=meta.get("nms_iou", 0.5),
        score_floor=meta.get("score_floor", 0.05),
    )


def _cmd_train_detector(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg, train_cfg, resolved = _detector_configs(args, file_cfg)
    manifest = datagen.load_manifest(Path(args.data))
    out = _out_dir(args.out)

    result = train_detector(manifest, train_cfg.train_fraction, cfg, train_cfg)
    save_checkpoint(out / "detector.ckpt", result.params.arrays(),
                    meta=_detector_meta(cfg))
    _save_resume_state(out / "detector_resume.ckpt", result.final_arrays,
                       result.opt_state)
    trace_lines = ["epoch,l_cls,l_box,l_mask,total"]
    for i, t in enumerate(result.trace):
        trace_lines.append(
            f"{i},{t.l_cls:.6f},{t.l_box:.6f},{t.l_mask:.6f},{t.total:.6f}")
    (out / "loss_trace.csv").write_text("\n".join(trace_lines) + "\n")
    _write_run_manifest(out, "train-detector", resolved)

    print(f"best epoch {result.best_epoch}: "
          f"total loss {result.trace[result.best_epoch].total:.6f}")
    if args.eval:
        metrics = evaluate_detector(result.params, cfg, manifest,
                                    result.test_samples)
        print(f"held-out mean IoU {metrics['mean_iou']:.4f}, "
              f"success rate {metrics['success_rate']:.4f} "
              f"({metrics['count']} images)")
    print(f"checkpoint: {out / 'detector.ckpt'}")
    return 0


def _cmd_extract(args) -> int:
    file_cfg = _load_config_file(args.config)
    square = _resolve(args, file_cfg, "square", 299)
    classifier_input = _resolve(args, file_cfg, "classifier_input", None)
    use_gt = args.use_gt or bool(file_cfg.get("use_gt"))
    pipeline = PipelineConfig(square_size=square, classifier_input=classifier_input)
    manifest = datagen.load_manifest(Path(args.data))
    out = _out_dir(args.out)

    detector_ckpt = args.detector or file_cfg.get("detector")
    params = cfg = None
    if not use_gt:
        if not detector_ckpt:
            raise ContractViolation("extract needs --detector or --use-gt")
        meta, arrays = load_checkpoint(Path(detector_ckpt))
        cfg = _detector_from_meta(meta)
        params = build_detector(cfg, seed=0)
        params.load_arrays(arrays)

    crops, kept, skipped = [], [], 0
    for sample in manifest.samples:
        image = datagen.load_image(manifest.image_path(sample))
        if use_gt:
            if sample.box is None:
                skipped += 1
                continue
            region = Box.from_array(sample.box)
        else:
            det = detect_best_region(image, params, cfg)
            if det is None:
                skipped += 1
                continue
            region = det.box
        crops.append(preprocess_pipeline(image, region, pipeline))
        kept.append(sample)
    if not crops:
        raise ContractViolation("extraction produced no crops")
    index = datagen.save_extracted(out, crops, kept, square)
    _write_run_manifest(out, "extract", {
        "data": str(args.data), "square": square,
        "classifier_input": classifier_input, "use_gt": use_gt,
        "detector": str(detector_ckpt) if detector_ckpt else None,
    })
    print(f"extracted {len(crops)} crops ({skipped} skipped) -> {index}")
    return 0


def _classifier_meta(cfg: ClassifierConfig, classes) -> dict:
    return {
        "kind": "classifier",
        "num_classes": cfg.num_classes,
        "input_size": cfg.input_size,
        "widths": list(cfg.widths),
        "classes": [int(c) for c in classes],
    }


def _cmd_train_classifier(args) -> int:
    file_cfg = _load_config_file(args.config)
    label_mode = _resolve(args, file_cfg, "label_mode", "identity")
    session = _resolve(args, file_cfg, "session", None)
    widths = _parse_widths(_resolve(args, file_cfg, "widths", None), (64, 128, 256))
    resolved = {
        "data": str(args.data), "label_mode": label_mode, "session": session,
        "widths": list(widths),
        "epochs": _resolve(args, file_cfg, "epochs", 17),
        "batch": _resolve(args, file_cfg, "batch", 8),
        "lr": _resolve(args, file_cfg, "lr", 1e-4),
        "patience": _resolve(args, file_cfg, "patience", 17),
        "val_fraction": _resolve(args, file_cfg, "val_fraction", 0.2),
        "center_inputs": not args.no_center if args.no_center is not None
        else file_cfg.get("center_inputs", True),
        "seed": _resolve(args, file_cfg, "seed", 0),
    }
    X, y_raw, _ = datagen.load_extracted(Path(args.data), label_mode=label_mode,
                                         spectrum=session)
    model = IrisClassifier(
        widths=widths, epochs=resolved["epochs"], batch_size=resolved["batch"],
        lr=resolved["lr"], patience=resolved["patience"],
        val_fraction=resolved["val_fraction"],
        center_inputs=resolved["center_inputs"], seed=resolved["seed"])
    model.fit(X, y_raw)
    out = _out_dir(args.out)
    save_checkpoint(out / "classifier.ckpt", model.params_.arrays(),
                    meta=_classifier_meta(model.config_, model.classes_))
    _save_resume_state(out / "classifier_resume.ckpt", model.final_arrays_,
                       model.opt_state_)
    _write_run_manifest(out, "train-classifier", resolved)
    acc = 100.0 * float((model.predict(X) == y_raw).mean())
    print(f"training-set accuracy {acc:.2f}% over {len(y_raw)} samples")
    print(f"checkpoint: {out / 'classifier.ckpt'}")
    return 0


def _cmd_crossval(args) -> int:
    file_cfg = _load_config_file(args.config)
    label_mode = _resolve(args, file_cfg, "label_mode", "identity")
    session = _resolve(args, file_cfg, "session", None)
    widths = _parse_widths(_resolve(args, file_cfg, "widths", None), (64, 128, 256))
    cfg = TrainConfig(
        k=_resolve(args, file_cfg, "k", 5),
        batch_size=_resolve(args, file_cfg, "batch", 8),
        epochs=_resolve(args, file_cfg, "epochs", 17),
        lr=_resolve(args, file_cfg, "lr", 1e-4),
        patience=_resolve(args, file_cfg, "patience", 17),
        seed=_resolve(args, file_cfg, "seed", 0),
        session=session,
    )
    resolved = {
        "data": str(args.data), "label_mode": label_mode, "session": session,
        "widths": list(widths), "k": cfg.k, "batch": cfg.batch_size,
        "epochs": cfg.epochs, "lr": cfg.lr, "patience": cfg.patience,
        "seed": cfg.seed,
    }
    center = (not args.no_center if args.no_center is not None
              else file_cfg.get("center_inputs", True))
    resolved["center_inputs"] = center
    out = _out_dir(args.out)

    # One protocol run per capture session; a mixed dataset with no
    # --session runs each spectrum separately and reports the
    # cross-session mean as the overall accuracy.
    _, _, info = datagen.load_extracted(Path(args.data), label_mode=label_mode,
                                        spectrum=session)
    sessions = [session] if session is not None else info["spectra"]
    single = len(sessions) == 1

    results = []
    for tag in sessions:
        X, y_raw, _ = datagen.load_extracted(
            Path(args.data), label_mode=label_mode, spectrum=tag)
        dataset = ClassifierDataset.from_arrays(X, y_raw)
        model_cfg = ClassifierConfig(num_classes=dataset.num_classes,
                                     input_size=X.shape[2], widths=widths,
                                     center_inputs=center)
        result = harness.run_crossval(
            dataset,
            TrainConfig(k=cfg.k, batch_size=cfg.batch_size, epochs=cfg.epochs,
                        lr=cfg.lr, patience=cfg.patience, seed=cfg.seed,
                        session=tag),
            model_cfg)
        results.append(result)
        suffix = "" if single else f"_{tag}"
        harness.write_metrics(result.records, out / f"metrics{suffix}.csv")
        harness.emit_curves(result.records, out / f"curves{suffix}.svg")
        print(f"session {tag}:")
        for fold, bench in enumerate(result.benchmarks):
            print(f"  fold {fold}: benchmark accuracy {bench:.2f}%")
        print(f"  average accuracy {result.average_accuracy:.2f}%")

    summary = {"sessions": [r.summary() for r in results]}
    if len(results) > 1:
        summary["overall_accuracy"] = harness.overall_accuracy(results)
        print(f"overall accuracy {summary['overall_accuracy']:.2f}%")
    (out / "summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True) + "\n")
    _write_run_manifest(out, "crossval", resolved)
    print(f"outputs: {out}")
    return 0


def _cmd_report(args) -> int:
    records = harness.read_metrics(Path(args.metrics))
    out_path = Path(args.out)
    if out_path.suffix != ".svg":
        out_path = _out_dir(args.out) / "curves.svg"
    else:
        out_path.parent.mkdir(parents=True, exist_ok=True)
    harness.emit_curves(records, out_path)
    print(f"wrote {out_path}")
    return 0


def _cmd_gradcheck(args) -> int:
    from irisauth.gradsuite import run_suite

    results = run_suite(seeds=args.seeds, base_seed=args.seed or 0)
    failed = 0
    for r in results:
        print(str(r))
        failed += 0 if r.passed else 1
    if failed:
        print(f"{failed} gradient check(s) failed", file=sys.stderr)
        return 1
    print(f"all {len(results)} gradient checks passed ({args.seeds} seeds)")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irisauth",
        description="Iris detection, zero-padding normalization, and "
                    "recognition pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a labeled iris dataset")
    p.add_argument("--ids", type=int, default=None)
    p.add_argument("--per-id", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--spectrum", choices=["VW", "NIR"], default=None)
    p.add_argument("--no-eyelid", action="store_const", const=True, default=None)
    p.add_argument("--no-highlight", action="store_const", const=True, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-detector", help="train the region detector")
    p.add_argument("--data", required=True, help="dataset manifest.json")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--split", type=float, default=None,
                   help="training fraction (default 0.2)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--eval", action="store_true",
                   help="report held-out IoU after training")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_detector)

    p = sub.add_parser("extract",
                       help="detect + normalize a manifest into fixed squares")
    p.add_argument("--data", required=True)
    p.add_argument("--detector", default=None, help="detector checkpoint")
    p.add_argument("--use-gt", action="store_true",
                   help="extract from ground-truth boxes instead")
    p.add_argument("--square", type=int, default=None)
    p.add_argument("--classifier-input", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("train-classifier", help="train the recognizer once")
    p.add_argument("--data", required=True, help="extracted.json")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--val-fraction", type=float, default=None)
    p.add_argument("--label-mode", choices=["identity", "eye"], default=None)
    p.add_argument("--session", choices=["VW", "NIR"], default=None)
    p.add_argument("--widths", default=None,
                   help="comma-separated backbone widths, e.g. 64,128,256")
    p.add_argument("--no-center", action="store_const", const=True, default=None,
                   help="disable input centering inside the network")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_classifier)

    p = sub.add_parser("crossval", help="k-fold cross-validation protocol")
    p.add_argument("--data", required=True, help="extracted.json")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--patience", type=int, default=None,
                   help="epochs without val improvement before stopping "
                        "(default 17: never within the standard protocol)")
    p.add_argument("--label-mode", choices=["identity", "eye"], default=None)
    p.add_argument("--session", choices=["VW", "NIR"], default=None)
    p.add_argument("--widths", default=None,
                   help="comma-separated backbone widths, e.g. 64,128,256")
    p.add_argument("--no-center", action="store_const", const=True, default=None,
                   help="disable input centering inside the network")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_crossval)

    p = sub.add_parser("report", help="render a metrics CSV as SVG curves")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("gradcheck", help="run the finite-difference suite")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def dispatch(argv: list[str]) -> int:
    """Parse and run; returns the process exit code instead of raising."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except (ContractViolation, ManifestError, CheckpointError,
            GradientError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
