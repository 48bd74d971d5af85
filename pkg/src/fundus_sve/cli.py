"""Command-line entry point orchestrating the pipeline stages.

Exit codes: 0 success, 2 usage error, 3 input error, 4 numeric or
degenerate error. Every stage writes a `<artifact>.log.json` beside its
output recording hashed inputs, parameters and seeds, so any stage can
be re-run in isolation. Logs carry no timestamps: reruns with the same
config are byte-identical.
"""

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augmentation import DEFAULT_ANGLES, build_balance_plan, execute_plan
from .classifiers import (ClassifierSpec, ModelError, fit, load_model,
                          predict_scores, save_model)
from .dataset import (Manifest, ManifestError, SampleRecord, init_manifest,
                      load_manifest, save_manifest, stratified_split,
                      summarize_distribution)
from .enhancement import (DEFAULT_GAMMA, DEFAULT_WEIGHT, SveStrategy, VARIANTS,
                          batch_enhance)
from .evaluation import EvaluationError, evaluate_scores, save_report
from .features import (FeatureTableError, HogParams, LbpParams, extract_batch,
                       export_feature_table, import_feature_table, standardize)
from .raster_io import RasterIOError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4


class InputError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_stage_log(out_path, stage: str, inputs, params: dict) -> None:
    log = {
        "stage": stage,
        "version": __version__,
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
        "params": params,
    }
    Path(str(out_path) + ".log.json").write_text(json.dumps(log, sort_keys=True, indent=2))


def _replace(rec: SampleRecord, **kwargs) -> SampleRecord:
    from dataclasses import replace
    return replace(rec, **kwargs)


def cmd_manifest_init(args) -> int:
    manifest = init_manifest(args.images, args.labels, masks_dir=args.masks)
    save_manifest(manifest, args.out)
    _write_stage_log(args.out, "manifest-init", [args.labels],
                     {"images": args.images, "masks": args.masks})
    print(f"manifest: {args.out} ({len(manifest.records)} samples)")
    return EXIT_OK


def cmd_split(args) -> int:
    ratios = tuple(float(r) for r in args.ratios.split(","))
    manifest = load_manifest(args.manifest, check_files=args.check_files)
    out = stratified_split(manifest, ratios=ratios, seed=args.seed)
    save_manifest(out, args.out)
    _write_stage_log(args.out, "split", [args.manifest],
                     {"ratios": list(ratios), "seed": args.seed})
    for split, counts in sorted(summarize_distribution(out).items()):
        print(f"{split}: {sum(counts.values())} samples over {len(counts)} classes")
    print(f"manifest: {args.out}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    if args.strategy == "vessel-only" and args.weight_given:
        print("warning: --weight is unused with --strategy vessel-only", file=sys.stderr)
    strategy = SveStrategy(variant=args.strategy, weight=args.weight, gamma=args.gamma)
    manifest = load_manifest(args.manifest)
    result = batch_enhance(manifest.records, strategy, args.out_dir)
    records = []
    for rec in manifest.records:
        if rec.id in result.outputs:
            records.append(_replace(rec, image=result.outputs[rec.id]))
        else:
            records.append(rec)
    save_manifest(Manifest(records=records, name=manifest.name,
                           class_names=manifest.class_names), args.out)
    _write_stage_log(args.out, "enhance", [args.manifest],
                     {"strategy": args.strategy, "weight": args.weight,
                      "gamma": args.gamma, "out_dir": args.out_dir})
    print(f"enhanced {len(result.outputs)} images -> {args.out_dir}")
    for sid, msg in sorted(result.errors.items()):
        print(f"error [{sid}]: {msg}", file=sys.stderr)
    print(f"manifest: {args.out}")
    if result.errors and not result.outputs:
        raise InputError("every record failed enhancement")
    return EXIT_OK


def cmd_augment(args) -> int:
    manifest = load_manifest(args.manifest)
    splits = tuple(args.augment_splits.split(","))
    class_samples = {}
    for rec in manifest.records:
        if rec.split in splits:
            class_samples.setdefault(rec.label, []).append(rec.id)
    target = args.target
    if target is None:
        biggest = max(len(v) for v in class_samples.values())
        target = int(np.ceil(biggest / 10.0) * 10)
    angles = tuple(float(a) for a in args.angles.split(",")) if args.angles else DEFAULT_ANGLES
    plan = build_balance_plan(class_samples, target, args.seed, angles=angles,
                              allow_undershoot=args.allow_undershoot)
    if args.plan_out:
        Path(args.plan_out).write_text(plan.to_json())
    out = execute_plan(plan, manifest, args.out_dir, allowed_splits=splits)
    save_manifest(out, args.out)
    _write_stage_log(args.out, "augment", [args.manifest],
                     {"target": target, "seed": args.seed, "angles": list(angles),
                      "augment_splits": list(splits)})
    print(f"derived {len(plan.entries)} samples -> {args.out_dir}")
    print(f"manifest: {args.out}")
    return EXIT_OK


def cmd_features(args) -> int:
    manifest = load_manifest(args.manifest)
    records = manifest.records if args.split == "all" else manifest.by_split(args.split)
    if args.descriptor == "hog":
        params = HogParams(cell_size=args.cell_size, bins=args.bins)
    else:
        params = LbpParams(radius=args.radius, uniform=not args.raw_histogram)
    table = extract_batch(records, args.descriptor, params)
    export_feature_table(table, args.out)
    _write_stage_log(args.out, "features", [args.manifest],
                     {"descriptor": table.descriptor, "split": args.split})
    print(f"features: {args.out} ({len(table)} rows x {table.dim})")
    return EXIT_OK


def cmd_import_features(args) -> int:
    table = import_feature_table(args.input)
    export_feature_table(table, args.out)
    _write_stage_log(args.out, "import-features", [args.input], {})
    print(f"features: {args.out} ({len(table)} rows x {table.dim})")
    return EXIT_OK


def cmd_train(args) -> int:
    table = import_feature_table(args.features)
    params = json.loads(args.params) if args.params else {}
    spec = ClassifierSpec(kind=args.model, params=params, seed=args.seed)
    model = fit(spec, table)
    save_model(model, args.out)
    _write_stage_log(args.out, "train", [args.features],
                     {"model": args.model, "params": params, "seed": args.seed})
    print(f"model: {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    table = import_feature_table(args.features)
    scores = predict_scores(model, table)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"] + [f"s{c}" for c in range(scores.shape[1])])
        for sid, label, row in zip(table.ids, table.labels, scores):
            writer.writerow([sid, int(label)] + [repr(float(v)) for v in row])
    _write_stage_log(args.out, "predict", [args.model, args.features], {})
    print(f"scores: {args.out}")
    return EXIT_OK


def read_scores_csv(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such scores file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["id", "label"]:
            raise InputError(f"bad scores header in {path}")
        n = len(header) - 2
        ids, labels, rows = [], [], []
        for row in reader:
            if len(row) != n + 2:
                raise InputError(f"ragged scores row in {path}")
            ids.append(row[0])
            labels.append(int(row[1]))
            rows.append([float(v) for v in row[2:]])
    return ids, np.array(labels, dtype=np.int64), np.array(rows, dtype=np.float64)


def cmd_evaluate(args) -> int:
    ids, truth, scores = read_scores_csv(args.scores)
    report = evaluate_scores(scores, truth, scores.shape[1],
                             metadata={"scores": str(args.scores), "samples": len(ids)})
    save_report(report, args.out)
    _write_stage_log(args.out, "evaluate", [args.scores], {})
    print(f"overall_accuracy: {report.metrics.overall_accuracy:.4f}")
    print(f"weighted_auc: {report.auc['weighted']:.4f}")
    print(f"report: {args.out}")
    return EXIT_OK


PIPELINE_STAGES = ("split", "enhance", "augment", "features", "train", "predict", "evaluate")

DEFAULT_CONFIG = {
    "manifest": None,
    "out_dir": None,
    "seed": 0,
    "ratios": [0.6, 0.2, 0.2],
    "strategy": "weighted-plus-background",
    "weight": DEFAULT_WEIGHT,
    "gamma": DEFAULT_GAMMA,
    "augment": None,  # e.g. {"target": 60}
    "augment_splits": ["train"],
    "descriptor": "lbp",
    "standardize": False,
    "model": {"kind": "knn", "params": {"k": 5}},
}


def load_config(path, overrides: dict) -> dict:
    config = dict(DEFAULT_CONFIG)
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        unknown = set(data) - set(DEFAULT_CONFIG)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        config.update(data)
    config.update({k: v for k, v in overrides.items() if v is not None})
    if not config["manifest"] or not config["out_dir"]:
        raise InputError("config needs both 'manifest' and 'out_dir'")
    return config


def run_pipeline(config: dict, dry_run: bool = False) -> Path:
    """split -> enhance -> augment(train) -> features -> train -> predict
    -> evaluate; returns the report path."""
    config = {**DEFAULT_CONFIG, **config}
    if not config["manifest"] or not config["out_dir"]:
        raise InputError("config needs both 'manifest' and 'out_dir'")
    out_dir = Path(config["out_dir"])
    if dry_run:
        for stage in PIPELINE_STAGES:
            if stage == "augment" and not config["augment"]:
                print(f"{stage}: skipped (no augment target)")
            else:
                print(f"{stage}: -> {out_dir}")
        return out_dir / "report.json"
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = int(config["seed"])

    manifest = load_manifest(config["manifest"])
    manifest = stratified_split(manifest, ratios=tuple(config["ratios"]), seed=seed)
    save_manifest(manifest, out_dir / "manifest_split.csv")

    strategy = SveStrategy(variant=config["strategy"], weight=config["weight"],
                           gamma=config["gamma"])
    result = batch_enhance(manifest.records, strategy, out_dir / "enhanced")
    if result.errors:
        raise InputError("enhancement failed for: " +
                         ", ".join(f"{k} ({v})" for k, v in sorted(result.errors.items())))
    manifest = Manifest(
        records=[_replace(r, image=result.outputs[r.id]) for r in manifest.records],
        name=manifest.name, class_names=manifest.class_names)
    save_manifest(manifest, out_dir / "manifest_enhanced.csv")

    if config["augment"]:
        splits = tuple(config["augment_splits"])
        class_samples = {}
        for rec in manifest.records:
            if rec.split in splits:
                class_samples.setdefault(rec.label, []).append(rec.id)
        plan = build_balance_plan(class_samples, int(config["augment"]["target"]), seed)
        (out_dir / "plan.json").write_text(plan.to_json())
        manifest = execute_plan(plan, manifest, out_dir / "augmented", allowed_splits=splits)
        save_manifest(manifest, out_dir / "manifest_augmented.csv")

    tables = {}
    for split in ("train", "val", "test"):
        tables[split] = extract_batch(manifest.by_split(split), config["descriptor"])
    if config["standardize"]:
        tables["train"], tables["val"], tables["test"], _ = standardize(
            tables["train"], tables["val"], tables["test"])
    for split, table in tables.items():
        export_feature_table(table, out_dir / f"features_{split}.csv")

    model_cfg = config["model"]
    spec = ClassifierSpec(kind=model_cfg["kind"], params=model_cfg.get("params", {}),
                          seed=seed)
    model = fit(spec, tables["train"])
    save_model(model, out_dir / "model.json")

    scores = predict_scores(model, tables["test"])
    with open(out_dir / "scores.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"] + [f"s{c}" for c in range(scores.shape[1])])
        for sid, label, row in zip(tables["test"].ids, tables["test"].labels, scores):
            writer.writerow([sid, int(label)] + [repr(float(v)) for v in row])

    predicted = model.predict(tables["test"].X)
    report = evaluate_scores(scores, tables["test"].labels, scores.shape[1],
                             predicted=predicted,
                             metadata={"seed": seed, "descriptor": config["descriptor"],
                                       "strategy": config["strategy"],
                                       "model": model_cfg})
    report_path = out_dir / "report.json"
    save_report(report, report_path)
    _write_stage_log(report_path, "pipeline", [config["manifest"]],
                     {k: v for k, v in config.items()})
    print(f"overall_accuracy: {report.metrics.overall_accuracy:.4f}")
    print(f"weighted_auc: {report.auc['weighted']:.4f}")
    print(f"report: {report_path}")
    return report_path


def cmd_pipeline(args) -> int:
    overrides = {"manifest": args.manifest, "out_dir": args.out_dir, "seed": args.seed}
    config = load_config(args.config, overrides)
    run_pipeline(config, dry_run=args.dry_run)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fundus-sve",
                                     description="retinal image enhancement and "
                                                 "classification pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("manifest-init", help="build a manifest from loose files")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True, help="id,label list file")
    p.add_argument("--masks", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_manifest_init)

    p = sub.add_parser("split", help="assign stratified train/val/test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", default="0.6,0.2,0.2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--check-files", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("enhance", help="vessel-guided enhancement of every record")
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategy", default="weighted-plus-background", choices=VARIANTS)
    p.add_argument("--weight", type=float, default=None)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--out", required=True, help="output manifest path")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("augment", help="balance classes with derived samples")
    p.add_argument("--manifest", required=True)
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--angles", default=None, help="comma-separated rotation angles")
    p.add_argument("--augment-splits", default="train")
    p.add_argument("--allow-undershoot", action="store_true")
    p.add_argument("--plan-out", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--out", required=True, help="output manifest path")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("features", help="extract HOG or LBP features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--descriptor", required=True, choices=("hog", "lbp"))
    p.add_argument("--split", default="all")
    p.add_argument("--cell-size", type=int, default=8)
    p.add_argument("--bins", type=int, default=9)
    p.add_argument("--radius", type=int, default=1)
    p.add_argument("--raw-histogram", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("import-features", help="validate an external feature table")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_features)

    p = sub.add_parser("train", help="fit a meta-learner on a feature table")
    p.add_argument("--model", required=True, choices=("knn", "mlp", "logreg", "lda"))
    p.add_argument("--features", required=True)
    p.add_argument("--params", default=None, help="JSON hyperparameter object")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a feature table with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics, ROC and AUC from a scores file")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--config", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "enhance":
        args.weight_given = args.weight is not None
        if args.weight is None:
            args.weight = DEFAULT_WEIGHT
    try:
        return args.func(args)
    except (InputError, ManifestError, FeatureTableError, RasterIOError,
            ModelError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (EvaluationError, np.linalg.LinAlgError, ZeroDivisionError,
            OverflowError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
