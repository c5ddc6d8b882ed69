"""Command-line entry point: ``spinelab <command> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import ast
import configparser
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core.bundle import read_bundle, write_bundle
from .core.documents import (
    dump_json,
    load_annotations,
    load_json,
    load_volumes,
    save_annotations,
    save_volumes,
)
from .detect import DetectConfig, detect_scan
from .evaluate import evaluate, format_report, match_detections, per_level_breakdown, per_level_table
from .label import BeamConfig, label_scan, labels_from_dict, labels_to_dict
from .phantom import PhantomSpec, corrupt, generate
from .pipeline import StageError, appearance_for_volumes, run_scan
from .scoliosis import roc_auc, scoliosis_features

log = logging.getLogger("spinelab")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    detect: DetectConfig = field(default_factory=DetectConfig)
    beam: BeamConfig = field(default_factory=BeamConfig)
    seed: int = 0
    n_scans: int = 4
    scoliosis_amplitude: float = 10.0

    def to_dict(self) -> dict:
        detect = dataclasses.asdict(self.detect)
        detect.pop("workers")  # execution detail, not part of the experiment
        return {
            "seed": self.seed,
            "n_scans": self.n_scans,
            "scoliosis_amplitude": self.scoliosis_amplitude,
            "phantom": self.phantom.to_dict(),
            "detect": detect,
            "beam": dataclasses.asdict(self.beam),
        }


def _coerce(value: str):
    try:
        return ast.literal_eval(value)
    except (ValueError, SyntaxError):
        return value


def _section(cp: configparser.ConfigParser, name: str, cls) -> dict:
    if not cp.has_section(name):
        return {}
    known = {f.name for f in dataclasses.fields(cls)}
    out = {}
    for key, raw in cp.items(name):
        if key not in known:
            raise UsageError(f"unknown key '{key}' in [{name}]")
        value = _coerce(raw)
        out[key] = tuple(value) if isinstance(value, list) else value
    return out


def load_config(path: str | None) -> RunConfig:
    """Read an INI-style key/value document into a RunConfig."""
    cfg = RunConfig()
    if not path:
        return cfg
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path)
    run = {k: _coerce(v) for k, v in cp.items("run")} if cp.has_section("run") else {}
    unknown = set(run) - {"seed", "n_scans", "scoliosis_amplitude"}
    if unknown:
        raise UsageError(f"unknown keys in [run]: {sorted(unknown)}")
    try:
        return RunConfig(
            phantom=PhantomSpec(**_section(cp, "phantom", PhantomSpec)),
            detect=DetectConfig(**_section(cp, "detect", DetectConfig)),
            beam=BeamConfig(**_section(cp, "beam", BeamConfig)),
            **run,
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config {path}: {exc}") from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _phantom_spec(args, base: PhantomSpec) -> PhantomSpec:
    changes = {}
    for arg, key in (
        ("seed", "seed"),
        ("vertebrae", "n_vertebrae"),
        ("noise", "noise_sigma"),
        ("confusion", "confusion"),
        ("amplitude", "lateral_amplitude"),
    ):
        value = getattr(args, arg, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "shape", None):
        changes["shape"] = tuple(args.shape)
    for flag in ("fused", "collapsed", "hemivertebra"):
        if getattr(args, flag, False):
            changes[flag] = True
    return replace(base, **changes)


def cmd_phantom(args) -> int:
    cfg = load_config(args.config)
    spec = _phantom_spec(args, cfg.phantom)
    truth = generate(spec)
    scan = corrupt(truth, spec)
    out = Path(args.out)
    write_bundle(
        {"heatmaps": scan.heatmaps.data, "fields": scan.fields.data, "probs": scan.appearance},
        out / "bundle",
    )
    save_annotations(truth.annotations, out / "annotations.json")
    dump_json({"spec": spec.to_dict(), "dropped": scan.dropped, "pathologies": truth.pathologies}, out / "phantom.json")
    print(f"wrote phantom with {len(truth.annotations)} vertebrae to {out}")
    return EXIT_OK


def _detect_config(args, base: DetectConfig) -> DetectConfig:
    changes = {}
    if getattr(args, "workers", None):
        changes["workers"] = args.workers
    if getattr(args, "threshold", None) is not None:
        changes["threshold"] = args.threshold
    return replace(base, **changes)


def cmd_detect(args) -> int:
    cfg = load_config(args.config)
    arrays, _ = read_bundle(args.bundle)
    if "heatmaps" not in arrays or "fields" not in arrays:
        raise UsageError("bundle needs 'heatmaps' and 'fields' arrays")
    volumes = detect_scan(arrays, cfg=_detect_config(args, cfg.detect))
    save_volumes(volumes, args.out)
    print(f"detected {len(volumes)} vertebrae -> {args.out}")
    return EXIT_OK


def _load_probs(path: str) -> tuple[np.ndarray, int | None]:
    p = Path(path)
    if p.is_dir():
        arrays, manifest = read_bundle(p)
        if "probs" not in arrays:
            raise UsageError(f"bundle {p} has no 'probs' array")
        height = None
        for entry in manifest["arrays"]:
            if entry["name"] == "heatmaps":
                height = int(entry["shape"][2])
        return arrays["probs"].astype(float), height
    doc = load_json(p)
    return np.asarray(doc["probs"] if isinstance(doc, dict) else doc, dtype=float), None


def cmd_label(args) -> int:
    cfg = load_config(args.config)
    volumes = load_volumes(args.detections)
    probs, height = _load_probs(args.probs)
    if args.annotations:
        ann = load_annotations(args.annotations)
        if len(probs) != len(ann):
            raise UsageError(f"{len(probs)} probability vectors for {len(ann)} annotated vertebrae")
        probs = appearance_for_volumes(ann, probs, volumes)
    elif len(probs) != len(volumes):
        raise UsageError(
            f"{len(probs)} probability vectors for {len(volumes)} detections; pass --annotations to map them"
        )
    height = args.height or height
    if height is None:
        height = int(np.ceil(max((v.height_span[1] for v in volumes), default=0))) + 1
    beam = cfg.beam if args.beam_width is None else replace(cfg.beam, beam_width=args.beam_width)
    result = label_scan(volumes, probs, height, beam)
    dump_json(labels_to_dict(result.labels), args.out)
    print(" ".join(result.labels.tokens))
    return EXIT_OK


def _spacing(values) -> tuple[float, float]:
    if not values:
        return None
    return (values[0], values[0]) if len(values) == 1 else (values[0], values[1])


def cmd_evaluate(args) -> int:
    gt = load_annotations(args.gt)
    volumes = load_volumes(args.detections)
    labels = labels_from_dict(load_json(args.labels)) if args.labels else None
    report = evaluate(gt, volumes, labels, _spacing(args.spacing))
    print(format_report(report), end="")
    if args.out:
        dump_json(report.to_dict(), args.out)
    if args.table:
        m = match_detections(gt, volumes)
        rec, idr = per_level_breakdown(m, labels.as_dict() if labels else {}, gt.levels)
        Path(args.table).write_text(per_level_table(rec, idr))
    return EXIT_OK


def cmd_scoliosis(args) -> int:
    rows = []
    for path in args.detections:
        feats = scoliosis_features(load_volumes(path), args.slice_spacing)
        rows.append({"detections": path, **feats.to_dict()})
        mm = f" ({feats.deviation_mm(args.spacing):.2f} mm)" if args.spacing else ""
        print(f"{path}: curvature {feats.max_curvature:.6f}/px, deviation {feats.max_deviation:.2f}px{mm}")
    doc: dict = {"scans": rows}
    if args.labels:
        truth = load_json(args.labels)
        if isinstance(truth, dict):
            flags = [bool(truth[r["detections"]]) for r in rows]
        elif len(truth) == len(rows):
            flags = [bool(t) for t in truth]
        else:
            raise UsageError(f"{len(truth)} labels for {len(rows)} scans")
        for feature in ("max_deviation", "max_curvature"):
            points, auc = roc_auc([r[feature] for r in rows], flags)
            doc[f"roc_{feature}"] = {"auc": auc, "points": points}
            print(f"AUC ({feature}): {auc:.4f}")
    if args.out:
        dump_json(doc, args.out)
    return EXIT_OK


def run_all(cfg: RunConfig, out: Path, workers: int = 1) -> dict:
    """Run the full pipeline on ``cfg.n_scans`` phantoms and write every artefact."""
    detect_cfg = replace(cfg.detect, workers=workers)
    scans = []
    features, flags = [], []
    for i in range(cfg.n_scans):
        scoliotic = i % 2 == 1
        spec = replace(
            cfg.phantom,
            seed=cfg.seed + i,
            lateral_amplitude=cfg.scoliosis_amplitude if scoliotic else cfg.phantom.lateral_amplitude,
        )
        res = run_scan(spec, detect_cfg, cfg.beam)
        scan_dir = out / f"scan_{i:03d}"
        write_bundle(
            {"heatmaps": res.scan.heatmaps.data, "fields": res.scan.fields.data, "probs": res.probs},
            scan_dir / "bundle",
        )
        save_annotations(res.truth.annotations, scan_dir / "annotations.json")
        save_volumes(res.volumes, scan_dir / "detections.json")
        dump_json(labels_to_dict(res.labelling.labels), scan_dir / "labels.json")
        dump_json(res.report.to_dict(), scan_dir / "metrics.json")
        try:
            feats = scoliosis_features(res.volumes, spec.slice_spacing_px).to_dict()
        except ValueError as exc:
            raise StageError("scoliosis", exc) from exc
        features.append(feats["max_deviation"])
        flags.append(spec.lateral_amplitude > 0)
        scans.append(
            {
                "seed": spec.seed,
                "lateral_amplitude": spec.lateral_amplitude,
                "dropped": res.scan.dropped,
                "metrics": {k: v for k, v in res.report.to_dict().items() if not k.startswith("per_level")},
                "argmax_idr": res.baseline_idr,
                "labels": res.labelling.labels.tokens,
                "scoliosis": feats,
            }
        )

    tp = sum(s["metrics"]["tp"] for s in scans)
    fp = sum(s["metrics"]["fp"] for s in scans)
    fn = sum(s["metrics"]["fn"] for s in scans)
    n_gt = tp + fn
    summary = {
        "precision": tp / (tp + fp) if tp + fp else 1.0,
        "recall": tp / n_gt if n_gt else 1.0,
        "idr": float(np.mean([s["metrics"]["idr"] for s in scans])) if scans else None,
        "idr_pm1": float(np.mean([s["metrics"]["idr_pm1"] for s in scans])) if scans else None,
        "argmax_idr": float(np.mean([s["argmax_idr"] for s in scans])) if scans else None,
        "le_mean_mm": float(np.nanmean([s["metrics"]["le_mean_mm"] for s in scans])) if scans else None,
        "tp": tp,
        "fp": fp,
        "fn": fn,
    }
    if len(set(flags)) == 2:
        _, auc = roc_auc(features, flags)
        summary["scoliosis_auc_deviation"] = auc
    report = {"config": cfg.to_dict(), "summary": summary, "scans": scans}
    dump_json(report, out / "report.json")
    (out / "report.txt").write_text(
        "".join(f"{k}: {v}\n" for k, v in summary.items())
    )
    return report


def cmd_run_all(args) -> int:
    cfg = load_config(args.config)
    cfg = replace(cfg, phantom=_phantom_spec(args, cfg.phantom))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.scans is not None:
        cfg = replace(cfg, n_scans=args.scans)
    report = run_all(cfg, Path(args.out), args.workers or 1)
    for key, value in report["summary"].items():
        print(f"{key}: {value}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spinelab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config", help="INI-style config document")
        p.add_argument("--out", required=out_required)
        return p

    def phantom_flags(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--vertebrae", type=int)
        p.add_argument("--shape", type=int, nargs=3, metavar=("S", "H", "W"))
        p.add_argument("--noise", type=float)
        p.add_argument("--confusion", type=float)
        p.add_argument("--amplitude", type=float, help="lateral (scoliotic) amplitude, px")
        p.add_argument("--fused", action="store_true")
        p.add_argument("--collapsed", action="store_true")
        p.add_argument("--hemivertebra", action="store_true")

    p = common(sub.add_parser("phantom", help="generate a synthetic scan"))
    phantom_flags(p)
    p.set_defaults(func=cmd_phantom)

    p = common(sub.add_parser("detect", help="detect vertebrae in a bundle"))
    p.add_argument("--bundle", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int, help="recorded only; detection is deterministic")
    p.set_defaults(func=cmd_detect)

    p = common(sub.add_parser("label", help="label detected vertebrae"))
    p.add_argument("--detections", required=True)
    p.add_argument("--probs", required=True, help="bundle directory with 'probs' or a JSON file")
    p.add_argument("--annotations", help="map per-vertebra phantom probabilities onto detections")
    p.add_argument("--height", type=int)
    p.add_argument("--beam-width", type=int)
    p.add_argument("--seed", type=int, help="recorded only; decoding is deterministic")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("evaluate", help="score detections and labels against annotations")
    p.add_argument("--gt", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--labels")
    p.add_argument("--spacing", type=float, nargs="+", help="mm per pixel (row [col])")
    p.add_argument("--out", help="metrics JSON")
    p.add_argument("--table", help="per-level CSV table")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("scoliosis", help="scoliosis curve features")
    p.add_argument("--detections", required=True, nargs="+")
    p.add_argument("--slice-spacing", type=float, default=PhantomSpec().slice_spacing_px, help="px per slice")
    p.add_argument("--spacing", type=float, help="mm per pixel, for reporting")
    p.add_argument("--labels", help="JSON list (or detections-path map) of scoliosis flags")
    p.add_argument("--out")
    p.set_defaults(func=cmd_scoliosis)

    p = common(sub.add_parser("run-all", help="phantom -> detect -> label -> evaluate -> scoliosis"))
    phantom_flags(p)
    p.add_argument("--scans", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run_all)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"spinelab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"spinelab {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"spinelab {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
