"""
``dbmf`` command line: gen, train, eval, plot.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
Settings come from an optional JSON ``--config`` file; flags override it.
"""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import text_image as ti
from . import vision as vb
from .data import (
    ComplementaryConfig,
    SynthConfig,
    generate_complementary,
    generate_synthetic,
    load_jsonl,
    merge_splits,
    save_jsonl,
    split_id_8_2,
)
from .errors import ConfigError, DBMFError, NotSPD, TrainingDiverged
from .fusion import DetectorConfig, ScoreStandardizer
from .metrics import read_report_json, write_density_csv, write_report_json, write_scores_csv
from .pipeline import SCORERS, DBMFModel, ablation, evaluate_model, train_pipeline
from .plotting import write_density_svg

log = logging.getLogger("dbmf")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

DATASET_FILE = "dataset.jsonl"
TEXT_CKPT = "text_image.json"
VISION_CKPT = "vision.json"
DETECTOR_FILE = "detector.json"
REPORT_FILE = "report.json"


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{what} not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from exc


def _pick(section, cls, rename=None):
    """Build a dataclass from a config section, rejecting unknown keys."""
    rename = rename or {}
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in section.items():
        name = rename.get(key, key)
        if name not in names:
            raise ConfigError(f"unknown {cls.__name__} setting {key!r}")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(args):
    cfg = _read_json(args.config, "config file") if args.config else {}
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    cfg["seed"] = seed
    for key in ("data", "out", "scorer", "bandwidth", "target_tpr"):
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    cfg.setdefault("out", "dbmf_out")
    return cfg


def _train_configs(cfg, args):
    allow = bool(cfg.get("allow_out_of_range", False))
    out = []
    for name in ("text_image", "vision"):
        section = dict(cfg.get(name, {}))
        section.pop("d_proj", None)
        if args.seed is not None or "seed" not in section:
            section["seed"] = cfg["seed"]
        if name == "text_image" and args.lam is not None:
            section["lambda"] = args.lam
            allow = True
        section.setdefault("allow_out_of_range", allow)
        out.append(_pick(section, ti.TrainConfig, {"lambda": "lam"}))
    return out


def _detector_config(cfg, args):
    section = dict(cfg.get("detector", {}))
    allow = bool(cfg.get("allow_out_of_range", False))
    if args.omega is not None:
        section["omega"] = args.omega
        allow = True  # an explicit flag is an intentional override
    if getattr(args, "gamma", None) is not None:
        section["gamma"] = args.gamma
    if cfg.get("target_tpr") is not None:
        section["target_tpr"] = cfg["target_tpr"]
    section.setdefault("allow_out_of_range", allow)
    return _pick(section, DetectorConfig)


def cmd_gen(args):
    cfg = load_run_config(args)
    synth = dict(cfg.get("synth", {}))
    scenario = synth.pop("scenario", "separable")
    synth.setdefault("seed", cfg["seed"])
    if args.seed is not None:
        synth["seed"] = args.seed
    if scenario == "separable":
        dataset = generate_synthetic(_pick(synth, SynthConfig))
    elif scenario == "complementary":
        dataset = generate_complementary(_pick(synth, ComplementaryConfig))
    else:
        raise ConfigError(f"unknown synthetic scenario {scenario!r}")
    train, test = split_id_8_2(dataset, cfg["seed"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = Path(cfg.get("data") or out / DATASET_FILE)
    save_jsonl(merge_splits(train, test), path)
    n_ood = sum(s.is_ood for s in dataset.samples)
    print(f"wrote {path}: {len(dataset.samples) - n_ood} ID + {n_ood} OOD records "
          f"({len(train.samples)} train / {len(test.samples)} test)")
    return EXIT_OK


def _write_trace(trace, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, loss in enumerate(trace):
            w.writerow([i, repr(loss)])


def _data_path(cfg):
    return cfg.get("data") or str(Path(cfg["out"]) / DATASET_FILE)


def cmd_train(args):
    cfg = load_run_config(args)
    text_cfg, vision_cfg = _train_configs(cfg, args)
    det_cfg = _detector_config(cfg, args)
    data_path = _data_path(cfg)
    if not os.path.exists(data_path):
        raise ConfigError(f"dataset not found: {data_path}")
    dataset = load_jsonl(data_path)
    if not dataset.subset(split="train", ood=False).samples:
        raise ConfigError(f"{data_path} has no ID samples in the train split")

    result = train_pipeline(dataset, text_cfg, vision_cfg, det_cfg,
                            d_proj=cfg.get("text_image", {}).get("d_proj"),
                            epsilon=cfg.get("epsilon"))
    m = result.model
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _dump_json({"branch": m.text_branch.to_dict(), "train_config": text_cfg.to_dict()},
               out / TEXT_CKPT)
    _dump_json({"branch": m.vision_branch.to_dict(), "gaussian_stats": m.stats.to_dict(),
                "class_names": list(dataset.class_names), "train_config": vision_cfg.to_dict()},
               out / VISION_CKPT)
    _dump_json({"standardizer": m.standardizer.to_dict(), "omega": m.omega, "gamma": m.gamma,
                "target_tpr": det_cfg.target_tpr, "data": data_path,
                "text_image_checkpoint": TEXT_CKPT, "vision_checkpoint": VISION_CKPT},
               out / DETECTOR_FILE)
    _write_trace(result.text_trace, out / "loss_text_image.csv")
    _write_trace(result.vision_trace, out / "loss_vision.csv")
    _dump_json(result.summary, out / "summary.json")
    print(f"text-image acc {result.summary['text_image_accuracy']:.4f}, "
          f"vision acc {result.summary['vision_accuracy']:.4f}, gamma {m.gamma:.6g}")
    return EXIT_OK


def load_model(out_dir):
    out = Path(out_dir)
    bundle = _read_json(out / DETECTOR_FILE, "detector bundle")
    text = _read_json(out / bundle["text_image_checkpoint"], "text-image checkpoint")
    vision = _read_json(out / bundle["vision_checkpoint"], "vision checkpoint")
    model = DBMFModel(
        text_branch=ti.TextImageBranch.from_dict(text["branch"]),
        vision_branch=vb.VisionBranch.from_dict(vision["branch"]),
        stats=vb.GaussianStats.from_dict(vision["gaussian_stats"]),
        standardizer=ScoreStandardizer.from_dict(bundle["standardizer"]),
        omega=float(bundle["omega"]),
        gamma=float(bundle["gamma"]),
    )
    return model, bundle


def cmd_eval(args):
    cfg = load_run_config(args)
    out = Path(cfg["out"])
    model, bundle = load_model(out)
    data_path = cfg.get("data") or bundle["data"]
    if not os.path.exists(data_path):
        raise ConfigError(f"dataset not found: {data_path}")
    dataset = load_jsonl(data_path)
    scorer = cfg.get("scorer", "dbmf")
    if scorer not in SCORERS:
        raise ConfigError(f"unknown scorer {scorer!r}")
    omega = args.omega
    if omega is None and "omega" in cfg.get("detector", {}):
        omega = _detector_config(cfg, args).omega
    target = cfg.get("target_tpr", bundle.get("target_tpr", 0.95))
    report = evaluate_model(model, dataset, scorer, omega, target, cfg.get("bandwidth"))
    write_report_json(report, out / REPORT_FILE)
    write_scores_csv(report.samples, out / "scores.csv")
    print(f"{scorer}: AUROC {report.auroc:.6f}  FPR95 {report.fpr95:.6f}  "
          f"(n_id={report.n_id}, n_ood={report.n_ood})")
    if args.ablate:
        rows = ablation(model, dataset, target, cfg.get("bandwidth"))
        with open(out / "ablation.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "auroc", "fpr95"])
            for r in rows:
                w.writerow([r["method"], repr(r["auroc"]), repr(r["fpr95"])])
        print(f"{'method':<12}{'AUROC':>10}{'FPR95':>10}")
        for r in rows:
            print(f"{r['method']:<12}{100 * r['auroc']:>10.2f}{100 * r['fpr95']:>10.2f}")
    return EXIT_OK


def cmd_plot(args):
    cfg = load_run_config(args)
    out = Path(cfg["out"])
    report_path = Path(args.report) if args.report else out / REPORT_FILE
    if not report_path.exists():
        raise ConfigError(f"report not found: {report_path}")
    try:
        report = read_report_json(report_path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed report {report_path}: {exc}") from exc
    out.mkdir(parents=True, exist_ok=True)
    write_density_csv(report.id_density, report.ood_density, out / "density.csv")
    write_density_svg(report.id_density, report.ood_density, out / "density.svg")
    print(f"wrote {out / 'density.svg'} and {out / 'density.csv'}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="dataset JSONL path")

    parser = argparse.ArgumentParser(prog="dbmf", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen", parents=[common], help="write a synthetic dataset")

    p = sub.add_parser("train", parents=[common], help="train both branches and the detector")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--target-tpr", dest="target_tpr", type=float)

    p = sub.add_parser("eval", parents=[common], help="score the test split")
    p.add_argument("--scorer", choices=SCORERS)
    p.add_argument("--omega", type=float)
    p.add_argument("--target-tpr", dest="target_tpr", type=float)
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--ablate", action="store_true")

    p = sub.add_parser("plot", parents=[common], help="render score densities")
    p.add_argument("--report", help="EvalReport JSON (default: <out>/report.json)")
    return parser


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "plot": cmd_plot}


def main(argv=None):
    level = os.environ.get("DBMF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (TrainingDiverged, NotSPD) as exc:
        print(f"dbmf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DBMFError, ValueError, KeyError, OSError) as exc:
        print(f"dbmf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
