"""Command-line entry point: ``hiercons <command> [options]``.

All data goes to files under ``--out``; diagnostics go to stderr.
"""

import argparse
import copy
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checkpoint, gradcheck
from .consensus import projection_from_joint
from .data import SyntheticConfig, generate, load_dataset, load_features, write_dataset
from .heads import BackboneConfig
from .hierarchy import balanced_hierarchy, level_pairs, load_hierarchy, parse_hierarchy, save_hierarchy
from .numerics import autodiff as ad
from .train import TrainConfig, evaluate, run_once, summarize

log = logging.getLogger("hiercons")

DEFAULT_CONFIG = {
    "hierarchy": {"balanced": [3, 7, 15]},
    "data": {"synthetic": {}},
    "backbone": {"hidden": [32], "nonlinearity": "tanh"},
    "head_hidden": [],
    "train": {},
}
TOP_LEVEL_KEYS = set(DEFAULT_CONFIG)
INFERENCE_FLAGS = {"consensus": "consensus", "fine": "fine_head", "flat": "flat"}


class ConfigError(ValueError):
    pass


# configuration

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(tokens: list) -> dict:
    """``["--train.lr", "1e-3", ...]`` -> ``{"train.lr": 0.001, ...}``."""
    out, i = {}, 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognised argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"override {tok} needs a value")
            value = tokens[i + 1]
            i += 2
        out[key] = _parse_value(value)
    return out


def apply_overrides(doc: dict, overrides: dict) -> dict:
    doc = copy.deepcopy(doc)
    for key, value in overrides.items():
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {}
            node = node[p]
        node[parts[-1]] = value
    return doc


def load_config(path, overrides: dict) -> tuple:
    """Effective config document and the directory relative paths resolve against."""
    doc = copy.deepcopy(DEFAULT_CONFIG)
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        doc.update(user)
        base = path.parent
    doc = apply_overrides(doc, overrides)
    unknown = set(doc) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config section(s) {sorted(unknown)}")
    return doc, base


def _dataclass_from(cls, values: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {section} option(s) {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    return cls(**kwargs)


def resolve_hierarchy(doc: dict, base: Path):
    h = doc["hierarchy"]
    if isinstance(h, str):
        return load_hierarchy(base / h)
    if isinstance(h, dict) and "balanced" in h:
        return balanced_hierarchy(h["balanced"])
    return parse_hierarchy(h)


def synthetic_config(doc: dict) -> SyntheticConfig:
    return _dataclass_from(SyntheticConfig, doc["data"].get("synthetic") or {}, "data.synthetic")


def resolve_datasets(doc: dict, base: Path, spec) -> dict:
    data = doc["data"]
    if "synthetic" in data and any(s in data for s in ("train", "val", "test")):
        raise ConfigError("data: give either 'synthetic' or file paths, not both")
    if "synthetic" in data:
        return generate(spec, synthetic_config(doc))
    missing = [s for s in ("train", "val") if s not in data]
    if missing:
        raise ConfigError(f"data: missing file path(s) for {missing}")
    return {s: load_dataset(base / data[s], spec) for s in ("train", "val", "test") if s in data}


def backbone_config(doc: dict, input_dim: int) -> BackboneConfig:
    values = dict(doc["backbone"])
    declared = values.pop("input_dim", input_dim)
    if declared != input_dim:
        raise ConfigError(f"backbone.input_dim is {declared} but the data has {input_dim} features")
    values.setdefault("feature_dim", input_dim)
    return _dataclass_from(BackboneConfig, {"input_dim": input_dim, **values}, "backbone")


def train_config(doc: dict, seed=None, ablation: dict = None) -> TrainConfig:
    values = dict(doc["train"])
    if seed is not None:
        values["seed"] = seed
    values.update(ablation or {})
    return _dataclass_from(TrainConfig, values, "train")


# output helpers

def write_json(path: Path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_matrix_csv(path: Path, matrix: np.ndarray, row_names, col_names):
    lines = [",".join(["class", *col_names])]
    for name, row in zip(row_names, matrix):
        lines.append(",".join([name, *(repr(float(v)) for v in row)]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# commands

def cmd_gen_data(args, doc, base) -> int:
    spec = resolve_hierarchy(doc, base)
    cfg = synthetic_config(doc)
    if args.seed is not None:
        cfg.seed = args.seed
    datasets = generate(spec, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for split, samples in datasets.items():
        write_dataset(out / f"{split}.csv", samples)
        files[split] = f"{split}.csv"
    save_hierarchy(spec, out / "hierarchy.json")
    manifest = {
        "hierarchy": spec.to_document(),
        "synthetic": cfg.effective(spec).to_dict(),
        "files": files,
        "counts": {s: len(d) for s, d in datasets.items()},
    }
    write_json(out / "manifest.json", manifest)
    log.info("wrote %s", ", ".join(f"{s}: {len(d)} samples" for s, d in datasets.items()))
    return 0


def _ablation(args) -> dict:
    out = {}
    if args.no_multi_level:
        out.update(multi_level=False, hc_loss=False, hc_inference=False)
    if args.no_hc_loss:
        out["hc_loss"] = False
    if args.no_hc_inference:
        out["hc_inference"] = False
    return out


def cmd_train(args, doc, base) -> int:
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    spec = resolve_hierarchy(doc, base)
    base_cfg = train_config(doc, args.seed, _ablation(args))
    base_cfg.validate(spec.num_levels)
    datasets = resolve_datasets(doc, base, spec)
    backbone = backbone_config(doc, datasets["train"].feature_dim)
    head_hidden = tuple(doc.get("head_hidden") or ())
    effective = {
        "hierarchy": spec.to_document(),
        "data": doc["data"] if "synthetic" not in doc["data"]
        else {"synthetic": synthetic_config(doc).effective(spec).to_dict()},
        "backbone": {"input_dim": backbone.input_dim, "feature_dim": backbone.feature_dim,
                     "hidden": list(backbone.hidden), "nonlinearity": backbone.nonlinearity},
        "head_hidden": list(head_hidden),
        "train": base_cfg.to_dict(),
    }
    out = Path(args.out)
    reports = []
    for r in range(args.seeds):
        cfg = train_config(doc, base_cfg.seed + r, _ablation(args))
        run_dir = out if args.seeds == 1 else out / f"seed_{cfg.seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        log.info("training seed %d (%s inference, %d epochs)", cfg.seed, cfg.inference_mode, cfg.epochs)
        result, report = run_once(spec, backbone, datasets, cfg, head_hidden)
        report["effective_config"] = {**effective, "train": cfg.to_dict()}
        checkpoint.save_checkpoint(run_dir / "checkpoint.bin", result.model,
                                   {"train": cfg.to_dict(), "inference": cfg.inference_mode})
        write_json(run_dir / "metrics.json", report)
        reports.append(report)
        final = report["final"].get("test") or report["final"]["val"]
        log.info("seed %d: best epoch %d, fine OA %.4f mF1 %.4f", cfg.seed, result.best_epoch,
                 final["levels"][-1]["oa"], final["levels"][-1]["mf1"])
    if args.seeds > 1:
        split = "test" if "test" in reports[0]["final"] else "val"
        write_json(out / "aggregate.json", {"effective_config": effective, **summarize(reports, split)})
    return 0


def _inference_mode(args, meta) -> str:
    if args.inference is not None:
        return INFERENCE_FLAGS[args.inference]
    return meta.get("inference", "consensus")


def cmd_eval(args, doc, base) -> int:
    model, meta = checkpoint.load_checkpoint(args.checkpoint)
    samples = load_dataset(args.data, model.spec, model.backbone.config.input_dim)
    mode = _inference_mode(args, meta)
    report = evaluate(model, samples, mode)
    report["checkpoint"] = str(args.checkpoint)
    report["data"] = str(args.data)
    write_json(Path(args.out) / "eval.json", report)
    log.info("%s inference on %d samples: fine OA %.4f mF1 %.4f", mode, len(samples),
             report["levels"][-1]["oa"], report["levels"][-1]["mf1"])
    return 0


def cmd_infer(args, doc, base) -> int:
    model, meta = checkpoint.load_checkpoint(args.checkpoint)
    x = load_features(args.data, model.backbone.config.input_dim)
    preds = model.predict(x, _inference_mode(args, meta))
    spec = model.spec
    H = spec.num_levels
    lines = [",".join([f"y{h}" for h in range(1, H + 1)] + [f"name{h}" for h in range(1, H + 1)])]
    for row in preds:
        names = [spec.level_classes[h][int(c)] for h, c in enumerate(row)]
        lines.append(",".join([str(int(c)) for c in row] + names))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("wrote %d predictions", len(preds))
    return 0


def cmd_export_matrices(args, doc, base) -> int:
    model, _ = checkpoint.load_checkpoint(args.checkpoint)
    spec = model.spec
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for coarse, fine in level_pairs(spec.num_levels):
        joint = model.joint(coarse, fine)
        names_c, names_f = spec.level_classes[coarse - 1], spec.level_classes[fine - 1]
        name = f"log_joint_{coarse}_{fine}.csv"
        _write_matrix_csv(out / name, joint.param.data, names_f, names_c)
        index.append({"kind": "log_joint", "coarse": coarse, "fine": fine, "file": name,
                      "shape": list(joint.param.shape)})
        for direction, src, tgt, rows, cols in (("fine_to_coarse", fine, coarse, names_f, names_c),
                                                ("coarse_to_fine", coarse, fine, names_c, names_f)):
            proj = np.exp(projection_from_joint(joint, direction).data)
            name = f"projection_{src}_to_{tgt}.csv"
            _write_matrix_csv(out / name, proj, rows, cols)
            index.append({"kind": "projection", "source": src, "target": tgt, "direction": direction,
                          "file": name, "shape": list(proj.shape)})
    write_json(out / "index.json", {"hierarchy": spec.to_document(), "matrices": index})
    log.info("exported %d matrices", len(index))
    return 0


def cmd_gradcheck(args, doc, base) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.corrupt_op:
        if args.corrupt_op not in ad.OP_NAMES:
            raise ConfigError(f"unknown op {args.corrupt_op!r}")
        with ad.corrupt_backward(args.corrupt_op):
            report = gradcheck.run_gradcheck(seed, args.trials)
    else:
        report = gradcheck.run_gradcheck(seed, args.trials)
    write_json(Path(args.out) / "gradcheck.json", report)
    for group in report["parameters"]:
        log.info("%-18s max rel err %.3e %s", group["name"], group["max_rel_error"],
                 "ok" if group["passed"] else "FAIL")
    if not report["passed"]:
        failed = report["failed_ops"] + [g["name"] for g in report["parameters"] if not g["passed"]]
        print(f"gradcheck failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "export-matrices": cmd_export_matrices,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    parser = argparse.ArgumentParser(
        prog="hiercons",
        description="Hierarchical classification with learned cross-level consensus.",
        epilog="Config values can be overridden with dotted keys, e.g. --train.lr 1e-3.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset and manifest")

    p = sub.add_parser("train", parents=[common], help="train and write checkpoint + metrics")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to run")
    p.add_argument("--no-multi-level", action="store_true", help="flat fine-level baseline")
    p.add_argument("--no-hc-loss", action="store_true", help="disable the consensus loss")
    p.add_argument("--no-hc-inference", action="store_true", help="predict from the level heads")

    for name, helptext in (("eval", "score a checkpoint on a labelled dataset"),
                           ("infer", "write predictions for a dataset")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True, help="dataset CSV")
        p.add_argument("--inference", choices=sorted(INFERENCE_FLAGS))

    p = sub.add_parser("export-matrices", parents=[common], help="write log-joint and projection CSVs")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--corrupt-op", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(message)s",
                        level=logging.WARNING if args.quiet else logging.INFO, force=True)
    try:
        overrides = parse_overrides(extra)
        doc, base = load_config(args.config, overrides)
        return COMMANDS[args.command](args, doc, base)
    except (ValueError, KeyError, TypeError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
