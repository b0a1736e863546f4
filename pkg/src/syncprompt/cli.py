"""Command-line entry points: train, eval, ingest, fid, export, report.

Configuration is TOML (key = value with nested tables); every
hyperparameter has a named key with the published defaults, `--set
key.path=value` overrides compose left-to-right on top of the config
file, and the final effective config is echoed into the output
directory. The SYNCPROMPT_DATA_ROOT environment variable overrides
paths.data_root.

Exit codes: 0 success, 1 validation, 2 runtime, 3 I/O.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .autodiff import no_grad

from .data import (
    TrainingData,
    few_shot_sample,
    get_registry_entry,
    ingest_synthetic,
    load_dataset,
)
from .encoders import EncoderSpec, ToyDualEncoder
from .errors import (
    ChecksumError,
    ConfigurationError,
    DataFormatError,
    InputError,
    LabelError,
    NumericError,
    SyncPromptError,
    TokenizerError,
    TrainingDiverged,
)
from .evaluation import EvalReport, evaluate, export_embeddings, fid
from .objectives import LossWeights
from .pipeline import MODES, PromptedClassifier, validate_mode_config
from .prompts import PromptConfig
from .toydata import ToyDataConfig, make_two_domain_dataset
from .training import TrainConfig, load_checkpoint, train

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_IO = 3

DATA_ROOT_ENV = "SYNCPROMPT_DATA_ROOT"

DEFAULT_CONFIG: dict = {
    "run": {
        "dataset": "toy",
        "baseline": "sync-clip",
        "output_dir": "runs/default",
        "shots": 16,
        "protocol": "gzsl",
    },
    "paths": {"data_root": "", "synth_root": ""},
    "encoder": {
        "n_layers": 2,
        "embed_dim": 32,
        "n_heads": 4,
        "output_dim": 16,
        "patch_count": 9,
        "max_tokens": 16,
        "seed": 0,
    },
    "prompts": {"m1": 2, "m2": 2, "n": 2, "k": 4, "depth": 2, "init_scale": 0.02},
    "weights": {"alpha": 0.1, "beta": 0.5},
    "train": {
        "lr0": 2.5e-3,
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "epochs": 20,
        "real_batch_size": 8,
        "ratio": 2,
        "seed": 0,
        "precision": 32,
        "temperature": 100.0,
        "sum_reduction": False,
        "warmup_steps": 0,
    },
    "toy": {
        "n_base": 8,
        "n_novel": 4,
        "synth_per_class": 16,
        "val_per_class": 4,
        "test_per_class": 8,
        "noise": 0.25,
        "domain_shift": 0.8,
        "seed": 0,
    },
}

# Published per-dataset default overrides; an explicit config value wins.
# The generated toy dataset carries its own desk-scale tuning.
DATASET_DEFAULTS: dict[str, dict[str, float]] = {
    "imagenet": {"weights.alpha": 0.2},
    "flowers102": {"weights.alpha": 0.2},
    "eurosat": {"weights.beta": 2.0},
    "fgvc_aircraft": {"weights.beta": 2.0},
    "toy": {"train.temperature": 20.0, "train.lr0": 0.05},
}


# ---------------------------------------------------------------------------
# config plumbing


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_set_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigurationError(f"--set expects key.path=value, got {assignment!r}")
    key_path, _, raw = assignment.partition("=")
    keys = key_path.strip().split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"--set path {key_path!r} crosses a non-table value")
    node[keys[-1]] = _parse_set_value(raw.strip())


def load_config(config_path: str | None, sets: list[str], baseline: str | None = None) -> dict:
    """defaults -> per-dataset defaults -> config file -> --set overrides."""
    file_cfg: dict = {}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {config_path}")
        file_cfg = tomllib.loads(path.read_text())

    # Discover the final dataset first so its defaults sit under the file.
    probe = _deep_merge(DEFAULT_CONFIG, file_cfg)
    for assignment in sets:
        _apply_set(probe, assignment)
    dataset = str(probe["run"]["dataset"]).lower().replace("-", "_")

    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for key_path, value in DATASET_DEFAULTS.get(dataset, {}).items():
        _apply_set(cfg, f"{key_path}={value}")
    cfg = _deep_merge(cfg, file_cfg)
    for assignment in sets:
        _apply_set(cfg, assignment)
    if baseline is not None:
        cfg["run"]["baseline"] = baseline
    if os.environ.get(DATA_ROOT_ENV):
        cfg["paths"]["data_root"] = os.environ[DATA_ROOT_ENV]
    return cfg


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    return json.dumps(str(v))


def dump_config(cfg: dict) -> str:
    lines = []
    for section in cfg:
        lines.append(f"[{section}]")
        for key, value in cfg[section].items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def validate_config(cfg: dict) -> list[str]:
    """Collect every validation problem before any compute starts."""
    problems = []
    run = cfg["run"]
    try:
        get_registry_entry(str(run["dataset"]))
    except ConfigurationError as exc:
        problems.append(str(exc))
    if run["baseline"] not in MODES:
        problems.append(f"unknown baseline {run['baseline']!r}; choose from {MODES}")
    else:
        try:
            validate_mode_config(run["baseline"], _prompt_config(cfg))
        except ConfigurationError as exc:
            problems.append(str(exc))
    if run["protocol"] not in ("zsl", "gzsl"):
        problems.append(f"protocol must be zsl or gzsl, got {run['protocol']!r}")
    t = cfg["train"]
    if t["lr0"] < 0:
        problems.append("train.lr0 must be >= 0")
    if t["epochs"] < 1:
        problems.append("train.epochs must be >= 1")
    if t["ratio"] < 1:
        problems.append("train.ratio must be >= 1")
    if t["precision"] not in (32, 64):
        problems.append("train.precision must be 32 or 64")
    if cfg["weights"]["alpha"] < 0 or cfg["weights"]["beta"] < 0:
        problems.append("weights.alpha and weights.beta must be >= 0")
    if str(run["dataset"]).lower() != "toy" and not cfg["paths"]["data_root"]:
        problems.append(f"paths.data_root is required for dataset {run['dataset']!r}")
    return problems


def _prompt_config(cfg: dict) -> PromptConfig:
    p, e = cfg["prompts"], cfg["encoder"]
    return PromptConfig(
        m1=p["m1"], m2=p["m2"], n=p["n"], k=p["k"], depth=p["depth"],
        embed_dim_v=e["embed_dim"], embed_dim_t=e["embed_dim"],
        init_scale=p["init_scale"],
    )


def _train_config(cfg: dict) -> TrainConfig:
    t, w = cfg["train"], cfg["weights"]
    return TrainConfig(
        lr0=t["lr0"], momentum=t["momentum"], weight_decay=t["weight_decay"],
        epochs=t["epochs"], real_batch_size=t["real_batch_size"], ratio=t["ratio"],
        weights=LossWeights(alpha=w["alpha"], beta=w["beta"]),
        seed=t["seed"], precision=t["precision"], temperature=t["temperature"],
        sum_reduction=t.get("sum_reduction", False),
        warmup_steps=t.get("warmup_steps", 0),
    )


def build_model(cfg: dict) -> ToyDualEncoder:
    e = cfg["encoder"]
    dtype = np.float32 if cfg["train"]["precision"] == 32 else np.float64
    visual = EncoderSpec(
        n_layers=e["n_layers"], embed_dim=e["embed_dim"], n_heads=e["n_heads"],
        output_dim=e["output_dim"], patch_count=e["patch_count"],
    )
    text = EncoderSpec(
        n_layers=e["n_layers"], embed_dim=e["embed_dim"], n_heads=e["n_heads"],
        output_dim=e["output_dim"], max_tokens=e["max_tokens"],
    )
    return ToyDualEncoder(visual, text, seed=e["seed"], dtype=dtype)


def build_classifier(cfg: dict, model: ToyDualEncoder) -> PromptedClassifier:
    return PromptedClassifier(
        model,
        _prompt_config(cfg),
        mode=cfg["run"]["baseline"],
        seed=cfg["train"]["seed"],
        temperature=cfg["train"]["temperature"],
    )


def build_data(cfg: dict, model: ToyDualEncoder):
    """Returns (TrainingData, test_examples)."""
    run = cfg["run"]
    if str(run["dataset"]).lower() == "toy":
        e, t = cfg["encoder"], cfg["toy"]
        toy = make_two_domain_dataset(
            ToyDataConfig(
                n_base=t["n_base"], n_novel=t["n_novel"],
                patch_count=e["patch_count"], embed_dim=e["embed_dim"],
                shots=run["shots"], synth_per_class=t["synth_per_class"],
                val_per_class=t["val_per_class"], test_per_class=t["test_per_class"],
                noise=t["noise"], domain_shift=t["domain_shift"], seed=t["seed"],
            )
        )
        return toy.train, toy.test
    entry = get_registry_entry(str(run["dataset"]))
    splits = load_dataset(cfg["paths"]["data_root"], entry)
    real_train = few_shot_sample(
        splits.train, splits.class_space, run["shots"], cfg["train"]["seed"]
    )
    synth = []
    if cfg["paths"]["synth_root"]:
        synth = ingest_synthetic(cfg["paths"]["synth_root"], splits.class_space)
    data = TrainingData(
        real_train=real_train, synthetic=synth, val=splits.val,
        class_space=splits.class_space,
    )
    return data, splits.test


def _echo_config(cfg: dict) -> Path:
    out_dir = Path(cfg["run"]["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "effective_config.toml"
    path.write_text(dump_config(cfg))
    return out_dir


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set or [], baseline=args.baseline)
    problems = validate_config(cfg)
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_VALIDATION
    out_dir = _echo_config(cfg)
    model = build_model(cfg)
    classifier = build_classifier(cfg, model)
    data, _ = build_data(cfg, model)
    result = train(classifier, data, _train_config(cfg), out_dir=out_dir)
    last = result.log[-1] if result.log else {}
    print(
        "final losses: "
        f"rce={last.get('l_rce', float('nan')):.6f} "
        f"sce={last.get('l_sce', float('nan')):.6f} "
        f"fs={last.get('l_fs', float('nan')):.6f} "
        f"total={last.get('total', float('nan')):.6f}"
    )
    print(f"backbone frozen: {result.backbone_frozen}")
    print(f"checkpoints: {result.final_checkpoint} {result.best_checkpoint}")
    return EXIT_OK


def _skipped_from_log(log_path: Path) -> int | None:
    if not log_path.exists():
        return None
    total = 0
    for line in log_path.read_text().splitlines():
        total += json.loads(line).get("skipped_triplets", 0)
    return total


def _render_bnh_table(reports: list[EvalReport]) -> str:
    headers = [r.protocol for r in reports]
    width = max(10, *(len(h) + 2 for h in headers)) if headers else 10
    lines = ["metric  " + "".join(h.rjust(width) for h in headers)]
    for metric in ("B", "N", "HM"):
        attr = {"B": "b_acc", "N": "n_acc", "HM": "hm"}[metric]
        cells = []
        for r in reports:
            v = getattr(r, attr)
            cells.append(("-" if v is None else f"{v:.2f}").rjust(width))
        lines.append(metric.ljust(8) + "".join(cells))
    return "\n".join(lines)


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set or [])
    if args.protocol:
        cfg["run"]["protocol"] = args.protocol
    problems = validate_config(cfg)
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_VALIDATION
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        print(f"checkpoint not found: {ckpt_path}", file=sys.stderr)
        return EXIT_IO
    model = build_model(cfg)
    ckpt = load_checkpoint(ckpt_path, model=model)
    classifier = PromptedClassifier(
        model,
        PromptConfig(**ckpt.meta["prompt_config"]),
        mode=ckpt.meta["mode"],
        temperature=cfg["train"]["temperature"],
    )
    classifier.set_parameters(ckpt.arrays)
    data, test = build_data(cfg, model)
    skipped = _skipped_from_log(Path(cfg["run"]["output_dir"]) / "train_log.jsonl")
    report = evaluate(
        classifier, test, data.class_space, cfg["run"]["protocol"],
        synthetic=data.synthetic or None, skipped_triplets=skipped,
    )
    print(_render_bnh_table([report]))
    out_dir = Path(cfg["run"]["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / f"report_{report.protocol}.json"
    report_path.write_text(report.to_json())
    print(f"report: {report_path}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = load_config(args.config, args.set or [])
    if args.synth_root:
        cfg["paths"]["synth_root"] = args.synth_root
    if not cfg["paths"]["synth_root"]:
        print("ingest needs paths.synth_root (or --synth-root)", file=sys.stderr)
        return EXIT_VALIDATION
    model = build_model(cfg)
    data, _ = build_data(cfg, model)
    synth = (
        data.synthetic
        if data.synthetic
        else ingest_synthetic(cfg["paths"]["synth_root"], data.class_space)
    )
    counts: dict[str, int] = {}
    for ex in synth:
        counts[data.class_space.names[ex.class_id]] = (
            counts.get(data.class_space.names[ex.class_id], 0) + 1
        )
    for name in sorted(counts):
        print(f"{name}\t{counts[name]}")
    print(f"total\t{len(synth)}")
    return EXIT_OK


def _embed_directory(classifier: PromptedClassifier, directory: Path) -> np.ndarray:
    files = sorted(
        p for p in directory.rglob("*")
        if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp", ".npy")
    )
    if len(files) < 2:
        raise InputError(f"{directory}: need at least 2 images for a feature set")
    rows = []
    for p in files:
        tokens = np.load(p) if p.suffix.lower() == ".npy" else classifier.model.patchify_image(p)
        rows.append(tokens)
    with no_grad():
        feats = classifier.image_features(np.stack(rows), "real")
    return feats.data


def cmd_fid(args) -> int:
    cfg = load_config(args.config, args.set or [])
    model = build_model(cfg)
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint, model=model)
        classifier = PromptedClassifier(
            model, PromptConfig(**ckpt.meta["prompt_config"]), mode=ckpt.meta["mode"]
        )
        classifier.set_parameters(ckpt.arrays)
    else:
        classifier = build_classifier(cfg, model)
    real_dir, synth_dir = Path(args.real), Path(args.synth)
    for d in (real_dir, synth_dir):
        if not d.exists():
            print(f"directory not found: {d}", file=sys.stderr)
            return EXIT_IO
    value = fid(_embed_directory(classifier, real_dir), _embed_directory(classifier, synth_dir))
    print(f"{value:.6f}")
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = load_config(args.config, args.set or [])
    model = build_model(cfg)
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        print(f"checkpoint not found: {ckpt_path}", file=sys.stderr)
        return EXIT_IO
    ckpt = load_checkpoint(ckpt_path, model=model)
    classifier = PromptedClassifier(
        model, PromptConfig(**ckpt.meta["prompt_config"]), mode=ckpt.meta["mode"]
    )
    classifier.set_parameters(ckpt.arrays)
    data, test = build_data(cfg, model)
    pools = {
        "train": data.real_train,
        "val": data.val,
        "test": test,
        "synthetic": data.synthetic,
    }
    examples = pools[args.split]
    out = Path(args.out) if args.out else Path(cfg["run"]["output_dir"]) / f"embeddings_{args.split}.jsonl"
    export_embeddings(classifier, examples, data.class_space, out)
    print(f"wrote {len(examples)} records to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    reports = []
    for path in args.inputs:
        p = Path(path)
        if not p.exists():
            print(f"report not found: {p}", file=sys.stderr)
            return EXIT_IO
        reports.append(EvalReport.from_json(p.read_text()))
    print(_render_bnh_table(reports))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="syncprompt",
        description="Prompt tuning with domain-split visual prompts over frozen dual encoders",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="override a config value (repeatable, applied in order)")

    p = sub.add_parser("train", help="optimize prompts on a dataset")
    common(p)
    p.add_argument("--baseline", choices=MODES, help="prompt architecture variant")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint under zsl/gzsl")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protocol", choices=("zsl", "gzsl"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ingest", help="index a synthetic image tree")
    common(p)
    p.add_argument("--synth-root")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fid", help="Fréchet distance between two image folders")
    common(p)
    p.add_argument("--real", required=True)
    p.add_argument("--synth", required=True)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_fid)

    p = sub.add_parser("export", help="dump embeddings as JSON lines")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "synthetic"), default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("report", help="render B/N/HM tables from saved reports")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, DataFormatError, InputError, LabelError,
            TokenizerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, ChecksumError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingDiverged, NumericError, SyncPromptError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
