"""Command-line entry point.

Subcommands: ``extract`` (feature dumps), ``train`` (single fit -> checkpoint),
``cv`` (cross-validated evaluation -> report JSON), ``eval`` (score a
checkpoint on a labeled manifest), ``predict`` (per-session prediction CSV)
and ``synth`` (generate a synthetic dataset).

Every run writes a resolved config JSON to the output directory with every
default made explicit; re-running with ``--config <that file>`` against the
same inputs reproduces the outputs byte-for-byte. Explicit command-line flags
override the config file, which overrides built-in defaults. Exit codes:
0 success, 1 validation/runtime failure (message on stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .acoustic import functionals_to_csv
from .errors import MgfcError, ValidationError
from .ingest import load_manifest
from .lexical import FeatureFlags, lexical_to_csv, load_embeddings
from .model import ArchConfig, BranchConfig, LateFusionParams, TASKS
from .synth import make_synthetic
from .train import (
    TrainConfig,
    cross_validate,
    embedding_info,
    evaluate,
    featurize_records,
    predict_sessions,
    train_late,
    train_model,
    training_log_csv,
    _fold_labels,
    _train_val_split,
)

MODELS = ("audio", "text", "fused", "late")

DEFAULTS: dict = {
    "task": "ad",
    "model": "fused",
    "seed": 0,
    "disfl": True,
    "pause": True,
    "lm_prob": True,
    "alpha": 0.05,
    "stat_window": 100,
    "stat_hop": 100,
    "audio_timestep": 20,
    "audio_stride": 1,
    "audio_layers": 4,
    "audio_hidden": 256,
    "text_timestep": 10,
    "text_stride": 2,
    "text_layers": 2,
    "text_hidden": 16,
    "highway": 3,
    "lr": 1e-4,
    "batch_size": 32,
    "max_epochs": 300,
    "patience": 10,
    "val_frac": 0.2,
    "folds": 5,
    "loso": False,
    "workers": 1,
    "sessions": 20,
    "separation": 1.0,
    "features": 12,
    "embed_dim": 16,
    "words_min": 16,
    "words_max": 28,
    "manifest": None,
    "embeddings": None,
    "checkpoint": None,
    "out": None,
}


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="resolved config JSON to load defaults from")
    sp.add_argument("--out", help="output directory (created if missing)")
    sp.add_argument("--seed", type=int, help="seed for init, shuffling and splits")


def _add_data(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--manifest", help="session manifest CSV")
    sp.add_argument("--embeddings", help="word embedding text file")
    sp.add_argument("--no-disfl", dest="no_disfl", action="store_const", const=True,
                    help="disable the disfluency one-hot block")
    sp.add_argument("--no-pause", dest="no_pause", action="store_const", const=True,
                    help="disable the pause category/duration blocks")
    sp.add_argument("--no-lmprob", dest="no_lmprob", action="store_const", const=True,
                    help="disable the language-model probability block")
    sp.add_argument("--stat-window", type=int, help="frames per functional sub-window")
    sp.add_argument("--stat-hop", type=int, help="frames between functional sub-windows")
    sp.add_argument("--alpha", type=float, help="significance level for feature selection")


def _add_model(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--task", choices=TASKS, help="prediction task")
    sp.add_argument("--model", choices=MODELS, help="model kind")
    sp.add_argument("--audio-timestep", type=int)
    sp.add_argument("--audio-stride", type=int)
    sp.add_argument("--audio-layers", type=int)
    sp.add_argument("--audio-hidden", type=int)
    sp.add_argument("--text-timestep", type=int)
    sp.add_argument("--text-stride", type=int)
    sp.add_argument("--text-layers", type=int)
    sp.add_argument("--text-hidden", type=int)
    sp.add_argument("--highway", type=int, help="number of stacked highway layers")


def _add_train(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--max-epochs", type=int)
    sp.add_argument("--patience", type=int)
    sp.add_argument("--val-frac", type=float)
    sp.add_argument("--workers", type=int, help="parallel fold workers (1 = bit-deterministic)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgfc",
        description="Multimodal gated-fusion sequence models for speech-based cognitive assessment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("extract", help="write per-session feature dumps")
    _add_common(sp)
    _add_data(sp)

    sp = sub.add_parser("train", help="train one model and write a checkpoint")
    _add_common(sp)
    _add_data(sp)
    _add_model(sp)
    _add_train(sp)

    sp = sub.add_parser("cv", help="cross-validated evaluation, writes report.json")
    _add_common(sp)
    _add_data(sp)
    _add_model(sp)
    _add_train(sp)
    sp.add_argument("--folds", type=int, help="number of folds")
    sp.add_argument("--loso", action="store_const", const=True, help="leave-one-subject-out CV")

    sp = sub.add_parser("eval", help="score a checkpoint against a labeled manifest")
    _add_common(sp)
    _add_data(sp)
    sp.add_argument("--checkpoint", help="checkpoint file to evaluate")
    sp.add_argument("--task", choices=TASKS, help="must match the checkpoint when given")
    sp.add_argument("--model", choices=MODELS, help="must match the checkpoint when given")

    sp = sub.add_parser("predict", help="write per-session predictions CSV")
    _add_common(sp)
    _add_data(sp)
    sp.add_argument("--checkpoint", help="checkpoint file to predict with")
    sp.add_argument("--task", choices=TASKS, help="must match the checkpoint when given")
    sp.add_argument("--model", choices=MODELS, help="must match the checkpoint when given")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(sp)
    sp.add_argument("--sessions", type=int, help="number of sessions (even)")
    sp.add_argument("--separation", type=float, help="class signal strength in [0, 1]")
    sp.add_argument("--features", type=int, help="acoustic feature columns")
    sp.add_argument("--embed-dim", type=int, help="embedding dimension")
    sp.add_argument("--words-min", type=int)
    sp.add_argument("--words-max", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> tuple[dict, dict]:
    """Merge defaults <- config file <- explicit flags.

    Returns (resolved, explicit) where ``explicit`` holds only what the user
    typed on the command line.
    """
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        loaded = json.loads(path.read_text(encoding="utf-8"))
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    explicit: dict = {}
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        if key == "no_disfl":
            explicit["disfl"] = False
        elif key == "no_pause":
            explicit["pause"] = False
        elif key == "no_lmprob":
            explicit["lm_prob"] = False
        else:
            explicit[key] = value
    cfg.update(explicit)
    return cfg, explicit


def _arch_from_cfg(cfg: dict) -> ArchConfig:
    return ArchConfig(
        audio=BranchConfig(
            timestep=cfg["audio_timestep"],
            stride=cfg["audio_stride"],
            layers=cfg["audio_layers"],
            hidden=cfg["audio_hidden"],
        ),
        text=BranchConfig(
            timestep=cfg["text_timestep"],
            stride=cfg["text_stride"],
            layers=cfg["text_layers"],
            hidden=cfg["text_hidden"],
        ),
        highway_n=cfg["highway"],
        task=cfg["task"],
        flags=FeatureFlags(disfl=cfg["disfl"], pause=cfg["pause"], lm_prob=cfg["lm_prob"]),
        seed=cfg["seed"],
    )


def _tcfg_from_cfg(cfg: dict) -> TrainConfig:
    return TrainConfig(
        lr=cfg["lr"],
        batch_size=cfg["batch_size"],
        max_epochs=cfg["max_epochs"],
        patience=cfg["patience"],
        seed=cfg["seed"],
        val_frac=cfg["val_frac"],
        folds=cfg["folds"],
        loso=cfg["loso"],
        alpha=cfg["alpha"],
    )


def _out_dir(cfg: dict) -> Path:
    if not cfg.get("out"):
        raise ValidationError("--out is required")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(cfg: dict, out: Path) -> None:
    (out / "config.json").write_text(
        json.dumps(cfg, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _require(cfg: dict, key: str) -> str:
    if not cfg.get(key):
        raise ValidationError(f"--{key} is required")
    value = cfg[key]
    if not Path(value).is_file():
        raise ValidationError(f"{key} file not found: {value}")
    return value


def _load_inputs(cfg: dict, flags: FeatureFlags):
    manifest_path = Path(_require(cfg, "manifest"))
    embeddings_path = Path(_require(cfg, "embeddings"))
    records = load_manifest(manifest_path.read_bytes())
    table = load_embeddings(embeddings_path.read_bytes())
    feats = featurize_records(
        records, manifest_path.parent, table, flags, cfg["stat_window"], cfg["stat_hop"]
    )
    return records, table, feats


def cmd_extract(cfg: dict, explicit: dict) -> int:
    out = _out_dir(cfg)
    flags = FeatureFlags(disfl=cfg["disfl"], pause=cfg["pause"], lm_prob=cfg["lm_prob"])
    _, _, feats = _load_inputs(cfg, flags)
    feat_dir = out / "features"
    feat_dir.mkdir(exist_ok=True)
    for f in feats:
        sid = f.record.session_id
        (feat_dir / f"{sid}.acoustic.csv").write_text(functionals_to_csv(f.functionals), encoding="utf-8")
        (feat_dir / f"{sid}.lexical.csv").write_text(
            lexical_to_csv(f.lexical, f.transcript, f.pauses), encoding="utf-8"
        )
    _write_config(cfg, out)
    print(f"wrote feature dumps for {len(feats)} sessions to {feat_dir}")
    return 0


def cmd_train(cfg: dict, explicit: dict) -> int:
    out = _out_dir(cfg)
    arch = _arch_from_cfg(cfg)
    tcfg = _tcfg_from_cfg(cfg)
    _, table, feats = _load_inputs(cfg, arch.flags)
    info = embedding_info(table)
    labels = _fold_labels(feats, arch.task)
    train_feats, val_feats = _train_val_split(
        feats, tcfg.val_frac, np.random.SeedSequence([tcfg.seed, 0]), labels
    )
    if cfg["model"] == "late":
        params, logs = train_late(train_feats, val_feats, arch, tcfg, info)
        (out / "training_log_audio.csv").write_text(training_log_csv(logs["audio"]), encoding="utf-8")
        (out / "training_log_text.csv").write_text(training_log_csv(logs["text"]), encoding="utf-8")
    else:
        params, log = train_model(train_feats, val_feats, arch, cfg["model"], tcfg, info)
        (out / "training_log.csv").write_text(training_log_csv(log), encoding="utf-8")
    ckpt = out / "checkpoint.mgfc"
    ckpt.write_bytes(save_checkpoint(params))
    _write_config(cfg, out)
    print(f"wrote {ckpt}")
    return 0


def cmd_cv(cfg: dict, explicit: dict) -> int:
    out = _out_dir(cfg)
    arch = _arch_from_cfg(cfg)
    tcfg = _tcfg_from_cfg(cfg)
    _, table, feats = _load_inputs(cfg, arch.flags)
    report, _, _ = cross_validate(
        feats, cfg["model"], arch, tcfg, embedding_info(table), workers=cfg["workers"]
    )
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    _write_config(cfg, out)
    metrics = {"accuracy": report.accuracy, "rmse": report.rmse, "f1_mean": report.f1_mean}
    shown = {k: round(v, 4) for k, v in metrics.items() if v is not None}
    print(f"{report.protocol} CV on task {arch.task}: {shown}")
    return 0


def _load_checkpoint_for(cfg: dict, explicit: dict):
    ckpt_path = Path(_require(cfg, "checkpoint"))
    params = load_checkpoint(ckpt_path.read_bytes())
    arch = params.arch
    kind = "late" if isinstance(params, LateFusionParams) else params.kind
    if "task" in explicit and explicit["task"] != arch.task:
        raise ValidationError(
            f"task mismatch: checkpoint was trained for {arch.task!r}, requested {explicit['task']!r}"
        )
    if "model" in explicit and explicit["model"] != kind:
        raise ValidationError(
            f"model mismatch: checkpoint holds a {kind!r} model, requested {explicit['model']!r}"
        )
    for flag in ("disfl", "pause", "lm_prob"):
        want = getattr(arch.flags, flag)
        if flag in explicit and explicit[flag] != want:
            raise ValidationError(
                f"feature flag mismatch: checkpoint has {flag}={want}, requested {explicit[flag]}"
            )
    embeddings_path = Path(_require(cfg, "embeddings"))
    table = load_embeddings(embeddings_path.read_bytes())
    info = params.audio_model.embedding_info if isinstance(params, LateFusionParams) else params.embedding_info
    if info and info.get("sha256") and info["sha256"] != table.sha256:
        raise ValidationError(
            f"embeddings mismatch: checkpoint was built with a different embedding file "
            f"(sha256 {info['sha256'][:12]}..., got {table.sha256[:12]}...)"
        )
    manifest_path = Path(_require(cfg, "manifest"))
    records = load_manifest(manifest_path.read_bytes())
    feats = featurize_records(
        records, manifest_path.parent, table, arch.flags, cfg["stat_window"], cfg["stat_hop"]
    )
    return params, arch, feats


def cmd_eval(cfg: dict, explicit: dict) -> int:
    out = _out_dir(cfg)
    params, arch, feats = _load_checkpoint_for(cfg, explicit)
    preds = predict_sessions(feats, params)
    labels = {}
    for f in feats:
        target = f.record.target(arch.task)
        if target is None:
            raise ValidationError(f"session {f.record.session_id!r} has no {arch.task!r} label")
        labels[f.record.session_id] = target
    metrics = evaluate(preds, labels, arch.task)
    from .train import EvalReport

    report = EvalReport(
        task=arch.task,
        protocol="test",
        seed=cfg["seed"],
        accuracy=metrics["accuracy"],
        rmse=metrics["rmse"],
        f1_mean=metrics["f1_mean"],
        folds=[],
        confusion=metrics["confusion"],
    )
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    _write_config(cfg, out)
    shown = {k: round(v, 4) for k, v in
             (("accuracy", metrics["accuracy"]), ("rmse", metrics["rmse"]), ("f1_mean", metrics["f1_mean"]))
             if v is not None}
    print(f"test evaluation on task {arch.task}: {shown}")
    return 0


def cmd_predict(cfg: dict, explicit: dict) -> int:
    out = _out_dir(cfg)
    params, arch, feats = _load_checkpoint_for(cfg, explicit)
    preds = predict_sessions(feats, params)
    lines = ["session_id,score,label"]
    for f in feats:
        p = preds[f.record.session_id]
        label = "" if p.label is None else str(p.label)
        lines.append(f"{p.session_id},{float(p.score)!r},{label}")
    (out / "predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_config(cfg, out)
    print(f"wrote predictions for {len(feats)} sessions to {out / 'predictions.csv'}")
    return 0


def cmd_synth(cfg: dict, explicit: dict) -> int:
    out = _out_dir(cfg)
    paths = make_synthetic(
        seed=cfg["seed"],
        n_sessions=cfg["sessions"],
        separation=cfg["separation"],
        out_dir=out,
        n_features=cfg["features"],
        embed_dim=cfg["embed_dim"],
        words_min=cfg["words_min"],
        words_max=cfg["words_max"],
    )
    _write_config(cfg, out)
    print(f"wrote synthetic dataset: {paths['manifest']}")
    return 0


COMMANDS = {
    "extract": cmd_extract,
    "train": cmd_train,
    "cv": cmd_cv,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg, explicit = resolve_config(args)
        return COMMANDS[args.command](cfg, explicit)
    except MgfcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
