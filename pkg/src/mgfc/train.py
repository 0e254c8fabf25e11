"""Training loops, cross-validation, metrics and dataset assembly.

The unit of optimization is a window (or a paired audio/text instance); every
window inherits its session's label, and session scores are the mean over the
session's windows. Featurization artifacts that depend on data statistics
(the scaler and the correlation-based selection mask) are fitted on training
sessions only, per fold, and travel with the trained parameters so inference
reproduces the exact same inputs.

All randomness flows through explicitly seeded generators: fold assignment,
train/validation splitting and per-epoch shuffling are deterministic given
the config seed, which makes whole CV runs byte-reproducible.
"""

from __future__ import annotations

import concurrent.futures
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .acoustic import (
    FunctionalSequence,
    Scaler,
    SelectionMask,
    apply_scaler,
    compute_functionals,
    fit_scaler,
    make_windows,
    select_features,
)
from .errors import TrainingError, ValidationError
from .ingest import FrameMatrix, SessionRecord, Transcript, parse_asr, parse_frames
from .lexical import (
    EmbeddingTable,
    FeatureFlags,
    LexicalSequence,
    PauseAnnotation,
    assemble_lexical,
    compute_pauses,
    load_embeddings,
)
from .model import (
    ArchConfig,
    LateFusionParams,
    ModelParams,
    SessionPrediction,
    aggregate_session,
    backward_fused,
    backward_unimodal,
    forward_fused,
    forward_unimodal,
    fuse_predictions,
    init_model,
    is_regression,
    pair_windows,
)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization and protocol settings."""

    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 300
    patience: int = 10
    seed: int = 0
    val_frac: float = 0.2
    folds: int = 5
    loso: bool = False
    alpha: float = 0.05

    def validate(self) -> None:
        if self.lr < 0:
            raise ValidationError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 0:
            raise ValidationError("batch_size must be >= 1; max_epochs/patience must be >= 0")
        if not self.loso and self.folds < 2:
            raise ValidationError(f"folds must be >= 2 (or use LOSO), got {self.folds}")
        if not (0.0 < self.val_frac < 1.0):
            raise ValidationError(f"val_frac must be in (0, 1), got {self.val_frac}")


# ---------------------------------------------------------------------------
# featurization


@dataclass
class SessionFeatures:
    """Everything extracted from one session's input files."""

    record: SessionRecord
    transcript: Transcript
    functionals: FunctionalSequence
    pauses: PauseAnnotation
    lexical: LexicalSequence


def embedding_info(table: EmbeddingTable) -> dict:
    return {"sha256": table.sha256, "dim": table.dim, "vocab_size": table.size}


def load_embedding_file(path: str | Path) -> EmbeddingTable:
    return load_embeddings(Path(path).read_bytes())


def featurize_session(
    record: SessionRecord,
    transcript: Transcript,
    frames: FrameMatrix,
    table: EmbeddingTable,
    flags: FeatureFlags,
    stat_window: int = 100,
    stat_hop: int = 100,
) -> SessionFeatures:
    functionals = compute_functionals(frames, stat_window, stat_hop)
    pauses = compute_pauses(transcript)
    lex = assemble_lexical(transcript, pauses, table, flags)
    return SessionFeatures(
        record=record, transcript=transcript, functionals=functionals, pauses=pauses, lexical=lex
    )


def featurize_records(
    records: list[SessionRecord],
    base_dir: str | Path,
    table: EmbeddingTable,
    flags: FeatureFlags,
    stat_window: int = 100,
    stat_hop: int = 100,
) -> list[SessionFeatures]:
    """Read and featurize every manifest session, in manifest order."""
    base = Path(base_dir)
    out = []
    for rec in records:
        frames = parse_frames((base / rec.frames_path).read_bytes(), rec.session_id)
        transcript = parse_asr((base / rec.asr_path).read_bytes(), rec.patient_speaker)
        if transcript.session_id != rec.session_id:
            raise ValidationError(
                f"ASR file for {rec.session_id!r} carries session_id {transcript.session_id!r}"
            )
        out.append(featurize_session(rec, transcript, frames, table, flags, stat_window, stat_hop))
    return out


def reassemble_lexical(
    feats: list[SessionFeatures], table: EmbeddingTable, flags: FeatureFlags
) -> list[SessionFeatures]:
    """Rebuild lexical features under different flags without re-parsing."""
    return [
        SessionFeatures(
            record=f.record,
            transcript=f.transcript,
            functionals=f.functionals,
            pauses=f.pauses,
            lexical=assemble_lexical(f.transcript, f.pauses, table, flags),
        )
        for f in feats
    ]


def fit_audio_artifacts(
    train_feats: list[SessionFeatures], task: str, alpha: float
) -> tuple[Scaler, SelectionMask]:
    """Fit the z-scaler and correlation mask on training sessions only."""
    steps = np.vstack([f.functionals.steps for f in train_feats])
    targets = np.concatenate(
        [
            np.full(f.functionals.steps.shape[0], _session_target(f, task))
            for f in train_feats
        ]
    )
    scaler = fit_scaler(steps)
    selection = select_features(apply_scaler(steps, scaler), targets, alpha)
    return scaler, selection


def _session_target(feats: SessionFeatures, task: str) -> float:
    target = feats.record.target(task)
    if target is None:
        raise ValidationError(f"session {feats.record.session_id!r} has no {task!r} label")
    return target


# ---------------------------------------------------------------------------
# window datasets


@dataclass
class WindowDataset:
    """Stacked per-window arrays for one model kind, plus session spans."""

    kind: str
    y: np.ndarray
    sessions: list[tuple[str, int, int]]
    audio_x: np.ndarray | None = None
    audio_m: np.ndarray | None = None
    text_x: np.ndarray | None = None
    text_m: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.y.shape[0]


def build_dataset(
    feats_list: list[SessionFeatures],
    kind: str,
    arch: ArchConfig,
    scaler: Scaler | None,
    selection: SelectionMask | None,
    require_target: bool = True,
    dtype=np.float32,
) -> WindowDataset:
    """Window every session and stack the results into batchable arrays."""
    if not feats_list:
        raise ValidationError("cannot build a dataset from zero sessions")
    audio_w: list = []
    audio_m: list = []
    text_w: list = []
    text_m: list = []
    y: list[float] = []
    sessions: list[tuple[str, int, int]] = []
    for f in feats_list:
        target = _session_target(f, arch.task) if require_target else 0.0
        start = len(y)
        if kind in ("audio", "fused"):
            steps = selection.apply(apply_scaler(f.functionals.steps, scaler))
            aw = make_windows(steps, arch.audio.timestep, arch.audio.stride)
        if kind in ("text", "fused"):
            tw = make_windows(f.lexical.steps, arch.text.timestep, arch.text.stride)
        if kind == "fused":
            pairs = pair_windows(aw, tw)
            audio_w += [a.data for a, _ in pairs]
            audio_m += [a.mask for a, _ in pairs]
            text_w += [t.data for _, t in pairs]
            text_m += [t.mask for _, t in pairs]
            count = len(pairs)
        elif kind == "audio":
            audio_w += [w.data for w in aw]
            audio_m += [w.mask for w in aw]
            count = len(aw)
        else:
            text_w += [w.data for w in tw]
            text_m += [w.mask for w in tw]
            count = len(tw)
        y += [target] * count
        sessions.append((f.record.session_id, start, start + count))
    return WindowDataset(
        kind=kind,
        y=np.asarray(y, dtype=dtype),
        sessions=sessions,
        audio_x=np.stack(audio_w).astype(dtype) if audio_w else None,
        audio_m=np.stack(audio_m).astype(dtype) if audio_m else None,
        text_x=np.stack(text_w).astype(dtype) if text_w else None,
        text_m=np.stack(text_m).astype(dtype) if text_m else None,
    )


def _forward_batch(ds: WindowDataset, idx: np.ndarray, params: ModelParams):
    if ds.kind == "fused":
        return forward_fused(
            ds.audio_x[idx], ds.audio_m[idx], ds.text_x[idx], ds.text_m[idx], params
        )
    x = ds.audio_x if ds.kind == "audio" else ds.text_x
    m = ds.audio_m if ds.kind == "audio" else ds.text_m
    return forward_unimodal(x[idx], m[idx], params)


def _batch_loss(ds: WindowDataset, idx: np.ndarray, params: ModelParams):
    """Loss plus gradients w.r.t. the raw head output for one batch."""
    _, cache = _forward_batch(ds, idx, params)
    targets = ds.y[idx]
    if is_regression(params.arch.task):
        loss, draw = nn.mse_loss(cache.raw, targets)
    else:
        loss, draw = nn.bce_loss(cache.raw, targets)
    return loss, draw, cache


def dataset_loss(ds: WindowDataset, params: ModelParams, chunk: int = 512) -> float:
    total = 0.0
    for lo in range(0, ds.n, chunk):
        idx = np.arange(lo, min(lo + chunk, ds.n))
        loss, _, _ = _batch_loss(ds, idx, params)
        total += loss * idx.size
    return total / ds.n


def predict_scores(ds: WindowDataset, params: ModelParams, chunk: int = 512) -> np.ndarray:
    """Per-window scores in dataset order (probabilities or raw regression)."""
    out = np.empty(ds.n, dtype=np.float64)
    for lo in range(0, ds.n, chunk):
        idx = np.arange(lo, min(lo + chunk, ds.n))
        scores, _ = _forward_batch(ds, idx, params)
        out[idx] = scores
    return out


def predict_sessions(
    feats_list: list[SessionFeatures], params: ModelParams | LateFusionParams
) -> dict[str, SessionPrediction]:
    """Session-level predictions for featurized sessions."""
    if isinstance(params, LateFusionParams):
        pa = predict_sessions(feats_list, params.audio_model)
        pt = predict_sessions(feats_list, params.text_model)
        return {
            sid: fuse_predictions(pa[sid], pt[sid], params.arch.task) for sid in pa
        }
    ds = build_dataset(
        feats_list, params.kind, params.arch, params.scaler, params.selection, require_target=False
    )
    scores = predict_scores(ds, params)
    return {
        sid: aggregate_session(sid, scores[a:b], params.arch.task)
        for sid, a, b in ds.sessions
    }


# ---------------------------------------------------------------------------
# training


def train_model(
    train_feats: list[SessionFeatures],
    val_feats: list[SessionFeatures],
    arch: ArchConfig,
    kind: str,
    tcfg: TrainConfig,
    emb_info: dict | None = None,
    dtype=np.float32,
) -> tuple[ModelParams, list[tuple[int, float, float]]]:
    """Train one model; returns the best-validation-loss parameters and a
    per-epoch (epoch, train_loss, val_loss) log.

    The scaler and selection mask are fitted on ``train_feats`` only and
    stored on the returned parameters. An empty ``val_feats`` falls back to
    validating on the training set (overfit mode).
    """
    tcfg.validate()
    arch.validate()
    if not train_feats:
        raise ValidationError("train_model needs at least one training session")
    scaler: Scaler | None = None
    selection: SelectionMask | None = None
    audio_in: int | None = None
    text_in: int | None = None
    if kind in ("audio", "fused"):
        scaler, selection = fit_audio_artifacts(train_feats, arch.task, tcfg.alpha)
        audio_in = selection.n_kept
    if kind in ("text", "fused"):
        widths = {f.lexical.dim for f in train_feats + val_feats}
        if len(widths) != 1:
            raise ValidationError(f"inconsistent lexical widths across sessions: {sorted(widths)}")
        text_in = widths.pop()

    train_ds = build_dataset(train_feats, kind, arch, scaler, selection, dtype=dtype)
    val_ds = (
        build_dataset(val_feats, kind, arch, scaler, selection, dtype=dtype)
        if val_feats
        else train_ds
    )

    params = init_model(arch, kind, audio_in=audio_in, text_in=text_in, dtype=dtype)
    params.scaler = scaler
    params.selection = selection
    params.embedding_info = emb_info

    tensors = params.tensors()
    state = nn.adam_init(tensors, lr=tcfg.lr)
    rng = np.random.default_rng(tcfg.seed)
    best_val = np.inf
    best_tensors = params.copy_tensors()
    bad_epochs = 0
    log: list[tuple[int, float, float]] = []
    for epoch in range(1, tcfg.max_epochs + 1):
        perm = rng.permutation(train_ds.n)
        total = 0.0
        for batch_no, lo in enumerate(range(0, train_ds.n, tcfg.batch_size)):
            idx = perm[lo : lo + tcfg.batch_size]
            loss, draw, cache = _batch_loss(train_ds, idx, params)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batch_no}")
            if kind == "fused":
                grads = backward_fused(draw, cache, params)
            else:
                grads = backward_unimodal(draw, cache, params)
            nn.adam_step(tensors, grads, state)
            total += loss * idx.size
        train_loss = total / train_ds.n
        val_loss = dataset_loss(val_ds, params)
        log.append((epoch, train_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_tensors = params.copy_tensors()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= tcfg.patience:
                break
    params.load_tensors(best_tensors)
    return params, log


def train_late(
    train_feats: list[SessionFeatures],
    val_feats: list[SessionFeatures],
    arch: ArchConfig,
    tcfg: TrainConfig,
    emb_info: dict | None = None,
    dtype=np.float32,
):
    """Train the two unimodal models used for session-level late fusion."""
    audio_model, log_a = train_model(train_feats, val_feats, arch, "audio", tcfg, emb_info, dtype)
    text_model, log_t = train_model(train_feats, val_feats, arch, "text", tcfg, emb_info, dtype)
    return LateFusionParams(audio_model=audio_model, text_model=text_model), {
        "audio": log_a,
        "text": log_t,
    }


def training_log_csv(log: list[tuple[int, float, float]]) -> str:
    lines = ["epoch,train_loss,val_loss"]
    lines += [f"{e},{float(tr)!r},{float(va)!r}" for e, tr, va in log]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# metrics


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def evaluate(predictions: dict, labels: dict, task: str) -> dict:
    """Score aligned session predictions against labels.

    Classification: accuracy, unweighted mean of both per-class F1 scores
    (the F1 of a class with no true and no predicted members is 0 and the
    result is flagged degenerate) and the positive-class confusion counts.
    Regression: RMSE on the raw MMSE scale.
    """
    if set(predictions) != set(labels):
        only_p = sorted(set(predictions) - set(labels))
        only_l = sorted(set(labels) - set(predictions))
        raise ValidationError(
            f"prediction/label session ids mismatch: extra predictions {only_p}, missing {only_l}"
        )
    if not predictions:
        raise ValidationError("cannot evaluate zero sessions")
    ids = sorted(predictions)
    scores = np.array(
        [
            predictions[i].score if isinstance(predictions[i], SessionPrediction) else float(predictions[i])
            for i in ids
        ],
        dtype=np.float64,
    )
    truth = np.array([float(labels[i]) for i in ids], dtype=np.float64)
    if is_regression(task):
        rmse = float(np.sqrt(np.mean((scores - truth) ** 2)))
        return {"n": len(ids), "accuracy": None, "f1_mean": None, "rmse": rmse, "confusion": None, "degenerate": False}
    pred = (scores >= 0.5).astype(np.int64)
    y = truth.astype(np.int64)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    f1_pos = _f1(tp, fp, fn)
    f1_neg = _f1(tn, fn, fp)
    degenerate = (tp + fp + fn == 0) or (tn + fn + fp == 0)
    return {
        "n": len(ids),
        "accuracy": (tp + tn) / len(ids),
        "f1_mean": (f1_pos + f1_neg) / 2.0,
        "rmse": None,
        "confusion": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
        "degenerate": degenerate,
    }


@dataclass
class EvalReport:
    """Pooled metrics over all held-out predictions plus per-fold values."""

    task: str
    protocol: str
    seed: int
    accuracy: float | None
    rmse: float | None
    f1_mean: float | None
    folds: list[dict] = field(default_factory=list)
    confusion: dict | None = None

    def to_json(self) -> str:
        doc = {
            "task": self.task,
            "protocol": self.protocol,
            "seed": self.seed,
            "metrics": {"accuracy": self.accuracy, "rmse": self.rmse, "f1_mean": self.f1_mean},
            "folds": self.folds,
            "confusion": self.confusion,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# cross-validation


def split_folds(
    session_ids: list[str],
    k: int | None = 5,
    loso: bool = False,
    seed: int = 0,
    labels: list | None = None,
) -> list[list[int]]:
    """Disjoint covering folds at the session level.

    LOSO yields one fold per session in input order. Otherwise sessions are
    shuffled (within class, when labels are given, for stratification) and
    dealt round-robin, so class counts per fold differ by at most one.
    """
    n = len(session_ids)
    if len(set(session_ids)) != n:
        raise ValidationError("session ids must be unique")
    if loso:
        if n < 2:
            raise ValidationError("LOSO needs at least 2 sessions")
        return [[i] for i in range(n)]
    if k is None or k < 2:
        raise ValidationError(f"fold count must be >= 2, got {k}")
    if n < k:
        raise ValidationError(f"cannot split {n} sessions into {k} folds")
    rng = np.random.default_rng(seed)
    if labels is not None:
        if len(labels) != n:
            raise ValidationError("labels must align with session_ids")
        groups = [
            [i for i in range(n) if labels[i] == value]
            for value in sorted(set(labels))
        ]
    else:
        groups = [list(range(n))]
    folds: list[list[int]] = [[] for _ in range(k)]
    counter = 0
    for group in groups:
        order = rng.permutation(len(group))
        for j in order:
            folds[counter % k].append(group[j])
            counter += 1
    return folds


def _train_val_split(
    feats: list[SessionFeatures], val_frac: float, seed, labels: list | None
) -> tuple[list[SessionFeatures], list[SessionFeatures]]:
    n = len(feats)
    if n < 2:
        return feats, feats
    rng = np.random.default_rng(seed)
    if labels is not None:
        groups = [
            [i for i in range(n) if labels[i] == value] for value in sorted(set(labels))
        ]
    else:
        groups = [list(range(n))]
    val_idx: list[int] = []
    for group in groups:
        order = [group[j] for j in rng.permutation(len(group))]
        n_val = int(round(val_frac * len(group)))
        val_idx += order[:n_val]
    val_set = set(val_idx)
    if len(val_set) in (0, n):
        return feats, feats
    train = [feats[i] for i in range(n) if i not in val_set]
    val = [feats[i] for i in range(n) if i in val_set]
    return train, val


def _fold_labels(feats: list[SessionFeatures], task: str) -> list | None:
    if is_regression(task):
        return None
    return [int(_session_target(f, task)) for f in feats]


def _run_fold(args) -> tuple[int, dict, list]:
    fold_no, feats, train_idx, eval_idx, kind, arch, tcfg, emb_info = args
    train_all = [feats[i] for i in train_idx]
    eval_feats = [feats[i] for i in eval_idx]
    labels = _fold_labels(train_all, arch.task)
    inner_train, inner_val = _train_val_split(
        train_all, tcfg.val_frac, np.random.SeedSequence([tcfg.seed, 1 + fold_no]), labels
    )
    if kind == "late":
        params, logs = train_late(inner_train, inner_val, arch, tcfg, emb_info)
        log = logs["audio"] + logs["text"]
    else:
        params, log = train_model(inner_train, inner_val, arch, kind, tcfg, emb_info)
    preds = predict_sessions(eval_feats, params)
    scores = {sid: p.score for sid, p in preds.items()}
    return fold_no, scores, log


def cross_validate(
    feats: list[SessionFeatures],
    kind: str,
    arch: ArchConfig,
    tcfg: TrainConfig,
    emb_info: dict | None = None,
    workers: int = 1,
) -> tuple[EvalReport, list[list], dict[str, float]]:
    """K-fold (or leave-one-subject-out) cross-validation of one model kind.

    Each fold trains from scratch on the remaining sessions (with its own
    scaler/selection fit and internal validation split) and predicts the held
    out sessions; metrics are computed per fold and pooled over all held-out
    predictions. Returns (report, per-fold logs, pooled session scores).
    """
    tcfg.validate()
    ids = [f.record.session_id for f in feats]
    targets = {f.record.session_id: _session_target(f, arch.task) for f in feats}
    labels = _fold_labels(feats, arch.task)
    folds = split_folds(ids, k=tcfg.folds, loso=tcfg.loso, seed=tcfg.seed, labels=labels)
    all_idx = set(range(len(feats)))
    jobs = [
        (
            fold_no,
            feats,
            sorted(all_idx - set(fold_idx)),
            list(fold_idx),
            kind,
            arch,
            tcfg,
            emb_info,
        )
        for fold_no, fold_idx in enumerate(folds)
    ]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(job) for job in jobs]
    results.sort(key=lambda r: r[0])

    pooled: dict[str, float] = {}
    fold_rows: list[dict] = []
    logs: list[list] = []
    for fold_no, scores, log in results:
        logs.append(log)
        fold_labels = {sid: targets[sid] for sid in scores}
        metrics = evaluate(scores, fold_labels, arch.task)
        fold_rows.append(
            {
                "fold": fold_no,
                "sessions": sorted(scores),
                "accuracy": metrics["accuracy"],
                "f1_mean": metrics["f1_mean"],
                "rmse": metrics["rmse"],
                "degenerate": metrics["degenerate"],
            }
        )
        pooled.update(scores)
    overall = evaluate(pooled, targets, arch.task)
    protocol = "loso" if tcfg.loso else f"{tcfg.folds}-fold"
    report = EvalReport(
        task=arch.task,
        protocol=protocol,
        seed=tcfg.seed,
        accuracy=overall["accuracy"],
        rmse=overall["rmse"],
        f1_mean=overall["f1_mean"],
        folds=fold_rows,
        confusion=overall["confusion"],
    )
    return report, logs, pooled


# ---------------------------------------------------------------------------
# grid search


def grid_search(grid: dict, evaluate_fn, maximize: bool = True):
    """Exhaustive search over a finite config grid.

    ``grid`` maps field names to candidate lists; ``evaluate_fn`` receives one
    override dict per combination and returns its validation metric. Ties keep
    the first combination in grid order. Returns (best_overrides, table).
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValidationError("grid_search needs a non-empty grid")
    names = list(grid.keys())
    best: dict | None = None
    best_metric: float | None = None
    table: list[dict] = []
    for combo in itertools.product(*(grid[n] for n in names)):
        overrides = dict(zip(names, combo))
        metric = float(evaluate_fn(overrides))
        table.append({**overrides, "metric": metric})
        better = (
            best_metric is None
            or (maximize and metric > best_metric)
            or (not maximize and metric < best_metric)
        )
        if better:
            best, best_metric = overrides, metric
    return best, table
