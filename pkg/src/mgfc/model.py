"""Model assembly: unimodal branches, gated fusion, prediction, late fusion.

Three model kinds share the same skeleton. A branch runs a stacked BiLSTM
over one modality's windows and mean-pools the valid steps into one vector.
Unimodal models feed that vector straight into a scalar dense head. The fused
model concatenates the audio and text vectors and pushes them through a stack
of highway layers, whose sigmoid gates decide per dimension how much of the
combined representation passes through versus how much is carried unchanged,
before the dense head.

Classification heads emit a probability (sigmoid of the raw output, which the
losses consume as a logit); the MMSE regression head emits a raw score that
session prediction clamps to [0, 30]. A session's score is the mean of its
window scores; classification labels use a >= 0.5 threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .acoustic import FeatureWindow, Scaler, SelectionMask
from .errors import ValidationError
from .lexical import FeatureFlags

TASKS = ("ad", "mmse", "decline")
MODEL_KINDS = ("audio", "text", "fused")

MMSE_MIN = 0.0
MMSE_MAX = 30.0


def is_regression(task: str) -> bool:
    if task not in TASKS:
        raise ValidationError(f"unknown task {task!r}; expected one of {TASKS}")
    return task == "mmse"


@dataclass(frozen=True)
class BranchConfig:
    """Windowing and recurrent sizing for one modality branch."""

    timestep: int = 20
    stride: int = 1
    layers: int = 4
    hidden: int = 256

    def validate(self) -> None:
        if min(self.timestep, self.stride, self.layers, self.hidden) < 1:
            raise ValidationError(f"branch config fields must be positive: {self}")


@dataclass(frozen=True)
class ArchConfig:
    """Architecture hyperparameters plus featurization flags and init seed."""

    audio: BranchConfig = BranchConfig(timestep=20, stride=1, layers=4, hidden=256)
    text: BranchConfig = BranchConfig(timestep=10, stride=2, layers=2, hidden=16)
    highway_n: int = 3
    task: str = "ad"
    flags: FeatureFlags = FeatureFlags()
    seed: int = 0

    def validate(self) -> None:
        self.audio.validate()
        self.text.validate()
        if self.highway_n < 1:
            raise ValidationError(f"highway_n must be >= 1, got {self.highway_n}")
        if self.task not in TASKS:
            raise ValidationError(f"unknown task {self.task!r}")

    def to_dict(self) -> dict:
        return {
            "audio": vars(self.audio).copy(),
            "text": vars(self.text).copy(),
            "highway_n": self.highway_n,
            "task": self.task,
            "flags": vars(self.flags).copy(),
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ArchConfig":
        return ArchConfig(
            audio=BranchConfig(**d["audio"]),
            text=BranchConfig(**d["text"]),
            highway_n=int(d["highway_n"]),
            task=d["task"],
            flags=FeatureFlags(**d["flags"]),
            seed=int(d["seed"]),
        )


@dataclass
class ModelParams:
    """Complete tensor set of one model plus the featurization state needed
    to reproduce its inputs (scaler, selection mask, embedding descriptor)."""

    arch: ArchConfig
    kind: str
    audio_in: int | None = None
    text_in: int | None = None
    audio_layers: list[nn.BiLstmLayer] = field(default_factory=list)
    text_layers: list[nn.BiLstmLayer] = field(default_factory=list)
    highway: list[nn.HighwayParams] = field(default_factory=list)
    head_w: np.ndarray | None = None
    head_b: np.ndarray | None = None
    scaler: Scaler | None = None
    selection: SelectionMask | None = None
    embedding_info: dict | None = None

    def tensors(self) -> dict[str, np.ndarray]:
        """Named views of every trainable array, in a stable order."""
        out: dict[str, np.ndarray] = {}
        for branch, layers in (("audio", self.audio_layers), ("text", self.text_layers)):
            for k, (fwd, bwd) in enumerate(layers):
                for tag, p in (("f", fwd), ("b", bwd)):
                    out[f"{branch}.{k}.{tag}.w_ih"] = p.w_ih
                    out[f"{branch}.{k}.{tag}.w_hh"] = p.w_hh
                    out[f"{branch}.{k}.{tag}.b"] = p.b
        for k, hw in enumerate(self.highway):
            out[f"hw.{k}.w_h"] = hw.w_h
            out[f"hw.{k}.b_h"] = hw.b_h
            out[f"hw.{k}.w_t"] = hw.w_t
            out[f"hw.{k}.b_t"] = hw.b_t
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def copy_tensors(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.tensors().items()}

    def load_tensors(self, values: dict[str, np.ndarray]) -> None:
        tensors = self.tensors()
        if set(values) != set(tensors):
            missing = set(tensors) - set(values)
            extra = set(values) - set(tensors)
            raise ValidationError(f"tensor set mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, arr in tensors.items():
            np.copyto(arr, values[name])


def _branch_dims(in_dim: int, cfg: BranchConfig) -> list[int]:
    return [in_dim] + [2 * cfg.hidden] * (cfg.layers - 1)


def _init_branch(rng, in_dim: int, cfg: BranchConfig, dtype) -> list[nn.BiLstmLayer]:
    layers = []
    for layer_in in _branch_dims(in_dim, cfg):
        fwd = nn.init_lstm_params(rng, layer_in, cfg.hidden, dtype)
        bwd = nn.init_lstm_params(rng, layer_in, cfg.hidden, dtype)
        layers.append((fwd, bwd))
    return layers


def init_model(
    arch: ArchConfig,
    kind: str,
    audio_in: int | None = None,
    text_in: int | None = None,
    dtype=np.float32,
) -> ModelParams:
    """Seeded initialization of all tensors for the requested model kind."""
    arch.validate()
    if kind not in MODEL_KINDS:
        raise ValidationError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    rng = np.random.default_rng(arch.seed)
    params = ModelParams(arch=arch, kind=kind, audio_in=audio_in, text_in=text_in)
    head_in = 0
    if kind in ("audio", "fused"):
        if not audio_in or audio_in < 1:
            raise ValidationError("audio_in must be a positive input width")
        params.audio_layers = _init_branch(rng, audio_in, arch.audio, dtype)
        head_in += 2 * arch.audio.hidden
    if kind in ("text", "fused"):
        if not text_in or text_in < 1:
            raise ValidationError("text_in must be a positive input width")
        params.text_layers = _init_branch(rng, text_in, arch.text, dtype)
        head_in += 2 * arch.text.hidden
    if kind == "fused":
        params.highway = [nn.init_highway_params(rng, head_in, dtype) for _ in range(arch.highway_n)]
    params.head_w, params.head_b = nn.init_dense_params(rng, head_in, 1, dtype)
    return params


# ---------------------------------------------------------------------------
# window pairing


def pair_windows(audio_windows: list, text_windows: list) -> list[tuple]:
    """Pair the two modalities' windows of one session cyclically.

    Produces max(Na, Nt) instances; instance i pairs audio i mod Na with text
    i mod Nt, so the shorter list repeats until the longer one is covered.
    """
    na, nt = len(audio_windows), len(text_windows)
    if na == 0 or nt == 0:
        raise ValidationError("pair_windows needs at least one window per modality")
    return [(audio_windows[i % na], text_windows[i % nt]) for i in range(max(na, nt))]


# ---------------------------------------------------------------------------
# forward / backward composition


def _branch_forward(x: np.ndarray, mask: np.ndarray, layers: list[nn.BiLstmLayer]):
    out, caches = nn.bilstm_forward(x, layers, mask)
    pooled, pool_cache = nn.masked_mean_pool(out, mask)
    return pooled, (caches, pool_cache)


def _branch_backward(dpooled: np.ndarray, cache, layers: list[nn.BiLstmLayer], grads: dict, prefix: str):
    caches, pool_cache = cache
    dout = nn.masked_mean_pool_backward(dpooled, pool_cache)
    _, layer_grads = nn.bilstm_backward(dout, caches)
    for k, (gf, gb) in enumerate(layer_grads):
        for tag, (gw_ih, gw_hh, gb_) in (("f", gf), ("b", gb)):
            grads[f"{prefix}.{k}.{tag}.w_ih"] = gw_ih
            grads[f"{prefix}.{k}.{tag}.w_hh"] = gw_hh
            grads[f"{prefix}.{k}.{tag}.b"] = gb_


@dataclass
class ForwardCache:
    raw: np.ndarray
    audio_cache: tuple | None
    text_cache: tuple | None
    highway_caches: list
    head_cache: tuple


def _head_scores(raw: np.ndarray, task: str) -> np.ndarray:
    return np.asarray(nn.sigmoid(raw)) if not is_regression(task) else raw


def forward_fused(
    audio_x: np.ndarray,
    audio_mask: np.ndarray,
    text_x: np.ndarray,
    text_mask: np.ndarray,
    params: ModelParams,
):
    """Window scores for a batch of paired instances: (scores, cache).

    Scores are probabilities for classification tasks and raw values for
    regression; ``cache.raw`` holds the pre-sigmoid head output either way.
    """
    if params.kind != "fused":
        raise ValidationError(f"forward_fused called on a {params.kind!r} model")
    va, ca = _branch_forward(audio_x, audio_mask, params.audio_layers)
    vt, ct = _branch_forward(text_x, text_mask, params.text_layers)
    z = np.concatenate([va, vt], axis=-1)
    hw_caches = []
    for hw in params.highway:
        z, hc = nn.highway_forward(z, hw)
        hw_caches.append(hc)
    y, head_cache = nn.dense_forward(z, params.head_w, params.head_b, "identity")
    raw = y[:, 0]
    cache = ForwardCache(raw=raw, audio_cache=ca, text_cache=ct, highway_caches=hw_caches, head_cache=head_cache)
    return _head_scores(raw, params.arch.task), cache


def backward_fused(draw: np.ndarray, cache: ForwardCache, params: ModelParams) -> dict[str, np.ndarray]:
    """Parameter gradients from an upstream gradient on the raw head output."""
    grads: dict[str, np.ndarray] = {}
    dy = np.asarray(draw)[:, None]
    dz, dw, db = nn.dense_backward(dy, cache.head_cache)
    grads["head.w"] = dw
    grads["head.b"] = db
    for k in range(len(params.highway) - 1, -1, -1):
        dz, (dw_h, db_h, dw_t, db_t) = nn.highway_backward(dz, cache.highway_caches[k])
        grads[f"hw.{k}.w_h"] = dw_h
        grads[f"hw.{k}.b_h"] = db_h
        grads[f"hw.{k}.w_t"] = dw_t
        grads[f"hw.{k}.b_t"] = db_t
    na = 2 * params.arch.audio.hidden
    _branch_backward(dz[:, :na], cache.audio_cache, params.audio_layers, grads, "audio")
    _branch_backward(dz[:, na:], cache.text_cache, params.text_layers, grads, "text")
    return grads


def forward_unimodal(x: np.ndarray, mask: np.ndarray, params: ModelParams):
    """Window scores for one modality's windows: (scores, cache)."""
    if params.kind not in ("audio", "text"):
        raise ValidationError(f"forward_unimodal called on a {params.kind!r} model")
    layers = params.audio_layers if params.kind == "audio" else params.text_layers
    pooled, branch_cache = _branch_forward(x, mask, layers)
    y, head_cache = nn.dense_forward(pooled, params.head_w, params.head_b, "identity")
    raw = y[:, 0]
    cache = ForwardCache(
        raw=raw,
        audio_cache=branch_cache if params.kind == "audio" else None,
        text_cache=branch_cache if params.kind == "text" else None,
        highway_caches=[],
        head_cache=head_cache,
    )
    return _head_scores(raw, params.arch.task), cache


def backward_unimodal(draw: np.ndarray, cache: ForwardCache, params: ModelParams) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    dy = np.asarray(draw)[:, None]
    dpooled, dw, db = nn.dense_backward(dy, cache.head_cache)
    grads["head.w"] = dw
    grads["head.b"] = db
    if params.kind == "audio":
        _branch_backward(dpooled, cache.audio_cache, params.audio_layers, grads, "audio")
    else:
        _branch_backward(dpooled, cache.text_cache, params.text_layers, grads, "text")
    return grads


# ---------------------------------------------------------------------------
# session-level prediction


@dataclass(frozen=True)
class SessionPrediction:
    """Aggregated score for one session plus the per-window scores behind it."""

    session_id: str
    score: float
    window_scores: tuple[float, ...]
    label: int | None = None


def aggregate_session(session_id: str, window_scores: np.ndarray, task: str) -> SessionPrediction:
    """Mean of window scores; regression clamps to [0, 30], classification
    thresholds at 0.5 (ties classified positive)."""
    ws = np.asarray(window_scores, dtype=np.float64).ravel()
    if ws.size == 0:
        raise ValidationError(f"session {session_id!r} has no window scores")
    score = float(ws.mean())
    if is_regression(task):
        return SessionPrediction(session_id, float(np.clip(score, MMSE_MIN, MMSE_MAX)), tuple(ws), None)
    return SessionPrediction(session_id, score, tuple(ws), int(score >= 0.5))


def _stack_windows(windows: list[FeatureWindow], dtype) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([w.data for w in windows]).astype(dtype)
    m = np.stack([w.mask for w in windows]).astype(dtype)
    return x, m


def predict_session(session_id: str, instances: list, params: "ModelParams | LateFusionParams"):
    """Score one session from its windows (unimodal) or paired instances."""
    if isinstance(params, LateFusionParams):
        pa = predict_session(session_id, [a for a, _ in instances], params.audio_model)
        pt = predict_session(session_id, [t for _, t in instances], params.text_model)
        return fuse_predictions(pa, pt, params.arch.task)
    if not instances:
        raise ValidationError(f"session {session_id!r} has no instances")
    dtype = params.head_w.dtype
    if params.kind == "fused":
        ax, am = _stack_windows([a for a, _ in instances], dtype)
        tx, tm = _stack_windows([t for _, t in instances], dtype)
        scores, _ = forward_fused(ax, am, tx, tm, params)
    else:
        x, m = _stack_windows(list(instances), dtype)
        scores, _ = forward_unimodal(x, m, params)
    return aggregate_session(session_id, scores, params.arch.task)


def late_fuse(p_audio: float, p_text: float, method: str = "mean") -> float:
    """Combine two session-level probabilities from unimodal models."""
    for name, p in (("audio", p_audio), ("text", p_text)):
        if not (0.0 <= p <= 1.0):
            raise ValidationError(f"{name} probability {p} outside [0, 1]")
    if method == "mean":
        return (p_audio + p_text) / 2.0
    if method == "max":
        return max(p_audio, p_text)
    if method == "logit_mean":
        eps = 1e-12
        la = np.log(max(p_audio, eps)) - np.log(max(1.0 - p_audio, eps))
        lt = np.log(max(p_text, eps)) - np.log(max(1.0 - p_text, eps))
        return float(nn.sigmoid(np.asarray((la + lt) / 2.0)))
    raise ValidationError(f"unknown late-fusion method {method!r}")


def fuse_predictions(pa: SessionPrediction, pt: SessionPrediction, task: str, method: str = "mean"):
    """Session-level late fusion of two unimodal predictions."""
    if is_regression(task):
        score = float(np.clip((pa.score + pt.score) / 2.0, MMSE_MIN, MMSE_MAX))
        return SessionPrediction(pa.session_id, score, pa.window_scores + pt.window_scores, None)
    score = late_fuse(pa.score, pt.score, method)
    return SessionPrediction(pa.session_id, score, pa.window_scores + pt.window_scores, int(score >= 0.5))


@dataclass
class LateFusionParams:
    """A trained audio model and text model fused at the session level."""

    audio_model: ModelParams
    text_model: ModelParams

    @property
    def arch(self) -> ArchConfig:
        return self.audio_model.arch
