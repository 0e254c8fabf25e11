"""Binary checkpoint format for trained models.

Layout (all integers little-endian):

    magic "MGFC" | u32 version | u32 meta_len | metadata JSON (UTF-8)
    | u32 n_tensors | table entries | u64 payload_len | payload

Each table entry is ``u32 name_len | name | u32 rank | rank * u64 dims |
u64 offset`` where the offset points into the payload, which holds raw
float32 values. The metadata JSON carries everything needed to rebuild the
model and its featurization exactly: architecture, feature flags, seed,
scaler, selection mask and the embedding-file descriptor. Round-tripping a
checkpoint is byte-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .acoustic import Scaler, SelectionMask
from .errors import CheckpointError
from .model import ArchConfig, LateFusionParams, ModelParams
from . import nn

MAGIC = b"MGFC"
VERSION = 1


def _scaler_meta(scaler: Scaler | None) -> dict | None:
    if scaler is None:
        return None
    return {"means": scaler.means.tolist(), "stds": scaler.stds.tolist()}


def _scaler_from_meta(meta: dict | None) -> Scaler | None:
    if meta is None:
        return None
    return Scaler(
        means=np.asarray(meta["means"], dtype=np.float64),
        stds=np.asarray(meta["stds"], dtype=np.float64),
    )


def _selection_meta(sel: SelectionMask | None) -> dict | None:
    if sel is None:
        return None
    return {
        "keep": [int(k) for k in sel.keep],
        "r": sel.r_values.tolist(),
        "p": sel.p_values.tolist(),
        "alpha": sel.alpha,
    }


def _selection_from_meta(meta: dict | None) -> SelectionMask | None:
    if meta is None:
        return None
    return SelectionMask(
        keep=np.asarray(meta["keep"], dtype=bool),
        r_values=np.asarray(meta["r"], dtype=np.float64),
        p_values=np.asarray(meta["p"], dtype=np.float64),
        alpha=float(meta["alpha"]),
    )


def _model_meta(params: ModelParams) -> dict:
    return {
        "kind": params.kind,
        "arch": params.arch.to_dict(),
        "audio_in": params.audio_in,
        "text_in": params.text_in,
        "scaler": _scaler_meta(params.scaler),
        "selection": _selection_meta(params.selection),
        "embedding": params.embedding_info,
    }


def _model_from_meta(meta: dict, tensors: dict[str, np.ndarray]) -> ModelParams:
    arch = ArchConfig.from_dict(meta["arch"])
    kind = meta["kind"]
    params = ModelParams(
        arch=arch,
        kind=kind,
        audio_in=meta["audio_in"],
        text_in=meta["text_in"],
        scaler=_scaler_from_meta(meta["scaler"]),
        selection=_selection_from_meta(meta["selection"]),
        embedding_info=meta["embedding"],
    )
    consumed: set[str] = set()

    def take(name: str) -> np.ndarray:
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        consumed.add(name)
        return tensors[name]

    def branch(prefix: str, n_layers: int) -> list[nn.BiLstmLayer]:
        layers = []
        for k in range(n_layers):
            pair = tuple(
                nn.LstmLayerParams(
                    w_ih=take(f"{prefix}.{k}.{tag}.w_ih"),
                    w_hh=take(f"{prefix}.{k}.{tag}.w_hh"),
                    b=take(f"{prefix}.{k}.{tag}.b"),
                )
                for tag in ("f", "b")
            )
            layers.append(pair)
        return layers

    if kind in ("audio", "fused"):
        params.audio_layers = branch("audio", arch.audio.layers)
    if kind in ("text", "fused"):
        params.text_layers = branch("text", arch.text.layers)
    if kind == "fused":
        params.highway = [
            nn.HighwayParams(
                w_h=take(f"hw.{k}.w_h"),
                b_h=take(f"hw.{k}.b_h"),
                w_t=take(f"hw.{k}.w_t"),
                b_t=take(f"hw.{k}.b_t"),
            )
            for k in range(arch.highway_n)
        ]
    params.head_w = take("head.w")
    params.head_b = take("head.b")
    leftover = set(tensors) - consumed
    if leftover:
        raise CheckpointError(f"checkpoint carries unexpected tensors: {sorted(leftover)}")
    return params


def save_checkpoint(params: ModelParams | LateFusionParams) -> bytes:
    """Serialize a model (or late-fusion pair) to bytes; float32 payload."""
    if isinstance(params, LateFusionParams):
        meta = {
            "kind": "late",
            "audio_model": _model_meta(params.audio_model),
            "text_model": _model_meta(params.text_model),
        }
        tensors: dict[str, np.ndarray] = {}
        for name, arr in params.audio_model.tensors().items():
            tensors[f"audio_model.{name}"] = arr
        for name, arr in params.text_model.tensors().items():
            tensors[f"text_model.{name}"] = arr
    else:
        meta = _model_meta(params)
        tensors = params.tensors()

    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    table = bytearray()
    payload = bytearray()
    table += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        name_b = name.encode("utf-8")
        table += struct.pack("<I", len(name_b))
        table += name_b
        table += struct.pack("<I", arr.ndim)
        table += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        table += struct.pack("<Q", len(payload))
        payload += data
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(meta_bytes))
    out += meta_bytes
    out += table
    out += struct.pack("<Q", len(payload))
    out += payload
    return bytes(out)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: needed {n} bytes at offset {self.pos}, "
                f"only {len(self.data) - self.pos} remain"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.read(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.read(8))[0]


def load_checkpoint(data: bytes) -> ModelParams | LateFusionParams:
    """Parse checkpoint bytes back into model parameters."""
    cur = _Cursor(data)
    magic = cur.read(4)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0; expected {MAGIC!r}")
    version = cur.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at offset 4")
    meta_len = cur.u32()
    meta_start = cur.pos
    try:
        meta = json.loads(cur.read(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata at offset {meta_start}: {exc}") from exc

    n_tensors = cur.u32()
    entries = []
    for _ in range(n_tensors):
        name_len = cur.u32()
        name = cur.read(name_len).decode("utf-8")
        rank = cur.u32()
        if rank > 8:
            raise CheckpointError(f"implausible tensor rank {rank} at offset {cur.pos - 4}")
        dims = tuple(cur.u64() for _ in range(rank))
        offset = cur.u64()
        entries.append((name, dims, offset))
    payload_len = cur.u64()
    payload_start = cur.pos
    payload = cur.read(payload_len)
    if cur.pos != len(data):
        raise CheckpointError(f"{len(data) - cur.pos} trailing bytes at offset {cur.pos}")

    tensors: dict[str, np.ndarray] = {}
    for name, dims, offset in entries:
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        end = offset + 4 * count
        if end > payload_len:
            raise CheckpointError(
                f"tensor {name!r} overruns payload at offset {payload_start + offset}"
            )
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.reshape(dims).copy()

    if not isinstance(meta, dict) or "kind" not in meta:
        raise CheckpointError("metadata lacks a model kind")
    if meta["kind"] == "late":
        audio_t = {k[len("audio_model.") :]: v for k, v in tensors.items() if k.startswith("audio_model.")}
        text_t = {k[len("text_model.") :]: v for k, v in tensors.items() if k.startswith("text_model.")}
        if len(audio_t) + len(text_t) != len(tensors):
            raise CheckpointError("late checkpoint carries tensors outside its two models")
        return LateFusionParams(
            audio_model=_model_from_meta(meta["audio_model"], audio_t),
            text_model=_model_from_meta(meta["text_model"], text_t),
        )
    return _model_from_meta(meta, tensors)
