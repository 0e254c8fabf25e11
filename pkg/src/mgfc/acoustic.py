"""Statistical functionals over acoustic frames, normalization and selection.

Frame-level features arrive as a T x F matrix at 100 Hz. Each feature column
is summarized over sliding sub-windows by seven statistics (mean, max, min,
median, std, skew, kurtosis), yielding a per-step functional sequence. The
sequence is z-normalized with train-fitted statistics, filtered down to the
dimensions that correlate with the training targets, and cut into fixed-size
windows for the sequence model.

Conventions (pinned so independent oracles agree): population moments, skew
m3/m2^1.5 and excess kurtosis m4/m2^2 - 3 with both defined as 0 when
m2 < 1e-12, a 1e-8 floor on the normalization divisor, and a two-sided
Pearson test with p-values from the regularized incomplete beta function.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ValidationError
from .ingest import FrameMatrix

STAT_NAMES = ("mean", "max", "min", "median", "std", "skew", "kurtosis")

MOMENT_GUARD = 1e-12
SCALE_FLOOR = 1e-8


@dataclass(frozen=True)
class FunctionalSequence:
    """Per-step statistical summaries of one session's frames (N x D)."""

    session_id: str
    steps: np.ndarray
    stat_names: tuple[str, ...]


@dataclass(frozen=True)
class Scaler:
    """Per-dimension mean and population std fitted on training steps.

    ``stds`` holds the raw values; the floor is applied at transform time.
    """

    means: np.ndarray
    stds: np.ndarray


@dataclass(frozen=True)
class SelectionMask:
    """Keep/drop decision per dimension from a univariate correlation test."""

    keep: np.ndarray
    r_values: np.ndarray
    p_values: np.ndarray
    alpha: float

    @property
    def n_kept(self) -> int:
        return int(self.keep.sum())

    def apply(self, steps: np.ndarray) -> np.ndarray:
        if steps.shape[1] != self.keep.shape[0]:
            raise ValidationError(
                f"selection mask has {self.keep.shape[0]} dims, steps have {steps.shape[1]}"
            )
        return steps[:, self.keep]


@dataclass(frozen=True)
class FeatureWindow:
    """Fixed-length slice of a step sequence; short sequences are zero-padded.

    ``mask`` is 1.0 for real steps, 0.0 for padding; ``start`` is the row
    offset of the slice in the source sequence.
    """

    data: np.ndarray
    mask: np.ndarray
    start: int
    n_real: int


def _window_stats(block: np.ndarray) -> np.ndarray:
    """Seven statistics per column of ``block``, feature-major (F*7 vector)."""
    mu = block.mean(axis=0)
    mx = block.max(axis=0)
    mn = block.min(axis=0)
    med = np.median(block, axis=0)
    centered = block - mu
    m2 = np.mean(centered**2, axis=0)
    m3 = np.mean(centered**3, axis=0)
    m4 = np.mean(centered**4, axis=0)
    std = np.sqrt(m2)
    ok = m2 >= MOMENT_GUARD
    skew = np.zeros_like(m2)
    kurt = np.zeros_like(m2)
    np.divide(m3, m2**1.5, out=skew, where=ok)
    np.divide(m4, m2**2, out=kurt, where=ok)
    kurt[ok] -= 3.0
    return np.stack([mu, mx, mn, med, std, skew, kurt], axis=1).ravel()


def compute_functionals(
    frames: FrameMatrix, stat_window: int = 100, stat_hop: int = 100
) -> FunctionalSequence:
    """Summarize frames over sliding sub-windows of ``stat_window`` frames.

    Yields N = floor((T - stat_window)/stat_hop) + 1 steps; a session shorter
    than one window yields a single step over all of its frames.
    """
    if stat_window < 2:
        raise ValidationError(f"stat_window must be >= 2, got {stat_window}")
    if stat_hop < 1:
        raise ValidationError(f"stat_hop must be >= 1, got {stat_hop}")
    data = frames.frames
    if data.shape[0] < 1 or data.shape[1] < 1:
        raise ValidationError(f"session {frames.session_id!r}: empty frame matrix")
    n_frames = data.shape[0]
    if n_frames < stat_window:
        spans = [(0, n_frames)]
    else:
        count = (n_frames - stat_window) // stat_hop + 1
        spans = [(i * stat_hop, i * stat_hop + stat_window) for i in range(count)]
    steps = np.vstack([_window_stats(data[a:b]) for a, b in spans])
    names = tuple(f"{feat}:{stat}" for feat in frames.feature_names for stat in STAT_NAMES)
    return FunctionalSequence(session_id=frames.session_id, steps=steps, stat_names=names)


def functionals_to_csv(seq: FunctionalSequence) -> str:
    """Debug dump: stat-name header plus one row per step."""
    out = io.StringIO()
    out.write(",".join(seq.stat_names) + "\n")
    for row in seq.steps:
        out.write(",".join(format(v, ".10g") for v in row) + "\n")
    return out.getvalue()


def fit_scaler(train_steps: np.ndarray) -> Scaler:
    """Per-dimension mean and population std over all training steps."""
    steps = np.asarray(train_steps, dtype=np.float64)
    if steps.ndim != 2 or steps.shape[0] < 2:
        raise ValidationError("fitting a scaler needs at least 2 step rows")
    return Scaler(means=steps.mean(axis=0), stds=steps.std(axis=0))


def apply_scaler(steps: np.ndarray, scaler: Scaler) -> np.ndarray:
    """z-normalize with train-fitted statistics; divisor floored at 1e-8."""
    steps = np.asarray(steps, dtype=np.float64)
    if steps.ndim != 2 or steps.shape[1] != scaler.means.shape[0]:
        raise ValidationError(
            f"scaler has {scaler.means.shape[0]} dims, steps have {steps.shape[1] if steps.ndim == 2 else '?'}"
        )
    return (steps - scaler.means) / np.maximum(scaler.stds, SCALE_FLOOR)


def select_features(
    train_steps: np.ndarray, train_targets: np.ndarray, alpha: float = 0.05
) -> SelectionMask:
    """Keep dimensions whose Pearson correlation with the targets is significant.

    Two-sided test: t = r*sqrt((n-2)/(1-r^2)) against Student-t with n-2 dof,
    evaluated as p = I_{1-r^2}(dof/2, 1/2); a dimension is kept iff p < alpha.
    Zero-variance dimensions get r = 0, p = 1 and are dropped.
    """
    x = np.asarray(train_steps, dtype=np.float64)
    y = np.asarray(train_targets, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValidationError("train_steps rows and train_targets length must match")
    n = x.shape[0]
    if n < 3:
        raise ValidationError(f"correlation test needs n >= 3 rows, got {n}")
    if not (0.0 < alpha <= 1.0):
        raise ValidationError(f"alpha must be in (0, 1], got {alpha}")
    yc = y - y.mean()
    ss_y = float(yc @ yc)
    if ss_y <= 0.0:
        raise ValidationError("targets are constant; correlation is undefined")
    xc = x - x.mean(axis=0)
    ss_x = np.einsum("ij,ij->j", xc, xc)
    cov = xc.T @ yc
    denom = np.sqrt(ss_x * ss_y)
    r = np.zeros(x.shape[1], dtype=np.float64)
    np.divide(cov, denom, out=r, where=denom > 0.0)
    np.clip(r, -1.0, 1.0, out=r)

    dof = n - 2
    p = special.betainc(dof / 2.0, 0.5, np.clip(1.0 - r * r, 0.0, 1.0))
    p = np.where(denom > 0.0, p, 1.0)
    keep = p < alpha
    if not keep.any():
        raise ValidationError(f"no dimension passed the correlation test at alpha={alpha}")
    return SelectionMask(keep=keep, r_values=r, p_values=p, alpha=float(alpha))


def make_windows(steps: np.ndarray, timestep: int, stride: int) -> list[FeatureWindow]:
    """Cut a step sequence into fixed-length windows.

    With N >= timestep this yields floor((N - timestep)/stride) + 1 contiguous
    slices; shorter sequences yield exactly one window, zero-padded at the end,
    with the mask marking the real steps.
    """
    if timestep < 1:
        raise ValidationError(f"timestep must be >= 1, got {timestep}")
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    steps = np.asarray(steps, dtype=np.float64)
    if steps.ndim != 2 or steps.shape[0] < 1:
        raise ValidationError("steps must be a non-empty N x D matrix")
    n, dim = steps.shape
    if n < timestep:
        data = np.zeros((timestep, dim), dtype=steps.dtype)
        data[:n] = steps
        mask = np.zeros(timestep, dtype=np.float64)
        mask[:n] = 1.0
        return [FeatureWindow(data=data, mask=mask, start=0, n_real=n)]
    count = (n - timestep) // stride + 1
    ones = np.ones(timestep, dtype=np.float64)
    return [
        FeatureWindow(
            data=steps[i * stride : i * stride + timestep].copy(),
            mask=ones.copy(),
            start=i * stride,
            n_real=timestep,
        )
        for i in range(count)
    ]
