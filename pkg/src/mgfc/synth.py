"""Synthetic sessions with a controllable class signal.

Real corpora for this task are access-restricted, so functional verification
runs on generated data. Each session gets a latent severity in [0, 1] scaled
by the ``separation`` knob (class 1 draws high severities, class 0 low ones);
severity then drives every class-linked effect:

  * longer unfilled pauses between patient words (the class-mean gap shift is
    about ``separation`` * 1 second),
  * lower per-word language-model probabilities (about 0.3 at separation 1),
  * shifted means on a subset of the acoustic frame features,
  * more disfluency tags,
  * an MMSE label of 29 - round(14 * severity), clipped to [10, 30].

At separation 0 the two classes are drawn from identical distributions. The
generator emits exactly the external file formats the ingest readers consume
(frames CSV, ASR JSON, manifest CSV) plus an embeddings file covering most of
the synthetic vocabulary, and is byte-deterministic for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .ingest import FrameMatrix, SessionRecord, Transcript, WordToken, serialize_transcript

PATIENT = "PAR"
INTERVIEWER = "INT"

VOCAB = (
    "the", "a", "and", "is", "in", "on", "boy", "girl", "mother", "cookie",
    "jar", "stool", "sink", "water", "dish", "window", "kitchen", "plate",
    "curtain", "cup", "she", "he", "it", "was", "falling", "washing",
    "taking", "reaching", "standing", "running", "over", "down", "up",
    "there", "here", "that", "this", "with", "from", "to", "uh", "um",
)
FILLERS = ("uh", "um")
# tokens kept out of the embeddings file so OOV lookups occur in real runs
OOV_TOKENS = ("curtain", "plate")

BASE_GAP_MEAN = 0.18
BASE_GAP_STD = 0.12
# per unit severity; the expected severity difference between classes is 0.7,
# so the class-mean within-turn gap shift comes out at ~separation * 1 second
GAP_SHIFT = 10.0 / 7.0
LM_BASE = (0.5, 0.9)
LM_SHIFT = 0.375
FRAME_SHIFT = 2.0
N_SHIFTED = 6
INTERJECT_P = 0.12
FILLER_P = 0.08


@dataclass
class SynthSession:
    record: SessionRecord
    transcript: Transcript
    frames: FrameMatrix
    severity: float


@dataclass
class SynthDataset:
    sessions: list[SynthSession]
    embedding_text: str
    seed: int
    separation: float


def _severity(rng: np.random.Generator, label: int, separation: float) -> float:
    base = rng.uniform(0.7, 1.0) if label == 1 else rng.uniform(0.0, 0.3)
    return float(separation * base)


def _make_transcript(
    rng: np.random.Generator, session_id: str, severity: float, n_words: int
) -> Transcript:
    tokens: list[WordToken] = []
    cursor = float(rng.uniform(0.2, 0.8))
    after_interviewer = True  # the first patient word gets no pause either way
    p_disfl = 0.02 + severity * 0.08
    for _ in range(n_words):
        gap = max(0.0, rng.normal(BASE_GAP_MEAN, BASE_GAP_STD)) + severity * GAP_SHIFT
        if after_interviewer:
            gap = float(rng.uniform(0.05, 0.3))
        start = round(cursor + gap, 3)
        end = round(start + rng.uniform(0.15, 0.45), 3)
        cursor = end
        word = FILLERS[rng.integers(len(FILLERS))] if rng.random() < FILLER_P else VOCAB[rng.integers(len(VOCAB))]
        roll = rng.random()
        disfl = "edit_term" if roll < p_disfl else ("repair_onset" if roll < 2 * p_disfl else None)
        lm = float(np.clip(rng.uniform(*LM_BASE) - severity * LM_SHIFT + rng.normal(0.0, 0.03), 0.01, 0.99))
        tokens.append(
            WordToken(
                text=word,
                start=start,
                end=end,
                speaker=PATIENT,
                asr_conf=round(float(rng.uniform(0.75, 0.99)), 4),
                lm_prob=round(lm, 4),
                disfl_tag=disfl,
            )
        )
        after_interviewer = False
        if rng.random() < INTERJECT_P:
            for _ in range(int(rng.integers(1, 4))):
                start = round(cursor + rng.uniform(0.05, 0.3), 3)
                end = round(start + rng.uniform(0.15, 0.4), 3)
                cursor = end
                tokens.append(
                    WordToken(
                        text=VOCAB[rng.integers(len(VOCAB))],
                        start=start,
                        end=end,
                        speaker=INTERVIEWER,
                        asr_conf=round(float(rng.uniform(0.75, 0.99)), 4),
                        lm_prob=round(float(rng.uniform(0.4, 0.95)), 4),
                    )
                )
            after_interviewer = True
    return Transcript(session_id=session_id, tokens=tuple(tokens), patient_speaker=PATIENT)


def _make_frames(
    rng: np.random.Generator, session_id: str, severity: float, duration_s: float, n_features: int
) -> FrameMatrix:
    n_frames = max(200, int(round(duration_s * 100)))
    data = rng.normal(0.0, 1.0, size=(n_frames, n_features))
    data[:, : min(N_SHIFTED, n_features)] += severity * FRAME_SHIFT
    data[:, -1] = 0.7  # constant channel exercises the zero-variance guards
    names = tuple(f"a{j:02d}" for j in range(n_features))
    return FrameMatrix(session_id=session_id, frames=data, feature_names=names, rate=100.0)


def _make_embeddings(rng: np.random.Generator, dim: int) -> str:
    lines = []
    for token in VOCAB:
        if token in OOV_TOKENS:
            continue
        vec = rng.normal(0.0, 0.3, size=dim)
        lines.append(token + " " + " ".join(format(v, ".6f") for v in vec))
    return "\n".join(lines) + "\n"


def synthesize(
    seed: int,
    n_sessions: int,
    separation: float,
    n_features: int = 12,
    embed_dim: int = 16,
    words_min: int = 16,
    words_max: int = 28,
) -> SynthDataset:
    """Generate an in-memory dataset; sessions alternate class 0 and class 1."""
    if n_sessions < 4:
        raise ValidationError(f"need at least 4 sessions, got {n_sessions}")
    if n_sessions % 2 != 0:
        raise ValidationError(f"n_sessions must be even for a balanced split, got {n_sessions}")
    if not (0.0 <= separation <= 1.0):
        raise ValidationError(f"separation must be in [0, 1], got {separation}")
    if n_features < 2 or embed_dim < 1 or not (1 <= words_min <= words_max):
        raise ValidationError("bad synthetic dataset shape parameters")
    emb_rng = np.random.default_rng([seed, 1])
    embedding_text = _make_embeddings(emb_rng, embed_dim)
    rng = np.random.default_rng([seed, 0])
    sessions: list[SynthSession] = []
    for i in range(n_sessions):
        label = i % 2
        sid = f"s{i + 1:04d}"
        severity = _severity(rng, label, separation)
        n_words = int(rng.integers(words_min, words_max + 1))
        transcript = _make_transcript(rng, sid, severity, n_words)
        duration = transcript.tokens[-1].end + 0.5
        frames = _make_frames(rng, sid, severity, duration, n_features)
        mmse = int(np.clip(29 - round(14 * severity), 10, 30))
        record = SessionRecord(
            session_id=sid,
            frames_path=f"frames/{sid}.csv",
            asr_path=f"asr/{sid}.json",
            patient_speaker=PATIENT,
            ad_label=label,
            mmse=mmse,
            decline_label=label,
        )
        sessions.append(SynthSession(record=record, transcript=transcript, frames=frames, severity=severity))
    return SynthDataset(sessions=sessions, embedding_text=embedding_text, seed=seed, separation=separation)


def frames_to_csv(frames: FrameMatrix) -> str:
    lines = [",".join(frames.feature_names)]
    lines += [",".join(format(v, ".4f") for v in row) for row in frames.frames]
    return "\n".join(lines) + "\n"


def manifest_csv(records: list[SessionRecord]) -> str:
    lines = ["session_id,frames_path,asr_path,patient_speaker,ad,mmse,decline"]
    for r in records:
        ad = "" if r.ad_label is None else str(r.ad_label)
        mmse = "" if r.mmse is None else str(r.mmse)
        decline = "" if r.decline_label is None else str(r.decline_label)
        lines.append(f"{r.session_id},{r.frames_path},{r.asr_path},{r.patient_speaker},{ad},{mmse},{decline}")
    return "\n".join(lines) + "\n"


def write_dataset(data: SynthDataset, out_dir: str | Path) -> dict[str, Path]:
    """Write the dataset in the external file formats; returns key paths."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "asr").mkdir(parents=True, exist_ok=True)
    for s in data.sessions:
        (out / s.record.frames_path).write_text(frames_to_csv(s.frames), encoding="utf-8")
        (out / s.record.asr_path).write_text(serialize_transcript(s.transcript), encoding="utf-8")
    manifest = out / "manifest.csv"
    manifest.write_text(manifest_csv([s.record for s in data.sessions]), encoding="utf-8")
    embeddings = out / "embeddings.txt"
    embeddings.write_text(data.embedding_text, encoding="utf-8")
    return {"manifest": manifest, "embeddings": embeddings, "dir": out}


def make_synthetic(
    seed: int,
    n_sessions: int,
    separation: float,
    out_dir: str | Path,
    n_features: int = 12,
    embed_dim: int = 16,
    words_min: int = 16,
    words_max: int = 28,
) -> dict[str, Path]:
    """Generate and write a dataset; byte-identical for identical arguments."""
    data = synthesize(seed, n_sessions, separation, n_features, embed_dim, words_min, words_max)
    return write_dataset(data, out_dir)
