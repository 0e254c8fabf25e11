"""Readers for the three external inputs.

A session is described by three files: an ASR hypothesis JSON with timed,
speaker-attributed word tokens, a CSV of acoustic feature frames sampled at
100 Hz, and one row of the session manifest carrying labels and file paths.
Parsing canonicalizes token order and zero-fills missing frame cells; all
returned objects are immutable and safe to share between workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParseError, ValidationError

DISFL_TAGS = ("fluent", "edit_term", "repair_onset")

MANIFEST_HEADER = (
    "session_id",
    "frames_path",
    "asr_path",
    "patient_speaker",
    "ad",
    "mmse",
    "decline",
)


@dataclass(frozen=True)
class WordToken:
    """One recognized word with timing and optional upstream annotations.

    ``lm_prob`` and ``disfl_tag`` come from external models and stay ``None``
    when the input did not provide them; they are never defaulted here.
    """

    text: str
    start: float
    end: float
    speaker: str
    asr_conf: float
    lm_prob: float | None = None
    disfl_tag: str | None = None


@dataclass(frozen=True)
class Transcript:
    """All word tokens of one session, sorted by start time (stable)."""

    session_id: str
    tokens: tuple[WordToken, ...]
    patient_speaker: str = ""

    def patient_tokens(self) -> tuple[WordToken, ...]:
        return tuple(t for t in self.tokens if t.speaker == self.patient_speaker)


@dataclass(frozen=True)
class FrameMatrix:
    """T x F acoustic feature frames for one session, sampled at ``rate`` Hz."""

    session_id: str
    frames: np.ndarray
    feature_names: tuple[str, ...]
    rate: float = 100.0


@dataclass(frozen=True)
class SessionRecord:
    """One manifest row: file paths plus whichever labels are present."""

    session_id: str
    frames_path: str
    asr_path: str
    patient_speaker: str
    ad_label: int | None = None
    mmse: int | None = None
    decline_label: int | None = None

    def target(self, task: str) -> float | None:
        """Task target as a float, or None when the label is absent."""
        if task == "ad":
            return None if self.ad_label is None else float(self.ad_label)
        if task == "mmse":
            return None if self.mmse is None else float(self.mmse)
        if task == "decline":
            return None if self.decline_label is None else float(self.decline_label)
        raise ValueError(f"unknown task {task!r}")


def _as_text(data: bytes | str) -> str:
    if isinstance(data, bytes):
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not valid UTF-8 at byte {exc.start}") from exc
    return data


def _check_prob(value, what: str, index: int) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ValidationError(f"token {index}: {what} must be a number, got {value!r}")
    v = float(value)
    if not (0.0 <= v <= 1.0) or not math.isfinite(v):
        raise ValidationError(f"token {index}: {what}={v} outside [0, 1]")
    return v


def parse_asr(data: bytes | str, patient_speaker: str = "") -> Transcript:
    """Parse an ASR hypothesis JSON document into a Transcript.

    The patient speaker id is not part of the ASR schema; it comes from the
    session manifest and is threaded through here so downstream featurization
    can tell patient speech apart from the interviewer's.
    """
    text = _as_text(data)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed ASR JSON at byte {exc.pos}: {exc.msg}") from exc
    if not isinstance(doc, dict) or "session_id" not in doc or "turns" not in doc:
        raise ParseError("ASR JSON must be an object with 'session_id' and 'turns'")
    session_id = doc["session_id"]
    if not isinstance(session_id, str) or not session_id:
        raise ValidationError("session_id must be a non-empty string")
    if not isinstance(doc["turns"], list):
        raise ParseError("'turns' must be a list")

    tokens: list[WordToken] = []
    for turn in doc["turns"]:
        if not isinstance(turn, dict) or "speaker" not in turn or "words" not in turn:
            raise ParseError("each turn needs 'speaker' and 'words'")
        speaker = turn["speaker"]
        if not isinstance(speaker, str) or not speaker:
            raise ValidationError("turn speaker must be a non-empty string")
        for word in turn["words"]:
            index = len(tokens)
            if not isinstance(word, dict):
                raise ParseError(f"token {index}: word entries must be objects")
            for key in ("w", "start", "end", "conf"):
                if key not in word:
                    raise ParseError(f"token {index}: missing required field {key!r}")
            w = word["w"]
            if not isinstance(w, str):
                raise ValidationError(f"token {index}: 'w' must be a string")
            try:
                start = float(word["start"])
                end = float(word["end"])
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"token {index}: start/end must be numbers") from exc
            if not (math.isfinite(start) and math.isfinite(end)):
                raise ValidationError(f"token {index}: non-finite start/end")
            if start < 0:
                raise ValidationError(f"token {index}: start={start} is negative")
            if end < start:
                raise ValidationError(f"token {index}: end={end} earlier than start={start}")
            conf = _check_prob(word["conf"], "conf", index)
            lm_prob = None
            if "lm_prob" in word and word["lm_prob"] is not None:
                lm_prob = _check_prob(word["lm_prob"], "lm_prob", index)
            disfl = None
            if "disfl" in word and word["disfl"] is not None:
                disfl = word["disfl"]
                if disfl not in DISFL_TAGS:
                    raise ValidationError(
                        f"token {index}: unknown disfl tag {disfl!r}; expected one of {DISFL_TAGS}"
                    )
            tokens.append(
                WordToken(
                    text=w,
                    start=start,
                    end=end,
                    speaker=speaker,
                    asr_conf=conf,
                    lm_prob=lm_prob,
                    disfl_tag=disfl,
                )
            )
    # Canonical temporal order; stable sort keeps original order for ties.
    tokens.sort(key=lambda t: t.start)
    return Transcript(session_id=session_id, tokens=tuple(tokens), patient_speaker=patient_speaker)


def serialize_transcript(transcript: Transcript) -> str:
    """Emit the ASR JSON document for a Transcript.

    Consecutive tokens with the same speaker are grouped into one turn, so
    ``parse_asr(serialize_transcript(t), t.patient_speaker)`` reproduces ``t``.
    """
    turns: list[dict] = []
    for tok in transcript.tokens:
        word: dict = {"w": tok.text, "start": tok.start, "end": tok.end, "conf": tok.asr_conf}
        if tok.lm_prob is not None:
            word["lm_prob"] = tok.lm_prob
        if tok.disfl_tag is not None:
            word["disfl"] = tok.disfl_tag
        if turns and turns[-1]["speaker"] == tok.speaker:
            turns[-1]["words"].append(word)
        else:
            turns.append({"speaker": tok.speaker, "words": [word]})
    return json.dumps({"session_id": transcript.session_id, "turns": turns})


def parse_frames(data: bytes | str, session_id: str = "", rate: float = 100.0) -> FrameMatrix:
    """Parse a frames CSV (feature-name header, then one row per frame).

    Empty cells mean "no audio data" and become 0.0; non-finite literals are
    treated the same way, so the returned matrix never carries NaN/Inf.
    Line numbers in errors are 1-based and count the header.
    """
    text = _as_text(data)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("frames CSV is empty") from None
    names = tuple(h.strip() for h in header)
    n_cols = len(names)
    if n_cols == 0 or any(not n for n in names):
        raise ParseError("frames CSV header must name every feature column")

    rows: list[np.ndarray] = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue  # blank line
        if len(row) != n_cols:
            raise ParseError(f"line {line_no}: expected {n_cols} cells, got {len(row)}")
        values = np.zeros(n_cols, dtype=np.float64)
        for j, cell in enumerate(row):
            s = cell.strip()
            if not s:
                continue  # missing audio data -> 0.0
            try:
                v = float(s)
            except ValueError:
                raise ParseError(f"line {line_no}, column {j + 1}: non-numeric cell {s!r}") from None
            if math.isfinite(v):
                values[j] = v
        rows.append(values)
    frames = np.vstack(rows) if rows else np.zeros((0, n_cols), dtype=np.float64)
    return FrameMatrix(session_id=session_id, frames=frames, feature_names=names, rate=rate)


def _parse_binary_label(cell: str, column: str, line_no: int) -> int | None:
    s = cell.strip()
    if not s:
        return None
    if s not in ("0", "1"):
        raise ValidationError(f"line {line_no}: {column} must be 0, 1 or empty, got {s!r}")
    return int(s)


def load_manifest(data: bytes | str) -> list[SessionRecord]:
    """Parse the session manifest CSV; output order equals file row order."""
    text = _as_text(data)
    reader = csv.reader(io.StringIO(text))
    try:
        header = tuple(h.strip() for h in next(reader))
    except StopIteration:
        raise ParseError("manifest CSV is empty") from None
    if header != MANIFEST_HEADER:
        raise ParseError(f"manifest header must be {','.join(MANIFEST_HEADER)}, got {','.join(header)}")

    records: list[SessionRecord] = []
    seen: set[str] = set()
    for line_no, row in enumerate(reader, start=2):
        if len(row) != len(MANIFEST_HEADER):
            raise ParseError(f"line {line_no}: expected {len(MANIFEST_HEADER)} cells, got {len(row)}")
        sid, frames_path, asr_path, patient_speaker, ad_s, mmse_s, decline_s = (c.strip() for c in row)
        if not sid:
            raise ValidationError(f"line {line_no}: empty session_id")
        if sid in seen:
            raise ValidationError(f"line {line_no}: duplicate session_id {sid!r}")
        seen.add(sid)
        if not frames_path or not asr_path:
            raise ValidationError(f"line {line_no}: frames_path and asr_path are required")
        if not patient_speaker:
            raise ValidationError(f"line {line_no}: patient_speaker is required")
        ad = _parse_binary_label(ad_s, "ad", line_no)
        decline = _parse_binary_label(decline_s, "decline", line_no)
        mmse: int | None = None
        if mmse_s:
            try:
                mmse = int(mmse_s)
            except ValueError:
                raise ValidationError(f"line {line_no}: mmse must be an integer, got {mmse_s!r}") from None
            if not (0 <= mmse <= 30):
                raise ValidationError(f"line {line_no}: mmse={mmse} outside [0, 30]")
        if ad is None and mmse is None and decline is None:
            raise ValidationError(f"line {line_no}: no label (ad, mmse and decline all empty)")
        records.append(
            SessionRecord(
                session_id=sid,
                frames_path=frames_path,
                asr_path=asr_path,
                patient_speaker=patient_speaker,
                ad_label=ad,
                mmse=mmse,
                decline_label=decline,
            )
        )
    return records
