"""Per-word lexical feature vectors: embeddings, disfluency, pauses, LM prob.

Each patient word becomes one feature row built from enabled blocks, in fixed
order: word embedding (case-folded lookup, zero vector for OOV), disfluency
one-hot (fluent, edit_term, repair_onset), pause one-hot (none, SP, LP), pause
duration in seconds clipped to [0, 10], and the raw language-model probability.

Pause durations use the gap from the previous patient word's end to the
current word's start, 0 for the first patient word and 0 whenever another
speaker's word sits between the two patient words (interviewer speech never
counts as a patient pause). A short pause (SP) is a gap in [0.5, 1.5) s; a
long pause (LP) is 1.5 s or more.
"""

from __future__ import annotations

import hashlib
import io
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError
from .ingest import Transcript

log = logging.getLogger(__name__)

DISFL_ORDER = ("fluent", "edit_term", "repair_onset")

PAUSE_NONE = "none"
PAUSE_SHORT = "SP"
PAUSE_LONG = "LP"
PAUSE_ORDER = (PAUSE_NONE, PAUSE_SHORT, PAUSE_LONG)

SHORT_PAUSE_MIN = 0.5
LONG_PAUSE_MIN = 1.5
PAUSE_DURATION_CAP = 10.0


@dataclass(frozen=True)
class EmbeddingTable:
    """Pretrained word vectors keyed by case-folded token."""

    vocab: dict[str, int]
    vectors: np.ndarray
    dim: int
    n_duplicates: int = 0
    sha256: str = ""

    @property
    def size(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class FeatureFlags:
    """Which optional lexical blocks are enabled (the embedding always is)."""

    disfl: bool = True
    pause: bool = True
    lm_prob: bool = True


@dataclass(frozen=True)
class PauseAnnotation:
    """Pause duration and category for each patient token, in temporal order.

    ``token_indices`` point into ``Transcript.tokens``.
    """

    token_indices: tuple[int, ...]
    durations: np.ndarray
    categories: tuple[str, ...]


@dataclass(frozen=True)
class LexicalSequence:
    """One feature row per patient word (N x D) plus the block layout."""

    session_id: str
    steps: np.ndarray
    layout: tuple[tuple[str, int], ...]
    lm_prob_present: bool = True

    @property
    def dim(self) -> int:
        return self.steps.shape[1]


def load_embeddings(data: bytes | str) -> EmbeddingTable:
    """Parse the plain-text embedding format: ``token v1 ... vE`` per line.

    Tokens are case-folded; duplicate tokens keep the first occurrence and the
    number of ignored lines is recorded on the table.
    """
    raw = data if isinstance(data, bytes) else data.encode("utf-8")
    digest = hashlib.sha256(raw).hexdigest()
    text = raw.decode("utf-8")

    vocab: dict[str, int] = {}
    rows: list[np.ndarray] = []
    dim = -1
    duplicates = 0
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 2:
            raise ParseError(f"line {line_no}: expected a token and at least one value")
        token = parts[0].casefold()
        try:
            values = np.array([float(p) for p in parts[1:]], dtype=np.float64)
        except ValueError:
            raise ParseError(f"line {line_no}: non-numeric embedding value") from None
        if dim < 0:
            dim = values.shape[0]
        elif values.shape[0] != dim:
            raise ParseError(
                f"line {line_no}: expected {dim} values, got {values.shape[0]}"
            )
        if token in vocab:
            duplicates += 1
            continue
        vocab[token] = len(rows)
        rows.append(values)
    if not rows:
        raise ParseError("embedding file contains no vectors")
    if duplicates:
        log.debug("embedding table: ignored %d duplicate token lines", duplicates)
    return EmbeddingTable(
        vocab=vocab,
        vectors=np.vstack(rows),
        dim=dim,
        n_duplicates=duplicates,
        sha256=digest,
    )


def embed(token: str, table: EmbeddingTable) -> np.ndarray:
    """Case-folded lookup; out-of-vocabulary tokens map to the zero vector."""
    idx = table.vocab.get(token.casefold())
    if idx is None:
        return np.zeros(table.dim, dtype=np.float64)
    return table.vectors[idx]


def categorize_pause(duration: float) -> str:
    if duration >= LONG_PAUSE_MIN:
        return PAUSE_LONG
    if duration >= SHORT_PAUSE_MIN:
        return PAUSE_SHORT
    return PAUSE_NONE


def compute_pauses(transcript: Transcript) -> PauseAnnotation:
    """Annotate every patient token with its preceding unfilled pause.

    The duration is max(0, start - previous patient word's end); it is 0 (and
    the category ``none``) for the first patient word and for any patient word
    with another speaker's word between it and the previous patient word.
    """
    indices: list[int] = []
    durations: list[float] = []
    categories: list[str] = []
    prev_patient_end: float | None = None
    interrupted = False
    for idx, tok in enumerate(transcript.tokens):
        if tok.speaker != transcript.patient_speaker:
            interrupted = True
            continue
        if prev_patient_end is None or interrupted:
            duration = 0.0
        else:
            duration = max(0.0, tok.start - prev_patient_end)
        indices.append(idx)
        durations.append(duration)
        categories.append(categorize_pause(duration))
        prev_patient_end = tok.end
        interrupted = False
    if not indices:
        raise ValidationError(
            f"session {transcript.session_id!r}: no tokens for patient speaker "
            f"{transcript.patient_speaker!r}"
        )
    return PauseAnnotation(
        token_indices=tuple(indices),
        durations=np.array(durations, dtype=np.float64),
        categories=tuple(categories),
    )


def lexical_layout(embedding_dim: int, flags: FeatureFlags) -> tuple[tuple[str, int], ...]:
    """Block layout for the given flags, in canonical order."""
    layout: list[tuple[str, int]] = [("embedding", embedding_dim)]
    if flags.disfl:
        layout.append(("disfl", len(DISFL_ORDER)))
    if flags.pause:
        layout.append(("pause", len(PAUSE_ORDER)))
        layout.append(("pause_duration", 1))
    if flags.lm_prob:
        layout.append(("lm_prob", 1))
    return tuple(layout)


def assemble_lexical(
    transcript: Transcript,
    pauses: PauseAnnotation,
    table: EmbeddingTable,
    flags: FeatureFlags = FeatureFlags(),
) -> LexicalSequence:
    """Build the per-word feature matrix: one row per patient token.

    Words without a disfluency tag count as fluent; a missing lm_prob becomes
    0.0 and the sequence records that the block carried no real values.
    """
    layout = lexical_layout(table.dim, flags)
    width = sum(size for _, size in layout)
    n = len(pauses.token_indices)
    if n == 0:
        raise ValidationError(f"session {transcript.session_id!r}: no patient tokens")
    steps = np.zeros((n, width), dtype=np.float64)
    any_lm = False
    for row, (tok_idx, duration, category) in enumerate(
        zip(pauses.token_indices, pauses.durations, pauses.categories)
    ):
        tok = transcript.tokens[tok_idx]
        col = 0
        steps[row, col : col + table.dim] = embed(tok.text, table)
        col += table.dim
        if flags.disfl:
            tag = tok.disfl_tag if tok.disfl_tag is not None else "fluent"
            steps[row, col + DISFL_ORDER.index(tag)] = 1.0
            col += len(DISFL_ORDER)
        if flags.pause:
            steps[row, col + PAUSE_ORDER.index(category)] = 1.0
            col += len(PAUSE_ORDER)
            steps[row, col] = min(max(float(duration), 0.0), PAUSE_DURATION_CAP)
            col += 1
        if flags.lm_prob:
            if tok.lm_prob is not None:
                steps[row, col] = tok.lm_prob
                any_lm = True
            col += 1
    return LexicalSequence(
        session_id=transcript.session_id,
        steps=steps,
        layout=layout,
        lm_prob_present=any_lm if flags.lm_prob else False,
    )


def lexical_to_csv(seq: LexicalSequence, transcript: Transcript, pauses: PauseAnnotation) -> str:
    """Debug dump: word, pause info and the assembled feature row."""
    out = io.StringIO()
    dims = [f"{name}_{i}" for name, size in seq.layout for i in range(size)]
    out.write("word,pause_s,pause_category," + ",".join(dims) + "\n")
    for row, (tok_idx, duration, category) in enumerate(
        zip(pauses.token_indices, pauses.durations, pauses.categories)
    ):
        tok = transcript.tokens[tok_idx]
        vals = ",".join(format(v, ".10g") for v in seq.steps[row])
        out.write(f"{tok.text},{duration:.3f},{category},{vals}\n")
    return out.getvalue()
