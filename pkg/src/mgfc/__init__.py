"""Multimodal gated-fusion sequence models for speech-based cognitive assessment.

The package turns ASR word hypotheses and frame-level acoustic features into
session-level predictions for three tasks (binary AD classification, MMSE
score regression, cognitive-decline classification) using bidirectional LSTM
branches per modality fused through gated highway layers, trained with Adam
on exact hand-derived gradients. See README.md for the pipeline walkthrough.
"""

from .acoustic import (
    FeatureWindow,
    FunctionalSequence,
    Scaler,
    SelectionMask,
    apply_scaler,
    compute_functionals,
    fit_scaler,
    make_windows,
    select_features,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    CheckpointError,
    MgfcError,
    ParseError,
    TrainingError,
    ValidationError,
)
from .ingest import (
    FrameMatrix,
    SessionRecord,
    Transcript,
    WordToken,
    load_manifest,
    parse_asr,
    parse_frames,
    serialize_transcript,
)
from .lexical import (
    EmbeddingTable,
    FeatureFlags,
    LexicalSequence,
    PauseAnnotation,
    assemble_lexical,
    compute_pauses,
    embed,
    load_embeddings,
)
from .model import (
    ArchConfig,
    BranchConfig,
    LateFusionParams,
    ModelParams,
    SessionPrediction,
    forward_fused,
    forward_unimodal,
    init_model,
    late_fuse,
    pair_windows,
    predict_session,
)
from .synth import SynthDataset, make_synthetic, synthesize, write_dataset
from .train import (
    EvalReport,
    SessionFeatures,
    TrainConfig,
    cross_validate,
    evaluate,
    featurize_records,
    featurize_session,
    grid_search,
    predict_sessions,
    split_folds,
    train_late,
    train_model,
)

__version__ = "0.1.0"
