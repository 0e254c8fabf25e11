"""Tests for the synthetic dataset generator."""

import numpy as np
import pytest

from mgfc.errors import ValidationError
from mgfc.ingest import load_manifest, parse_asr, parse_frames
from mgfc.lexical import compute_pauses, load_embeddings
from mgfc.synth import OOV_TOKENS, make_synthetic, synthesize, write_dataset

from oracles import best_threshold_accuracy


def session_gap_means(data):
    means, labels = [], []
    for s in data.sessions:
        means.append(float(compute_pauses(s.transcript).durations.mean()))
        labels.append(s.record.ad_label)
    return np.array(means), np.array(labels)


class TestSynthesize:
    def test_validations(self):
        with pytest.raises(ValidationError):
            synthesize(1, 3, 1.0)
        with pytest.raises(ValidationError):
            synthesize(1, 7, 1.0)
        with pytest.raises(ValidationError):
            synthesize(1, 8, 1.5)

    def test_balanced_alternating_labels(self):
        data = synthesize(5, 10, 0.7)
        labels = [s.record.ad_label for s in data.sessions]
        assert labels == [0, 1] * 5
        assert all(s.record.decline_label == s.record.ad_label for s in data.sessions)

    def test_mmse_formula_and_range(self):
        data = synthesize(3, 40, 1.0)
        for s in data.sessions:
            expected = int(np.clip(29 - round(14 * s.severity), 10, 30))
            assert s.record.mmse == expected
            assert 10 <= s.record.mmse <= 30

    def test_separation_zero_means_zero_severity(self):
        data = synthesize(2, 8, 0.0)
        assert all(s.severity == 0.0 for s in data.sessions)
        assert all(s.record.mmse == 29 for s in data.sessions)

    def test_embeddings_parse_and_oov_excluded(self):
        data = synthesize(4, 6, 0.5, embed_dim=9)
        table = load_embeddings(data.embedding_text)
        assert table.dim == 9
        for tok in OOV_TOKENS:
            assert tok not in table.vocab

    def test_transcripts_have_patient_speech_and_sorted_times(self):
        data = synthesize(6, 12, 1.0)
        for s in data.sessions:
            starts = [t.start for t in s.transcript.tokens]
            assert starts == sorted(starts)
            assert any(t.speaker == "PAR" for t in s.transcript.tokens)

    def test_frames_shape_and_constant_column(self):
        data = synthesize(7, 4, 0.3, n_features=10)
        for s in data.sessions:
            assert s.frames.frames.shape[1] == 10
            np.testing.assert_array_equal(s.frames.frames[:, -1], 0.7)
            assert s.frames.frames.shape[0] >= 200

    def test_in_memory_determinism(self):
        a = synthesize(11, 8, 0.8)
        b = synthesize(11, 8, 0.8)
        for sa, sb in zip(a.sessions, b.sessions):
            assert sa.transcript == sb.transcript
            np.testing.assert_array_equal(sa.frames.frames, sb.frames.frames)
        assert a.embedding_text == b.embedding_text


class TestSignals:
    def test_pause_threshold_classifies(self):
        data = synthesize(1, 200, 1.0)
        means, labels = session_gap_means(data)
        assert best_threshold_accuracy(means, labels) >= 0.9

    def test_no_signal_at_zero_separation(self):
        # Monte Carlo over 100 seeds: the label correlation of the two main
        # session summaries stays below 0.2 in at least 95 of them
        ok = 0
        for seed in range(100):
            data = synthesize(seed, 200, 0.0)
            gap_means, labels = session_gap_means(data)
            lm_means = np.array([
                np.mean([t.lm_prob for t in s.transcript.tokens if t.speaker == "PAR"])
                for s in data.sessions
            ])
            y = labels.astype(float)
            r_gap = abs(np.corrcoef(gap_means, y)[0, 1])
            r_lm = abs(np.corrcoef(lm_means, y)[0, 1])
            if r_gap < 0.2 and r_lm < 0.2:
                ok += 1
        assert ok >= 95

    def test_mean_gap_shift_tracks_separation(self):
        data = synthesize(21, 120, 1.0)
        means, labels = session_gap_means(data)
        shift = means[labels == 1].mean() - means[labels == 0].mean()
        assert 0.6 <= shift <= 1.3
        weak = synthesize(21, 120, 0.3)
        w_means, w_labels = session_gap_means(weak)
        w_shift = w_means[w_labels == 1].mean() - w_means[w_labels == 0].mean()
        assert w_shift < shift


class TestWriteDataset:
    def test_byte_identical_for_same_seed(self, tmp_path):
        p1 = make_synthetic(3, 6, 0.9, tmp_path / "a")
        p2 = make_synthetic(3, 6, 0.9, tmp_path / "b")
        files1 = sorted(f.relative_to(tmp_path / "a") for f in (tmp_path / "a").rglob("*") if f.is_file())
        files2 = sorted(f.relative_to(tmp_path / "b") for f in (tmp_path / "b").rglob("*") if f.is_file())
        assert files1 == files2
        for rel in files1:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_different_seed_differs(self, tmp_path):
        make_synthetic(3, 6, 0.9, tmp_path / "a")
        make_synthetic(4, 6, 0.9, tmp_path / "b")
        assert (tmp_path / "a" / "manifest.csv").read_bytes() != (
            tmp_path / "b" / "manifest.csv"
        ).read_bytes() or (tmp_path / "a" / "frames/s0001.csv").read_bytes() != (
            tmp_path / "b" / "frames/s0001.csv"
        ).read_bytes()

    def test_files_parse_back(self, tmp_path):
        data = synthesize(8, 4, 1.0)
        paths = write_dataset(data, tmp_path)
        records = load_manifest(paths["manifest"].read_bytes())
        assert [r.session_id for r in records] == [s.record.session_id for s in data.sessions]
        for rec, s in zip(records, data.sessions):
            frames = parse_frames((tmp_path / rec.frames_path).read_bytes(), rec.session_id)
            assert frames.frames.shape == s.frames.frames.shape
            np.testing.assert_allclose(frames.frames, s.frames.frames, atol=5e-5)
            transcript = parse_asr((tmp_path / rec.asr_path).read_bytes(), rec.patient_speaker)
            assert transcript == s.transcript
        table = load_embeddings(paths["embeddings"].read_bytes())
        assert table.size > 0
