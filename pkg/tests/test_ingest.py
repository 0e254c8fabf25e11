"""Tests for the ASR / frames / manifest readers."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgfc.errors import ParseError, ValidationError
from mgfc.ingest import (
    Transcript,
    WordToken,
    load_manifest,
    parse_asr,
    parse_frames,
    serialize_transcript,
)


def asr_doc(words, session_id="s1", speaker="PAR"):
    return json.dumps({"session_id": session_id, "turns": [{"speaker": speaker, "words": words}]})


class TestParseAsr:
    def test_two_words_identity(self):
        doc = asr_doc(
            [
                {"w": "the", "start": 0.0, "end": 0.4, "conf": 0.9},
                {"w": "boy", "start": 0.9, "end": 1.2, "conf": 0.8},
            ]
        )
        t = parse_asr(doc, patient_speaker="PAR")
        assert t.session_id == "s1"
        assert t.patient_speaker == "PAR"
        assert [tok.text for tok in t.tokens] == ["the", "boy"]
        assert t.tokens[0].start == 0.0 and t.tokens[0].end == 0.4
        assert t.tokens[1].lm_prob is None and t.tokens[1].disfl_tag is None

    def test_end_before_start_names_token(self):
        doc = asr_doc(
            [
                {"w": "a", "start": 0.0, "end": 0.2, "conf": 0.9},
                {"w": "b", "start": 0.5, "end": 0.3, "conf": 0.9},
            ]
        )
        with pytest.raises(ValidationError, match="token 1"):
            parse_asr(doc)

    def test_sorts_by_start(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n = int(rng.integers(2, 12))
            starts = np.round(rng.uniform(0, 10, size=n), 3)
            words = [
                {"w": f"w{i}", "start": float(s), "end": float(s) + 0.1, "conf": 0.5}
                for i, s in enumerate(starts)
            ]
            t = parse_asr(asr_doc(words))
            expected = sorted((float(s) for s in starts))
            assert [tok.start for tok in t.tokens] == expected

    def test_stable_sort_ties(self):
        words = [
            {"w": "x", "start": 1.0, "end": 1.1, "conf": 0.5},
            {"w": "y", "start": 1.0, "end": 1.2, "conf": 0.5},
            {"w": "z", "start": 0.5, "end": 0.6, "conf": 0.5},
        ]
        t = parse_asr(asr_doc(words))
        assert [tok.text for tok in t.tokens] == ["z", "x", "y"]

    def test_malformed_json_reports_byte_offset(self):
        with pytest.raises(ParseError, match=r"byte \d+"):
            parse_asr('{"session_id": "s1", "turns": [')

    def test_unknown_disfl_tag(self):
        doc = asr_doc([{"w": "a", "start": 0.0, "end": 0.1, "conf": 0.9, "disfl": "hmm"}])
        with pytest.raises(ValidationError, match="disfl"):
            parse_asr(doc)

    def test_conf_out_of_range(self):
        doc = asr_doc([{"w": "a", "start": 0.0, "end": 0.1, "conf": 1.5}])
        with pytest.raises(ValidationError, match="conf"):
            parse_asr(doc)

    def test_lm_prob_out_of_range(self):
        doc = asr_doc([{"w": "a", "start": 0.0, "end": 0.1, "conf": 0.5, "lm_prob": -0.1}])
        with pytest.raises(ValidationError, match="lm_prob"):
            parse_asr(doc)

    def test_negative_start(self):
        doc = asr_doc([{"w": "a", "start": -1.0, "end": 0.1, "conf": 0.5}])
        with pytest.raises(ValidationError, match="negative"):
            parse_asr(doc)

    def test_optional_fields_preserved(self):
        doc = asr_doc(
            [{"w": "a", "start": 0.0, "end": 0.1, "conf": 0.5, "lm_prob": 0.25, "disfl": "edit_term"}]
        )
        tok = parse_asr(doc).tokens[0]
        assert tok.lm_prob == 0.25
        assert tok.disfl_tag == "edit_term"


@st.composite
def transcripts(draw):
    n = draw(st.integers(min_value=1, max_value=12))
    tokens = []
    cursor = 0.0
    for i in range(n):
        start = cursor + draw(st.floats(min_value=0.0, max_value=2.0, allow_nan=False))
        end = start + draw(st.floats(min_value=0.0, max_value=1.0, allow_nan=False))
        speaker = draw(st.sampled_from(["PAR", "INT"]))
        lm = draw(st.one_of(st.none(), st.floats(min_value=0.0, max_value=1.0, allow_nan=False)))
        tag = draw(st.one_of(st.none(), st.sampled_from(["fluent", "edit_term", "repair_onset"])))
        tokens.append(
            WordToken(
                text=f"w{i}",
                start=start,
                end=end,
                speaker=speaker,
                asr_conf=draw(st.floats(min_value=0.0, max_value=1.0, allow_nan=False)),
                lm_prob=lm,
                disfl_tag=tag,
            )
        )
        cursor = end
    return Transcript(session_id="sX", tokens=tuple(tokens), patient_speaker="PAR")


class TestRoundTrip:
    @settings(max_examples=60, deadline=None)
    @given(transcripts())
    def test_parse_serialize_identity(self, t):
        back = parse_asr(serialize_transcript(t), t.patient_speaker)
        assert back == t


class TestParseFrames:
    def test_literal_matrix(self):
        mat = parse_frames("f1,f2\n1.0,2.0\n3.5,-4.0\n0.25,1e3\n", session_id="s1")
        assert mat.feature_names == ("f1", "f2")
        np.testing.assert_array_equal(mat.frames, [[1.0, 2.0], [3.5, -4.0], [0.25, 1000.0]])
        assert mat.rate == 100.0

    def test_empty_cell_zero_filled(self):
        mat = parse_frames("f1,f2\n1.0,\n,2.0\n")
        np.testing.assert_array_equal(mat.frames, [[1.0, 0.0], [0.0, 2.0]])

    def test_ragged_row_reports_line(self):
        with pytest.raises(ParseError, match="line 3"):
            parse_frames("f1,f2\n1.0,2.0\n1.0\n")

    def test_non_numeric_cell(self):
        with pytest.raises(ParseError, match="non-numeric"):
            parse_frames("f1,f2\n1.0,abc\n")

    def test_non_finite_literals_become_zero(self):
        mat = parse_frames("f1,f2\nnan,inf\n-inf,1.5\n")
        np.testing.assert_array_equal(mat.frames, [[0.0, 0.0], [0.0, 1.5]])

    def test_never_emits_nan_inf(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            rows = int(rng.integers(1, 8))
            cols = int(rng.integers(1, 5))
            cells = []
            for _ in range(rows):
                row = []
                for _ in range(cols):
                    choice = rng.random()
                    if choice < 0.2:
                        row.append("")
                    elif choice < 0.3:
                        row.append(rng.choice(["nan", "inf", "-inf"]))
                    else:
                        row.append(format(rng.normal(), ".6g"))
                cells.append(",".join(row))
            text = ",".join(f"c{j}" for j in range(cols)) + "\n" + "\n".join(cells) + "\n"
            mat = parse_frames(text)
            assert np.all(np.isfinite(mat.frames))

    def test_empty_input_rejected(self):
        with pytest.raises(ParseError):
            parse_frames("")


MANIFEST_HEAD = "session_id,frames_path,asr_path,patient_speaker,ad,mmse,decline\n"


class TestLoadManifest:
    def test_full_row(self):
        recs = load_manifest(MANIFEST_HEAD + "s1,f.csv,a.json,PAR,1,20,0\n")
        assert len(recs) == 1
        r = recs[0]
        assert (r.ad_label, r.mmse, r.decline_label) == (1, 20, 0)
        assert r.frames_path == "f.csv" and r.patient_speaker == "PAR"

    def test_partial_labels_absent(self):
        recs = load_manifest(MANIFEST_HEAD + "s1,f.csv,a.json,PAR,,25,\n")
        assert recs[0].ad_label is None
        assert recs[0].mmse == 25
        assert recs[0].decline_label is None

    def test_no_label_is_error(self):
        with pytest.raises(ValidationError, match="no label"):
            load_manifest(MANIFEST_HEAD + "s1,f.csv,a.json,PAR,,,\n")

    def test_mmse_out_of_range(self):
        with pytest.raises(ValidationError, match="mmse"):
            load_manifest(MANIFEST_HEAD + "s1,f.csv,a.json,PAR,,31,\n")

    def test_duplicate_session_id(self):
        rows = "s1,f.csv,a.json,PAR,1,,\ns1,g.csv,b.json,PAR,0,,\n"
        with pytest.raises(ValidationError, match="duplicate"):
            load_manifest(MANIFEST_HEAD + rows)

    def test_order_preserved(self):
        rows = "".join(f"s{i},f.csv,a.json,PAR,1,,\n" for i in [3, 1, 2, 9])
        recs = load_manifest(MANIFEST_HEAD + rows)
        assert [r.session_id for r in recs] == ["s3", "s1", "s2", "s9"]

    def test_bad_header(self):
        with pytest.raises(ParseError, match="header"):
            load_manifest("id,frames\ns1,f.csv\n")

    def test_bad_binary_label(self):
        with pytest.raises(ValidationError, match="ad"):
            load_manifest(MANIFEST_HEAD + "s1,f.csv,a.json,PAR,2,,\n")
