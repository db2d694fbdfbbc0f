"""Detection model tests: distributions, validation, JSONL parsing, reports."""

import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uqdet.detmodel import (
    ClassDistribution,
    Detection,
    EvalReport,
    Frame,
    GroundTruthObject,
    attach_ground_truth,
    parse_class_map,
    parse_frames,
    parse_ground_truth,
    read_report,
    round_sig,
    softmax,
    write_frames,
    write_ground_truth,
    write_report,
)
from uqdet.errors import ContractError, NumericalError, ValidationError
from uqdet.geometry import Box7


def make_det(score=0.8, logits=(2.0, 0.0, 0.0), head_id=0, x=0.0):
    return Detection(
        box=Box7(x, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0),
        log_var=np.full(7, -2.0),
        cls=ClassDistribution(np.asarray(logits, dtype=float)),
        score=score,
        head_id=head_id,
    )


DET_LINE = {
    "box": [0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0],
    "log_var": [-2.0] * 7,
    "logits": [2.0, 0.0, 0.0],
    "score": 0.8,
}


def frames_jsonl(*frames):
    return io.StringIO("\n".join(json.dumps(f) for f in frames) + "\n")


class TestSoftmax:
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=6))
    def test_simplex(self, logits):
        p = softmax(np.array(logits))
        assert p.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(p >= 0)

    def test_shift_invariance(self):
        a = softmax(np.array([1.0, 2.0, 3.0]))
        b = softmax(np.array([101.0, 102.0, 103.0]))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_extreme_logits_stable(self):
        p = softmax(np.array([1000.0, 0.0, 0.0]))
        assert p[0] == 1.0
        assert p[1] == 0.0


class TestClassDistribution:
    def test_probs_from_logits(self):
        cls = ClassDistribution(np.array([1.0, 0.0, -1.0]))
        np.testing.assert_allclose(cls.probs, softmax(np.array([1.0, 0.0, -1.0])))
        assert cls.argmax == 0
        assert cls.max_prob == pytest.approx(cls.probs[0])
        assert cls.num_classes == 3

    def test_from_probs_round_trip(self):
        p = np.array([0.2, 0.5, 0.3])
        cls = ClassDistribution.from_probs(p)
        np.testing.assert_allclose(cls.probs, p, atol=1e-12)

    def test_from_probs_renormalizes_within_tolerance(self):
        p = np.array([0.2, 0.5, 0.3]) * (1.0 + 5e-7)
        cls = ClassDistribution.from_probs(p)
        assert cls.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_from_probs_rejects_bad_sum(self):
        with pytest.raises(ValidationError):
            ClassDistribution.from_probs(np.array([0.2, 0.5, 0.2]))

    def test_from_probs_rejects_negative(self):
        with pytest.raises(ValidationError):
            ClassDistribution.from_probs(np.array([-0.1, 0.6, 0.5]))

    def test_one_hot_probs_exact(self):
        cls = ClassDistribution.from_probs(np.array([0.0, 1.0, 0.0]))
        assert cls.probs[1] == 1.0
        assert cls.probs[0] == 0.0

    def test_needs_at_least_two_classes(self):
        with pytest.raises(ValidationError):
            ClassDistribution(np.array([1.0]))

    def test_logits_read_only(self):
        cls = ClassDistribution(np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            cls.logits[0] = 5.0


class TestDetectionValidation:
    def test_valid(self):
        det = make_det()
        assert det.score == 0.8
        assert det.head_id == 0

    def test_score_out_of_range(self):
        with pytest.raises(ValidationError):
            make_det(score=1.5)
        with pytest.raises(ValidationError):
            make_det(score=-0.1)

    def test_log_var_shape(self):
        with pytest.raises(ValidationError):
            Detection(
                box=Box7(0, 0, 0, 1, 1, 1, 0),
                log_var=np.zeros(6),
                cls=ClassDistribution(np.zeros(3)),
                score=0.5,
                head_id=0,
            )

    def test_log_var_bounds(self):
        for bad in (-21.0, 11.0):
            with pytest.raises(ValidationError):
                Detection(
                    box=Box7(0, 0, 0, 1, 1, 1, 0),
                    log_var=np.full(7, bad),
                    cls=ClassDistribution(np.zeros(3)),
                    score=0.5,
                    head_id=0,
                )

    def test_negative_head_id(self):
        with pytest.raises(ValidationError):
            make_det(head_id=-1)


class TestParseFrames:
    def test_round_trip(self):
        src = frames_jsonl({"frame_id": "a", "heads": [[DET_LINE], []]})
        frames = parse_frames(src)
        assert len(frames) == 1
        assert frames[0].frame_id == "a"
        assert len(frames[0].heads) == 2
        det = frames[0].heads[0][0]
        assert det.head_id == 0
        assert det.score == 0.8
        out = io.StringIO()
        write_frames(frames, out)
        assert parse_frames(io.StringIO(out.getvalue())) == frames

    def test_head_count_enforced(self):
        src = frames_jsonl(
            {"frame_id": "a", "heads": [[], []]},
            {"frame_id": "b", "heads": [[], [], []]},
        )
        with pytest.raises(ValidationError, match="head"):
            parse_frames(src)

    def test_num_heads_argument(self):
        src = frames_jsonl({"frame_id": "a", "heads": [[], []]})
        with pytest.raises(ValidationError):
            parse_frames(src, num_heads=3)

    def test_duplicate_frame_id(self):
        src = frames_jsonl(
            {"frame_id": "a", "heads": [[]]},
            {"frame_id": "a", "heads": [[]]},
        )
        with pytest.raises(ValidationError, match="duplicate"):
            parse_frames(src)

    def test_bad_json_reports_line_number(self):
        src = io.StringIO('{"frame_id": "a", "heads": [[]]}\nnot json\n')
        with pytest.raises(ValidationError, match="line 2"):
            parse_frames(src)

    def test_nan_rejected(self):
        line = dict(DET_LINE, score=None)
        text = json.dumps({"frame_id": "a", "heads": [[line]]}).replace("null", "NaN")
        with pytest.raises(ValidationError):
            parse_frames(io.StringIO(text))

    def test_log_var_clamped_by_parser(self):
        line = dict(DET_LINE, log_var=[-50.0] * 7)
        frames = parse_frames(frames_jsonl({"frame_id": "a", "heads": [[line]]}))
        assert np.all(frames[0].heads[0][0].log_var == -20.0)

    def test_num_classes_mismatch(self):
        src = frames_jsonl({"frame_id": "a", "heads": [[DET_LINE]]})
        with pytest.raises(ValidationError):
            parse_frames(src, num_classes=4)

    def test_blank_lines_ignored(self):
        src = io.StringIO('\n{"frame_id": "a", "heads": [[]]}\n\n')
        assert len(parse_frames(src)) == 1


class TestGroundTruth:
    def test_parse_and_round_trip(self):
        gt_line = {
            "frame_id": "a",
            "objects": [{"box": [0, 0, 0, 4, 2, 1.5, 0.2], "class_id": 1}],
        }
        gt = parse_ground_truth(frames_jsonl(gt_line))
        assert set(gt) == {"a"}
        assert gt["a"][0].class_id == 1
        out = io.StringIO()
        write_ground_truth(gt, out)
        assert parse_ground_truth(io.StringIO(out.getvalue())) == gt

    def test_class_id_range_checked(self):
        gt_line = {"frame_id": "a", "objects": [{"box": [0, 0, 0, 1, 1, 1, 0], "class_id": 5}]}
        with pytest.raises(ValidationError):
            parse_ground_truth(frames_jsonl(gt_line), num_classes=3)

    def test_attach_ground_truth(self):
        frames = parse_frames(frames_jsonl({"frame_id": "a", "heads": [[]]}))
        gt = {"a": (GroundTruthObject(Box7(0, 0, 0, 1, 1, 1, 0), 0),)}
        out = attach_ground_truth(frames, gt)
        assert out[0].ground_truth == gt["a"]

    def test_attach_requires_coverage(self):
        frames = parse_frames(frames_jsonl({"frame_id": "a", "heads": [[]]}))
        with pytest.raises(ValidationError):
            attach_ground_truth(frames, {})


class TestClassMap:
    def test_contiguous_ids(self):
        src = io.StringIO("# classes\n0 car\n1 pedestrian\n2 cyclist\n")
        cmap = parse_class_map(src)
        assert cmap == {0: "car", 1: "pedestrian", 2: "cyclist"}

    def test_gap_rejected(self):
        with pytest.raises(ValidationError):
            parse_class_map(io.StringIO("0 car\n2 cyclist\n"))

    def test_duplicate_rejected(self):
        with pytest.raises(ValidationError):
            parse_class_map(io.StringIO("0 car\n0 van\n"))


class TestRoundSig:
    def test_six_significant_digits(self):
        assert round_sig(1.23456789) == 1.23457
        assert round_sig(0.000123456789) == 0.000123457
        assert round_sig(123456789.0) == 123457000.0

    def test_exact_values_unchanged(self):
        assert round_sig(0.5) == 0.5
        assert round_sig(0.0) == 0.0
        assert round_sig(-2.0) == -2.0


class TestEvalReport:
    def payload(self):
        return {
            "map": 0.5,
            "partitions": {"tp": 1, "fp_ml": 2, "fp_bg": 3, "fn": 4},
            "scores": {"tp": {"nll_cls": 0.1}},
            "mce_cls": 0.01,
            "ce_reg": 0.02,
        }

    def test_missing_required_key(self):
        bad = self.payload()
        del bad["map"]
        with pytest.raises(ContractError):
            EvalReport(bad)

    def test_nan_rejected(self):
        bad = self.payload()
        bad["map"] = math.nan
        with pytest.raises(NumericalError):
            EvalReport(bad)

    def test_floats_rounded_to_six_digits(self):
        payload = self.payload()
        payload["map"] = 0.123456789123
        report = EvalReport(payload)
        assert report.data["map"] == 0.123457

    def test_serialization_round_trip(self):
        payload = self.payload()
        payload["nested"] = {"values": [1.0, None, True, "label"]}
        report = EvalReport(payload)
        sink = io.StringIO()
        write_report(report, sink)
        text = sink.getvalue()
        assert text.endswith("\n")
        again = read_report(io.StringIO(text))
        assert again.data == report.data
        sink2 = io.StringIO()
        write_report(again, sink2)
        assert sink2.getvalue() == text

    def test_keys_sorted(self):
        report = EvalReport(self.payload())
        text = report.to_json()
        keys = [line.split('"')[1] for line in text.splitlines() if line.startswith('  "')]
        assert keys == sorted(keys)

    def test_bool_survives_rounding(self):
        payload = self.payload()
        payload["flag"] = True
        assert EvalReport(payload).data["flag"] is True
