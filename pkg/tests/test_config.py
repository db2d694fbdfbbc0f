"""Tests for the config grammar, PipelineConfig validation, and frame splits."""

import pytest

from uqdet.config import (
    PipelineConfig,
    load_pipeline_config,
    parse_config_text,
    split_frame_ids,
)
from uqdet.errors import ValidationError


class TestParseConfigText:
    def test_basic_lines(self):
        text = "heads = 4\nnms_iou=0.6\n  tp_iou =  0.7  \n"
        assert parse_config_text(text) == {"heads": "4", "nms_iou": "0.6", "tp_iou": "0.7"}

    def test_comments_and_blanks_ignored(self):
        text = "# a comment\n\nheads = 2\n   # indented comment\n\n"
        assert parse_config_text(text) == {"heads": "2"}

    def test_value_may_contain_equals(self):
        # partition() splits on the first '=' only
        assert parse_config_text("k = a=b") == {"k": "a=b"}

    def test_duplicate_key_rejected(self):
        with pytest.raises(ValidationError, match="line 3"):
            parse_config_text("heads = 2\n# x\nheads = 4\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ValidationError, match="line 1"):
            parse_config_text("heads 4")

    def test_empty_value_rejected(self):
        with pytest.raises(ValidationError, match="empty key or value"):
            parse_config_text("heads =")

    def test_empty_key_rejected(self):
        with pytest.raises(ValidationError, match="empty key or value"):
            parse_config_text("= 4")


class TestPipelineConfigValidation:
    def test_defaults_are_valid(self):
        cfg = PipelineConfig()
        assert cfg.heads == 2
        assert cfg.classes == 3
        assert cfg.tp_iou == 0.5
        assert cfg.split == "hash"

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(heads=0),
            dict(classes=1),
            dict(nms_iou=0.0),
            dict(nms_iou=1.0),
            dict(cluster_iou=-0.2),
            dict(cluster_metric="voxel"),
            dict(min_cluster_size=0),
            dict(min_cluster_size=5, heads=4),
            dict(tp_iou=0.1),
            dict(tp_iou=0.05),
            dict(iou_min=0.1),
            dict(iou_min=0.8, iou_max=0.6),
            dict(iou_max=1.2),
            dict(iou_step=0.0),
            dict(mce_bins=1),
            dict(ce_levels=1),
            dict(energy_samples=1),
            dict(split="random"),
            dict(calibrate_conditioning="marginal"),
            dict(background_class_id=3),
            dict(background_class_id=-1),
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValidationError):
            PipelineConfig(**kwargs)

    def test_tp_iou_just_above_floor_ok(self):
        cfg = PipelineConfig(tp_iou=0.11, iou_min=0.11, iou_max=0.11)
        assert cfg.tp_iou == 0.11

    def test_background_class_in_range_ok(self):
        cfg = PipelineConfig(classes=4, background_class_id=3)
        assert cfg.background_class_id == 3


class TestEffectiveMinClusterSize:
    @pytest.mark.parametrize("heads,expected", [(1, 1), (2, 2), (3, 2), (4, 3), (5, 3), (8, 5)])
    def test_strict_majority_default(self, heads, expected):
        assert PipelineConfig(heads=heads).effective_min_cluster_size == expected

    def test_explicit_override(self):
        cfg = PipelineConfig(heads=4, min_cluster_size=1)
        assert cfg.effective_min_cluster_size == 1


class TestSweepThresholds:
    def test_default_grid(self):
        grid = PipelineConfig().sweep_thresholds()
        assert len(grid) == 10
        assert grid[0] == 0.5
        assert grid[-1] == 0.95
        assert grid == tuple(round(0.5 + 0.05 * i, 10) for i in range(10))

    def test_endpoint_not_dropped_by_rounding(self):
        # 0.5 + 9*0.05 accumulates float error; the endpoint must survive
        grid = PipelineConfig(iou_min=0.5, iou_max=0.95, iou_step=0.05).sweep_thresholds()
        assert 0.95 in grid

    def test_single_threshold(self):
        assert PipelineConfig(iou_min=0.7, iou_max=0.7).sweep_thresholds() == (0.7,)

    def test_large_step_gives_only_min(self):
        assert PipelineConfig(iou_min=0.5, iou_max=0.6, iou_step=0.5).sweep_thresholds() == (0.5,)


class TestFromMapping:
    def test_types_coerced_from_strings(self):
        cfg = PipelineConfig.from_mapping(
            {
                "heads": "4",
                "nms_iou": "0.6",
                "cluster_metric": "3d",
                "class_aware_fp_ml": "false",
                "min_cluster_size": "3",
                "background_class_id": "none",
            }
        )
        assert cfg.heads == 4
        assert cfg.nms_iou == 0.6
        assert cfg.cluster_metric == "3d"
        assert cfg.class_aware_fp_ml is False
        assert cfg.min_cluster_size == 3
        assert cfg.background_class_id is None

    @pytest.mark.parametrize("raw,expected", [
        ("true", True), ("1", True), ("yes", True), ("ON", True),
        ("false", False), ("0", False), ("no", False), ("Off", False),
    ])
    def test_bool_spellings(self, raw, expected):
        cfg = PipelineConfig.from_mapping({"class_aware_fp_ml": raw})
        assert cfg.class_aware_fp_ml is expected

    def test_bad_bool_rejected(self):
        with pytest.raises(ValidationError, match="class_aware_fp_ml"):
            PipelineConfig.from_mapping({"class_aware_fp_ml": "maybe"})

    def test_bad_int_rejected(self):
        with pytest.raises(ValidationError, match="heads"):
            PipelineConfig.from_mapping({"heads": "two"})

    def test_none_spelling_for_optional_fields(self):
        cfg = PipelineConfig.from_mapping({"min_cluster_size": "None"})
        assert cfg.min_cluster_size is None

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError, match="unknown config key"):
            PipelineConfig.from_mapping({"head_count": "2"})

    def test_unknown_override_rejected(self):
        with pytest.raises(ValidationError, match="unknown config key"):
            PipelineConfig.from_mapping({}, head_count=2)

    def test_none_overrides_ignored(self):
        cfg = PipelineConfig.from_mapping({"heads": "4"}, heads=None, tp_iou=None)
        assert cfg.heads == 4
        assert cfg.tp_iou == 0.5

    def test_overrides_win_over_mapping(self):
        cfg = PipelineConfig.from_mapping({"heads": "4"}, heads=6)
        assert cfg.heads == 6

    def test_to_mapping_round_trip(self):
        cfg = PipelineConfig(heads=4, min_cluster_size=2, cluster_metric="3d", seed=7)
        again = PipelineConfig(**cfg.to_mapping())
        assert again == cfg


class TestLoadPipelineConfig:
    def test_none_path_gives_defaults(self):
        assert load_pipeline_config(None) == PipelineConfig()

    def test_file_plus_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("heads = 4\ntp_iou = 0.7\n# comment\n", encoding="utf-8")
        cfg = load_pipeline_config(str(path), tp_iou=0.6, seed=None)
        assert cfg.heads == 4
        assert cfg.tp_iou == 0.6
        assert cfg.seed == 0


class TestSplitFrameIds:
    def test_alternate_by_position(self):
        ids = [f"f{i}" for i in range(5)]
        recal, ev = split_frame_ids(ids, mode="alternate")
        assert recal == ["f0", "f2", "f4"]
        assert ev == ["f1", "f3"]

    def test_hash_membership_depends_only_on_id(self):
        ids = [f"frame_{i:06d}" for i in range(40)]
        recal_a, ev_a = split_frame_ids(ids, mode="hash")
        recal_b, ev_b = split_frame_ids(list(reversed(ids)), mode="hash")
        assert set(recal_a) == set(recal_b)
        assert set(ev_a) == set(ev_b)

    def test_hash_split_partitions_input(self):
        ids = [f"frame_{i:06d}" for i in range(200)]
        recal, ev = split_frame_ids(ids, mode="hash")
        assert sorted(recal + ev) == sorted(ids)
        assert not (set(recal) & set(ev))
        # sha1 parity is effectively a fair coin; a 5-sigma band is ~35
        assert abs(len(recal) - len(ev)) < 60
        assert recal and ev

    def test_order_preserved_within_halves(self):
        ids = [f"frame_{i:06d}" for i in range(50)]
        recal, ev = split_frame_ids(ids, mode="hash")
        assert recal == [f for f in ids if f in set(recal)]
        assert ev == [f for f in ids if f in set(ev)]

    def test_empty_input(self):
        assert split_frame_ids([], mode="hash") == ([], [])

    def test_unknown_mode(self):
        with pytest.raises(ValidationError, match="split mode"):
            split_frame_ids(["a"], mode="thirds")
