from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from scjd import config as C
from scjd.data import ConfigError, SamplerConfig


def names(cfg):
    return [n for n, _ in cfg.violations()]


def test_default_config_is_valid():
    assert C.RunConfig().violations() == []


def test_round_trip_lossless(tmp_path):
    cfg = C.RunConfig()
    C.save(cfg, tmp_path / "c.json")
    back = C.load(tmp_path / "c.json")
    assert back == cfg and C.dumps(back) == C.dumps(cfg)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 5), st.integers(1, 500), st.floats(0, 3.14))
def test_round_trip_property(seed, alpha, batch, yaw):
    cfg = C.RunConfig(seed=seed)
    cfg = replace(cfg, distill=replace(cfg.distill, alpha=alpha), optimizer=replace(cfg.optimizer, batch_size=batch),
                  data=replace(cfg.data, motion=replace(cfg.data.motion, yaw_range_rad=yaw)))
    assert C.loads(C.dumps(cfg)) == cfg


def test_each_cross_invariant_is_named():
    base = C.RunConfig()
    assert "sampler_matches_teacher" in names(replace(base, teacher=replace(base.teacher, frames=81)))
    assert "student_frames_match_stride" in names(replace(base, student=replace(base.student, frames=7)))
    assert "distill_stride_matches_sampler" in names(replace(base, distill=replace(base.distill, stride=9)))
    assert "upsampler_width_matches_teacher" in names(replace(base, student=replace(base.student, head_dim=16)))
    assert "stride_divides_teacher_frames" in names(replace(base, sampler=SamplerConfig(27, 4)))
    assert "data_sizes_valid" in names(replace(base, data=replace(base.data, num_frames=0)))
    assert "optimizer.batch_size_positive" in names(replace(base, optimizer=replace(base.optimizer, batch_size=0)))
    assert "teacher_optimizer.batch_size_positive" in names(
        replace(base, teacher_optimizer=replace(base.teacher_optimizer, batch_size=0))
    )


def test_check_raises_first_violation_and_counts_rest():
    base = C.RunConfig()
    bad = replace(base, sampler=SamplerConfig(27, 4), distill=replace(base.distill, stride=4))
    with pytest.raises(ConfigError) as ei:
        bad.check()
    assert ei.value.invariant == "stride_divides_teacher_frames" and "more" in str(ei.value)


def test_unknown_keys_and_bad_json_rejected(tmp_path):
    with pytest.raises(ConfigError) as ei:
        C.from_dict({"teacher": {"frames": 27, "widht": 3}})
    assert ei.value.invariant == "config_known_keys" and "widht" in str(ei.value)
    with pytest.raises(ConfigError) as ei:
        C.loads("{not json")
    assert ei.value.invariant == "config_parses"
    with pytest.raises(ConfigError) as ei:
        C.load(tmp_path / "missing.json")
    assert ei.value.invariant == "config_exists"


def test_partial_config_fills_defaults():
    cfg = C.from_dict({"seed": 5, "optimizer": {"epochs": 3}})
    assert cfg.seed == 5 and cfg.optimizer.epochs == 3 and cfg.teacher == C.RunConfig().teacher
