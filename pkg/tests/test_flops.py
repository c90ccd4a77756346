import pytest

from scjd.config import RunConfig
from scjd.flops import count_flops, flops_report, instrumented_flops, mac_breakdown
from scjd.posenet import STUDENT_FULL, TEACHER_FULL, ModelConfig


@pytest.mark.parametrize("cfg", [
    ModelConfig(frames=3, joints=4, embed_dim=8, depth=1, heads=2),
    ModelConfig(frames=9, embed_dim=16, depth=2, role="student", upsample_stride=3, head_dim=32),
    ModelConfig(frames=9, embed_dim=16, depth=0, role="student"),
    ModelConfig(frames=5, joints=6, embed_dim=8, depth=1, heads=4, mlp_ratio=3.0, role="student", upsample_stride=5, head_dim=6),
])
def test_analytic_equals_twice_instrumented(cfg):
    assert count_flops(cfg) == 2 * instrumented_flops(cfg)


def test_default_run_configs_consistent():
    cfg = RunConfig()
    for model in (cfg.teacher, cfg.student):
        assert flops_report(model).consistent


def test_hand_count_tiny_model():
    # J=1, C=2, f=1, depth 0: projection 1*1*2*2, head 2*1 + 2*3
    cfg = ModelConfig(frames=1, joints=1, embed_dim=2, depth=0, heads=1)
    assert mac_breakdown(cfg) == {"joint_projection": 4, "spatial_encoder": 0, "temporal_encoder": 0, "head": 8}
    assert count_flops(cfg) == 24


def test_reference_ratio_under_quarter():
    ratio = count_flops(STUDENT_FULL) / count_flops(TEACHER_FULL)
    assert ratio < 0.25
    assert ratio == pytest.approx(0.1043, abs=1e-3)  # frozen from the analytic formula


def test_frozen_reference_counts():
    # teacher by hand, in MACs: projection 88,128 + spatial 4*81*157,760 + temporal 4*198,904,896 + head 71,808
    assert count_flops(TEACHER_FULL) == 2 * (88_128 + 51_114_240 + 795_619_584 + 71_808) == 1_693_787_520
    assert count_flops(STUDENT_FULL) == 176_664_000
    assert count_flops(ModelConfig(frames=27, embed_dim=16, depth=4, role="student")) == 140_606_592


def test_breakdown_sums_and_training_heads_extra():
    cfg = RunConfig().student
    r = flops_report(cfg, instrument=False)
    assert sum(r.breakdown.values()) == r.analytic_flops and r.instrumented_multiplies is None
    extra = mac_breakdown(cfg, include_training_heads=True, teacher_embed_dim=32)["projection_head"]
    assert count_flops(cfg, True, 32) == r.analytic_flops + 2 * extra
    assert "upsampler" in r.breakdown and r.to_dict()["consistent"] is False
