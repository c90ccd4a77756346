from dataclasses import replace

import numpy as np
import pytest

from scjd import tensor as T
from scjd.posenet import (
    STUDENT_FULL,
    TEACHER_FULL,
    ModelConfig,
    PoseFormer,
    count_params,
    param_breakdown,
)
from scjd.tensor import DimensionError, grad_check

TOY = ModelConfig(frames=3, joints=4, embed_dim=8, depth=1, heads=2, role="student")


def x2d(cfg, batch=2, seed=0):
    return np.random.default_rng(seed).standard_normal((batch, cfg.frames, cfg.joints, 2))


@pytest.mark.parametrize("cfg", [
    TOY,
    ModelConfig(frames=9, embed_dim=16, depth=2, role="student", upsample_stride=3, head_dim=32),
    ModelConfig(frames=27, embed_dim=32, depth=2),
    ModelConfig(frames=9, embed_dim=16, depth=0, role="student"),
])
def test_count_params_matches_instantiated(cfg):
    assert count_params(cfg) == PoseFormer(cfg, 0).num_params()


def test_reference_param_counts_round_to_published():
    # published sizes: teacher 9.60M, sparse student 2.80M, contiguous student 2.41M
    assert round(count_params(TEACHER_FULL) / 1e6, 2) == 9.60
    assert round(count_params(STUDENT_FULL) / 1e6, 2) == 2.80
    assert round(count_params(replace(STUDENT_FULL, frames=9)) / 1e6, 2) == 2.79
    dense = ModelConfig(frames=27, embed_dim=16, depth=4, role="student")
    assert round(count_params(dense) / 1e6, 2) == 2.41


def test_forward_shapes_and_taps():
    cfg = ModelConfig(frames=9, joints=17, embed_dim=16, depth=1, role="student", upsample_stride=3, head_dim=32)
    taps = PoseFormer(cfg, 1)(x2d(cfg))
    assert taps.frame_embeddings.shape == (2, 9, 17, 16)
    assert taps.temporal_out.shape == (2, 9, 17 * 16)
    assert taps.upsampled.shape == (2, 27, 17 * 32)
    assert taps.center_pred.shape == (2, 51)
    assert PoseFormer(TOY, 0)(x2d(TOY)).upsampled is None


def test_single_window_gets_batch_axis():
    m = PoseFormer(TOY, 0)
    assert m(x2d(TOY, batch=1)[0]).center_pred.shape == (1, 12)


def test_wrong_input_shape_is_dimension_error():
    m = PoseFormer(TOY, 0)
    with pytest.raises(DimensionError, match="expected"):
        m(np.zeros((1, 5, 4, 2)))


def test_invalid_config_rejected():
    assert any("frames_odd" in e for e in ModelConfig(frames=4).validate())
    assert any("heads" in e for e in ModelConfig(embed_dim=12, heads=8).validate())
    with pytest.raises(ValueError):
        PoseFormer(ModelConfig(frames=4), 0)


def test_same_seed_same_weights_and_names_are_role_prefixed():
    a, b = PoseFormer(TOY, 3), PoseFormer(TOY, 3)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.name == pb.name and pa.name.startswith("student.")
        np.testing.assert_array_equal(pa.data, pb.data)
    names = [p.name for p in a.parameters()]
    assert len(names) == len(set(names))


def test_predict_matches_forward_and_records_no_graph():
    m = PoseFormer(TOY, 0)
    x = x2d(TOY, batch=5)
    np.testing.assert_allclose(m.predict(x, batch_size=2), m(x).center_pred.data, rtol=0, atol=1e-12)
    assert m.predict(x[:0]).shape == (0, 12)


def test_batch_items_are_independent():
    m = PoseFormer(TOY, 0)
    x = x2d(TOY, batch=3)
    full = m(x).center_pred.data
    np.testing.assert_allclose(m(x[1:2]).center_pred.data[0], full[1], rtol=0, atol=1e-12)


def test_param_breakdown_sums_to_total():
    cfg = ModelConfig(frames=9, embed_dim=16, depth=1, role="student", upsample_stride=3, head_dim=32)
    br = param_breakdown(cfg)
    assert sum(br.values()) == count_params(cfg)
    assert {"joint_projection", "spatial_encoder", "spatial_norm", "temporal_encoder", "temporal_norm", "upsampler", "head"} <= set(br)


def test_end_to_end_gradcheck_toy_model():
    cfg = ModelConfig(frames=3, joints=4, embed_dim=8, depth=1, heads=2, role="student", upsample_stride=3, head_dim=4)
    m = PoseFormer(cfg, 2)
    x = x2d(cfg, batch=2, seed=5)
    w = np.random.default_rng(6).standard_normal((2, 12))
    assert grad_check(lambda: T.tsum(m(x).center_pred * w), m.parameters()) < 1e-4
