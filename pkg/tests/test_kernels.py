import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scjd import _kernels as K

pytestmark = pytest.mark.skipif("numba" not in K.available_backends(), reason="numba not installed")


def rnd(seed, *shape):
    return np.random.default_rng(seed).standard_normal(shape)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 4))
def test_conv_kernels_agree(seed, stride, k):
    x, w = rnd(seed, 2, 3, 11), rnd(seed + 1, 4, 3, k)
    a = K.get("conv1d_forward", "numpy")(x, w, stride)
    b = K.get("conv1d_forward", "numba")(x, w, stride)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    g = rnd(seed + 2, *a.shape)
    for ga, gb in zip(K.get("conv1d_backward", "numpy")(x, w, g, stride), K.get("conv1d_backward", "numba")(x, w, g, stride)):
        np.testing.assert_allclose(ga, gb, rtol=0, atol=1e-12)
    xd, wd = rnd(seed + 3, 2, 4, 5), rnd(seed + 4, 4, 3, k)
    a = K.get("deconv1d_forward", "numpy")(xd, wd, stride)
    np.testing.assert_allclose(a, K.get("deconv1d_forward", "numba")(xd, wd, stride), rtol=0, atol=1e-12)
    g = rnd(seed + 5, *a.shape)
    for ga, gb in zip(K.get("deconv1d_backward", "numpy")(xd, wd, g, stride), K.get("deconv1d_backward", "numba")(xd, wd, g, stride)):
        np.testing.assert_allclose(ga, gb, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_topk_kernels_agree_with_ties_and_padding(seed, k):
    rng = np.random.default_rng(seed)
    sims = rng.integers(-2, 3, size=(5, 7)).astype(float)  # many ties
    offsets = np.arange(7) - 3
    valid = rng.random((5, 7)) < 0.6
    a = K.get("topk_select", "numpy")(sims, offsets, valid, k)
    b = K.get("topk_select", "numba")(sims, offsets, valid, k)
    np.testing.assert_array_equal(a, b)
    for r in range(5):
        n_valid = int(valid[r].sum())
        assert np.all(a[r, n_valid:] == -1)
        assert np.all(valid[r, a[r, :min(k, n_valid)]])


def test_metric_and_fk_kernels_agree():
    p, g = rnd(1, 6, 17, 3), rnd(2, 6, 17, 3)
    e = K.get("joint_errors", "numpy")(p, g)
    np.testing.assert_allclose(e, K.get("joint_errors", "numba")(p, g), rtol=0, atol=1e-12)
    th = np.linspace(0.1, 3, 9)
    np.testing.assert_array_equal(K.get("pck_curve", "numpy")(e, th), K.get("pck_curve", "numba")(e, th))
    from scipy.spatial.transform import Rotation
    from scjd.skeleton import build_h36m17

    topo = build_h36m17()
    local = Rotation.from_rotvec(rnd(3, 4 * 17, 3) * 0.3).as_matrix().reshape(4, 17, 3, 3)
    root = Rotation.from_rotvec(rnd(4, 4, 3)).as_matrix()
    parents = np.asarray(topo.parent, dtype=np.int64)
    a = K.get("forward_kinematics", "numpy")(local, root, topo.rest_offsets(), parents)
    b = K.get("forward_kinematics", "numba")(local, root, topo.rest_offsets(), parents)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)
