"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin.  The backend is chosen once at import
time from ``SCJD_KERNELS`` (``numba`` or ``numpy``); if unset, numba is used
when it imports cleanly.  Both backends are deterministic, but they do not
promise bit-identical results against each other (summation order differs).
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - import guard
    import numba
    from numba import njit

    HAVE_NUMBA = True
except Exception:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

_requested = os.environ.get("SCJD_KERNELS", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ValueError(f"SCJD_KERNELS must be 'numba' or 'numpy', got {_requested!r}")

BACKEND = "numba" if (HAVE_NUMBA and _requested != "numpy") else "numpy"


# ---------------------------------------------------------------------------
# conv1d / deconv1d on (N, C, T) arrays
# ---------------------------------------------------------------------------


def _span(j, stride, n):
    return slice(j, j + stride * (n - 1) + 1, stride)


def conv1d_forward_np(x, w, stride):
    n, _, t = x.shape
    c_out, _, k = w.shape
    t_out = (t - k) // stride + 1
    out = np.zeros((c_out, n, t_out))
    for j in range(k):
        out += np.tensordot(w[:, :, j], x[:, :, _span(j, stride, t_out)], axes=([1], [1]))
    return out.transpose(1, 0, 2).copy()


def conv1d_backward_np(x, w, g, stride):
    t_out = g.shape[2]
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for j in range(w.shape[2]):
        sl = _span(j, stride, t_out)
        gx[:, :, sl] += np.tensordot(w[:, :, j], g, axes=([0], [1])).transpose(1, 0, 2)
        gw[:, :, j] = np.tensordot(g, x[:, :, sl], axes=([0, 2], [0, 2]))
    return gx, gw


def deconv1d_forward_np(x, w, stride):
    n, _, t = x.shape
    _, c_out, k = w.shape
    out = np.zeros((c_out, n, (t - 1) * stride + k))
    for j in range(k):
        out[:, :, _span(j, stride, t)] += np.tensordot(w[:, :, j], x, axes=([0], [1]))
    return out.transpose(1, 0, 2).copy()


def deconv1d_backward_np(x, w, g, stride):
    t = x.shape[2]
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for j in range(w.shape[2]):
        gs = g[:, :, _span(j, stride, t)]
        gx += np.tensordot(w[:, :, j], gs, axes=([1], [1])).transpose(1, 0, 2)
        gw[:, :, j] = np.tensordot(x, gs, axes=([0, 2], [0, 2]))
    return gx, gw


# ---------------------------------------------------------------------------
# top-k frame selection for feature pooling
# ---------------------------------------------------------------------------


def topk_select_np(sims, offsets, valid, k):
    """Rank window slots by (-similarity, |offset|, slot) and keep ``k``.

    ``sims``/``valid`` are (R, W); ``offsets`` is (W,) and slots are already
    ordered by frame index.  Returns (R, k) slot indices; rows with fewer
    than ``k`` valid slots are padded with -1.
    """
    r, w = sims.shape
    key_sim = np.where(valid, -sims, np.inf)
    key_off = np.broadcast_to(np.abs(offsets), (r, w))
    key_slot = np.broadcast_to(np.arange(w), (r, w))
    order = np.lexsort((key_slot, key_off, key_sim), axis=-1)[:, :k].astype(np.int64)
    order[~np.take_along_axis(valid, order, axis=1)] = -1
    return order


# ---------------------------------------------------------------------------
# pose metrics
# ---------------------------------------------------------------------------


def joint_errors_np(pred, gt):
    """Euclidean error per joint: (N, J, 3) x2 -> (N, J)."""
    return np.sqrt(np.sum((pred - gt) ** 2, axis=-1))


def pck_curve_np(errors, thresholds):
    flat = errors.reshape(-1)
    return np.array([np.mean(flat < th) for th in thresholds])


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------


def forward_kinematics_np(local_rot, root_rot, offsets, parents):
    """Compose joint rotations down the tree.

    local_rot: (F, J, 3, 3); root_rot: (F, 3, 3); offsets: (J, 3) rest-pose
    bone vectors (row 0 unused); parents must be topologically ordered.
    Returns root-relative positions (F, J, 3).
    """
    f, j = local_rot.shape[:2]
    glob = np.empty((f, j, 3, 3))
    pos = np.zeros((f, j, 3))
    glob[:, 0] = root_rot @ local_rot[:, 0]
    for i in range(1, j):
        p = parents[i]
        pos[:, i] = pos[:, p] + glob[:, p] @ offsets[i]
        glob[:, i] = glob[:, p] @ local_rot[:, i]
    return pos


if HAVE_NUMBA:

    # Channel products below this use scalar loops; above it, per-sample BLAS.
    _SMALL = 64

    @njit(cache=True)
    def conv1d_forward_nb(x, w, stride):
        n, c_in, t = x.shape
        c_out, _, k = w.shape
        t_out = (t - k) // stride + 1
        out = np.zeros((n, c_out, t_out))
        if c_in * c_out <= _SMALL:
            for b in range(n):
                for o in range(c_out):
                    for s in range(t_out):
                        acc = 0.0
                        for c in range(c_in):
                            for j in range(k):
                                acc += w[o, c, j] * x[b, c, s * stride + j]
                        out[b, o, s] = acc
            return out
        xs = np.empty((c_in, n * t_out))
        for j in range(k):
            wj = np.ascontiguousarray(w[:, :, j])
            for b in range(n):
                for s in range(t_out):
                    xs[:, b * t_out + s] = x[b, :, s * stride + j]
            ys = np.dot(wj, xs)
            for b in range(n):
                out[b] += ys[:, b * t_out:(b + 1) * t_out]
        return out

    @njit(cache=True)
    def conv1d_backward_nb(x, w, g, stride):
        n, c_in, t = x.shape
        c_out, _, k = w.shape
        t_out = g.shape[2]
        gx = np.zeros_like(x)
        gw = np.zeros_like(w)
        if c_in * c_out <= _SMALL:
            for b in range(n):
                for o in range(c_out):
                    for s in range(t_out):
                        gv = g[b, o, s]
                        for c in range(c_in):
                            for j in range(k):
                                gw[o, c, j] += gv * x[b, c, s * stride + j]
                                gx[b, c, s * stride + j] += gv * w[o, c, j]
            return gx, gw
        gm = np.empty((c_out, n * t_out))
        for b in range(n):
            gm[:, b * t_out:(b + 1) * t_out] = g[b]
        xs = np.empty((n * t_out, c_in))
        for j in range(k):
            wjt = np.ascontiguousarray(w[:, :, j].T)
            for b in range(n):
                for s in range(t_out):
                    xs[b * t_out + s, :] = x[b, :, s * stride + j]
            gw[:, :, j] = np.dot(gm, xs)
            gxs = np.dot(wjt, gm)
            for b in range(n):
                for s in range(t_out):
                    gx[b, :, s * stride + j] += gxs[:, b * t_out + s]
        return gx, gw

    @njit(cache=True)
    def deconv1d_forward_nb(x, w, stride):
        n, c_in, t = x.shape
        _, c_out, k = w.shape
        out = np.zeros((n, c_out, (t - 1) * stride + k))
        if c_in * c_out <= _SMALL:
            for b in range(n):
                for c in range(c_in):
                    for s in range(t):
                        xv = x[b, c, s]
                        for o in range(c_out):
                            for j in range(k):
                                out[b, o, s * stride + j] += w[c, o, j] * xv
            return out
        xm = np.empty((c_in, n * t))
        for b in range(n):
            xm[:, b * t:(b + 1) * t] = x[b]
        for j in range(k):
            ys = np.dot(np.ascontiguousarray(w[:, :, j].T), xm)
            for b in range(n):
                for s in range(t):
                    out[b, :, s * stride + j] += ys[:, b * t + s]
        return out

    @njit(cache=True)
    def deconv1d_backward_nb(x, w, g, stride):
        n, c_in, t = x.shape
        _, c_out, k = w.shape
        gx = np.zeros_like(x)
        gw = np.zeros_like(w)
        if c_in * c_out <= _SMALL:
            for b in range(n):
                for c in range(c_in):
                    for s in range(t):
                        xv = x[b, c, s]
                        acc = 0.0
                        for o in range(c_out):
                            for j in range(k):
                                gv = g[b, o, s * stride + j]
                                acc += w[c, o, j] * gv
                                gw[c, o, j] += xv * gv
                        gx[b, c, s] = acc
            return gx, gw
        xm = np.empty((c_in, n * t))
        for b in range(n):
            xm[:, b * t:(b + 1) * t] = x[b]
        gs = np.empty((c_out, n * t))
        for j in range(k):
            for b in range(n):
                for s in range(t):
                    gs[:, b * t + s] = g[b, :, s * stride + j]
            gxm = np.dot(np.ascontiguousarray(w[:, :, j]), gs)
            for b in range(n):
                gx[b] += gxm[:, b * t:(b + 1) * t]
            gw[:, :, j] = np.dot(xm, gs.T)
        return gx, gw

    @njit(cache=True)
    def topk_select_nb(sims, offsets, valid, k):
        r, w = sims.shape
        out = np.empty((r, k), dtype=np.int64)
        taken = np.zeros(w, dtype=np.bool_)
        for row in range(r):
            taken[:] = False
            for slot in range(k):
                best = -1
                for c in range(w):
                    if taken[c] or not valid[row, c]:
                        continue
                    if best < 0:
                        best = c
                        continue
                    sc, sb = sims[row, c], sims[row, best]
                    if sc > sb or (sc == sb and abs(offsets[c]) < abs(offsets[best])):
                        best = c
                out[row, slot] = best
                if best >= 0:
                    taken[best] = True
        return out

    @njit(cache=True)
    def joint_errors_nb(pred, gt):
        n, j, d = pred.shape
        out = np.empty((n, j))
        for a in range(n):
            for b in range(j):
                s = 0.0
                for c in range(d):
                    diff = pred[a, b, c] - gt[a, b, c]
                    s += diff * diff
                out[a, b] = np.sqrt(s)
        return out

    @njit(cache=True)
    def pck_curve_nb(errors, thresholds):
        flat = errors.ravel()
        out = np.zeros(thresholds.shape[0])
        for i in range(thresholds.shape[0]):
            hits = 0
            for e in flat:
                if e < thresholds[i]:
                    hits += 1
            out[i] = hits / flat.shape[0]
        return out

    @njit(cache=True)
    def forward_kinematics_nb(local_rot, root_rot, offsets, parents):
        f, j = local_rot.shape[:2]
        pos = np.zeros((f, j, 3))
        glob = np.empty((j, 3, 3))
        for t in range(f):
            glob[0] = np.dot(root_rot[t], local_rot[t, 0])
            for i in range(1, j):
                p = parents[i]
                for a in range(3):
                    s = 0.0
                    for b in range(3):
                        s += glob[p, a, b] * offsets[i, b]
                    pos[t, i, a] = pos[t, p, a] + s
                glob[i] = np.dot(glob[p], local_rot[t, i])
        return pos


_IMPLS = {
    "numpy": {
        "conv1d_forward": conv1d_forward_np,
        "conv1d_backward": conv1d_backward_np,
        "deconv1d_forward": deconv1d_forward_np,
        "deconv1d_backward": deconv1d_backward_np,
        "topk_select": topk_select_np,
        "joint_errors": joint_errors_np,
        "pck_curve": pck_curve_np,
        "forward_kinematics": forward_kinematics_np,
    }
}
if HAVE_NUMBA:
    _IMPLS["numba"] = {
        "conv1d_forward": conv1d_forward_nb,
        "conv1d_backward": conv1d_backward_nb,
        "deconv1d_forward": deconv1d_forward_nb,
        "deconv1d_backward": deconv1d_backward_nb,
        "topk_select": topk_select_nb,
        "joint_errors": joint_errors_nb,
        "pck_curve": pck_curve_nb,
        "forward_kinematics": forward_kinematics_nb,
    }


def get(name: str, backend: str | None = None):
    """Look up a kernel by name for ``backend`` (default: the active one)."""
    return _IMPLS[backend or BACKEND][name]


def available_backends() -> list[str]:
    return list(_IMPLS)
