"""Teacher-to-student distillation losses.

Shapes follow the batched taps of :class:`scjd.posenet.PoseFormer`:
student joint embeddings ``(B, fS, J, CS)``, teacher joint embeddings
``(B, fT, J, CT)``, temporal features ``(B, f, J*C)``.  Teacher quantities
are plain arrays, so no gradient can reach the teacher.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from . import tensor as T
from .nn import Linear, Module
from .posenet import DeconvUpsampler
from .tensor import Tensor

__all__ = [
    "DistillConfig",
    "NumericalAbort",
    "ProjectionHead",
    "DeconvUpsampler",
    "TeacherTaps",
    "dff_pool",
    "pool_targets",
    "emb_loss",
    "masked_gram",
    "attn_loss",
    "upsample_student",
    "temp_loss",
    "mpjpe_loss",
    "total_loss",
]


class NumericalAbort(FloatingPointError):
    """A loss component or gradient went non-finite."""

    def __init__(self, what: str, detail: str = ""):
        super().__init__(f"non-finite value in {what}" + (f": {detail}" if detail else ""))
        self.what = what


@dataclass(frozen=True)
class DistillConfig:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.01
    warmup_epochs: int = 20
    top_k: int = 3
    stride: int = 3
    mask_self_loops: bool = True

    def validate(self) -> list[str]:
        errs = []
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                errs.append(f"{name}_nonnegative: {name}={getattr(self, name)}")
        if not 1 <= self.top_k <= 2 * self.stride - 1:
            errs.append(f"top_k_within_window: top_k={self.top_k} not in [1, {2 * self.stride - 1}]")
        if self.warmup_epochs < 0:
            errs.append(f"warmup_nonnegative: warmup_epochs={self.warmup_epochs}")
        if self.stride < 1:
            errs.append(f"stride_positive: stride={self.stride}")
        return errs

    def to_dict(self) -> dict:
        return asdict(self)


class TeacherTaps(NamedTuple):
    frame_embeddings: np.ndarray  # (B, fT, J, CT)
    temporal_out: np.ndarray  # (B, fT, J*CT)


class ProjectionHead(Module):
    """Per-joint linear map from student to teacher embedding width (training only)."""

    def __init__(self, c_student: int, c_teacher: int, rng: np.random.Generator):
        self.fc = Linear(c_student, c_teacher, rng)
        self.assign_names("distill.proj")

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc(x)


# ---------------------------------------------------------------------------
# dynamic feature fusion
# ---------------------------------------------------------------------------


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine similarity over the last axis; zero vectors score 0."""
    num = np.sum(a * b, axis=-1)
    den = np.sqrt(np.sum(a * a, axis=-1)) * np.sqrt(np.sum(b * b, axis=-1))
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def dff_pool(teacher_window, student_frame_proj, k: int, offsets=None) -> np.ndarray:
    """Mean of the ``k`` teacher frames most cosine-similar to the student frame.

    ``teacher_window`` is a sequence of J x CT frame features in frame order;
    ``offsets`` gives each frame's temporal offset from the aligned position
    (default: centered on the middle of the window).  Ties go to the smaller
    absolute offset, then to the earlier frame.
    """
    win = np.asarray(teacher_window, dtype=np.float64)
    if win.shape[0] == 0:
        raise ValueError("dff_pool: empty teacher window")
    w = win.shape[0]
    if offsets is None:
        offsets = np.arange(w) - (w - 1) // 2
    offsets = np.asarray(offsets, dtype=np.int64)
    k = min(k, w)
    s = np.asarray(student_frame_proj, dtype=np.float64).reshape(-1)
    sims = _cosine(win.reshape(w, -1), s[None, :])[None, :]
    sel = _kernels.get("topk_select")(sims, offsets, np.ones((1, w), dtype=bool), k)[0]
    return win[sel].mean(axis=0)


def window_layout(sample_indices, teacher_frames: int, stride: int):
    """Per student frame: teacher frame of each window slot and its validity."""
    offsets = np.arange(-(stride - 1), stride)
    frames = np.asarray(sample_indices)[:, None] + offsets[None, :]
    valid = (frames >= 0) & (frames < teacher_frames)
    return offsets, np.clip(frames, 0, teacher_frames - 1), valid


def pool_targets(teacher_emb: np.ndarray, student_proj: np.ndarray, sample_indices, stride: int, k: int) -> np.ndarray:
    """Batched :func:`dff_pool` for every (sample, student frame) pair.

    teacher_emb: (B, fT, J, CT); student_proj: (B, fS, J, CT) -> (B, fS, J, CT).
    """
    b, ft, j, c = teacher_emb.shape
    fs = student_proj.shape[1]
    offsets, frames, valid = window_layout(sample_indices, ft, stride)
    w = offsets.size
    win = teacher_emb[:, frames]  # (B, fS, W, J, C)
    flat_win = win.reshape(b, fs, w, j * c)
    sims = _cosine(flat_win, student_proj.reshape(b, fs, 1, j * c))
    valid_rows = np.broadcast_to(valid, (b, fs, w)).reshape(-1, w)
    k_eff = min(k, w)
    sel = _kernels.get("topk_select")(np.ascontiguousarray(sims.reshape(-1, w)), offsets, np.ascontiguousarray(valid_rows), k_eff)
    sel = sel.reshape(b, fs, k_eff)
    counts = np.minimum(valid.sum(axis=1), k_eff)  # (fS,)
    out = np.zeros((b, fs, j, c))
    for p in range(fs):
        picks = sel[:, p, : counts[p]]  # (B, n)
        gathered = np.take_along_axis(win[:, p], picks[:, :, None, None], axis=1)
        out[:, p] = gathered.mean(axis=1)
    return out


def emb_loss(
    student_emb: Tensor,
    teacher_emb: np.ndarray,
    sample_indices,
    proj: ProjectionHead,
    epoch: int,
    cfg: DistillConfig,
) -> Tensor:
    """Joint-embedding distillation: direct alignment for ``epoch <= warmup``, pooled afterwards."""
    idx = np.asarray(sample_indices)
    if student_emb.shape[-3] != idx.size:
        raise ValueError(f"emb_loss: {student_emb.shape[-3]} student frames but {idx.size} sample indices")
    if idx.min() < 0 or idx.max() >= teacher_emb.shape[1]:
        raise IndexError(f"emb_loss: sample index out of range for {teacher_emb.shape[1]} teacher frames")
    projected = proj(student_emb)
    if epoch <= cfg.warmup_epochs:
        target = teacher_emb[:, idx]
    else:
        target = pool_targets(teacher_emb, projected.data, idx, cfg.stride, cfg.top_k)
    return T.mean(T.norm(projected - target, axis=-1))


# ---------------------------------------------------------------------------
# adjacent joint attention
# ---------------------------------------------------------------------------


def masked_gram(feats, mask: np.ndarray) -> Tensor:
    """``(F F^T / sqrt(C)) * mask`` over the last two axes of ``F[..., J, C]``."""
    f = T.as_tensor(feats)
    j, c = f.shape[-2:]
    if mask.shape != (j, j):
        raise T.DimensionError(f"masked_gram: mask {mask.shape} does not match {j} joints")
    gram = T.scale(f @ f.swapaxes(-1, -2), 1.0 / math.sqrt(c))
    return gram * mask


def attn_loss(student_emb: Tensor, teacher_emb: np.ndarray, sample_indices, mask: np.ndarray) -> Tensor:
    """Summed absolute difference of masked grams, averaged over aligned frames."""
    idx = np.asarray(sample_indices)
    if student_emb.shape[-3] != idx.size:
        raise ValueError(f"attn_loss: {student_emb.shape[-3]} student frames but {idx.size} sample indices")
    g_s = masked_gram(student_emb, mask)
    g_t = masked_gram(teacher_emb[:, idx], mask).data
    per_frame = T.tsum(T.tabs(g_s - g_t), axis=(-2, -1))
    return T.mean(per_frame)


# ---------------------------------------------------------------------------
# temporal consistency and regression
# ---------------------------------------------------------------------------


def upsample_student(temporal_out: Tensor, up: DeconvUpsampler) -> Tensor:
    """(B, fS, J*CS) -> (B, fS*stride, J*CT)."""
    return up(temporal_out)


def temp_loss(upsampled: Tensor, teacher_temporal: np.ndarray) -> Tensor:
    if upsampled.shape[-2:] != teacher_temporal.shape[-2:]:
        raise T.DimensionError(f"temp_loss: student {upsampled.shape} vs teacher {teacher_temporal.shape}")
    return T.mean(T.norm(upsampled - teacher_temporal, axis=-1))


def mpjpe_loss(pred, gt) -> Tensor:
    """Mean per-joint Euclidean distance; inputs (..., J*3) or (..., J, 3)."""
    pred = T.as_tensor(pred)
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if pred.size != gt.size:
        raise T.DimensionError(f"mpjpe_loss: prediction {pred.shape} vs target {gt.shape}")
    if pred.shape[-1] != 3:
        pred = pred.reshape(pred.shape[:-1] + (-1, 3))
    return T.mean(T.norm(pred - gt.reshape(pred.shape), axis=-1))


def total_loss(reg, emb=None, attn=None, temp=None, cfg: DistillConfig | None = None) -> Tensor:
    """``reg + alpha*emb + beta*attn + gamma*temp``; absent components are skipped."""
    cfg = cfg or DistillConfig()
    parts = {"reg": (reg, 1.0), "emb": (emb, cfg.alpha), "attn": (attn, cfg.beta), "temp": (temp, cfg.gamma)}
    out = None
    for name, (val, weight) in parts.items():
        if val is None:
            continue
        val = T.as_tensor(val)
        if not np.all(np.isfinite(val.data)):
            raise NumericalAbort(f"loss component {name}")
        term = val if weight == 1.0 else T.scale(val, weight)
        out = term if out is None else out + term
    return out
