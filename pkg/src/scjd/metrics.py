"""Pose-error metrics and clip-level evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .data import flip_pose, window_indices
from .skeleton import SkeletonTopology

AUC_THRESHOLDS_MM = np.linspace(5.0, 150.0, 30)
PCK_THRESHOLD_MM = 150.0


def joint_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-joint Euclidean error, (N, J, 3) x2 -> (N, J)."""
    pred = np.ascontiguousarray(pred, dtype=np.float64)
    gt = np.ascontiguousarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ValueError(f"joint_errors: prediction {pred.shape} vs target {gt.shape}")
    return _kernels.get("joint_errors")(pred.reshape(-1, pred.shape[-2], 3), gt.reshape(-1, gt.shape[-2], 3))


def mpjpe(pred, gt) -> float:
    return float(joint_errors(pred, gt).mean())


def pck_curve(errors: np.ndarray, thresholds=AUC_THRESHOLDS_MM) -> np.ndarray:
    """Fraction of joints with error strictly below each threshold."""
    return _kernels.get("pck_curve")(np.ascontiguousarray(errors, dtype=np.float64), np.asarray(thresholds, dtype=np.float64))


def pck(errors: np.ndarray, threshold: float = PCK_THRESHOLD_MM) -> float:
    return float(pck_curve(errors, [threshold])[0])


def auc(errors: np.ndarray, thresholds=AUC_THRESHOLDS_MM) -> float:
    return float(pck_curve(errors, thresholds).mean())


@dataclass
class MetricsReport:
    mpjpe_mm: float
    pck150: float
    auc: float
    per_joint_mpjpe: list[float]
    num_poses: int
    loss_components: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def report_from_predictions(pred: np.ndarray, gt: np.ndarray, loss_components=None) -> MetricsReport:
    err = joint_errors(pred, gt)
    return MetricsReport(
        mpjpe_mm=float(err.mean()) if err.size else float("nan"),
        pck150=pck(err) if err.size else float("nan"),
        auc=auc(err) if err.size else float("nan"),
        per_joint_mpjpe=[float(v) for v in err.mean(axis=0)] if err.size else [],
        num_poses=int(err.shape[0]),
        loss_components=dict(loss_components or {}),
    )


def eval_windows(clips, window: int, frame_stride: int = 1):
    """Every ``frame_stride``-th frame of every clip as a (2D window, 3D target) pair."""
    xs, ys = [], []
    for clip in clips:
        n = clip.num_frames
        for c in range(0, n, frame_stride):
            xs.append(clip.seq2d.frames[window_indices(n, c, window)])
            ys.append(clip.seq3d.frames[c])
    if not xs:
        return np.zeros((0, window, 0, 2)), np.zeros((0, 0, 3))
    return np.stack(xs), np.stack(ys)


def predict_mm(model, windows: np.ndarray, sample_indices, topo: SkeletonTopology, flip: bool = True,
               target_scale: float = 1e-3, batch_size: int = 256) -> np.ndarray:
    """Center-frame predictions in millimetres, optionally flip-averaged.

    ``windows`` are full-length (teacher-length) 2D windows; the model sees
    the frames at ``sample_indices``.
    """
    j = model.cfg.joints
    x = windows[:, np.asarray(sample_indices)]
    pred = model.predict(x, batch_size).reshape(-1, j, 3)
    if flip:
        pred_f = model.predict(flip_pose(x, topo), batch_size).reshape(-1, j, 3)
        pred = 0.5 * (pred + flip_pose(pred_f, topo))
    return pred / target_scale


def evaluate(model, clips, topo: SkeletonTopology, window: int, sample_indices=None, flip: bool = True,
             frame_stride: int = 1, target_scale: float = 1e-3) -> MetricsReport:
    """MPJPE / PCK@150 / AUC over center-frame predictions for ``clips``."""
    if sample_indices is None:
        sample_indices = np.arange(window)
    x, y = eval_windows(clips, window, frame_stride)
    if len(x) == 0:
        return report_from_predictions(np.zeros((0, topo.num_joints, 3)), np.zeros((0, topo.num_joints, 3)))
    pred = predict_mm(model, x, sample_indices, topo, flip, target_scale)
    return report_from_predictions(pred, y)
