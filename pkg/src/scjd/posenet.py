"""Spatial-temporal transformer lifting network shared by teacher and student."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .nn import EncoderLayer, LayerNorm, Linear, Module, fan_in_uniform, trunc_normal
from .tensor import Parameter, Tensor


def default_heads(embed_dim: int) -> int:
    return 8 if embed_dim >= 32 else 4


@dataclass(frozen=True)
class ModelConfig:
    """Network shape.

    ``upsample_stride > 1`` adds the deconvolution upsampler in front of the
    regression head, which then works on ``frames * upsample_stride`` frames
    of width ``joints * head_dim``.

    ``input_gain`` multiplies the normalized 2D coordinates before the joint
    projection.  Per-joint motion spans only a few hundredths of the image,
    and at gain 1 training sits near the mean pose for most of a short run.
    """

    frames: int = 27
    joints: int = 17
    embed_dim: int = 32
    depth: int = 2
    heads: int = 0  # 0 -> 8 if embed_dim >= 32 else 4
    mlp_ratio: float = 2.0
    role: str = "teacher"
    upsample_stride: int = 1
    head_dim: int = 0  # 0 -> embed_dim
    dropout: float = 0.0
    input_gain: float = 4.0

    @property
    def num_heads(self) -> int:
        return self.heads or default_heads(self.embed_dim)

    @property
    def head_width(self) -> int:
        return self.joints * (self.head_dim or self.embed_dim)

    @property
    def head_frames(self) -> int:
        return self.frames * self.upsample_stride

    @property
    def has_upsampler(self) -> bool:
        return self.upsample_stride > 1 or bool(self.head_dim and self.head_dim != self.embed_dim)

    def validate(self) -> list[str]:
        errs = []
        if self.embed_dim % self.num_heads:
            errs.append(f"embed_dim_divisible_by_heads: {self.embed_dim} % {self.num_heads} != 0")
        if (self.joints * self.embed_dim) % self.num_heads:
            errs.append(f"temporal_width_divisible_by_heads: {self.joints * self.embed_dim} % {self.num_heads} != 0")
        if self.frames < 1 or self.frames % 2 == 0:
            errs.append(f"frames_odd: frames={self.frames}")
        if self.depth < 0:
            errs.append(f"depth_nonnegative: depth={self.depth}")
        if self.role not in ("teacher", "student"):
            errs.append(f"role_known: {self.role!r}")
        if not self.input_gain > 0:
            errs.append(f"input_gain_positive: input_gain={self.input_gain}")
        return errs

    def to_dict(self) -> dict:
        return asdict(self)


TEACHER_FULL = ModelConfig(frames=81, embed_dim=32, depth=4, role="teacher")
STUDENT_FULL = ModelConfig(frames=27, embed_dim=16, depth=4, role="student", upsample_stride=3, head_dim=32)


class DistillTaps(NamedTuple):
    frame_embeddings: Tensor  # (B, f, J, C)
    temporal_out: Tensor  # (B, f, J*C)
    upsampled: Tensor | None  # (B, f*stride, J*C_head), student upsample path only
    center_pred: Tensor  # (B, J*3)


class DeconvUpsampler(Module):
    """Transposed conv over frames (kernel = stride) followed by a per-frame linear."""

    def __init__(self, width_in: int, width_out: int, stride: int, rng: np.random.Generator):
        self.stride = stride
        self.weight = Parameter(fan_in_uniform(rng, (width_in, width_in, stride)))
        self.bias = Parameter(np.zeros(width_in))
        self.fc = Linear(width_in, width_out, rng)

    def __call__(self, seq: Tensor) -> Tensor:
        """(..., f, w_in) -> (..., f*stride, w_out)."""
        y = T.deconv1d(seq.swapaxes(-1, -2), self.weight, self.stride, self.bias)
        return self.fc(y.swapaxes(-1, -2))


class RegressionHead(Module):
    """Learned weighted mean over frames, then a linear map to J*3 coordinates."""

    def __init__(self, frames: int, width: int, joints: int, rng: np.random.Generator):
        # starts as a plain average; a 0.02-scale init leaves the head output near zero for many epochs
        self.conv_weight = Parameter(np.full((1, 1, frames), 1.0 / frames))
        self.conv_bias = Parameter(np.zeros(1))
        self.linear = Linear(width, joints * 3, rng)

    def __call__(self, seq: Tensor) -> Tensor:
        *lead, f, w = seq.shape
        x = seq.swapaxes(-1, -2).reshape(tuple(lead) + (w, 1, f))
        pooled = T.conv1d(x, self.conv_weight, 1, self.conv_bias).reshape(tuple(lead) + (w,))
        return self.linear(pooled)


class PoseFormer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int = 0):
        errs = cfg.validate()
        if errs:
            raise ValueError("; ".join(errs))
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        c, j, f = cfg.embed_dim, cfg.joints, cfg.frames
        d_t = j * c
        self.joint_projection = Linear(2, c, rng)
        self.spatial_pos_embed = Parameter(trunc_normal(rng, (1, j, c)))
        self.spatial_encoder = [EncoderLayer(c, cfg.num_heads, cfg.mlp_ratio, rng, cfg.dropout) for _ in range(cfg.depth)]
        self.spatial_norm = LayerNorm(c)
        self.temporal_pos_embed = Parameter(trunc_normal(rng, (f, d_t)))
        self.temporal_encoder = [
            EncoderLayer(d_t, cfg.num_heads, cfg.mlp_ratio, rng, cfg.dropout) for _ in range(cfg.depth)
        ]
        self.temporal_norm = LayerNorm(d_t)
        self.upsampler = DeconvUpsampler(d_t, cfg.head_width, cfg.upsample_stride, rng) if cfg.has_upsampler else None
        self.head = RegressionHead(cfg.head_frames, cfg.head_width, j, rng)
        self.assign_names(cfg.role)

    def spatial_forward(self, x2d, rng=None) -> Tensor:
        """(B, f, J, 2) -> per-frame joint embeddings (B, f, J, C)."""
        x = T.as_tensor(x2d)
        cfg = self.cfg
        if x.shape[-3:] != (cfg.frames, cfg.joints, 2):
            raise T.DimensionError(f"expected (..., {cfg.frames}, {cfg.joints}, 2) input, got {x.shape}")
        if cfg.input_gain != 1.0:
            x = T.scale(x, cfg.input_gain)
        h = self.joint_projection(x) + self.spatial_pos_embed
        for layer in self.spatial_encoder:
            h = layer(h, rng)
        return self.spatial_norm(h)

    def temporal_forward(self, frame_embeddings: Tensor, rng=None) -> Tensor:
        """(B, f, J, C) -> (B, f, J*C)."""
        *lead, f, j, c = frame_embeddings.shape
        if (f, j, c) != (self.cfg.frames, self.cfg.joints, self.cfg.embed_dim):
            raise T.DimensionError(f"temporal encoder expects (f, J, C)={(self.cfg.frames, self.cfg.joints, self.cfg.embed_dim)}, got {(f, j, c)}")
        z = frame_embeddings.reshape(tuple(lead) + (f, j * c)) + self.temporal_pos_embed
        for layer in self.temporal_encoder:
            z = layer(z, rng)
        return self.temporal_norm(z)

    def regress_center(self, seq: Tensor) -> Tensor:
        """(B, f_head, W) -> (B, J*3)."""
        if seq.shape[-2:] != (self.cfg.head_frames, self.cfg.head_width):
            raise T.DimensionError(
                f"regression head expects (..., {self.cfg.head_frames}, {self.cfg.head_width}), got {seq.shape}"
            )
        return self.head(seq)

    def forward(self, x2d, rng=None) -> DistillTaps:
        x = T.as_tensor(x2d)
        if x.ndim == 3:
            x = x.reshape((1,) + x.shape)
        emb = self.spatial_forward(x, rng)
        y = self.temporal_forward(emb, rng)
        up = self.upsampler(y) if self.upsampler is not None else None
        pred = self.regress_center(up if up is not None else y)
        return DistillTaps(emb, y, up, pred)

    __call__ = forward

    def predict(self, x2d: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Graph-free center-frame predictions, (N, J*3)."""
        out = []
        with T.no_grad():
            for i in range(0, len(x2d), batch_size):
                out.append(self.forward(x2d[i : i + batch_size]).center_pred.data)
        return np.concatenate(out) if out else np.zeros((0, self.cfg.joints * 3))


def _encoder_layer_params(d: int, mlp_ratio: float) -> int:
    hidden = int(d * mlp_ratio)
    return 4 * (d * d + d) + 2 * 2 * d + d * hidden + hidden + hidden * d + d


def count_params(cfg: ModelConfig) -> int:
    """Closed-form parameter count of :class:`PoseFormer` for ``cfg``."""
    c, j, f = cfg.embed_dim, cfg.joints, cfg.frames
    d_t = j * c
    n = 2 * c + c  # joint projection
    n += j * c  # spatial positional embedding
    n += cfg.depth * _encoder_layer_params(c, cfg.mlp_ratio) + 2 * c
    n += f * d_t
    n += cfg.depth * _encoder_layer_params(d_t, cfg.mlp_ratio) + 2 * d_t
    if cfg.has_upsampler:
        n += d_t * d_t * cfg.upsample_stride + d_t
        n += d_t * cfg.head_width + cfg.head_width
    n += cfg.head_frames + 1
    n += cfg.head_width * j * 3 + j * 3
    return n


def param_breakdown(cfg: ModelConfig) -> dict[str, int]:
    model = PoseFormer(cfg, 0)
    out: dict[str, int] = {}
    for p in model.parameters():
        key = p.name.split(".")[1]
        out[key] = out.get(key, 0) + p.size
    return out
