"""FLOPs accounting: closed-form counts and an instrumented cross-check.

Convention: one multiply-accumulate is two FLOPs, and only matmul, linear,
conv and deconv kernels are counted.  Elementwise ops, softmax and layer
norm are excluded.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .posenet import ModelConfig, PoseFormer


@dataclass
class FlopsReport:
    config: dict
    analytic_flops: int
    instrumented_multiplies: int | None = None
    breakdown: dict[str, int] = field(default_factory=dict)

    @property
    def consistent(self) -> bool:
        return self.instrumented_multiplies is not None and self.analytic_flops == 2 * self.instrumented_multiplies

    def to_dict(self) -> dict:
        out = asdict(self)
        out["consistent"] = self.consistent
        return out


def _encoder_macs(tokens: int, width: int, mlp_ratio: float) -> int:
    hidden = int(width * mlp_ratio)
    proj = 4 * tokens * width * width
    attn = 2 * tokens * tokens * width  # QK^T and AV summed over heads
    ffn = 2 * tokens * width * hidden
    return proj + attn + ffn


def mac_breakdown(cfg: ModelConfig, include_training_heads: bool = False, teacher_embed_dim: int | None = None) -> dict[str, int]:
    """Multiply-accumulates per module for one input sequence."""
    c, j, f = cfg.embed_dim, cfg.joints, cfg.frames
    d_t = j * c
    out = {
        "joint_projection": f * j * 2 * c,
        "spatial_encoder": cfg.depth * f * _encoder_macs(j, c, cfg.mlp_ratio),
        "temporal_encoder": cfg.depth * _encoder_macs(f, d_t, cfg.mlp_ratio),
    }
    if cfg.has_upsampler:
        out["upsampler"] = f * d_t * d_t * cfg.upsample_stride + cfg.head_frames * d_t * cfg.head_width
    out["head"] = cfg.head_width * cfg.head_frames + cfg.head_width * j * 3
    if include_training_heads:
        ct = teacher_embed_dim or 2 * c
        out["projection_head"] = f * j * c * ct
    return out


def count_flops(cfg: ModelConfig, include_training_heads: bool = False, teacher_embed_dim: int | None = None) -> int:
    """Analytic FLOPs (2 x MACs) of one forward pass."""
    return 2 * sum(mac_breakdown(cfg, include_training_heads, teacher_embed_dim).values())


def instrumented_flops(cfg: ModelConfig, x2d: np.ndarray | None = None, seed: int = 0) -> int:
    """Multiplies actually executed by a forward pass on a single sequence."""
    model = PoseFormer(cfg, seed)
    if x2d is None:
        x2d = np.random.default_rng(seed).uniform(-1, 1, size=(1, cfg.frames, cfg.joints, 2))
    with T.no_grad(), T.count_multiplies() as box:
        model.forward(x2d)
    return box[0]


def flops_report(cfg: ModelConfig, instrument: bool = True) -> FlopsReport:
    macs = mac_breakdown(cfg)
    return FlopsReport(
        config=cfg.to_dict(),
        analytic_flops=2 * sum(macs.values()),
        instrumented_multiplies=instrumented_flops(cfg) if instrument else None,
        breakdown={k: 2 * v for k, v in macs.items()},
    )
