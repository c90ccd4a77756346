"""Run configuration: one JSON document per run, validated before any compute."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import Camera, ConfigError, MotionParams, SamplerConfig
from .distill import DistillConfig
from .posenet import ModelConfig
from .train import LoopConfig, OptimizerConfig


@dataclass(frozen=True)
class DataConfig:
    path: str = "data/desk.scjd"
    train_clips: int = 200
    eval_clips: int = 50
    num_frames: int = 240
    motion: MotionParams = field(default_factory=MotionParams)


@dataclass(frozen=True)
class RunConfig:
    teacher: ModelConfig = field(default_factory=lambda: ModelConfig(frames=27, embed_dim=32, depth=2, role="teacher"))
    student: ModelConfig = field(
        default_factory=lambda: ModelConfig(frames=9, embed_dim=16, depth=2, role="student", upsample_stride=3, head_dim=32)
    )
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    teacher_optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "runs/desk"
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def violations(self) -> list[tuple[str, str]]:
        """Every violated invariant as ``(name, detail)``."""
        out: list[tuple[str, str]] = []
        try:
            self.sampler.check()
        except ConfigError as exc:
            out.append((exc.invariant, str(exc)))
        for label, errs in (
            ("teacher", self.teacher.validate()),
            ("student", self.student.validate()),
            ("distill", self.distill.validate()),
            ("optimizer", self.optimizer.validate()),
            ("teacher_optimizer", self.teacher_optimizer.validate()),
            ("loop", self.loop.validate()),
        ):
            for e in errs:
                name, _, detail = e.partition(":")
                out.append((f"{label}.{name}", detail.strip() or e))
        s, t, st = self.sampler, self.teacher, self.student
        if s.teacher_frames != t.frames:
            out.append(("sampler_matches_teacher", f"sampler.teacher_frames={s.teacher_frames} != teacher.frames={t.frames}"))
        if s.stride >= 1 and st.frames * s.stride != s.teacher_frames:
            out.append(("student_frames_match_stride", f"student.frames={st.frames} != teacher_frames/stride={s.teacher_frames}/{s.stride}"))
        if self.distill.stride != s.stride:
            out.append(("distill_stride_matches_sampler", f"distill.stride={self.distill.stride} != sampler.stride={s.stride}"))
        if st.has_upsampler and st.upsample_stride != s.stride:
            out.append(("upsampler_stride_matches_sampler", f"student.upsample_stride={st.upsample_stride} != sampler.stride={s.stride}"))
        if st.has_upsampler and (st.head_dim or st.embed_dim) != t.embed_dim:
            out.append(("upsampler_width_matches_teacher", f"student.head_dim={st.head_dim} != teacher.embed_dim={t.embed_dim}"))
        if st.joints != t.joints:
            out.append(("joint_counts_match", f"student.joints={st.joints} != teacher.joints={t.joints}"))
        d = self.data
        if d.train_clips < 0 or d.eval_clips < 0 or d.num_frames < 1:
            out.append(("data_sizes_valid", f"train_clips={d.train_clips} eval_clips={d.eval_clips} num_frames={d.num_frames}"))
        return out

    def check(self) -> None:
        v = self.violations()
        if v:
            name, detail = v[0]
            extra = f" (+{len(v) - 1} more: {', '.join(n for n, _ in v[1:])})" if len(v) > 1 else ""
            raise ConfigError(name, detail + extra)


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError("config_well_formed", f"{where} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError("config_known_keys", f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        sub = _NESTED.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{where}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError("config_well_formed", f"{where}: {exc}") from None


_NESTED = {
    (RunConfig, "teacher"): ModelConfig,
    (RunConfig, "student"): ModelConfig,
    (RunConfig, "sampler"): SamplerConfig,
    (RunConfig, "distill"): DistillConfig,
    (RunConfig, "optimizer"): OptimizerConfig,
    (RunConfig, "teacher_optimizer"): OptimizerConfig,
    (RunConfig, "loop"): LoopConfig,
    (RunConfig, "data"): DataConfig,
    (DataConfig, "motion"): MotionParams,
    (MotionParams, "camera"): Camera,
}


def from_dict(raw: dict) -> RunConfig:
    return _build(RunConfig, raw, "config")


def dumps(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def loads(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config_parses", str(exc)) from None
    return from_dict(raw)


def load(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("config_exists", f"config file not found: {p}")
    return loads(p.read_text())


def save(cfg: RunConfig, path) -> None:
    Path(path).write_text(dumps(cfg))
