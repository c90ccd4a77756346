"""Optimizer, teacher pretraining and student distillation loops.

Both loops draw a fixed pool of training windows, then each epoch samples a
subset of it with a generator seeded by ``(seed, epoch)``.  That makes every
epoch reproducible on its own, so resuming needs only parameters, Adam
moments and the epoch counter.  Regression targets are in metres
(``target_scale``); metrics and logs report millimetres.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint
from . import distill as D
from . import tensor as T
from .data import SamplerConfig, contiguous_indices, flip_pose, make_windows, sparse_sample_indices, split_clips
from .metrics import evaluate, eval_windows, predict_mm, report_from_predictions
from .posenet import ModelConfig, PoseFormer
from .skeleton import SkeletonTopology, adjacency_mask
from .tensor import Parameter


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 0.1
    lr_decay_per_epoch: float = 0.98
    epochs: int = 50
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def validate(self) -> list[str]:
        errs = []
        if not 0 < self.lr_decay_per_epoch <= 1:
            errs.append(f"lr_decay_in_range: lr_decay_per_epoch={self.lr_decay_per_epoch} not in (0, 1]")
        if self.batch_size < 1:
            errs.append(f"batch_size_positive: batch_size={self.batch_size}")
        if self.epochs < 0:
            errs.append(f"epochs_nonnegative: epochs={self.epochs}")
        if self.learning_rate < 0 or self.weight_decay < 0:
            errs.append("lr_and_decay_nonnegative")
        return errs

    def lr_at(self, epoch: int) -> float:
        """Learning rate after ``epoch`` completed epochs."""
        return self.learning_rate * self.lr_decay_per_epoch**epoch

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LoopConfig:
    """How training samples are drawn and how progress is monitored."""

    windows_per_clip: int = 4
    samples_per_epoch: int = 0  # 0: the whole pool every epoch
    flip_prob: float = 0.5
    target_scale: float = 1e-3  # mm -> m
    monitor_frame_stride: int = 0  # 0: no per-epoch eval
    eval_frame_stride: int = 1
    test_flip: bool = True

    def validate(self) -> list[str]:
        errs = []
        if self.windows_per_clip < 1:
            errs.append(f"windows_per_clip_positive: {self.windows_per_clip}")
        if self.samples_per_epoch < 0:
            errs.append(f"samples_per_epoch_nonnegative: {self.samples_per_epoch}")
        if not 0 <= self.flip_prob <= 1:
            errs.append(f"flip_prob_in_unit_interval: {self.flip_prob}")
        if self.target_scale <= 0:
            errs.append(f"target_scale_positive: {self.target_scale}")
        if self.eval_frame_stride < 1 or self.monitor_frame_stride < 0:
            errs.append("frame_strides_valid")
        return errs

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, params: list[Parameter], cfg: OptimizerConfig):
        self.params = params
        self.cfg = cfg
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}
        self.t = 0

    def step(self, lr: float) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise D.NumericalAbort(f"gradient of {p.name}")
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            if c.weight_decay:
                p.data = p.data - lr * c.weight_decay * p.data
            p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": v for k, v in self.m.items()}
        out.update({f"v/{k}": v for k, v in self.v.items()})
        out["meta/step"] = np.array([float(self.t)])
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self.m:
            self.m[name] = arrays[f"m/{name}"].copy()
            self.v[name] = arrays[f"v/{name}"].copy()
        self.t = int(arrays["meta/step"][0])


def adam_step(params: list[Parameter], opt: Adam, lr: float) -> None:
    opt.step(lr)


def epoch_plan(pool_size: int, samples: int, seed: int, epoch: int, flip_prob: float):
    """Sample order and flip flags for one epoch; depends only on (seed, epoch)."""
    rng = np.random.default_rng([int(seed), int(epoch)])
    n = samples or pool_size
    order = rng.permutation(pool_size)[: min(n, pool_size)]
    flips = rng.random(order.size) < flip_prob
    return order, flips


class TrainingPool:
    """Fixed training windows with precomputed mirrored copies."""

    def __init__(self, clips, window: int, topo: SkeletonTopology, windows_per_clip: int, target_scale: float):
        w = make_windows(clips, window, centers_per_clip=windows_per_clip)
        if len(w) == 0:
            raise ValueError("training pool is empty: dataset has no training clips")
        self.inputs = (w.inputs, flip_pose(w.inputs, topo))
        self.targets = (w.targets * target_scale, flip_pose(w.targets, topo) * target_scale)

    def __len__(self) -> int:
        return self.inputs[0].shape[0]

    def batch(self, idx: np.ndarray, flips: np.ndarray):
        sel = flips[:, None, None, None]
        x = np.where(sel, self.inputs[1][idx], self.inputs[0][idx])
        y = np.where(flips[:, None, None], self.targets[1][idx], self.targets[0][idx])
        return x, y


# ---------------------------------------------------------------------------
# generic loop
# ---------------------------------------------------------------------------

STATE_FILE = "state.ckpt"
LOG_FILE = "log.jsonl"


def _state_path(run_dir: Path) -> Path:
    return run_dir / STATE_FILE


def _save_state(run_dir: Path, params, opt: Adam, epoch: int) -> None:
    arrays = {f"param/{p.name}": p.data for p in params}
    arrays.update(opt.state_arrays())
    arrays["meta/epoch"] = np.array([float(epoch)])
    checkpoint.save(arrays, _state_path(run_dir))


def _load_state(run_dir: Path, params, opt: Adam) -> int:
    arrays = checkpoint.load(_state_path(run_dir))
    for p in params:
        key = f"param/{p.name}"
        if key not in arrays:
            raise checkpoint.CheckpointError(f"resume state lacks {p.name}")
        p.data = arrays[key].copy()
        p.grad = np.zeros_like(p.data)
    opt.load_state_arrays(arrays)
    return int(arrays["meta/epoch"][0])



def fit(
    params: list[Parameter],
    batch_loss: Callable,
    pool_size: int,
    opt_cfg: OptimizerConfig,
    loop: LoopConfig,
    run_dir,
    monitor: Callable[[], dict] | None = None,
    resume: bool = False,
    stop_after: int | None = None,
    epoch_info: Callable[[int], dict] | None = None,
) -> list[dict]:
    """Run epochs, logging one JSON record per epoch and keeping a resumable state file.

    ``batch_loss(idx, flips, epoch)`` returns ``(loss Tensor, {component: value})``.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    opt = Adam(params, opt_cfg)
    start = 0
    log_path = run_dir / LOG_FILE
    if resume and _state_path(run_dir).exists():
        start = _load_state(run_dir, params, opt)
        kept = [ln for ln in log_path.read_text().splitlines() if ln and json.loads(ln)["epoch"] <= start] if log_path.exists() else []
        log_path.write_text("".join(ln + "\n" for ln in kept))
    else:
        log_path.write_text("")
    records = []
    for epoch in range(start + 1, opt_cfg.epochs + 1):
        lr = opt_cfg.lr_at(epoch - 1)
        order, flips = epoch_plan(pool_size, loop.samples_per_epoch, opt_cfg.seed, epoch, loop.flip_prob)
        sums: dict[str, float] = {}
        for b0 in range(0, order.size, opt_cfg.batch_size):
            idx, fl = order[b0 : b0 + opt_cfg.batch_size], flips[b0 : b0 + opt_cfg.batch_size]
            for p in params:
                p.zero_grad()
            try:
                loss, comps = batch_loss(idx, fl, epoch)
                loss.backward()
                opt.step(lr)
            except D.NumericalAbort:
                checkpoint.save({p.name: p.data for p in params}, run_dir / "last_good.ckpt")
                raise
            for k, v in comps.items():
                sums[k] = sums.get(k, 0.0) + v * idx.size
        rec = {"epoch": epoch, "lr": float(lr), "samples": int(order.size)}
        rec["train"] = {k: float(v / max(order.size, 1)) for k, v in sums.items()}
        if monitor is not None:
            rec["monitor"] = {k: float(v) for k, v in monitor().items()}
        if epoch_info is not None:
            rec.update(epoch_info(epoch))
        with log_path.open("a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        records.append(rec)
        _save_state(run_dir, params, opt, epoch)
        if stop_after is not None and epoch >= stop_after:
            break
    return records


def read_log(run_dir) -> list[dict]:
    path = Path(run_dir) / LOG_FILE
    return [json.loads(ln) for ln in path.read_text().splitlines() if ln]


# ---------------------------------------------------------------------------
# teacher
# ---------------------------------------------------------------------------


def _monitor_fn(model, clips, topo, window, sample_idx, loop: LoopConfig):
    if not loop.monitor_frame_stride or not clips:
        return None
    x, y = eval_windows(clips, window, loop.monitor_frame_stride)

    def run():
        pred = predict_mm(model, x, sample_idx, topo, flip=False, target_scale=loop.target_scale)
        return {"eval_mpjpe_mm": report_from_predictions(pred, y).mpjpe_mm}

    return run


def train_teacher(
    clips,
    model_cfg: ModelConfig,
    opt_cfg: OptimizerConfig,
    loop: LoopConfig,
    topo: SkeletonTopology,
    run_dir,
    resume: bool = False,
    stop_after: int | None = None,
) -> PoseFormer:
    """Pretrain a teacher on the regression loss only; writes ``teacher.ckpt`` in ``run_dir``."""
    train, evals = split_clips(clips)
    if not train:
        raise ValueError("train_teacher: dataset has no training clips")
    model = PoseFormer(model_cfg, opt_cfg.seed)
    pool = TrainingPool(train, model_cfg.frames, topo, loop.windows_per_clip, loop.target_scale)

    def batch_loss(idx, fl, epoch):
        x, y = pool.batch(idx, fl)
        reg = D.mpjpe_loss(model(x).center_pred, y)
        loss = D.total_loss(reg)
        return loss, {"reg_mm": reg.item() / loop.target_scale}

    fit(model.parameters(), batch_loss, len(pool), opt_cfg, loop, run_dir,
        monitor=_monitor_fn(model, evals, topo, model_cfg.frames, np.arange(model_cfg.frames), loop),
        resume=resume, stop_after=stop_after)
    save_model(model, Path(run_dir) / "teacher.ckpt")
    return model


# ---------------------------------------------------------------------------
# student
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StudentPlan:
    """What the distillation run toggles on top of the default recipe."""

    no_sampling: bool = False
    mask_self_loops: bool = True

    def sample_indices(self, teacher_frames: int, student_frames: int, stride: int) -> np.ndarray:
        if self.no_sampling:
            return contiguous_indices(teacher_frames, student_frames)
        return sparse_sample_indices(SamplerConfig(teacher_frames, stride))


class TeacherCache:
    """Frozen-teacher features for every pool window, in both mirror variants."""

    def __init__(self, teacher: PoseFormer, pool: TrainingPool, batch_size: int = 128):
        emb, tmp = [], []
        for variant in (0, 1):
            e_parts, t_parts = [], []
            x_all = pool.inputs[variant]
            with T.no_grad():
                for i in range(0, len(pool), batch_size):
                    taps = teacher.forward(x_all[i : i + batch_size])
                    e_parts.append(taps.frame_embeddings.data)
                    t_parts.append(taps.temporal_out.data)
            emb.append(np.concatenate(e_parts))
            tmp.append(np.concatenate(t_parts))
        self.emb = tuple(emb)
        self.temporal = tuple(tmp)

    def batch(self, idx: np.ndarray, flips: np.ndarray) -> D.TeacherTaps:
        e = np.where(flips[:, None, None, None], self.emb[1][idx], self.emb[0][idx])
        t = np.where(flips[:, None, None], self.temporal[1][idx], self.temporal[0][idx])
        return D.TeacherTaps(e, t)


def distill_student(
    clips,
    teacher: PoseFormer | None,
    student_cfg: ModelConfig,
    distill_cfg: D.DistillConfig,
    opt_cfg: OptimizerConfig,
    loop: LoopConfig,
    topo: SkeletonTopology,
    run_dir,
    plan: StudentPlan = StudentPlan(),
    teacher_cache: TeacherCache | None = None,
    pool: TrainingPool | None = None,
    resume: bool = False,
    stop_after: int | None = None,
) -> PoseFormer:
    """Train a student under the weighted distillation objective; writes ``student.ckpt``.

    A zero weight removes its component entirely, so all-zero weights give
    plain regression training and need no teacher.
    """
    errs = distill_cfg.validate()
    if errs:
        raise ValueError("; ".join(errs))
    train, evals = split_clips(clips)
    if not train:
        raise ValueError("distill_student: dataset has no training clips")
    uses_teacher = any(w > 0 for w in (distill_cfg.alpha, distill_cfg.beta, distill_cfg.gamma))
    if uses_teacher and teacher is None and teacher_cache is None:
        raise ValueError("distill_student: distillation weights are nonzero but no teacher was given")
    window = teacher.cfg.frames if teacher is not None else student_cfg.frames * distill_cfg.stride
    if distill_cfg.gamma > 0 and not student_cfg.has_upsampler:
        raise ValueError("distill_student: temporal distillation needs a student with an upsampler")
    sample_idx = plan.sample_indices(window, student_cfg.frames, distill_cfg.stride)
    if sample_idx.size != student_cfg.frames:
        raise ValueError(f"distill_student: sampler gives {sample_idx.size} frames, student expects {student_cfg.frames}")

    student = PoseFormer(student_cfg, opt_cfg.seed)
    params = student.parameters()
    proj = None
    if distill_cfg.alpha > 0:
        c_t = teacher.cfg.embed_dim if teacher is not None else teacher_cache.emb[0].shape[-1]
        proj = D.ProjectionHead(student_cfg.embed_dim, c_t, np.random.default_rng([opt_cfg.seed, 7]))
        params = params + proj.parameters()
    mask = adjacency_mask(topo, include_self=plan.mask_self_loops)

    pool = pool or TrainingPool(train, window, topo, loop.windows_per_clip, loop.target_scale)
    cache = teacher_cache if uses_teacher else None
    if uses_teacher and cache is None:
        cache = TeacherCache(teacher, pool)

    def batch_loss(idx, fl, epoch):
        x, y = pool.batch(idx, fl)
        taps = student(x[:, sample_idx])
        reg = D.mpjpe_loss(taps.center_pred, y)
        comps = {"reg_mm": reg.item() / loop.target_scale}
        emb = attn = temp = None
        if cache is not None:
            t_taps = cache.batch(idx, fl)
            if distill_cfg.alpha > 0:
                emb = D.emb_loss(taps.frame_embeddings, t_taps.frame_embeddings, sample_idx, proj, epoch, distill_cfg)
                comps["emb"] = emb.item()
            if distill_cfg.beta > 0:
                attn = D.attn_loss(taps.frame_embeddings, t_taps.frame_embeddings, sample_idx, mask)
                comps["attn"] = attn.item()
            if distill_cfg.gamma > 0:
                temp = D.temp_loss(taps.upsampled, t_taps.temporal_out)
                comps["temp"] = temp.item()
        loss = D.total_loss(reg, emb, attn, temp, distill_cfg)
        return loss, comps

    def epoch_info(epoch):
        if distill_cfg.alpha > 0 and cache is not None:
            return {"emb_phase": "direct" if epoch <= distill_cfg.warmup_epochs else "pooled"}
        return {}

    fit(params, batch_loss, len(pool), opt_cfg, loop, run_dir,
        monitor=_monitor_fn(student, evals, topo, window, sample_idx, loop),
        resume=resume, stop_after=stop_after, epoch_info=epoch_info)
    save_model(student, Path(run_dir) / "student.ckpt", window=window, sample_indices=sample_idx)
    return student


# ---------------------------------------------------------------------------
# persistence helpers
# ---------------------------------------------------------------------------


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def save_model(model: PoseFormer, path, window: int | None = None, sample_indices=None) -> None:
    """Write parameters plus a JSON sidecar with the model config and input sampling."""
    path = Path(path)
    checkpoint.save_module(model, path)
    meta = {"model": model.cfg.to_dict()}
    meta["window"] = int(window if window is not None else model.cfg.frames)
    idx = np.arange(model.cfg.frames) if sample_indices is None else np.asarray(sample_indices)
    meta["sample_indices"] = [int(i) for i in idx]
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_model_meta(path) -> tuple[PoseFormer, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    side = _sidecar(path)
    if not side.is_file():
        raise FileNotFoundError(f"model config sidecar not found: {side}")
    meta = json.loads(side.read_text())
    model = PoseFormer(ModelConfig(**meta["model"]), 0)
    checkpoint.load_module(model, path)
    return model, meta


def load_model(path) -> PoseFormer:
    return load_model_meta(path)[0]


def param_checksum(model) -> str:
    import hashlib

    h = hashlib.sha256()
    for p in model.parameters():
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def evaluate_model(model: PoseFormer, clips, topo, window: int, sample_indices, loop: LoopConfig):
    _, evals = split_clips(clips)
    return evaluate(model, evals, topo, window, sample_indices, flip=loop.test_flip,
                    frame_stride=loop.eval_frame_stride, target_scale=loop.target_scale)
