"""Ablation grids over distillation toggles and seeds."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import ConfigError, split_clips
from .skeleton import SkeletonTopology
from .train import StudentPlan, TeacherCache, TrainingPool, distill_student, evaluate_model, load_model

TOGGLES = ("no_sampling", "no_distill", "no_emb", "no_attn", "no_temp", "no_self_loop_mask")


@dataclass(frozen=True)
class AblationSpec:
    """Rows of toggles (an empty row is the full recipe) crossed with seeds."""

    rows: tuple[tuple[str, ...], ...]
    seeds: tuple[int, ...] = (0, 1, 2)

    def validate(self) -> None:
        if not self.rows:
            raise ConfigError("ablation_rows_nonempty", "ablation spec has no rows")
        if not self.seeds:
            raise ConfigError("ablation_seeds_nonempty", "ablation spec has no seeds")
        for row in self.rows:
            bad = [t for t in row if t not in TOGGLES]
            if bad:
                raise ConfigError("ablation_toggles_known", f"unknown toggle(s) {bad}; known: {', '.join(TOGGLES)}")

    @classmethod
    def from_dict(cls, raw: dict) -> "AblationSpec":
        if not isinstance(raw, dict) or "rows" not in raw:
            raise ConfigError("ablation_spec_well_formed", "spec needs a 'rows' list")
        rows = []
        for r in raw["rows"]:
            if isinstance(r, str):
                r = [] if r == "full" else [r]
            rows.append(tuple(r))
        spec = cls(tuple(rows), tuple(int(s) for s in raw.get("seeds", (0, 1, 2))))
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return {"rows": [list(r) for r in self.rows], "seeds": list(self.seeds)}


COMPONENT_ABLATION = AblationSpec(rows=(("no_emb",), ("no_attn",), ("no_temp",), ()))


def row_label(toggles) -> str:
    return "full" if not toggles else "+".join(t.replace("no_", "w/o ") for t in toggles)


def configure_row(run_cfg, toggles):
    """Student config, distillation weights and sampling plan for one ablation row."""
    t = set(toggles)
    dc = run_cfg.distill
    if "no_distill" in t:
        dc = replace(dc, alpha=0.0, beta=0.0, gamma=0.0)
    if "no_emb" in t:
        dc = replace(dc, alpha=0.0)
    if "no_attn" in t:
        dc = replace(dc, beta=0.0)
    if "no_temp" in t:
        dc = replace(dc, gamma=0.0)
    student = run_cfg.student
    if "no_sampling" in t:
        # dense center frames, regression straight from the student's own frames
        student = replace(student, upsample_stride=1, head_dim=0)
        dc = replace(dc, gamma=0.0)
    plan = StudentPlan(no_sampling="no_sampling" in t, mask_self_loops=dc.mask_self_loops and "no_self_loop_mask" not in t)
    return student, dc, plan


def run_cell(run_cfg, toggles, seed, clips, topo, teacher, run_dir, teacher_cache=None, pool=None):
    student_cfg, dc, plan = configure_row(run_cfg, toggles)
    opt = replace(run_cfg.optimizer, seed=seed)
    window = run_cfg.sampler.teacher_frames
    model = distill_student(clips, teacher, student_cfg, dc, opt, run_cfg.loop, topo, run_dir, plan=plan,
                            teacher_cache=teacher_cache, pool=pool)
    idx = plan.sample_indices(window, student_cfg.frames, run_cfg.sampler.stride)
    return evaluate_model(model, clips, topo, window, idx, run_cfg.loop)


def _cell_worker(args):
    run_cfg, toggles, seed, clips, topo, teacher_path, run_dir = args
    teacher = load_model(teacher_path) if teacher_path else None
    return run_cell(run_cfg, toggles, seed, clips, topo, teacher, run_dir).to_dict()


def worker_count() -> int:
    raw = os.environ.get("SCJD_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("scjd_threads_integer", f"SCJD_THREADS={raw!r} is not an integer") from None
    return max(1, n)


def run_ablation(run_cfg, spec: AblationSpec, clips, topo: SkeletonTopology, teacher, out_dir,
                 teacher_path=None, progress=None) -> list[dict]:
    """Train and evaluate every (row, seed) cell; returns one summary record per row."""
    spec.validate()
    out_dir = Path(out_dir)
    cells = [(row, seed) for row in spec.rows for seed in spec.seeds]
    workers = worker_count()
    results: dict[tuple, dict] = {}
    if workers > 1 and len(cells) > 1:
        jobs = [(run_cfg, row, seed, clips, topo, teacher_path, out_dir / _slug(row) / f"seed{seed}") for row, seed in cells]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for (row, seed), rep in zip(cells, ex.map(_cell_worker, jobs)):
                results[(row, seed)] = rep
    else:
        train, _ = split_clips(clips)
        window = run_cfg.sampler.teacher_frames
        pool = TrainingPool(train, window, topo, run_cfg.loop.windows_per_clip, run_cfg.loop.target_scale)
        cache = None
        weights = [configure_row(run_cfg, row)[1] for row in spec.rows]
        if any(w.alpha > 0 or w.beta > 0 or w.gamma > 0 for w in weights):
            cache = TeacherCache(teacher, pool)
        for row, seed in cells:
            rep = run_cell(run_cfg, row, seed, clips, topo, teacher, out_dir / _slug(row) / f"seed{seed}",
                           teacher_cache=cache, pool=pool)
            results[(row, seed)] = rep.to_dict()
            if progress:
                progress(f"{row_label(row)} seed {seed}: MPJPE {rep.mpjpe_mm:.3f} mm")
    table = []
    for row in spec.rows:
        per_seed = [results[(row, s)] for s in spec.seeds]
        mp = np.array([r["mpjpe_mm"] for r in per_seed])
        table.append({
            "row": row_label(row),
            "toggles": list(row),
            "seeds": list(spec.seeds),
            "mpjpe_mm": [float(v) for v in mp],
            "mpjpe_mean": float(mp.mean()),
            "mpjpe_std": float(mp.std()),
            "pck150_mean": float(np.mean([r["pck150"] for r in per_seed])),
            "auc_mean": float(np.mean([r["auc"] for r in per_seed])),
        })
    return table


def _slug(row) -> str:
    return "full" if not row else "-".join(row)


def render_table(rows: list[dict]) -> str:
    head = f"{'row':<24} {'MPJPE mm (mean±std)':>22} {'PCK150':>8} {'AUC':>7}"
    lines = [head, "-" * len(head)]
    for r in rows:
        mp = f"{r['mpjpe_mean']:.2f} ± {r['mpjpe_std']:.2f}"
        lines.append(f"{r['row']:<24} {mp:>22} {r['pck150_mean']:>8.3f} {r['auc_mean']:>7.3f}")
    return "\n".join(lines)
