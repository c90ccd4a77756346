"""``scjd`` command-line entry point.

Exit codes: 0 success, 2 config error, 3 data or file error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import config as C
from .data import ConfigError, FormatError, export_csv, generate_dataset, load_dataset, save_dataset
from .checkpoint import CheckpointError
from .distill import NumericalAbort
from .experiments import COMPONENT_ABLATION, AblationSpec, render_table, run_ablation
from .flops import count_flops, flops_report
from .posenet import STUDENT_FULL, TEACHER_FULL, count_params
from .skeleton import build_h36m17

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _load_cfg(args) -> C.RunConfig:
    cfg = C.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, optimizer=replace(cfg.optimizer, seed=args.seed),
                      teacher_optimizer=replace(cfg.teacher_optimizer, seed=args.seed))
    cfg.check()
    return cfg


def _clips(cfg: C.RunConfig, path=None):
    p = Path(path or cfg.data.path)
    if not p.is_file():
        raise FileNotFoundError(f"dataset not found: {p} (run gen-data first)")
    return load_dataset(p)


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out or cfg.data.path)
    if out.exists() and not args.force:
        print(f"error: {out} exists; pass --force to overwrite", file=sys.stderr)
        return EXIT_DATA
    d = cfg.data
    if d.train_clips + d.eval_clips == 0:
        print("warning: 0 clips requested; writing an empty dataset", file=sys.stderr)
    clips = generate_dataset(build_h36m17(), d.train_clips, d.eval_clips, d.num_frames, cfg.seed, d.motion)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(clips, out)
    digest = hashlib.sha256(out.read_bytes()).hexdigest()
    if args.csv:
        export_csv(clips, args.csv)
    print(f"clips {len(clips)}")
    print(f"sha256 {digest}")
    return EXIT_OK


def _model_summary(cfg: C.RunConfig) -> dict:
    return {
        "teacher": {"params": count_params(cfg.teacher), "flops": count_flops(cfg.teacher)},
        "student": {"params": count_params(cfg.student), "flops": count_flops(cfg.student)},
    }


def cmd_train_teacher(args) -> int:
    from .train import train_teacher

    cfg = _load_cfg(args)
    if args.dry_run:
        _emit({"config": "ok", **_model_summary(cfg)})
        return EXIT_OK
    clips = _clips(cfg, args.data)
    run_dir = Path(args.out or Path(cfg.output_dir) / "teacher")
    train_teacher(clips, cfg.teacher, cfg.teacher_optimizer, cfg.loop, build_h36m17(), run_dir, resume=args.resume)
    print(f"checkpoint {run_dir / 'teacher.ckpt'}")
    return EXIT_OK


def cmd_distill(args) -> int:
    from .experiments import configure_row
    from .train import distill_student, load_model

    cfg = _load_cfg(args)
    toggles = ("no_distill",) if args.no_distill else ()
    student_cfg, dc, plan = configure_row(cfg, toggles)
    teacher = None
    if not args.no_distill:
        if not args.teacher_ckpt:
            raise ConfigError("teacher_checkpoint_given", "distill needs --teacher-ckpt unless --no-distill")
        teacher = load_model(args.teacher_ckpt)
    clips = _clips(cfg, args.data)
    run_dir = Path(args.out or Path(cfg.output_dir) / ("student_nodistill" if args.no_distill else "student"))
    distill_student(clips, teacher, student_cfg, dc, cfg.optimizer, cfg.loop, build_h36m17(), run_dir,
                    plan=plan, resume=args.resume)
    print(f"checkpoint {run_dir / 'student.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate
    from .data import split_clips
    from .train import load_model_meta

    model, meta = load_model_meta(args.ckpt)
    clips = load_dataset(args.data)
    _, evals = split_clips(clips)
    if args.all_clips:
        evals = clips
    rep = evaluate(model, evals, build_h36m17(), meta["window"], meta["sample_indices"], flip=not args.no_flip,
                   frame_stride=args.frame_stride)
    doc = rep.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _emit(doc)
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .train import load_model, train_teacher

    cfg = _load_cfg(args)
    if args.spec:
        sp = Path(args.spec)
        if not sp.is_file():
            raise ConfigError("ablation_spec_exists", f"spec file not found: {sp}")
        spec = AblationSpec.from_dict(json.loads(sp.read_text()))
    else:
        spec = COMPONENT_ABLATION
    clips = _clips(cfg, args.data)
    topo = build_h36m17()
    out_dir = Path(args.out or Path(cfg.output_dir) / "ablation")
    teacher_path = Path(args.teacher_ckpt) if args.teacher_ckpt else out_dir / "teacher" / "teacher.ckpt"
    if teacher_path.is_file():
        teacher = load_model(teacher_path)
    else:
        if args.teacher_ckpt:
            raise FileNotFoundError(f"teacher checkpoint not found: {teacher_path}")
        teacher = train_teacher(clips, cfg.teacher, cfg.teacher_optimizer, cfg.loop, topo, teacher_path.parent)
    rows = run_ablation(cfg, spec, clips, topo, teacher, out_dir, teacher_path=teacher_path,
                        progress=lambda m: print(m, file=sys.stderr))
    (out_dir / "table.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    text = render_table(rows)
    (out_dir / "table.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_flops(args) -> int:
    cfg = _load_cfg(args)
    reports = {"teacher": flops_report(cfg.teacher), "student": flops_report(cfg.student)}
    ref_t, ref_s = count_flops(TEACHER_FULL), count_flops(STUDENT_FULL)
    doc = {name: r.to_dict() for name, r in reports.items()}
    doc["reference_ratio"] = {"student_f27_c16": ref_s, "teacher_f81_c32": ref_t, "ratio": ref_s / ref_t}
    _emit(doc)
    for name, r in reports.items():
        print(f"{name}: analytic {r.analytic_flops} == 2 x instrumented {r.instrumented_multiplies}: "
              f"{'PASS' if r.consistent else 'FAIL'}")
    ratio = ref_s / ref_t
    print(f"student(f=27,C=16)/teacher(f=81,C=32) ratio {ratio:.4f} < 0.25: {'PASS' if ratio < 0.25 else 'FAIL'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scjd", description="Sparse-sampling pose-lifting distillation at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out")
    g.add_argument("--force", action="store_true")
    g.add_argument("--csv", metavar="DIR", help="also export clips as CSV files")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train-teacher", help="pretrain the teacher on the regression loss")
    t.add_argument("--config", required=True)
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.add_argument("--dry-run", action="store_true")
    t.add_argument("--resume", action="store_true")
    t.set_defaults(func=cmd_train_teacher)

    d = sub.add_parser("distill", help="train a student against a frozen teacher")
    d.add_argument("--config", required=True)
    d.add_argument("--teacher-ckpt")
    d.add_argument("--no-distill", action="store_true")
    d.add_argument("--data")
    d.add_argument("--out")
    d.add_argument("--seed", type=int)
    d.add_argument("--resume", action="store_true")
    d.set_defaults(func=cmd_distill)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.add_argument("--frame-stride", type=int, default=1)
    e.add_argument("--no-flip", action="store_true")
    e.add_argument("--all-clips", action="store_true", help="evaluate every clip, not only the eval split")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation grid")
    a.add_argument("--config", required=True)
    a.add_argument("--spec")
    a.add_argument("--teacher-ckpt")
    a.add_argument("--data")
    a.add_argument("--out")
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_ablate)

    f = sub.add_parser("flops", help="FLOPs report with instrumented cross-check")
    f.add_argument("--config", required=True)
    f.set_defaults(func=cmd_flops)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error [{exc.invariant}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, FormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
