import hashlib
import json

import pytest

from conftest import TINY_LOOP, TINY_OPT, TINY_STUDENT, TINY_TEACHER
from scjd import config as C
from scjd.cli import main
from scjd.data import SamplerConfig


def tiny_config(tmp_path, **over):
    cfg = C.RunConfig(
        teacher=TINY_TEACHER,
        student=TINY_STUDENT,
        sampler=SamplerConfig(9, 3),
        distill=C.DistillConfig(warmup_epochs=1, stride=3),
        optimizer=TINY_OPT,
        teacher_optimizer=TINY_OPT,
        loop=TINY_LOOP,
        data=C.DataConfig(path=str(tmp_path / "d.scjd"), train_clips=4, eval_clips=2, num_frames=20),
        output_dir=str(tmp_path / "runs"),
    )
    raw = cfg.to_dict()
    for k, v in over.items():
        raw[k].update(v) if isinstance(v, dict) else raw.__setitem__(k, v)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return str(path)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = tiny_config(d)
    assert main(["gen-data", "--config", cfg]) == 0
    assert main(["train-teacher", "--config", cfg]) == 0
    return d, cfg


def test_gen_data_checksum_stable_and_refuses_overwrite(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    assert main(["gen-data", "--config", cfg]) == 0
    out = capsys.readouterr().out
    assert "clips 6" in out
    digest = hashlib.sha256((tmp_path / "d.scjd").read_bytes()).hexdigest()
    assert f"sha256 {digest}" in out
    assert main(["gen-data", "--config", cfg]) == 3
    assert main(["gen-data", "--config", cfg, "--force"]) == 0
    assert hashlib.sha256((tmp_path / "d.scjd").read_bytes()).hexdigest() == digest


def test_gen_data_zero_clips_warns(tmp_path, capsys):
    cfg = tiny_config(tmp_path, data={"train_clips": 0, "eval_clips": 0})
    assert main(["gen-data", "--config", cfg]) == 0
    assert "warning" in capsys.readouterr().err


def test_dry_run_prints_counts(tmp_path, capsys):
    assert main(["train-teacher", "--config", tiny_config(tmp_path), "--dry-run"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["config"] == "ok" and doc["teacher"]["params"] > doc["student"]["params"] > 0


def test_invalid_stride_is_named_config_error(tmp_path, capsys):
    cfg = tiny_config(tmp_path, sampler={"stride": 4})
    assert main(["train-teacher", "--config", cfg, "--dry-run"]) == 2
    assert "stride_divides_teacher_frames" in capsys.readouterr().err


def test_missing_dataset_and_teacher_are_file_errors(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    assert main(["train-teacher", "--config", cfg]) == 3
    assert main(["gen-data", "--config", cfg]) == 0
    assert main(["distill", "--config", cfg, "--teacher-ckpt", str(tmp_path / "nope.ckpt")]) == 3
    assert "not found" in capsys.readouterr().err
    assert main(["distill", "--config", cfg]) == 2


def test_distill_and_eval(workdir, capsys):
    d, cfg = workdir
    teacher = str(d / "runs/teacher/teacher.ckpt")
    assert main(["distill", "--config", cfg, "--teacher-ckpt", teacher]) == 0
    log = [json.loads(ln) for ln in (d / "runs/student/log.jsonl").read_text().splitlines()]
    assert [r["emb_phase"] for r in log] == ["direct", "pooled", "pooled"]
    capsys.readouterr()
    ckpt = str(d / "runs/student/student.ckpt")
    assert main(["eval", "--ckpt", ckpt, "--data", str(d / "d.scjd"), "--out", str(d / "r1.json")]) == 0
    assert main(["eval", "--ckpt", ckpt, "--data", str(d / "d.scjd"), "--out", str(d / "r2.json")]) == 0
    assert (d / "r1.json").read_text() == (d / "r2.json").read_text()
    rep = json.loads((d / "r1.json").read_text())
    assert len(rep["per_joint_mpjpe"]) == 17 and rep["num_poses"] == 2 * 20


def test_zero_weight_config_matches_no_distill_flag(workdir, tmp_path):
    d, cfg = workdir
    zero = tiny_config(tmp_path, distill={"alpha": 0.0, "beta": 0.0, "gamma": 0.0},
                       data={"path": str(d / "d.scjd")})
    teacher = str(d / "runs/teacher/teacher.ckpt")
    assert main(["distill", "--config", cfg, "--no-distill", "--out", str(tmp_path / "a")]) == 0
    assert main(["distill", "--config", zero, "--teacher-ckpt", teacher, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/student.ckpt").read_bytes() == (tmp_path / "b/student.ckpt").read_bytes()


def test_teacher_resume_via_cli(workdir, tmp_path):
    d, cfg = workdir
    from scjd.train import train_teacher, load_model, param_checksum
    from scjd.data import load_dataset
    from scjd.skeleton import build_h36m17

    train_teacher(load_dataset(d / "d.scjd"), TINY_TEACHER, TINY_OPT, TINY_LOOP, build_h36m17(), tmp_path / "r", stop_after=1)
    assert main(["train-teacher", "--config", cfg, "--out", str(tmp_path / "r"), "--resume"]) == 0
    assert param_checksum(load_model(tmp_path / "r/teacher.ckpt")) == param_checksum(load_model(d / "runs/teacher/teacher.ckpt"))


def test_ablate_small_spec(workdir, tmp_path, capsys):
    d, cfg = workdir
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"rows": [["no_attn"], "full"], "seeds": [0]}))
    out = tmp_path / "abl"
    teacher = str(d / "runs/teacher/teacher.ckpt")
    assert main(["ablate", "--config", cfg, "--spec", str(spec), "--teacher-ckpt", teacher, "--out", str(out)]) == 0
    rows = [json.loads(ln) for ln in (out / "table.jsonl").read_text().splitlines()]
    assert [r["row"] for r in rows] == ["w/o attn", "full"]
    log = (out / "no_attn/seed0/log.jsonl").read_text()
    assert '"attn"' not in log and '"emb"' in log
    assert "MPJPE" in capsys.readouterr().out


def test_ablate_bad_spec(workdir, tmp_path):
    d, cfg = workdir
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"rows": [["no_everything"]]}))
    assert main(["ablate", "--config", cfg, "--spec", str(spec)]) == 2


def test_flops_command(tmp_path, capsys):
    assert main(["flops", "--config", tiny_config(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.count(": PASS") == 3
    doc = json.loads(out[: out.rindex("}") + 1])
    assert set(doc["teacher"]["breakdown"]) >= {"spatial_encoder", "temporal_encoder", "head"}
    assert doc["reference_ratio"]["ratio"] < 0.25
