import pytest

from scjd import config as C
from scjd.data import ConfigError
from scjd.experiments import COMPONENT_ABLATION, TOGGLES, AblationSpec, configure_row, render_table, row_label, worker_count


def test_table5_layout():
    assert [row_label(r) for r in COMPONENT_ABLATION.rows] == ["w/o emb", "w/o attn", "w/o temp", "full"]
    assert len(COMPONENT_ABLATION.rows) * len(COMPONENT_ABLATION.seeds) == 12


@pytest.mark.parametrize("toggle,field", [("no_emb", "alpha"), ("no_attn", "beta"), ("no_temp", "gamma")])
def test_each_toggle_zeroes_one_weight(toggle, field):
    cfg = C.RunConfig()
    _, dc, plan = configure_row(cfg, (toggle,))
    for f in ("alpha", "beta", "gamma"):
        assert (getattr(dc, f) == 0) == (f == field)
    assert not plan.no_sampling


def test_no_distill_and_no_sampling_rows():
    cfg = C.RunConfig()
    student, dc, _ = configure_row(cfg, ("no_distill",))
    assert dc.alpha == dc.beta == dc.gamma == 0 and student == cfg.student
    student, dc, plan = configure_row(cfg, ("no_sampling", "no_distill"))
    assert plan.no_sampling and not student.has_upsampler and dc.gamma == 0
    assert plan.sample_indices(27, 9, 3).tolist() == list(range(9, 18))
    _, _, plan = configure_row(cfg, ("no_self_loop_mask",))
    assert plan.mask_self_loops is False


def test_spec_parsing_and_validation():
    spec = AblationSpec.from_dict({"rows": ["full", ["no_emb", "no_attn"]], "seeds": [4]})
    assert spec.rows == ((), ("no_emb", "no_attn")) and spec.seeds == (4,)
    assert AblationSpec.from_dict(spec.to_dict()) == spec
    for bad in ({"rows": []}, {"rows": [["nope"]]}, {"seeds": [1]}, {"rows": ["full"], "seeds": []}):
        with pytest.raises(ConfigError):
            AblationSpec.from_dict(bad)
    assert set(TOGGLES) == {"no_sampling", "no_distill", "no_emb", "no_attn", "no_temp", "no_self_loop_mask"}


def test_render_table():
    rows = [{"row": "full", "mpjpe_mean": 50.0, "mpjpe_std": 1.25, "pck150_mean": 0.9, "auc_mean": 0.5}]
    text = render_table(rows)
    assert "50.00 ± 1.25" in text and text.splitlines()[0].startswith("row")


def test_worker_count(monkeypatch):
    monkeypatch.setenv("SCJD_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("SCJD_THREADS", "x")
    with pytest.raises(ConfigError):
        worker_count()
