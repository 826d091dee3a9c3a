import json
from pathlib import Path

import pytest

from gfnloss import cli
from gfnloss.config import EnvConfig, EvalConfig, ExperimentConfig, TrainingConfig
from gfnloss.errors import ConfigError
from gfnloss.runner import RunFailure, RunSummary, aggregate, run_experiment, run_suite

SMALL = """
[experiment]
name = tiny

[env]
kind = hypergrid
D = 2
H = 4

[model]
hidden_width = 8

[training]
seed = 3
trajectories = 320

[eval]
interval = 5
"""


def tiny(**training):
    cfg = ExperimentConfig.from_text(SMALL)
    if training:
        cfg = ExperimentConfig(name=cfg.name, env=cfg.env, model=cfg.model,
                               training=TrainingConfig(**{"seed": 3, "trajectories": 320, **training}),
                               eval=cfg.eval)
    return cfg


# ---------------------------------------------------------------- config


def test_text_round_trip_and_hash():
    cfg = tiny()
    again = ExperimentConfig.from_text(cfg.to_text())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()
    assert cfg.with_seed(4).config_hash() != cfg.config_hash()


def test_hash_ignores_name():
    from dataclasses import replace

    cfg = tiny()
    assert replace(cfg, name="other").config_hash() == cfg.config_hash()


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[env]\ncolour = red\n",
    "[env]\nD = two\n",
    "[env]\nkind = maze\n",
    "[env]\nkind = dag\n",
    "[objective]\nvariant = XB\n",
    "[objective]\nbackward = random\n",
    "[loss]\nname = huber\n",
    "[training]\ntrajectories = 0\n",
    "[training]\nlr = -1\n",
    "[sampler]\nmode = backward\n",
    "[eval]\nspearman = approximate\n",
    "[experiment]\nname = x\nextra = 1\n",
    "not an ini",
])
def test_invalid_configs_raise(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(text)


def test_custom_loss_section():
    cfg = ExperimentConfig.from_text("[loss]\nname = mine\n[losses]\nmine = t*t/2\n")
    assert cfg.custom_losses == {"mine": "t*t/2"}


def test_full_scale():
    cfg = ExperimentConfig()
    assert (cfg.full_scale().env.D, cfg.full_scale().env.H) == (4, 20)
    bits = ExperimentConfig(env=EnvConfig(kind="bitseq")).full_scale().env
    assert (bits.n, bits.k, bits.n_modes) == (120, 8, 60)
    dag = ExperimentConfig(env=EnvConfig(kind="diamond"))
    assert dag.full_scale() == dag


def test_load_uses_file_stem(tmp_path):
    p = tmp_path / "alpha.ini"
    p.write_text("[env]\nkind = diamond\n")
    assert ExperimentConfig.load(p).name == "alpha"


def test_window_default():
    assert tiny().window == 32
    assert ExperimentConfig(eval=EvalConfig(window=7)).window == 7


# ---------------------------------------------------------------- runner


def test_run_is_byte_deterministic(tmp_path):
    cfg = tiny()
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()
    assert a.final == b.final
    lines = (tmp_path / "a" / "metrics.csv").read_text().splitlines()
    assert len(lines) == 1 + 1 + 20 // 5
    assert ExperimentConfig.from_text((tmp_path / "a" / "config.ini").read_text()) == cfg


def test_different_seeds_differ(tmp_path):
    a = run_experiment(tiny(seed=1), write=False)
    b = run_experiment(tiny(seed=2), write=False)
    assert a.final.l1_exact != b.final.l1_exact


def test_run_counts_and_summary(out_dir):
    s = run_experiment(tiny())
    assert (s.steps, s.trajectories) == (20, 320)
    assert (out_dir / "tiny-s3" / "summary.json").exists()
    assert json.loads(s.to_json())["seed"] == 3


def test_stop_when_all_modes():
    cfg = ExperimentConfig(env=EnvConfig(kind="bitseq"), model=tiny().model,
                           training=TrainingConfig(trajectories=5000, stop_when_all_modes=True),
                           eval=EvalConfig(interval=1000, l1="none"))
    s = run_experiment(cfg, write=False)
    assert s.trajectories_to_all_modes == s.trajectories < 5000
    assert s.final.modes_found == 4


def test_suite_isolates_failures(out_dir):
    good = tiny()
    bad = ExperimentConfig(name="bad", env=EnvConfig(kind="dag", dag_file=str(out_dir / "missing.dag")))
    results = run_suite([good, bad], write=False)
    assert isinstance(results[0], RunSummary) and isinstance(results[1], RunFailure)
    assert "FileNotFoundError" in results[1].error
    stats = {g.name: g for g in aggregate(results)}
    assert stats["bad"].failures == 1 and stats["tiny"].failures == 0
    assert stats["tiny"].median_final_l1 == results[0].final.l1_exact


def test_suite_empty_and_parallel():
    assert run_suite([]) == []
    cfgs = [tiny(seed=s) for s in (1, 2)]
    serial = run_suite(cfgs, write=False)
    parallel = run_suite(cfgs, parallelism=2, write=False)
    assert [r.final for r in serial] == [r.final for r in parallel]


# ------------------------------------------------------------------- CLI


def test_cli_run_and_suite(out_dir, tmp_path, capsys):
    cfg_dir = tmp_path / "cfgs"
    cfg_dir.mkdir()
    (cfg_dir / "tiny.ini").write_text(SMALL)
    assert cli.main(["run", str(cfg_dir / "tiny.ini"), "--seed", "5"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 5
    assert (out_dir / "tiny-s5" / "metrics.csv").exists()
    assert cli.main(["suite", str(cfg_dir), "--seeds", "1,2"]) == 0
    groups = json.loads((out_dir / "suite_summary.json").read_text())
    assert groups[0]["runs"] == 2


def test_cli_suite_empty_dir(tmp_path, capsys):
    assert cli.main(["suite", str(tmp_path)]) == 1
    assert "no *.ini" in capsys.readouterr().err


def test_cli_suite_reports_failure(out_dir, tmp_path, capsys):
    (tmp_path / "bad.ini").write_text(f"[env]\nkind = dag\ndag_file = {tmp_path / 'nope.dag'}\n")
    assert cli.main(["suite", str(tmp_path)]) == 1
    assert "FAILED bad" in capsys.readouterr().err


def test_cli_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "x.ini"
    p.write_text("[env]\nkind = maze\n")
    assert cli.main(["run", str(p)]) == 2
    assert "ConfigError" in capsys.readouterr().err


def test_cli_full_bitseq_is_infeasible(tmp_path, capsys):
    p = tmp_path / "b.ini"
    p.write_text("[env]\nkind = bitseq\n")
    assert cli.main(["run", str(p), "--full"]) == 2
    assert "InfeasibleEnumeration" in capsys.readouterr().err


def test_cli_classify(capsys):
    expected = {"quadratic": (True, False), "linex1": (False, True),
                "linex_half": (False, False), "shifted_cosh": (True, True)}
    for name, (zf, za) in expected.items():
        assert cli.main(["classify", name]) == 0
        out = json.loads(capsys.readouterr().out)
        assert (out["zero_forcing"], out["zero_avoiding"]) == (zf, za)
    assert cli.main(["classify", "sq", "--expr", "t*t/2"]) == 0
    assert json.loads(capsys.readouterr().out)["zero_forcing"] is True


def test_cli_convert_g_to_f(capsys):
    assert cli.main(["convert", "--g", "quadratic", "--points", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "t,f(t)" and len(lines) == 4
    t, f = map(float, lines[2].split(","))
    assert t == 1.0 and abs(f) < 1e-12


def test_cli_convert_f_to_g(capsys):
    import math

    assert cli.main(["convert", "--f", "t*log(t) - t + 1", "--points", "7"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "t,g(t)"
    for line in lines[1:]:
        t, g = map(float, line.split(","))
        assert g == pytest.approx(math.exp(t) - 1 - t, abs=1e-6)


def test_cli_unknown_loss(capsys):
    assert cli.main(["classify", "huber"]) == 2


def test_cli_seed_parsing():
    with pytest.raises(SystemExit):
        cli.main(["suite", ".", "--seeds", "a,b"])


def test_cli_verify_small(out_dir, capsys):
    assert cli.main(["verify", "--seeds", "0"]) == 0
    assert "pass at tol=1e-06" in capsys.readouterr().out
    rows = (out_dir / "verify_report.csv").read_text().splitlines()
    assert rows[0] == "dag_seed,loss,case,family,max_rel_error,pass"
    assert len(rows) > 1 and all(r.endswith(",1") for r in rows[1:])


CONFIG_DIR = Path(__file__).parents[1] / "configs"


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.ini")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = ExperimentConfig.load(path)
    assert cfg.name == path.stem


def test_custom_loss_config_trains():
    cfg = ExperimentConfig.load(CONFIG_DIR / "diamond_custom_loss.ini")
    s = run_experiment(cfg, write=False)
    assert s.loss == "pseudo_huber" and s.final.l1_exact < 0.05
