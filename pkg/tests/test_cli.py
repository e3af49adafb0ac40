import csv
import json

import numpy as np
import pytest
import yaml

from mtident import cli, pipeline
from mtident.datagen import ConfigError

TINY = {
    "version": 1,
    "name": "tiny",
    "seeds": [1, 2],
    "generator": {"d": 3, "n_causal": 2, "n_tasks": 20, "n_per_task": 30},
    "mtrn": {"arch": "none"},
    "mtlcm": {"train": {"learning_rate": 0.02, "max_epochs": 150, "patience": 150}, "trace_every": 25},
}

TINY_MLP = {
    "version": 1,
    "name": "tiny-mlp",
    "seeds": [4],
    "generator": {"d": 3, "n_causal": 1, "obs_dim": 5, "mixing_kind": "random-mlp", "n_tasks": 12, "n_per_task": 40},
    "mtrn": {"arch": "mlp", "train": {"max_epochs": 3, "patience": 3, "learning_rate": 0.005}},
    "mtlcm": {"train": {"max_epochs": 60, "patience": 60}, "grid_s": [0.1, 0.2], "grid_o": [0.05],
              "select_epochs": 20},
}


def write_cfg(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


def test_run_writes_artifacts(tmp_path, capsys):
    cfg = write_cfg(tmp_path, TINY)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--output", str(out)]) == 0
    for s in (1, 2):
        assert (out / f"seed_{s}" / "mtrn.json").exists()
        assert (out / f"seed_{s}" / "mtlcm.json").exists()
        rep = json.loads((out / f"report_{s}.json").read_text())
        assert rep["metadata"]["seed"] == s
        assert rep["metadata"]["code_version"] == pipeline.CODE_VERSION
        assert 0 <= rep["strong_mcc"] <= 1
    rows = list(csv.DictReader(open(out / "results.csv")))
    assert len(rows) == 1 and rows[0]["seeds"] == "1;2"
    assert list(rows[0]) == list(pipeline.RESULT_COLUMNS)
    assert "strong_mcc_mean" in capsys.readouterr().out


def test_artifacts_embed_hash_and_seed(tmp_path):
    cfg = pipeline.config_from_dict(TINY)
    pipeline.run_experiment(cfg, tmp_path / "o")
    h = cfg.hash()
    for s in (1, 2):
        for name in ("mtrn.json", "mtlcm.json"):
            doc = json.loads((tmp_path / "o" / f"seed_{s}" / name).read_text())
            assert doc["config_hash"] == h and doc["seed"] == s and doc["code_version"]
        rep = json.loads((tmp_path / "o" / f"report_{s}.json").read_text())
        text = (tmp_path / "o" / f"seed_{s}" / "mtlcm.json").read_text()
        assert rep["metadata"]["mtlcm_checkpoint_sha256"] == pipeline._sha(text)


def test_refuses_existing_output(tmp_path, capsys):
    cfg = write_cfg(tmp_path, TINY)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--output", str(out), "--seed", "1"]) == 0
    assert cli.main(["run", "--config", str(cfg), "--output", str(out), "--seed", "1"]) == 3
    assert "--force" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(cfg), "--output", str(out), "--seed", "1", "--force"]) == 0


def test_force_rerun_bit_identical(tmp_path):
    cfg = write_cfg(tmp_path, TINY)
    out = tmp_path / "out"
    cli.main(["run", "--config", str(cfg), "--output", str(out)])
    first = {p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file()}
    cli.main(["run", "--config", str(cfg), "--output", str(out), "--force"])
    second = {p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file()}
    assert first == second


def test_threads_match_serial(tmp_path):
    cfg = pipeline.config_from_dict(TINY)
    pipeline.run_experiment(cfg, tmp_path / "serial")
    pipeline.run_experiment(cfg, tmp_path / "pool", threads=2)
    assert (tmp_path / "serial" / "results.csv").read_bytes() == (tmp_path / "pool" / "results.csv").read_bytes()
    assert (tmp_path / "serial" / "report_2.json").read_bytes() == (tmp_path / "pool" / "report_2.json").read_bytes()


def test_env_overrides_output(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, {**TINY, "seeds": [1]})
    monkeypatch.setenv("MTIDENT_OUTPUT_DIR", str(tmp_path / "envout"))
    assert cli.main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "envout" / "results.csv").exists()


def test_mlp_pipeline_with_grid(tmp_path):
    cfg = pipeline.config_from_dict(TINY_MLP)
    row = pipeline.run_experiment(cfg, tmp_path / "o")
    rep = json.loads((tmp_path / "o" / "report_4.json").read_text())
    assert rep["metadata"]["sigma_o"] == 0.05
    assert len(rep["metadata"]["sigma_scores"]) == 2
    assert rep["metadata"]["mtrn_head_rank"]["latent_dim"] == 3
    assert rep["metadata"]["hard_refine"] is False
    assert float(row["weak_mcc_mean"]) > 0


def test_failure_leaves_marker(tmp_path, monkeypatch):
    cfg = pipeline.config_from_dict({**TINY, "seeds": [1]})

    def boom(*a, **k):
        raise ArithmeticError("diverged")

    monkeypatch.setattr(pipeline.mtlcm, "fit", boom)
    with pytest.raises(ArithmeticError):
        pipeline.run_experiment(cfg, tmp_path / "o")
    assert "diverged" in (tmp_path / "o" / "FAILED").read_text()
    assert (tmp_path / "o" / "config.json").exists()


def test_generate_subcommand(tmp_path):
    cfg = write_cfg(tmp_path, TINY)
    assert cli.main(["generate", "--config", str(cfg), "--output", str(tmp_path / "g"), "--seed", "7"]) == 0
    from mtident.dataset import load_dataset

    ds = load_dataset(tmp_path / "g" / "seed_7")
    assert ds.n_tasks == 20 and ds.meta["seed"] == 7


def test_plotdata(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {**TINY, "seeds": [1]})
    out = tmp_path / "out"
    cli.main(["run", "--config", str(cfg), "--output", str(out)])
    capsys.readouterr()
    assert cli.main(["plotdata", str(out / "report_1.json")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "step,metric,value,run_id"
    assert {ln.split(",")[3] for ln in lines[1:]} == {"tiny:1"}
    assert {ln.split(",")[1] for ln in lines[1:]} == {"objective", "strong_mcc"}


def test_plotdata_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["plotdata"])
    assert exc.value.code == 2
    bad = tmp_path / "r.json"
    bad.write_text(json.dumps({"metadata": {"traces": {}}}))
    assert cli.main(["plotdata", str(bad)]) == 1


def test_reproduce_unknown_table():
    with pytest.raises(SystemExit) as exc:
        cli.main(["reproduce", "table9"])
    assert exc.value.code == 2


def test_reproduce_presets():
    t1 = pipeline.table1_configs("desk")
    assert [(c.generator.d, c.generator.n_causal) for c in t1] == [(3, 2), (5, 2), (5, 4)]
    assert all(c.seeds == [1, 2, 3, 4, 5] and c.generator.n_tasks == 200 for c in t1)
    t2 = pipeline.table2_configs("desk")
    assert len(t2) == 1 and (t2[0].generator.obs_dim, t2[0].generator.n_causal, t2[0].generator.d) == (50, 4, 20)
    assert t2[0].mtrn.hidden == 100
    assert len(pipeline.table2_configs("paper")) == 9


def test_format_table_verdicts():
    row = {"name": "x", "d": 3, "n_causal": 2, "strong_mcc_mean": "0.99", "strong_mcc_std": "0.001",
           "strong_mcc_min": "0.98", "indicator_accuracy_min": "1.0"}
    assert "PASS" in pipeline.format_table("table1", [row])
    assert "FAIL" in pipeline.format_table("table1", [dict(row, strong_mcc_min="0.9")])
    assert "99.95" in pipeline.format_table("table1", [row])


@pytest.mark.parametrize(
    "patch, msg",
    [
        ({"seeds": []}, "seeds"),
        ({"seeds": [1, 1]}, "distinct"),
        ({"bogus": 1}, "unknown"),
        ({"real_data": {"features_path": "a", "targets_path": "b"}}, "exactly one"),
        ({"mtrn": {"arch": "cnn"}}, "arch"),
        ({"mtlcm": {"grid_s": [0.1]}}, "grid"),
        ({"mtlcm": {"train": {"learning_rate": -1}}}, "learning_rate"),
        ({"generator": {"d": 3, "n_causal": 5}}, "n_causal"),
        ({"version": 2}, "version"),
        ({"generator": {"d": 3, "obs_dim": 5, "mixing_kind": "random-mlp"}}, "obs_dim"),
    ],
)
def test_config_validation(patch, msg):
    with pytest.raises(ConfigError, match=msg):
        pipeline.config_from_dict({**TINY, **patch})


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {**TINY, "seeds": []})
    assert cli.main(["run", "--config", str(cfg), "--output", str(tmp_path / "o")]) == 1
    assert "seeds" in capsys.readouterr().err


def test_config_hash_ignores_output_dir():
    a = pipeline.config_from_dict(TINY)
    b = pipeline.config_from_dict({**TINY, "output_dir": "elsewhere"})
    c = pipeline.config_from_dict({**TINY, "seeds": [1, 3]})
    assert a.hash() == b.hash() != c.hash()


def test_ingest_subcommand(tmp_path):
    f = tmp_path / "unique_m.csv"
    t = tmp_path / "train.csv"
    f.write_text("H,O,critical_temp,material\n1,2,10,HO2\n2,1,20,H2O\n0,3,5,O3\n")
    t.write_text("number_of_elements,mean_x,std_y,critical_temp\n2,1.0,3.0,10\n2,2.0,1.0,20\n1,4.0,2.0,5\n")
    out = tmp_path / "ds"
    rc = cli.main(["ingest-superconduct", "--features", str(f), "--targets", str(t), "--output", str(out)])
    assert rc == 1  # row count differs from the reference 21263
    from mtident import ingest

    ds = ingest.load_superconductivity(ingest.RealDatasetSpec(str(f), str(t), n_expected_rows=3))
    assert ds.n_tasks == 2


def test_ingest_help_mentions_source(capsys):
    with pytest.raises(SystemExit):
        cli.main(["ingest-superconduct", "--help"])
    assert "UCI" in capsys.readouterr().out


def test_real_data_pipeline_pairwise(tmp_path, monkeypatch):
    rng = np.random.default_rng(0)
    n = 300
    counts = rng.integers(0, 4, size=(n, 4))
    lines = ["A,B,C,D,critical_temp,material"] + [",".join(map(str, r)) + ",1.0,X" for r in counts]
    (tmp_path / "f.csv").write_text("\n".join(lines) + "\n")
    W = rng.normal(size=(4, 8))
    Y = counts @ W + 0.1 * rng.normal(size=(n, 8))
    head = ",".join(f"t{j}" for j in range(8))
    lines = [f"number_of_elements,{head},critical_temp"] + [
        "1," + ",".join(repr(float(v)) for v in r) + ",1.0" for r in Y
    ]
    (tmp_path / "t.csv").write_text("\n".join(lines) + "\n")
    cfg = pipeline.config_from_dict({
        "version": 1, "name": "real", "seeds": [1, 2],
        "real_data": {"features_path": str(tmp_path / "f.csv"), "targets_path": str(tmp_path / "t.csv"),
                      "n_expected_rows": n},
        "mtrn": {"arch": "linear", "latent_dim": 2, "train": {"max_epochs": 5, "patience": 5}},
        "mtlcm": {"train": {"max_epochs": 50, "patience": 50}},
    })
    row = pipeline.run_experiment(cfg, tmp_path / "o")
    pw = json.loads((tmp_path / "o" / "pairwise.json").read_text())
    assert len(pw["strong"]["scores"]) == 1
    assert row["data"] == "real" and row["pairwise_strong_mean"] != ""
