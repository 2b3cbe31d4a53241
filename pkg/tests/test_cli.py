"""End-to-end checks of the command-line surface: exit codes, config
validation, output layout, and reproducibility of the written tables."""

import json

import pytest

from stirvoter.cli import ConfigError, ExperimentConfig, main


def write_config(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


SIM_DOC = {
    "experiment": "simulate",
    "seed": 21,
    "workers": 1,
    "parameters": {
        "n": 8,
        "d": 1,
        "rho": 0.5,
        "a_n": 2.0,
        "rates": "ssep",
        "replicas": 6,
        "modes": [{"kind": "fourier_cos", "m": [1]}],
        "sample_times": [0.0, 0.05],
        "join_targets": True,
    },
}


def sim_config(tmp_path, **extra):
    doc = json.loads(json.dumps(SIM_DOC))
    doc["outdir"] = str(tmp_path / "out")
    doc.update(extra)
    return write_config(tmp_path / "sim.json", doc)


def only_run_dir(tmp_path, experiment):
    runs = sorted((tmp_path / "out" / experiment).iterdir())
    assert len(runs) == 1
    return runs[0]


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------


def test_missing_config_file_is_a_usage_error(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "missing.toml-like")]) == 2


def test_unknown_subcommand_is_a_usage_error(capsys):
    assert main(["frobnicate"]) == 2
    capsys.readouterr()


def test_no_subcommand_prints_help(capsys):
    assert main([]) == 2
    assert "verify" in capsys.readouterr().out


def test_unknown_top_level_key_rejected(tmp_path):
    doc = dict(SIM_DOC, plotting=True)
    assert main(["simulate", "--config", write_config(tmp_path / "c.json", doc)]) == 2


def test_unknown_parameter_key_rejected(tmp_path):
    path = sim_config(tmp_path)
    assert main(["simulate", "--config", path, "--set", "parameters.bogus=1"]) == 2


def test_malformed_json_rejected(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["simulate", "--config", str(path)]) == 2


def test_wrong_experiment_name_rejected(tmp_path):
    path = sim_config(tmp_path)
    assert main(["bg", "--config", path]) == 2


def test_replica_failure_exits_one(tmp_path, capsys):
    # a start string of the wrong length fails inside every replica
    path = sim_config(tmp_path)
    rc = main(["simulate", "--config", path, "--set", 'parameters.start="1111"'])
    assert rc == 1
    assert "failed" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# config object
# ---------------------------------------------------------------------------


def test_config_defaults_and_resolved():
    cfg = ExperimentConfig({"experiment": "simulate"})
    assert cfg.outdir == "runs"
    assert cfg.seed == 0
    assert cfg.workers >= 1  # defaults to the available cores
    resolved = cfg.resolved()
    assert set(resolved) == {"experiment", "parameters", "outdir", "seed", "workers"}


def test_config_rejects_unknown_experiment():
    with pytest.raises(ConfigError, match="unknown experiment"):
        ExperimentConfig({"experiment": "teleport"})


def test_override_paths_nest():
    cfg = ExperimentConfig.__new__(ExperimentConfig)  # not under test here
    del cfg
    from stirvoter.cli import _apply_override

    doc = {"experiment": "simulate"}
    _apply_override(doc, "parameters.n=16")
    _apply_override(doc, "parameters.rates=ssep")
    _apply_override(doc, "seed=9")
    assert doc["parameters"] == {"n": 16, "rates": "ssep"}
    assert doc["seed"] == 9
    with pytest.raises(ConfigError, match="key.path=value"):
        _apply_override(doc, "no-equals-sign")


# ---------------------------------------------------------------------------
# verify / she-targets / flow-scaling
# ---------------------------------------------------------------------------


def test_verify_preset_passes(capsys):
    assert main(["verify", "--preset", "ssep-d1"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
    assert "drift-vs-generator" in out


def test_verify_all_presets_write_outputs(tmp_path):
    assert main(["verify", "--outdir", str(tmp_path / "out")]) == 0
    run = only_run_dir(tmp_path, "verify")
    names = {p.name for p in run.iterdir()}
    assert names == {"identities.csv", "resolved_config.json", "verdict.json"}
    verdict = json.loads((run / "verdict.json").read_text())
    assert verdict["pass"] is True
    assert verdict["details"]["checks"] == 18  # six identities x three presets


def test_she_targets_prints_reference_value(capsys):
    rc = main(["she-targets", "--d", "1", "--rho", "0.5",
               "--modes", "1..4", "--t", "0.5"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "0.0126651" in out
    assert out.count("\n") == 6  # header + constant + four cosine modes


def test_she_targets_mode_list_forms_agree(capsys):
    main(["she-targets", "--modes", "1..3"])
    ranged = capsys.readouterr().out
    main(["she-targets", "--modes", "1,2,3"])
    assert capsys.readouterr().out == ranged


def test_flow_scaling_writes_table(tmp_path, capsys):
    rc = main(["flow-scaling", "--d", "1", "--ells", "4,8",
               "--outdir", str(tmp_path / "out")])
    assert rc == 0
    capsys.readouterr()
    run = only_run_dir(tmp_path, "flow-scaling")
    text = (run / "scaling.csv").read_text()
    assert text.splitlines()[0] == "ell,d,energy,g_d,ratio,residual"
    assert json.loads((run / "verdict.json").read_text())["pass"] is True


# ---------------------------------------------------------------------------
# experiment subcommands
# ---------------------------------------------------------------------------


def test_simulate_writes_run_layout(tmp_path, capsys):
    assert main(["simulate", "--config", sim_config(tmp_path)]) == 0
    capsys.readouterr()
    run = only_run_dir(tmp_path, "simulate")
    names = {p.name for p in run.iterdir()}
    assert names == {"report.csv", "resolved_config.json", "verdict.json"}
    resolved = json.loads((run / "resolved_config.json").read_text())
    assert resolved["seed"] == 21
    assert resolved["parameters"]["n"] == 8
    report = (run / "report.csv").read_text()
    assert report.startswith("statistic,observable,")
    verdict = json.loads((run / "verdict.json").read_text())
    assert verdict["experiment"] == "ensemble"
    assert verdict["pass"] is True


def test_simulate_reruns_are_byte_identical(tmp_path, capsys):
    path = sim_config(tmp_path)
    assert main(["simulate", "--config", path]) == 0
    assert main(["simulate", "--config", path]) == 0
    capsys.readouterr()
    runs = sorted((tmp_path / "out" / "simulate").iterdir())
    assert len(runs) == 2
    first = (runs[0] / "report.csv").read_bytes()
    second = (runs[1] / "report.csv").read_bytes()
    assert first == second


def test_simulate_set_override_lands_in_resolved_config(tmp_path, capsys):
    path = sim_config(tmp_path)
    assert main(["simulate", "--config", path,
                 "--set", "parameters.replicas=4", "--set", "seed=3",
                 "--set", "parameters.join_targets=false"]) == 0
    capsys.readouterr()
    run = only_run_dir(tmp_path, "simulate")
    resolved = json.loads((run / "resolved_config.json").read_text())
    assert resolved["parameters"]["replicas"] == 4
    assert resolved["seed"] == 3
    assert resolved["parameters"]["join_targets"] is False


def test_bad_mode_kind_is_config_error(tmp_path):
    path = sim_config(tmp_path)
    rc = main(["simulate", "--config", path,
               "--set", 'parameters.modes=[{"kind": "hermite", "m": [1]}]'])
    assert rc == 2


def test_entropy_subcommand(tmp_path, capsys):
    doc = {
        "experiment": "entropy",
        "outdir": str(tmp_path / "out"),
        "parameters": {
            "sizes": [6],
            "d": 1,
            "rho": 0.5,
            "a_n": 1.0,
            "rates": "ssep",
            "start_density": 0.6,
            "times": [0.0, 0.02, 0.04, 0.06],
        },
    }
    assert main(["entropy", "--config", write_config(tmp_path / "e.json", doc)]) == 0
    capsys.readouterr()
    run = only_run_dir(tmp_path, "entropy")
    verdict = json.loads((run / "verdict.json").read_text())
    assert verdict["experiment"] == "entropy-growth"
    assert verdict["pass"] is True
    header = (run / "report.csv").read_text().splitlines()[0]
    assert header == "n,d,a_n,H0,fitted_c0,rate_scale,violations,envelope_ok"


def test_bg_subcommand(tmp_path, capsys):
    doc = {
        "experiment": "bg",
        "seed": 5,
        "outdir": str(tmp_path / "out"),
        "workers": 1,
        "parameters": {
            "sizes": [8, 16],
            "d": 1,
            "rho": 0.5,
            "a_n": 1.5,
            "rates": "ssep",
            "f_sites": [[0], [1]],
            "mode": {"kind": "fourier_cos", "m": [1]},
            "horizon": 0.1,
            "replicas": 40,
        },
    }
    assert main(["bg", "--config", write_config(tmp_path / "b.json", doc)]) == 0
    out = capsys.readouterr().out
    assert "bg: PASS" in out
    run = only_run_dir(tmp_path, "bg")
    verdict = json.loads((run / "verdict.json").read_text())
    assert verdict["details"]["criterion"] == "monotone-trend-only"
