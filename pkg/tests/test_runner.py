import json
import math

import numpy as np
import pytest

from collapsesim.cli import main
from collapsesim.md.checkpoint import load_particles
from collapsesim.runner import (
    ARGON,
    ConfigError,
    ProtocolError,
    RunConfig,
    Species,
    convert_units,
    run_protocol,
    run_wigner_suite,
)

SMALL = dict(n=800, t_rev=0.5, equilibration_steps=200, seed=3)


def test_defaults_and_derived_quantities():
    c = RunConfig()
    assert (c.density, c.n, c.dt, c.t_rev, c.noise_amplitude, c.noise_temp) == (0.7, 16384, 0.0025, 50.0, 1e-4, 0.5863)
    assert c.gamma == pytest.approx(1e-8 / (2 * 0.5863), rel=1e-14)
    assert c.box_length == pytest.approx(math.sqrt(16384 / 0.7), abs=1e-11)
    assert c.rev_steps == 20_000


def test_config_text_round_trip():
    c = RunConfig(n=1000, seed=9, modes=(2, 3), output_dir="x y")
    assert RunConfig.from_text(c.to_text()) == c
    assert RunConfig.from_text(c.to_text()).config_hash == c.config_hash


def test_config_parsing_comments_and_overrides():
    text = "# desk run\nn = 1200  # particles\n\nseed=4\n"
    c = RunConfig.from_text(text, seed="5", t_rev=None)
    assert c.n == 1200 and c.seed == 5 and c.t_rev == 50.0


@pytest.mark.parametrize("text", ["colour = red", "n = many", "n 5", "n = 7",
                                  "noise_amplitude = 1e-3\ngamma = 1.0"])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_unit_conversion_for_argon():
    report = convert_units(RunConfig(), ARGON)
    assert report["tau_s"] == pytest.approx(2.151e-12, rel=5e-4)
    assert report["momentum_diffusion_J2s_per_m2"] == pytest.approx(2.554e-43, rel=5e-4)
    assert report["noise_temp_K"] == pytest.approx(70.356, rel=5e-5)
    with pytest.raises(ValueError):
        Species(sigma=-1.0, epsilon=1.0, mass=1.0)


@pytest.fixture(scope="module")
def protocol_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("proto")
    config = RunConfig(output_dir=str(out), **SMALL)
    return config, run_protocol(config)


def test_manifest_lists_every_stage(protocol_run):
    config, manifest = protocol_run
    names = [s["stage"] for s in manifest["stages"]]
    assert names == ["equilibrate_left", "equilibrate_right", "join", "forward", "reverse", "rerun_deterministic",
                     "rerun_grw_noise", "rerun_dissipative_grw"]
    stages = {s["stage"]: s for s in manifest["stages"]}
    assert stages["reverse"]["inputs"]["forward.clmd"] == stages["forward"]["outputs"]["forward.clmd"]
    rerun_inputs = {json.dumps(stages[f"rerun_{m}"]["inputs"]) for m in
                    ("deterministic", "grw_noise", "dissipative_grw")}
    assert len(rerun_inputs) == 1
    forward_checkpoints = [k for k in stages["forward"]["outputs"] if k.startswith("forward_")
                           and k.endswith(".clmd")]
    assert len(forward_checkpoints) == config.checkpoints_per_forward - 1


def test_csvs_carry_config_hash(protocol_run):
    config, _ = protocol_run
    from pathlib import Path

    text = (Path(config.output_dir) / "forward_modes.csv").read_text().splitlines()
    assert text[0] == f"# config_hash={config.config_hash}"
    assert text[1] == "t,n_x,re,im,abs"
    rows = [r.split(",") for r in text[2:]]
    assert {int(r[1]) for r in rows} == {1, 4, 14}
    assert len(rows) == 3 * (config.rev_steps // config.sample_every + 1)


def test_deterministic_rerun_returns_to_joined_state(protocol_run):
    config, manifest = protocol_run
    from pathlib import Path

    out = Path(config.output_dir)
    joined = load_particles(out / "join.clmd")
    back = load_particles(out / "rerun_deterministic.clmd")
    assert np.array_equal(joined.positions, back.positions)
    assert np.array_equal(joined.velocities, -back.velocities)
    assert manifest["summary"]["restore_error_deterministic"] == 0.0


def test_rerun_reproduces_bit_exactly(protocol_run, tmp_path):
    config, manifest = protocol_run
    again = run_protocol(config, stages=("rerun_grw_noise",))
    first = {s["stage"]: s for s in manifest["stages"]}["rerun_grw_noise"]
    assert again["stages"][0]["outputs"] == first["outputs"]


def test_whole_protocol_manifest_identical(protocol_run, tmp_path):
    config, manifest = protocol_run
    other = run_protocol(config.with_(output_dir=str(tmp_path)))
    strip = lambda m: [{k: v for k, v in s.items()} for s in m["stages"]]
    assert strip(other) == strip(manifest)
    assert other["summary"] == manifest["summary"]


def test_missing_checkpoint_is_protocol_error(tmp_path):
    config = RunConfig(output_dir=str(tmp_path), **SMALL)
    with pytest.raises(ProtocolError) as info:
        run_protocol(config, stages=("forward",))
    assert info.value.stage == "forward"


def test_wigner_suite_rows(tmp_path):
    rows = run_wigner_suite(checks=["dp_total_rate", "master_vs_fokker_planck"], csv_path=tmp_path / "w.csv",
                            comment="suite")
    assert [r["check"] for r in rows] == ["dp_total_rate", "master_vs_fokker_planck"]
    assert all(r["passed"] for r in rows)
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "# suite" and lines[1].startswith("check,measured,analytic")
    with pytest.raises(ValueError):
        run_wigner_suite(checks=["nope"])


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["convert-units"]) == 0
    assert "tau_s" in capsys.readouterr().out
    assert main(["wigner-suite", "--checks", "dp_total_rate"]) == 0
    assert main(["protocol", "--stages", "reverse", "--output-dir", str(tmp_path), "--quiet"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("flavour = 1\n")
    assert main(["equilibrate", "--config", str(bad)]) == 2


def test_cli_analyze(protocol_run, tmp_path, capsys):
    config, _ = protocol_run
    from pathlib import Path

    code = main(["analyze", str(Path(config.output_dir) / "join.clmd"), "--output-dir", str(tmp_path),
                 "--factorization"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n"] == config.n
    assert (tmp_path / "join_profile.csv").exists() and (tmp_path / "join_factorization.csv").exists()
