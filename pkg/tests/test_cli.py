import os

import pytest
import yaml

from lucoda import io
from lucoda.cli import build_parser, experiment_params, main, rerun_from_manifest
from lucoda.errors import SpecError


def test_parser_flags():
    args = build_parser().parse_args(
        ["fit", "--experiment", "beta-hurdle", "--seed", "5", "--out", "o", "--threads", "2", "--config", "c.yaml"]
    )
    assert (args.command, args.experiment, args.seed, args.out, args.threads) == ("fit", "beta-hurdle", 5, "o", 2)
    with pytest.raises(SystemExit):
        build_parser().parse_args(["fit", "--experiment", "nope"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["report"])


def test_experiment_params_overrides():
    cfg = io.RunConfig(command="fit", experiment="beta-hurdle",
                       sections={"data": {"n_areas": 12}, "model": {"phi": 5.0}})
    p = experiment_params("beta-hurdle", cfg)
    assert (p.n_areas, p.phi) == (12, 5.0)
    with pytest.raises(SpecError) as e:
        experiment_params("beta-hurdle", io.RunConfig(sections={"fit": {"nonsense": 1}}))
    assert e.value.path == "fit.nonsense"


@pytest.mark.parametrize("name", io.EXPERIMENTS)
def test_simulate_every_experiment(tmp_path, name, capsys):
    assert main(["simulate", "--experiment", name, "--seed", "3", "--out", str(tmp_path)]) == 0
    man = io.read_manifest(tmp_path / name / "manifest.yaml")
    assert man["seeds"] == [3]
    assert man["experiment"] == name
    for rel, digest in man["outputs"].items():
        assert io.file_digest(tmp_path / rel) == digest
        assert "__" in rel or rel.endswith((".json", ".txt", ".yaml"))
    if name == "alr-downscale":
        assert "simulated" in man["notes"]["covariates"]


def test_simulate_needs_seed(tmp_path, capsys):
    assert main(["simulate", "--experiment", "beta-hurdle", "--out", str(tmp_path)]) == 2
    assert "seed" in capsys.readouterr().err


def test_unknown_config_key_fails(tmp_path, capsys):
    c = tmp_path / "c.yaml"
    c.write_text(yaml.safe_dump({"model": {"warp": 9}}))
    rc = main(["simulate", "--experiment", "beta-hurdle", "--seed", "1", "--config", str(c), "--out", str(tmp_path)])
    assert rc == 2
    assert "model.warp" in capsys.readouterr().err


def test_fit_and_report_reproduce(tmp_path, capsys):
    c = tmp_path / "c.yaml"
    c.write_text(yaml.safe_dump({"geometry": {"n_areas": 20, "mesh_n": 10, "lattice_n": 12}}))
    out = tmp_path / "a"
    assert main(["fit", "--experiment", "beta-downscale", "--seed", "8", "--config", str(c), "--out", str(out)]) == 0
    files = os.listdir(out / "beta-downscale")
    for f in ("fixed__summary.csv", "u__posterior.csv", "hyper__summary.csv", "hyper__grid.csv", "u__lattice.csv",
              "recovery__summary.csv", "manifest.yaml"):
        assert f in files
    _, rows, _ = io.read_table(out / "beta-downscale" / "u__lattice.csv")
    assert len(rows) == 144
    manifest = out / "beta-downscale" / "manifest.yaml"
    ok, diffs = rerun_from_manifest(manifest, str(tmp_path / "b"))
    assert ok, diffs
    capsys.readouterr()
    assert main(["report", "--manifest", str(manifest), "--out", str(tmp_path / "c")]) == 0
    assert "identical" in capsys.readouterr().out
