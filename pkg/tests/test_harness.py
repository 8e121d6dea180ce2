import csv
from dataclasses import replace

import numpy as np
import pytest

from ghostbench import cli
from ghostbench.core import RoiSpec, load_image
from ghostbench.forward import read_measurements_csv
from ghostbench.harness import (
    CSV_COLUMNS, ConfigError, ExperimentConfig, ExperimentResult, _worker_count,
    config_from_mapping, derive_seed, emit_reports, image_name, load_config, parse_config_text,
    run_experiment, run_noise_sweep, run_resolution_scaling,
)
from ghostbench.patterns import read_pattern_stack


def small_config(tmp_path, **kw):
    base = dict(actual_resolution=16, methods=("UCGI", "TSVCGI"), measurement_counts=(40, 80),
                seeds=(0, 1), max_iterations=60, output_dir=str(tmp_path / "run"))
    base.update(kw)
    return ExperimentConfig(**base)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- configuration ------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(methods=())
    with pytest.raises(ConfigError):
        ExperimentConfig(methods=("XCGI",))
    with pytest.raises(ConfigError, match="unsatisfiable"):
        ExperimentConfig(lowest_resolution=48)
    with pytest.raises(ConfigError):
        ExperimentConfig(actual_resolution=16, measurement_counts=(300,))
    with pytest.raises(ConfigError):
        ExperimentConfig(seeds=())
    with pytest.raises(ConfigError):
        ExperimentConfig(noise_sigmas=(-1.0,))
    with pytest.raises(ConfigError):
        ExperimentConfig(roi=RoiSpec(500, 500, 4))


def test_defaults_follow_resolution():
    cfg = ExperimentConfig(actual_resolution=64)
    assert cfg.m1_for(64) == 8
    assert cfg.roi_for(64) == RoiSpec(32, 32, 16)
    explicit = ExperimentConfig(actual_resolution=64, roi=RoiSpec(20, 30, 8))
    assert explicit.roi_for(32) == RoiSpec(10, 15, 4)


def test_config_file_with_comments_and_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# desk run\nresolution = 32\nmethods = ucgi, TVCGI  # two methods\n"
                    "counts = 100,200\nseeds = 3\nroi = 16,16,8\n\nisotropic = yes\n")
    cfg = load_config(path, {"seeds": "4,5", "out": str(tmp_path / "o")})
    assert cfg.actual_resolution == 32 and cfg.methods == ("UCGI", "TVCGI")
    assert cfg.measurement_counts == (100, 200) and cfg.seeds == (4, 5)
    assert cfg.roi == RoiSpec(16, 16, 8) and cfg.isotropic


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("colour = red\n")
    with pytest.raises(ConfigError):
        parse_config_text("just words\n")
    with pytest.raises(ConfigError):
        config_from_mapping({"counts": "ten"})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_config_mapping_round_trip():
    cfg = ExperimentConfig(actual_resolution=32, methods=("TSVCGI",), measurement_counts=(10, 20),
                           noise_sigmas=(0.0, 0.01, 0.1 + 0.2), roi=RoiSpec(10.5, 12, 7),
                           seeds=(1, 2), tolerance=1e-5, isotropic=True, workers=2)
    assert config_from_mapping(cfg.to_mapping()) == cfg


def test_derive_seed():
    assert derive_seed(7, "patterns") == derive_seed(7, "patterns")
    assert derive_seed(7, "patterns") != derive_seed(7, "noise")
    assert derive_seed(7, "noise") != derive_seed(8, "noise")
    assert 0 <= derive_seed(0, "x") < 2**64


def test_worker_count(monkeypatch):
    cfg = ExperimentConfig(workers=None)
    monkeypatch.setenv("GHOSTBENCH_THREADS", "3")
    assert _worker_count(cfg, 10) == 3
    assert _worker_count(cfg, 2) == 2
    assert _worker_count(replace(cfg, workers=8), 10) == 3
    monkeypatch.delenv("GHOSTBENCH_THREADS")
    assert _worker_count(replace(cfg, workers=5), 10) == 5


# -- runs -----------------------------------------------------------------------------

def test_experiment_outputs(tmp_path):
    cfg = small_config(tmp_path)
    result = run_experiment(cfg)
    out = tmp_path / "run"
    rows = read_rows(out / "results.csv")
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) - 1 == 2 * 2 * 1 * 2 == len(result.rows)
    for r in result.rows:
        assert np.isfinite(r.psnr_full_db) and np.isfinite(r.psnr_roi_db)
        img = load_image(out / image_name(r.method, r.T, r.sigma, r.seed))
        assert img.shape == (16, 16)
    assert (out / "UCGI_T40_s0_seed1.pgm").exists()
    stack = read_pattern_stack(out / "stacks" / "TSVCGI_seed0.gpat")
    assert stack.count == 80 and stack.family == "tsv"
    manifest = (out / "manifest.txt").read_text()
    assert "ghostbench" in manifest and "backend" in manifest and "row seed 1" in manifest


def test_rows_are_reproducible_from_manifest(tmp_path):
    first = run_experiment(small_config(tmp_path, noise_sigmas=(0.0, 0.02)))
    again = load_config(tmp_path / "run" / "manifest.txt", {"out": str(tmp_path / "again")})
    second = run_experiment(again)
    assert first.to_csv(with_wall=False) == second.to_csv(with_wall=False)
    for name in ("UCGI_seed0.gpat", "TSVCGI_seed1.gpat"):
        a = (tmp_path / "run" / "stacks" / name).read_bytes()
        assert a == (tmp_path / "again" / "stacks" / name).read_bytes()


def test_thread_count_does_not_change_results(tmp_path):
    one = run_experiment(small_config(tmp_path, workers=1, measurement_counts=(40,)), emit=False)
    many = run_experiment(small_config(tmp_path, workers=4, measurement_counts=(40,)), emit=False)
    assert one.to_csv(with_wall=False) == many.to_csv(with_wall=False)


def test_noise_sweep_zero_sigma_matches_experiment(tmp_path):
    cfg = small_config(tmp_path, measurement_counts=(60,))
    plain = run_experiment(cfg, emit=False)
    sweep = run_noise_sweep(replace(cfg, noise_sigmas=(0.0, 0.01, 0.03)), emit=False)
    assert len(sweep.rows) == 3 * len(plain.rows)
    for row in plain.rows:
        match = sweep.select(method=row.method, T=row.T, seed=row.seed, sigma=0.0)[0]
        assert replace(match, wall_ms=0) == replace(row, wall_ms=0)


def test_full_sampling_is_near_exact(tmp_path):
    cfg = small_config(tmp_path, methods=("UCGI",), measurement_counts=(256,), seeds=(0,),
                       max_iterations=300)
    row = run_experiment(cfg, emit=False).rows[0]
    assert row.psnr_full_db >= 30


def test_scaling_identical_resolutions(tmp_path):
    cfg = small_config(tmp_path, measurement_counts=(40, 80), resolutions=(16, 16))
    out = run_resolution_scaling(cfg)
    assert out.delta.shape == (2, 2)
    assert np.array_equal(out.delta[:, 0], out.delta[:, 1])
    table = (tmp_path / "run" / "delta_psnr.csv").read_text().splitlines()
    assert table[0] == "T,delta_roi_db_16x16,delta_roi_db_16x16" and len(table) == 3


def test_emit_errors(tmp_path):
    result = run_experiment(small_config(tmp_path, methods=("UCGI",), measurement_counts=(20,),
                                         seeds=(0,)), emit=False)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ConfigError):
        emit_reports(result, blocker / "sub")
    with pytest.raises(ConfigError):
        emit_reports(ExperimentResult(result.config, 16, []), tmp_path / "empty")


# -- CLI -------------------------------------------------------------------------------

def test_cli_pipeline(tmp_path, capsys):
    stack, data, image = tmp_path / "p.gpat", tmp_path / "i.csv", tmp_path / "r.pgm"
    assert cli.main(["patterns", "--method", "TSVCGI", "--resolution", "16", "--count", "120",
                     "--roi", "8,8,4", "--m1", "4", "--seed", "3", "--out", str(stack)]) == 0
    seq = read_pattern_stack(stack)
    assert seq.count == 120 and seq.family == "tsv" and seq.seed == 3
    assert cli.main(["measure", "--stack", str(stack), "--object", "peppers", "--sigma", "0.5",
                     "--seed", "9", "--out", str(data)]) == 0
    assert read_measurements_csv(data).count == 120
    assert cli.main(["reconstruct", "--stack", str(stack), "--intensities", str(data),
                     "--out", str(image)]) == 0
    assert load_image(image).shape == (16, 16)
    assert "iterations" in capsys.readouterr().out


def test_cli_experiment_with_config(tmp_path, capsys):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("resolution = 16\nmethods = UCGI\ncounts = 30\nmax_iterations = 20\n")
    out = tmp_path / "o"
    assert cli.main(["experiment", "--config", str(cfg), "--seeds", "1,2", "--out", str(out)]) == 0
    assert len(read_rows(out / "results.csv")) == 3
    assert cli.main(["noise-sweep", "--config", str(cfg), "--sigmas", "0,0.05", "--seed", "4",
                     "--out", str(tmp_path / "n")]) == 0
    rows = read_rows(tmp_path / "n" / "results.csv")
    assert [r[2] for r in rows[1:]] == ["0", "0.05"] and rows[1][3] == "4"
    assert cli.main(["scaling", "--config", str(cfg), "--resolutions", "8,16",
                     "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "delta_psnr.csv").exists()
    assert "results in" in capsys.readouterr().out


def test_cli_reports_errors(tmp_path, capsys):
    assert cli.main(["experiment", "--methods", "", "--out", str(tmp_path)]) == 2
    assert cli.main(["experiment", "--resolution", "64", "--m1", "48"]) == 2
    assert cli.main(["measure", "--stack", str(tmp_path / "none.gpat")]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["bogus"])
