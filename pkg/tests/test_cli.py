"""Command-line behavior: exit codes, outputs, manifests, reproducibility."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from neurtv.cli import main
from neurtv.dataio import (
    ObservationTable,
    image_to_table,
    read_image,
    write_image,
    write_observation_table,
    write_pgm,
)


def _digest_tree(root):
    """Per-file digests with the manifest timestamp stripped."""
    digests = {}
    for path in sorted(Path(root).rglob("*")):
        if path.is_dir():
            continue
        data = path.read_bytes()
        if path.name == "manifest.txt":
            data = b"\n".join(
                line for line in data.splitlines()
                if not line.startswith(b"written_at=")
            )
        digests[str(path.relative_to(root))] = hashlib.sha256(data).hexdigest()
    return digests


def _manifest_dict(path):
    entries = {}
    for line in Path(path).read_text().splitlines():
        key, _, value = line.partition("=")
        entries[key] = value
    return entries


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-data")
    rng = np.random.default_rng(0)

    clean = np.full((12, 12), 0.3)
    clean[3:9, 4:10] = 0.75
    noisy = np.clip(clean + rng.normal(0.0, 0.1, clean.shape), 0.0, 1.0)
    write_pgm(root / "clean.pgm", clean)
    write_pgm(root / "noisy.pgm", noisy)

    x, y = np.meshgrid(np.linspace(0, 1, 10), np.linspace(0, 1, 10), indexing="ij")
    smooth = 0.5 + 0.35 * np.sin(2.5 * x + 1.0) * np.cos(2.0 * y)
    write_pgm(root / "smooth.pgm", smooth)
    mask = rng.random((10, 10)) < 0.45
    mask[0, 0] = True
    write_image(root / "mask.png", mask.astype(float))

    # CSV twin of the masked image, built from the quantized PGM values so
    # the two inpaint input routes see identical observations.
    quantized = read_image(root / "smooth.pgm")
    table = image_to_table(quantized)
    keep = mask.reshape(-1)
    write_observation_table(
        ObservationTable(table.coords[keep], table.values[keep]), root / "obs.csv"
    )

    for k in range(3):
        band = np.clip(smooth * (0.6 + 0.15 * k), 0.0, 1.0)
        write_pgm(root / f"band{k}.pgm", band)

    pts = rng.random((150, 3))
    coords = np.hstack([pts, np.full((150, 1), 0.5)])
    values = 0.4 + 0.3 * np.sin(3 * pts[:, 0]) * np.cos(2.5 * pts[:, 1]) + 0.2 * pts[:, 2]
    write_observation_table(
        ObservationTable(coords[:120], values[:120]), root / "pc_obs.csv",
        ("x", "y", "z", "C", "v"),
    )
    write_observation_table(
        ObservationTable(coords[120:], values[120:]), root / "pc_query.csv",
        ("x", "y", "z", "C", "v"),
    )

    spots = rng.random((90, 2))
    gene = np.repeat([0.0, 1.0], 45)[:, None]
    expr = 0.3 + 0.5 * np.exp(-np.sum((spots - 0.4) ** 2, axis=1) / 0.1) + 0.1 * gene[:, 0]
    write_observation_table(
        ObservationTable(np.hstack([spots, gene])[:70], expr[:70]), root / "tx_obs.csv",
        ("x", "y", "g", "v"),
    )
    with open(root / "tx_query.csv", "w") as fh:
        fh.write("x,y,g\n")
        for row in np.hstack([spots, gene])[70:]:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    with open(root / "bad.csv", "w") as fh:
        fh.write("x,y,v\n0.1,0.2,0.3\n0.4,oops,0.6\n")
    return root


class TestExitCodes:
    def test_no_subcommand_is_usage_error(self, capsys):
        assert main([]) == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_subcommand(self):
        assert main(["sharpen"]) == 1

    def test_unknown_flag(self, data_dir, tmp_path):
        argv = ["denoise", "--in", str(data_dir / "noisy.pgm"),
                "--out", str(tmp_path), "--bogus"]
        assert main(argv) == 1

    def test_negative_lambda_names_the_flag(self, data_dir, tmp_path, capsys):
        argv = ["denoise", "--in", str(data_dir / "noisy.pgm"),
                "--out", str(tmp_path), "--lambda", "-1"]
        assert main(argv) == 1
        assert "--lambda" in capsys.readouterr().err

    def test_bad_gamma_names_the_flag(self, data_dir, tmp_path, capsys):
        argv = ["hsi", "--in", str(data_dir / "band0.pgm"),
                "--out", str(tmp_path), "--gamma", "0"]
        assert main(argv) == 1
        assert "--gamma" in capsys.readouterr().err

    def test_missing_input_file_is_data_error(self, tmp_path, capsys):
        argv = ["denoise", "--in", str(tmp_path / "nope.pgm"), "--out", str(tmp_path)]
        assert main(argv) == 2
        assert "nope.pgm" in capsys.readouterr().err

    def test_malformed_table_reports_line(self, data_dir, tmp_path, capsys):
        argv = ["inpaint", "--in", str(data_dir / "bad.csv"), "--out", str(tmp_path)]
        assert main(argv) == 2
        assert "3" in capsys.readouterr().err  # offending line number

    def test_unknown_config_key_is_data_error(self, data_dir, tmp_path, capsys):
        config = tmp_path / "cfg.txt"
        config.write_text("sharpness=3\n")
        argv = ["denoise", "--in", str(data_dir / "noisy.pgm"),
                "--out", str(tmp_path / "o"), "--config", str(config)]
        assert main(argv) == 2
        assert "sharpness" in capsys.readouterr().err

    def test_bad_config_value_is_data_error(self, data_dir, tmp_path):
        config = tmp_path / "cfg.txt"
        config.write_text("lambda=not-a-number\n")
        argv = ["denoise", "--in", str(data_dir / "noisy.pgm"),
                "--out", str(tmp_path / "o"), "--config", str(config)]
        assert main(argv) == 2

    def test_missing_config_file_is_data_error(self, data_dir, tmp_path):
        argv = ["denoise", "--in", str(data_dir / "noisy.pgm"),
                "--out", str(tmp_path / "o"), "--config", str(tmp_path / "none.txt")]
        assert main(argv) == 2

    def test_seed_and_seeds_conflict(self, data_dir, tmp_path):
        argv = ["denoise", "--in", str(data_dir / "noisy.pgm"),
                "--out", str(tmp_path), "--seed", "1", "--seeds", "1,2"]
        assert main(argv) == 1

    def test_image_inpaint_requires_mask(self, data_dir, tmp_path, capsys):
        argv = ["inpaint", "--in", str(data_dir / "smooth.pgm"), "--out", str(tmp_path)]
        assert main(argv) == 1
        assert "--mask" in capsys.readouterr().err

    def test_bad_worker_env_is_usage_error(self, data_dir, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("NEURTV_THREADS", "many")
        argv = ["denoise", "--in", str(data_dir / "noisy.pgm"), "--out", str(tmp_path)]
        assert main(argv) == 1
        assert "NEURTV_THREADS" in capsys.readouterr().err

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "denoise" in capsys.readouterr().out


@pytest.fixture(scope="module")
def runs(data_dir, tmp_path_factory):
    outs = [tmp_path_factory.mktemp(f"den{i}") / "run" for i in range(2)]
    for out in outs:
        argv = ["denoise", "--in", str(data_dir / "noisy.pgm"),
                "--ref", str(data_dir / "clean.pgm"), "--out", str(out),
                "--iterations", "150", "--width", "24", "--seed", "0"]
        assert main(argv) == 0
    return outs


class TestDenoiseCommand:
    def test_outputs_and_figures_side_by_side(self, runs):
        names = {p.name for p in runs[0].iterdir()}
        assert {"recovered.png", "panels.png", "loss_trace.csv", "loss_trace.png",
                "metrics.txt", "metrics.json", "manifest.txt"} <= names

    def test_rerun_is_byte_identical(self, runs):
        assert _digest_tree(runs[0]) == _digest_tree(runs[1])

    def test_manifest_contents(self, runs, data_dir):
        entries = _manifest_dict(runs[0] / "manifest.txt")
        assert entries["command"] == "denoise"
        assert entries["seed"] == "0"
        assert entries["input.0"] == str(data_dir / "noisy.pgm")
        assert entries["config.iterations"] == "150"
        assert entries["config.regularizer.kind"] == "space-variant"
        assert "written_at" in entries

    def test_metrics_emitted_as_text_and_json(self, runs):
        entries = dict(
            line.split("=", 1)
            for line in (runs[0] / "metrics.txt").read_text().splitlines()
        )
        with open(runs[0] / "metrics.json") as fh:
            scores = json.load(fh)
        assert set(entries) == set(scores)
        assert float(entries["psnr"]) == pytest.approx(scores["psnr"])
        assert scores["psnr"] > scores["input.psnr"]

    def test_seed_sweep_with_parallel_jobs(self, data_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("NEURTV_THREADS", "2")
        argv = ["denoise", "--in", str(data_dir / "noisy.pgm"), "--out", str(tmp_path),
                "--iterations", "60", "--width", "16", "--seeds", "0,1", "--jobs", "4"]
        assert main(argv) == 0
        assert (tmp_path / "seed0" / "recovered.png").exists()
        assert (tmp_path / "seed1" / "manifest.txt").exists()
        sweep = (tmp_path / "sweep.csv").read_text().splitlines()
        assert sweep[0].startswith("label,seed,lambda")
        assert len(sweep) == 3

    def test_lambda_sweep_layout(self, data_dir, tmp_path):
        argv = ["denoise", "--in", str(data_dir / "noisy.pgm"), "--out", str(tmp_path),
                "--iterations", "50", "--width", "16", "--lambdas", "0,0.016"]
        assert main(argv) == 0
        assert (tmp_path / "lam0" / "metrics.txt").exists()
        assert (tmp_path / "lam0.016" / "metrics.txt").exists()

    def test_flags_override_config_file(self, data_dir, tmp_path):
        config = tmp_path / "cfg.txt"
        config.write_text("iterations=400\nlambda=0.02\nwidth=16\n# comment\n")
        out = tmp_path / "run"
        argv = ["denoise", "--in", str(data_dir / "noisy.pgm"), "--out", str(out),
                "--config", str(config), "--iterations", "70"]
        assert main(argv) == 0
        entries = _manifest_dict(out / "manifest.txt")
        assert entries["config.iterations"] == "70"
        assert entries["config.lam"] == "0.02"
        assert entries["config.width"] == "16"
        assert entries["config"] == str(config)


class TestInpaintCommand:
    def test_csv_and_mask_routes_agree(self, data_dir, tmp_path):
        base = ["--iterations", "150", "--width", "24", "--seed", "0"]
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        argv = ["inpaint", "--in", str(data_dir / "smooth.pgm"),
                "--mask", str(data_dir / "mask.png"), "--out", str(out_a)] + base
        assert main(argv) == 0
        argv = ["inpaint", "--in", str(data_dir / "obs.csv"),
                "--shape", "10,10", "--out", str(out_b)] + base
        assert main(argv) == 0
        a = (out_a / "recovered.png").read_bytes()
        b = (out_b / "recovered.png").read_bytes()
        assert a == b

    def test_reference_metrics(self, data_dir, tmp_path):
        argv = ["inpaint", "--in", str(data_dir / "smooth.pgm"),
                "--mask", str(data_dir / "mask.png"),
                "--ref", str(data_dir / "smooth.pgm"), "--out", str(tmp_path),
                "--iterations", "120", "--width", "24"]
        assert main(argv) == 0
        text = (tmp_path / "metrics.txt").read_text()
        assert "psnr=" in text and "observed_fraction=" in text

    def test_duplicate_rows_rejected(self, data_dir, tmp_path):
        dup = tmp_path / "dup.csv"
        dup.write_text("x1,x2,v\n0,0,0.5\n0,0,0.5\n")
        argv = ["inpaint", "--in", str(dup), "--out", str(tmp_path / "o")]
        assert main(argv) == 2


class TestHsiCommand:
    def test_cube_outputs(self, data_dir, tmp_path):
        bands = [str(data_dir / f"band{k}.pgm") for k in range(3)]
        argv = ["hsi", "--in"] + bands + ["--out", str(tmp_path),
                "--iterations", "120", "--width", "16"]
        assert main(argv) == 0
        names = {p.name for p in tmp_path.iterdir()}
        assert {"recovered_band00.png", "recovered_band02.png",
                "sparse_band01.png", "panels.png", "metrics.txt"} <= names

    def test_band_shape_mismatch(self, data_dir, tmp_path):
        small = tmp_path / "small.pgm"
        write_pgm(small, np.zeros((4, 4)))
        argv = ["hsi", "--in", str(data_dir / "band0.pgm"), str(small),
                "--out", str(tmp_path / "o")]
        assert main(argv) == 2


class TestScatteredCommands:
    def test_pointcloud_with_reference_query(self, data_dir, tmp_path):
        argv = ["pointcloud", "--in", str(data_dir / "pc_obs.csv"),
                "--query", str(data_dir / "pc_query.csv"), "--out", str(tmp_path),
                "--iterations", "200", "--width", "24"]
        assert main(argv) == 0
        text = (tmp_path / "metrics.txt").read_text()
        assert "r_square=" in text and "mse=" in text
        header = (tmp_path / "predictions.csv").read_text().splitlines()[0]
        assert header == "x,y,z,C,v"
        assert (tmp_path / "observations.png").exists()
        assert (tmp_path / "predictions.png").exists()

    def test_transcriptomics_query_without_values(self, data_dir, tmp_path):
        argv = ["transcriptomics", "--in", str(data_dir / "tx_obs.csv"),
                "--query", str(data_dir / "tx_query.csv"), "--out", str(tmp_path),
                "--iterations", "150", "--width", "24"]
        assert main(argv) == 0
        text = (tmp_path / "metrics.txt").read_text()
        assert "r_square" not in text
        rows = (tmp_path / "predictions.csv").read_text().splitlines()
        assert rows[0] == "x,y,g,v"
        assert len(rows) == 21

    def test_wrong_query_header_rejected(self, data_dir, tmp_path, capsys):
        argv = ["pointcloud", "--in", str(data_dir / "pc_obs.csv"),
                "--query", str(data_dir / "tx_obs.csv"), "--out", str(tmp_path)]
        assert main(argv) == 2
        assert "header" in capsys.readouterr().err

    def test_wrong_header_rejected(self, data_dir, tmp_path, capsys):
        argv = ["pointcloud", "--in", str(data_dir / "tx_obs.csv"),
                "--query", str(data_dir / "pc_query.csv"), "--out", str(tmp_path)]
        assert main(argv) == 2
        assert "header" in capsys.readouterr().err


class TestVarlabCommand:
    def test_truncation_study_files(self, tmp_path, capsys):
        out = tmp_path / "err.csv"
        argv = ["varlab", "--study", "truncation", "--fn", "quad",
                "--nmax", "256", "--out", str(out)]
        assert main(argv) == 0
        rows = out.read_text().splitlines()
        assert rows[0] == "n,mode,value,exact,error"
        assert (tmp_path / "err_curves.png").exists()
        assert (tmp_path / "err_manifest.txt").exists()
        assert "wrote" in capsys.readouterr().out

    def test_truncation_rerun_is_byte_identical(self, tmp_path):
        argvs = [["varlab", "--study", "truncation", "--fn", "halfpow",
                  "--nmax", "128", "--out", str(tmp_path / f"{tag}.csv")]
                 for tag in ("a", "b")]
        for argv in argvs:
            assert main(argv) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a_curves.png").read_bytes() == \
            (tmp_path / "b_curves.png").read_bytes()

    def test_shift_study_files(self, tmp_path):
        out = tmp_path / "shift.csv"
        argv = ["varlab", "--study", "shift", "--fn", "halfpow",
                "--j", "1", "--out", str(out)]
        assert main(argv) == 0
        rows = out.read_text().splitlines()
        assert rows[0] == "n,j,delta,r_uniform,r_shifted,difference"
        assert len(rows) == 7
        assert (tmp_path / "shift_curves.png").exists()

    def test_shift_precondition_names_study(self, tmp_path, capsys):
        argv = ["varlab", "--study", "shift", "--fn", "quad",
                "--out", str(tmp_path / "s.csv")]
        assert main(argv) == 1
        assert "curvature" in capsys.readouterr().err

    def test_unknown_function_is_usage_error(self, tmp_path):
        argv = ["varlab", "--study", "truncation", "--fn", "mystery",
                "--out", str(tmp_path / "e.csv")]
        assert main(argv) == 1

    def test_bad_nmax_is_usage_error(self, tmp_path, capsys):
        argv = ["varlab", "--study", "truncation", "--fn", "quad",
                "--nmin", "64", "--nmax", "8", "--out", str(tmp_path / "e.csv")]
        assert main(argv) == 1
        assert "--nmax" in capsys.readouterr().err


class TestGradcheckCommand:
    def test_all_checks_pass(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "pass" in out and "FAIL" not in out
        assert "19 of 19 checks passed" in out

    def test_report_file(self, tmp_path):
        assert main(["gradcheck", "--out", str(tmp_path)]) == 0
        report = (tmp_path / "gradcheck.txt").read_text()
        assert report.count("pass") >= 19
        assert (tmp_path / "manifest.txt").exists()
