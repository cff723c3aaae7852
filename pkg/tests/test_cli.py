import filecmp
from pathlib import Path

import numpy as np
import pytest

from elastic import load_report, make_linear_schedule, make_procedural_dataset
from elastic.cli import (
    RunConfig,
    compare_fusion_scores,
    main,
    parse_config,
    run_compare_fusion,
    run_dump_dataset,
    run_generate,
    run_sweep,
)

FAST = ["--steps", "4", "--per-class", "1"]


def run_twice(argv, tmp_path):
    """Invoke the CLI twice into sibling directories; return both dirs."""
    dirs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(argv + ["--out", str(out)]) == 0
        dirs.append(out)
    return dirs


def assert_trees_identical(a: Path, b: Path):
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b and files_a
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), f"{rel} differs"


class TestParseConfig:
    def test_generate_defaults_match_paper_constants(self):
        cfg = parse_config(["generate"])
        assert cfg.steps == 50
        assert cfg.guidance == 7.0
        assert cfg.resample_fraction == 0.2
        assert cfg.rrg_delta == 200.0
        assert cfg.rrg_cutoff == 0.6
        assert cfg.resample_iters is None
        assert cfg.strategy == "implicit"

    def test_target_and_seed(self):
        cfg = parse_config(["generate", "--target", "128x128", "--seed", "7"])
        assert (cfg.target_h, cfg.target_w) == (128, 128)
        assert cfg.seed == 7

    def test_bad_fraction_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            parse_config(["generate", "--resample-fraction", "1.5"])
        assert exc.value.code == 2

    @pytest.mark.parametrize(
        "argv",
        [
            ["generate", "--target", "128"],
            ["generate", "--target", "0x64"],
            ["generate", "--guidance", "-3"],
            ["generate", "--class", "nonsense"],
            ["generate", "--strategy", "bilinear"],
            ["generate", "--seed", "-1"],
            ["generate", "--rrg-cutoff", "0"],
            ["sweep", "--axis", "R"],
            ["frobnicate"],
        ],
    )
    def test_usage_errors_exit_2(self, argv):
        with pytest.raises(SystemExit) as exc:
            parse_config(argv)
        assert exc.value.code == 2

    def test_dump_dataset_seed_goes_to_dataset(self):
        cfg = parse_config(["dump-dataset", "--seed", "5"])
        assert cfg.dataset_seed == 5


class TestGenerate:
    def test_writes_image_and_report(self, tmp_path):
        out = tmp_path / "g"
        code = main(["generate", "--target", "96x64", "--seed", "1", *FAST, "--out", str(out)])
        assert code == 0
        assert (out / "image.pgm").exists()
        report = load_report(out / "report.txt")
        assert report.header["target"] == "96x64"
        assert len(report.rows) == 4
        assert report.rows[0]["patch_calls"] == 3

    def test_determinism_byte_identical(self, tmp_path):
        argv = ["generate", "--target", "96x64", "--seed", "3", *FAST]
        a, b = run_twice(argv, tmp_path)
        assert_trees_identical(a, b)

    def test_trace_writes_reference_snapshots(self, tmp_path):
        out = tmp_path / "t"
        main(["generate", "--target", "96x64", "--seed", "2", "--trace", *FAST, "--out", str(out)])
        snaps = sorted((out / "trace").glob("ref_step*.pgm"))
        assert len(snaps) == 4

    def test_png_format(self, tmp_path):
        out = tmp_path / "p"
        main(["generate", "--target", "64x64", "--seed", "2", "--format", "png", *FAST, "--out", str(out)])
        data = (out / "image.png").read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"

    def test_report_header_reparses_to_same_run(self, tmp_path):
        out = tmp_path / "r"
        main(["generate", "--target", "96x64", "--seed", "5", *FAST, "--out", str(out)])
        header = load_report(out / "report.txt").header
        argv = [
            "generate",
            "--target", header["target"],
            "--class", header["class"],
            "--steps", str(header["steps"]),
            "--guidance", str(header["guidance"]),
            "--resample-iters", str(header["resample_iters"]),
            "--resample-fraction", str(header["resample_fraction"]),
            "--rrg-delta", str(header["rrg_delta"]),
            "--rrg-cutoff", str(header["rrg_cutoff"]),
            "--seed", str(header["seed"]),
            "--dataset-seed", str(header["dataset_seed"]),
            "--per-class", str(header["per_class"]),
            "--strategy", header["strategy"],
            "--format", header["format"],
        ]
        cfg = parse_config(argv)
        out2 = tmp_path / "r2"
        run_generate(RunConfig(**{**cfg.__dict__, "out": str(out2)}))
        assert (out / "image.pgm").read_bytes() == (out2 / "image.pgm").read_bytes()

    def test_runtime_error_exits_1(self, tmp_path, monkeypatch):
        # unwritable output directory -> runtime failure, not usage
        target = tmp_path / "file"
        target.write_text("occupied")
        code = main(["generate", "--target", "64x64", *FAST, "--out", str(target)])
        assert code == 1


class TestCompareFusion:
    def test_quoted_call_counts(self, tmp_path):
        out = tmp_path / "c"
        code = main(["compare-fusion", "--target", "128x128", "--seed", "0", "--stride", "8",
                     "--steps", "50", "--per-class", "1", "--out", str(out)])
        assert code == 0
        report = load_report(out / "report.txt")
        calls = {row["strategy"]: row["calls"] for row in report.rows}
        assert calls["implicit"] == 9
        assert calls["explicit:8"] == 81
        assert calls["none"] == 4

    def test_explicit_native_stride_matches_naive(self, ds_default, sched50):
        _, results = compare_fusion_scores(128, 128, 3, 64, ds_default, sched50)
        np.testing.assert_allclose(results["explicit:64"][0], results["none"][0], atol=1e-12)

    def test_determinism(self, tmp_path):
        argv = ["compare-fusion", "--target", "128x128", "--seed", "4", "--stride", "32",
                "--steps", "8", "--per-class", "1"]
        a, b = run_twice(argv, tmp_path)
        assert_trees_identical(a, b)

    def test_target_not_larger_than_native_exits_1(self, tmp_path):
        code = main(["compare-fusion", "--target", "64x64", "--out", str(tmp_path / "x")])
        assert code == 1

    def test_report_roundtrip(self, tmp_path):
        out = tmp_path / "rt"
        cfg = parse_config(["compare-fusion", "--target", "128x128", "--steps", "8",
                            "--per-class", "1", "--out", str(out)])
        report = run_compare_fusion(cfg)
        loaded = load_report(out / "report.txt")
        assert loaded.header == report.header
        assert loaded.rows == report.rows


class TestSweep:
    def test_resampling_bookkeeping(self, tmp_path):
        out = tmp_path / "s"
        code = main(["sweep", "--axis", "R", "--values", "0,2,4", "--target", "128x128",
                     "--seed", "1", *FAST, "--out", str(out)])
        assert code == 0
        summary = load_report(out / "summary.txt")
        fractions = [row["resampled_fraction"] for row in summary.rows]
        unit = 819 / 4096  # round(0.2 * 64 * 64) / (64 * 64)
        np.testing.assert_allclose(fractions, [0.0, 2 * unit, 4 * unit])

    def test_delta_axis_traces(self, tmp_path):
        out = tmp_path / "d"
        main(["sweep", "--axis", "delta", "--values", "0,200", "--target", "64x64",
              "--seed", "1", *FAST, "--out", str(out)])
        summary = load_report(out / "summary.txt")
        assert [row["delta0"] for row in summary.rows] == [0.0, 200.0]

    def test_target_axis_patch_calls(self, tmp_path):
        out = tmp_path / "t"
        main(["sweep", "--axis", "target", "--values", "64x64,96x64,128x128",
              "--resample-iters", "0", "--seed", "1", *FAST, "--out", str(out)])
        summary = load_report(out / "summary.txt")
        assert [row["patch_calls_per_step"] for row in summary.rows] == [1, 3, 9]

    def test_determinism(self, tmp_path):
        argv = ["sweep", "--axis", "R", "--values", "0,1", "--target", "96x96", "--seed", "2", *FAST]
        a, b = run_twice(argv, tmp_path)
        assert_trees_identical(a, b)


class TestDumpDataset:
    def test_writes_all_exemplars(self, tmp_path):
        out = tmp_path / "ds"
        code = main(["dump-dataset", "--seed", "0", "--per-class", "2", "--out", str(out)])
        assert code == 0
        report = load_report(out / "report.txt")
        assert len(report.rows) == 8
        for row in report.rows:
            assert (out / row["file"]).exists()

    def test_determinism(self, tmp_path):
        argv = ["dump-dataset", "--seed", "0", "--per-class", "1"]
        a, b = run_twice(argv, tmp_path)
        assert_trees_identical(a, b)
