import json

import numpy as np
import pytest

from config.settings import RunConfig, Settings
from gocor.archive import RunArchive
from gocor.corrvol import global_corr
from gocor.fileio import load_feature_map, load_volume, read_pgm, save_feature_map
from main import GOCorCommandLine, main


@pytest.fixture
def settings(tmp_path):
    return Settings(ARCHIVE_DIR=tmp_path / "archive", EVAL_DIR=tmp_path / "eval")


@pytest.fixture
def scene_dir(tmp_path, settings):
    GOCorCommandLine(RunConfig(), settings).cmd_make_scene(tmp_path / "scene", seed=0)
    return tmp_path / "scene"


class TestSolveCommand:
    """solve: volume and loss trace from feature-map files."""

    def test_zero_iterations_is_normalized_correlation(self, tmp_path, settings, rng):
        f_r, f_q = rng.normal(size=(4, 4, 3)), rng.normal(size=(4, 4, 3))
        save_feature_map(tmp_path / "r.fmap", f_r)
        save_feature_map(tmp_path / "q.fmap", f_q)
        cli = GOCorCommandLine(RunConfig(num_iter=0), settings)
        assert cli.cmd_solve(tmp_path / "r.fmap", tmp_path / "q.fmap", tmp_path / "v.cvol") == 0
        unit = f_r / np.linalg.norm(f_r, axis=-1, keepdims=True)
        np.testing.assert_array_equal(load_volume(tmp_path / "v.cvol").data, global_corr(unit, f_q).data)

    def test_outputs_are_byte_identical(self, scene_dir, settings):
        cli = GOCorCommandLine(RunConfig(), settings)
        for name in ("a", "b"):
            cli.cmd_solve(scene_dir / "reference.fmap", scene_dir / "query.fmap", scene_dir / f"{name}.cvol")
        assert (scene_dir / "a.cvol").read_bytes() == (scene_dir / "b.cvol").read_bytes()
        assert (scene_dir / "a.trace.json").read_bytes() == (scene_dir / "b.trace.json").read_bytes()

    def test_trace_losses_positive(self, scene_dir, settings):
        cli = GOCorCommandLine(RunConfig(mode="local"), settings)
        cli.cmd_solve(scene_dir / "reference.fmap", scene_dir / "query.fmap", scene_dir / "v.cvol")
        losses = json.loads((scene_dir / "v.trace.json").read_text())["trace"]["losses"]
        assert len(losses) == 8
        assert all(np.isfinite(losses)) and all(l > 0 for l in losses)

    def test_single_precision_output(self, scene_dir, settings):
        cli = GOCorCommandLine(RunConfig(precision="f32"), settings)
        cli.cmd_solve(scene_dir / "reference.fmap", scene_dir / "query.fmap", scene_dir / "v.cvol")
        assert load_volume(scene_dir / "v.cvol").data.dtype == np.float32

    def test_bad_file_exits_with_format_error(self, tmp_path, capsys):
        (tmp_path / "bad.fmap").write_bytes(b"NOPE" + bytes(20))
        code = main(["solve", str(tmp_path / "bad.fmap"), str(tmp_path / "bad.fmap"),
                     "--out", str(tmp_path / "v.cvol"), "--no-archive"])
        assert code == 2
        assert "byte offset 0" in capsys.readouterr().out


class TestBenchCommand:
    """bench: disambiguation report."""

    def test_report_and_determinism(self, settings, tmp_path):
        cli = GOCorCommandLine(RunConfig(seeds=[0, 1]), settings)
        for name in ("a", "b"):
            assert cli.cmd_bench(tmp_path / f"{name}.json") == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        report = json.loads((tmp_path / "a.json").read_text())
        assert len(report["runs"]) == 2
        assert all(len(run["iterations"]) == 4 for run in report["runs"])
        assert all(abs(run["iterations"][0]["margin"]) <= 1e-6 for run in report["runs"])
        timings = json.loads((tmp_path / "a.timings.json").read_text())
        assert set(timings) == {"0", "1"}

    def test_parallel_matches_serial(self, settings, tmp_path):
        GOCorCommandLine(RunConfig(seeds=[0, 1, 2]), settings).cmd_bench(tmp_path / "s.json")
        GOCorCommandLine(RunConfig(seeds=[0, 1, 2], serial=False), settings).cmd_bench(tmp_path / "p.json")
        serial = json.loads((tmp_path / "s.json").read_text())
        parallel = json.loads((tmp_path / "p.json").read_text())
        assert serial["runs"] == parallel["runs"]


class TestCheckCommands:
    """gradcheck and oracle exit codes."""

    def test_gradcheck_passes(self, settings):
        assert GOCorCommandLine(RunConfig(grad_instances=4, eta=0.1), settings).cmd_gradcheck() == 0
        assert (settings.EVAL_DIR / "gradcheck.json").exists()

    def test_corrupted_gradient_fails(self, settings):
        cli = GOCorCommandLine(RunConfig(grad_instances=4, eta=0.1, corrupt_gradient=True), settings)
        assert cli.cmd_gradcheck() == 1

    def test_oracle_passes_and_is_archived(self, settings):
        archive = RunArchive(str(settings.ARCHIVE_DIR / "runs.db"))
        assert GOCorCommandLine(RunConfig(oracle_instances=4), settings, archive).cmd_oracle() == 0
        assert archive.get_latest_runs(1)[0]["command"] == "oracle"


class TestExportHeatmap:
    """export-heatmap: probe slice images."""

    def test_writes_pgm_and_csv(self, scene_dir, settings):
        cli = GOCorCommandLine(RunConfig(), settings)
        cli.cmd_solve(scene_dir / "reference.fmap", scene_dir / "query.fmap", scene_dir / "v.cvol")
        assert cli.cmd_export_heatmap(scene_dir / "v.cvol", 3, 4, scene_dir / "h.pgm", scene_dir / "h.csv") == 0
        image = read_pgm(scene_dir / "h.pgm")
        assert image.shape == (32, 32) and image.max() == 255
        scores = np.loadtxt(scene_dir / "h.csv", delimiter=",")
        np.testing.assert_array_equal(scores, load_volume(scene_dir / "v.cvol").data[3, 4])

    def test_probe_out_of_bounds_exits_2(self, scene_dir, tmp_path):
        main(["solve", str(scene_dir / "reference.fmap"), str(scene_dir / "query.fmap"),
              "--out", str(tmp_path / "v.cvol"), "--no-archive", "--num-iter", "0"])
        code = main(["export-heatmap", str(tmp_path / "v.cvol"), "40", "0", "--out", str(tmp_path / "h.pgm"),
                     "--no-archive"])
        assert code == 2


class TestMakeScene:
    """make-scene: synthetic inputs."""

    def test_files_written(self, scene_dir):
        f_r = load_feature_map(scene_dir / "reference.fmap")
        assert f_r.shape == (32, 32, 16)
        assert (scene_dir / "gt.flow").exists()

    def test_config_file_and_flags(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("scene_height = 16\nscene_width = 20\n")
        code = main(["make-scene", "--config", str(cfg), "--out-dir", str(tmp_path / "s"), "--no-archive"])
        assert code == 0
        assert load_feature_map(tmp_path / "s" / "query.fmap").shape == (16, 20, 16)

    def test_bad_config_exits_2(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("no_such_key = 1\n")
        assert main(["make-scene", "--config", str(cfg), "--out-dir", str(tmp_path), "--no-archive"]) == 2


class TestRunsCommand:
    """runs: archive statistics and the latest runs."""

    def test_lists_archived_runs(self, settings, capsys):
        archive = RunArchive(str(settings.ARCHIVE_DIR / "runs.db"))
        archive.save_run("bench", True, {}, {})
        archive.save_run("oracle", False, {}, {})
        cli = GOCorCommandLine(RunConfig(), settings, archive)
        assert cli.cmd_runs(limit=1) == 0
        out = capsys.readouterr().out
        assert "2 runs archived, pass rate 50.00%" in out
        assert "bench: 1/1 passed" in out and "oracle: 0/1 passed" in out
        assert "#2 oracle" in out and "#1 bench" not in out

    def test_json_output_filters_by_command(self, settings, capsys):
        archive = RunArchive(str(settings.ARCHIVE_DIR / "runs.db"))
        for passed in (True, False, True):
            archive.save_run("solve", passed, {}, {"losses": [1.0]})
        archive.save_run("bench", True, {}, {})
        GOCorCommandLine(RunConfig(), settings).cmd_runs(limit=5, command="solve", as_json=True)
        payload = json.loads(capsys.readouterr().out)
        assert payload["statistics"]["total_runs"] == 4
        assert [run["command"] for run in payload["latest"]] == ["solve"] * 3
        assert payload["latest"][0]["summary"] == {"losses": [1.0]}

    def test_main_dispatch(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("GOCOR_ARCHIVE_DIR", str(tmp_path / "archive"))
        assert main(["runs", "--limit", "3"]) == 0
        assert "0 runs archived" in capsys.readouterr().out
