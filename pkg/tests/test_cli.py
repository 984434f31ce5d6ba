import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from gbtopo import cli, cloud_io, meshgen


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def torus_ply(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "torus.ply"
    rc = run_cli("synth", "torus", "--R", "5", "--r", "1", "--n", "3000",
                 "--seed", "3", "-o", str(path))
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def sphere_obj(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "ico.obj"
    mesh = meshgen.icosphere(3)
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write("v %.9g %.9g %.9g\n" % tuple(v))
        for f in mesh.faces:
            fh.write("f %d %d %d\n" % tuple(f + 1))
    return path


class TestSynth:
    def test_torus_cloud_has_truth_channels(self, torus_ply):
        cloud = cloud_io.load_cloud(torus_ply)
        assert cloud.n == 3000
        assert cloud.normals is not None
        assert "gaussian_true" in cloud.scalar_channels
        assert "mean_true" in cloud.scalar_channels

    def test_sphere_two_thousand(self, tmp_path):
        out = tmp_path / "s.ply"
        rc = run_cli("synth", "ellipsoid", "--a", "1", "--b", "1", "--c", "1",
                     "--n", "2000", "-o", str(out))
        assert rc == 0
        assert cloud_io.load_cloud(out).n == 2000

    def test_invalid_torus_radii(self, tmp_path):
        rc = run_cli("synth", "torus", "--R", "1", "--r", "5", "--n", "10",
                     "-o", str(tmp_path / "x.ply"))
        assert rc != 0


class TestSample:
    def test_sample_writes_cloud(self, sphere_obj, tmp_path):
        out = tmp_path / "cloud.xyz"
        rc = run_cli("sample", str(sphere_obj), "--n", "500", "--seed", "1",
                     "-o", str(out))
        assert rc == 0
        assert cloud_io.load_cloud(out).n == 500

    def test_sample_with_noise(self, sphere_obj, tmp_path):
        out = tmp_path / "noisy.xyz"
        rc = run_cli("sample", str(sphere_obj), "--n", "500", "--noise", "0.01",
                     "--seed", "1", "-o", str(out))
        assert rc == 0


class TestCurvature:
    def test_report_with_truth_errors(self, torus_ply, tmp_path):
        out = tmp_path / "report.csv"
        rc = run_cli("curvature", str(torus_ply), "-o", str(out), "--no-figures")
        assert rc == 0
        import csv

        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 1
        assert float(rows[0]["mean_abs_err"]) > 0  # truth channels present
        assert float(rows[0]["euler_estimate"]) == pytest.approx(0.0, abs=0.3)

    def test_det_solver_notes_missing_mean(self, torus_ply, tmp_path, capsys):
        out = tmp_path / "report.csv"
        rc = run_cli("curvature", str(torus_ply), "--solver", "det",
                     "-o", str(out), "--no-figures")
        assert rc == 0
        assert "Gaussian curvature only" in capsys.readouterr().out

    def test_missing_file_exit_code_two(self, tmp_path):
        rc = run_cli("curvature", str(tmp_path / "absent.ply"),
                     "-o", str(tmp_path / "r.csv"))
        assert rc == 2

    def test_colormap_and_figure_outputs(self, torus_ply, tmp_path):
        out = tmp_path / "report.csv"
        cm = tmp_path / "colored.ply"
        rc = run_cli("curvature", str(torus_ply), "-o", str(out),
                     "--colormap-out", str(cm))
        assert rc == 0
        assert cm.exists()
        assert out.with_suffix(".png").exists()
        back = cloud_io.load_cloud(cm)
        assert back.n == 3000

    def test_mesh_input_sampled(self, sphere_obj, tmp_path):
        out = tmp_path / "m.json"
        rc = run_cli("curvature", str(sphere_obj), "--n", "2000", "-o", str(out),
                     "--no-figures")
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["rows"][0]["euler_estimate"] == pytest.approx(2.0, abs=0.3)


class TestTopo:
    def test_zero_steps_initial_estimate(self, torus_ply, tmp_path):
        out = tmp_path / "t.json"
        rc = run_cli("topo", str(torus_ply), "--steps", "0", "-o", str(out),
                     "--no-figures")
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["rows"][0]["genus"] == 1.0

    def test_trace_and_figure(self, torus_ply, tmp_path):
        out = tmp_path / "t.csv"
        trace = tmp_path / "trace.csv"
        rc = run_cli("topo", str(torus_ply), "--steps", "4", "-o", str(out),
                     "--trace-out", str(trace))
        assert rc == 0
        lines = trace.read_text().strip().splitlines()
        assert len(lines) == 5
        assert trace.with_suffix(".png").exists()

    def test_supervised_flag(self, torus_ply, tmp_path):
        rc = run_cli("topo", str(torus_ply), "--steps", "2", "--chi-gt", "0",
                     "-o", str(tmp_path / "t.csv"), "--no-figures")
        assert rc == 0


class TestBench:
    def manifest(self, tmp_path, sphere_obj):
        doc = {
            "seed": 5,
            "runs": [
                {"name": "sphere2k", "synth": {"surface": "sphere", "a": 1.0},
                 "n": 2000, "repeats": 2},
                {"name": "torus10k", "synth": {"surface": "torus", "R": 5.0, "r": 1.0},
                 "n": 4000},
                {"name": "ico", "mesh": str(sphere_obj), "n": 2000},
            ],
        }
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(doc))
        return path

    def test_bench_rows_and_figure(self, tmp_path, sphere_obj):
        man = self.manifest(tmp_path, sphere_obj)
        out = tmp_path / "bench.csv"
        rc = run_cli("bench", str(man), "-o", str(out))
        assert rc == 0
        import csv

        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 3
        assert out.with_suffix(".png").exists()
        # repeats=2 populates the spread column
        assert rows[0]["max_abs_err"] != ""

    def test_bench_row_failure_recorded_run_continues(self, tmp_path, sphere_obj):
        doc = {"runs": [
            {"name": "broken", "mesh": str(tmp_path / "missing.obj"), "n": 100},
            {"name": "ok", "mesh": str(sphere_obj), "n": 1000},
        ]}
        man = tmp_path / "m.json"
        man.write_text(json.dumps(doc))
        out = tmp_path / "b.csv"
        rc = run_cli("bench", str(man), "-o", str(out), "--no-figures")
        assert rc == 0
        text = out.read_text()
        assert "broken" in text and "ok" in text

    def test_manifest_schema_ships(self):
        schema = Path(cli.__file__).parent / "schemas" / "manifest.schema.json"
        json.loads(schema.read_text())


class TestDeterminism:
    def test_same_seed_byte_identical_reports(self, torus_ply, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{tag}.csv"
            rc = run_cli("curvature", str(torus_ply), "-o", str(out),
                         "--seed", "7", "--no-figures", "--no-timing")
            assert rc == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_thread_count_never_changes_reports(self, torus_ply, tmp_path):
        outs = []
        for threads in ("1", "8"):
            out = tmp_path / f"t{threads}.csv"
            rc = run_cli("curvature", str(torus_ply), "-o", str(out),
                         "--seed", "7", "--threads", threads,
                         "--no-figures", "--no-timing")
            assert rc == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_env_var_threads(self, torus_ply, tmp_path, monkeypatch):
        monkeypatch.setenv("GBTOPO_THREADS", "2")
        out = tmp_path / "env.csv"
        rc = run_cli("curvature", str(torus_ply), "-o", str(out),
                     "--no-figures", "--no-timing")
        assert rc == 0


def test_console_entrypoint_runs():
    exe = shutil.which("gbtopo")
    if exe is None:
        pytest.skip("console script not on PATH")
    proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "synth" in proc.stdout
