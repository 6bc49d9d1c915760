import subprocess
import sys
from pathlib import Path

import pytest

from svloc.cli import main
from svloc.experiments import read_csv


def run_cli(args):
    return main(list(args))


def body_lines(path):
    """CSV content excluding wall-time fields (metadata or latency columns)."""
    lines = [ln for ln in Path(path).read_text().splitlines()
             if not ln.startswith("# wall_time_s")
             and not ln.startswith("# median_latency_s")]
    if not lines:
        return lines
    header = next((ln for ln in lines if not ln.startswith("#")), None)
    if header and "pf_latency_s" in header:
        cols = header.split(",")
        keep = [i for i, c in enumerate(cols) if "latency" not in c]
        out = []
        for ln in lines:
            if ln.startswith("#"):
                out.append(ln)
            else:
                parts = ln.split(",")
                out.append(",".join(parts[i] for i in keep))
        return out
    return lines


class TestSubcommands:
    def test_heatmap(self, tmp_path):
        out = tmp_path / "h.csv"
        assert run_cli(["heatmap", "--scenario", "twr-diverse", "--seed", "1",
                        "--trials", "3", "--grid-res", "0.5",
                        "--out", str(out)]) == 0
        table = read_csv(out)
        assert len(table.rows) == 36

    def test_sweep_noise(self, tmp_path):
        out = tmp_path / "s.csv"
        assert run_cli(["sweep-noise", "--seed", "0", "--trials", "20",
                        "--sigma-theta-deg", "5", "--sigma-t-ps", "3,150",
                        "--out", str(out)]) == 0
        assert len(read_csv(out).rows) == 2

    def test_microbench(self, tmp_path):
        out = tmp_path / "m.csv"
        assert run_cli(["microbench", "--axis", "pattern", "--trials", "20",
                        "--seed", "0", "--out", str(out)]) == 0
        assert [r[1] for r in read_csv(out).rows] == ["ula", "coprime"]

    def test_track(self, tmp_path):
        out = tmp_path / "t.csv"
        assert run_cli(["track", "--trajectory", "line", "--duration", "2",
                        "--rate", "10", "--seed", "0", "--out", str(out)]) == 0
        assert len(read_csv(out).rows) == 20

    def test_ambiguity(self, tmp_path):
        out = tmp_path / "a.csv"
        assert run_cli(["ambiguity", "--n-list", "2", "--grid-res", "0.1",
                        "--out", str(out)]) == 0
        assert (tmp_path / "a_n2.csv").exists()

    def test_mac(self, tmp_path):
        out = tmp_path / "mac.csv"
        assert run_cli(["mac", "--tags", "3", "--duration", "30",
                        "--seed", "0", "--out", str(out)]) == 0
        assert (tmp_path / "mac_windows.csv").exists()
        table = read_csv(out)
        assert len(table.rows) == 3

    def test_calibrate_demo(self, tmp_path):
        out = tmp_path / "cal.csv"
        params = tmp_path / "params.yaml"
        assert run_cli(["calibrate-demo", "--seed", "0", "--out", str(out),
                        "--save-params", str(params)]) == 0
        assert params.exists()
        from svloc.calibration import load_calibration
        assert len(load_calibration(params)) == 6

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "scn.yaml"
        cfg.write_text(
            "name: mini\nestimator: twr\n"
            "layout: {kind: diverse, inset: 0.1}\n"
            "noise: {sigma_twr: 1.5e-10}\ntrials: 2\neval_res: 1.0\nseed: 0\n")
        out = tmp_path / "c.csv"
        assert run_cli(["heatmap", "--config", str(cfg), "--seed", "0",
                        "--out", str(out)]) == 0
        assert read_csv(out).meta["scenario"] == "mini"

    def test_unknown_scenario_errors(self, tmp_path):
        with pytest.raises(SystemExit):
            run_cli(["heatmap", "--scenario", "nope",
                     "--out", str(tmp_path / "x.csv")])


class TestDeterminism:
    """Criterion-8 style: same seed and config give byte-identical bodies."""

    CASES = [
        (["heatmap", "--scenario", "joint", "--seed", "3", "--trials", "3",
          "--grid-res", "0.5"], "h.csv", ["h.csv"]),
        (["sweep-noise", "--seed", "3", "--trials", "15",
          "--sigma-theta-deg", "5", "--sigma-t-ps", "150"], "s.csv", ["s.csv"]),
        (["microbench", "--axis", "antennas", "--trials", "15", "--seed", "3"],
         "m.csv", ["m.csv"]),
        (["track", "--trajectory", "figure8", "--duration", "2", "--rate",
          "10", "--seed", "3"], "t.csv", ["t.csv"]),
        (["ambiguity", "--n-list", "2", "--grid-res", "0.25", "--seed", "3"],
         "a.csv", ["a_n2.csv"]),
        (["mac", "--tags", "3", "--duration", "20", "--seed", "3"],
         "mac.csv", ["mac.csv", "mac_windows.csv"]),
        (["calibrate-demo", "--seed", "3"], "cal.csv", ["cal.csv"]),
    ]

    @pytest.mark.parametrize("args,out_name,artifacts",
                             CASES, ids=[c[0][0] for c in CASES])
    def test_rerun_identical(self, tmp_path, args, out_name, artifacts):
        d1, d2 = tmp_path / "run1", tmp_path / "run2"
        d1.mkdir(), d2.mkdir()
        run_cli(args + ["--out", str(d1 / out_name)])
        run_cli(args + ["--out", str(d2 / out_name)])
        for name in artifacts:
            assert body_lines(d1 / name) == body_lines(d2 / name), name


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "svloc.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("heatmap", "sweep-noise", "microbench", "track", "ambiguity",
                "mac", "calibrate-demo"):
        assert sub in proc.stdout
