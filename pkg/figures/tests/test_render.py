"""Figure-renderer tests; CSVs come from the primary tool's CLI (the contract)."""

import subprocess
import sys
from pathlib import Path

import pytest

from svloc_figures import PlotSpec, SchemaError, render
from svloc_figures.cli import main as render_main


@pytest.fixture(scope="module")
def csvs(tmp_path_factory):
    """Small real outputs produced through the primary CLI."""
    d = tmp_path_factory.mktemp("csvs")

    def svloc(*args):
        proc = subprocess.run([sys.executable, "-m", "svloc.cli", *args],
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        return proc

    svloc("heatmap", "--scenario", "joint", "--seed", "1", "--trials", "3",
          "--grid-res", "0.25", "--out", str(d / "heatmap.csv"))
    svloc("sweep-noise", "--seed", "1", "--trials", "25",
          "--sigma-theta-deg", "2,5", "--sigma-t-ps", "3,150",
          "--out", str(d / "sweep.csv"))
    svloc("track", "--trajectory", "figure8", "--duration", "3", "--rate",
          "10", "--seed", "1", "--out", str(d / "track.csv"))
    svloc("mac", "--tags", "4", "--duration", "60", "--seed", "1",
          "--out", str(d / "mac.csv"))
    svloc("mac", "--tags", "4", "--duration", "60", "--mode", "unslotted",
          "--seed", "1", "--out", str(d / "mac_un.csv"))
    return d


class TestRenderKinds:
    def test_heatmap(self, csvs, tmp_path):
        out = tmp_path / "h.png"
        render(PlotSpec([str(csvs / "heatmap.csv")], "heatmap", str(out)))
        assert out.exists() and out.stat().st_size > 1000

    def test_lines(self, csvs, tmp_path):
        out = tmp_path / "l.png"
        render(PlotSpec([str(csvs / "sweep.csv")], "lines", str(out)))
        assert out.exists()

    def test_cdf_multi_input(self, csvs, tmp_path):
        out = tmp_path / "c.png"
        render(PlotSpec([str(csvs / "track.csv"), str(csvs / "heatmap.csv")],
                        "cdf", str(out), labels=("tracking", "heatmap")))
        assert out.exists()

    def test_bars(self, csvs, tmp_path):
        out = tmp_path / "b.png"
        render(PlotSpec([str(csvs / "mac.csv"), str(csvs / "mac_un.csv")],
                        "bars", str(out), labels=("tdma", "unslotted")))
        assert out.exists()

    def test_timeseries(self, csvs, tmp_path):
        out = tmp_path / "t.png"
        render(PlotSpec([str(csvs / "mac_un_windows.csv")], "timeseries",
                        str(out)))
        assert out.exists()


class TestValidation:
    def test_schema_mismatch_raises(self, csvs, tmp_path):
        with pytest.raises(SchemaError):
            render(PlotSpec([str(csvs / "mac.csv")], "heatmap",
                            str(tmp_path / "x.png")))

    def test_header_only_csv_rejected_no_file(self, tmp_path):
        src = tmp_path / "empty.csv"
        src.write_text("x_m,y_m,median_err_m\n")
        out = tmp_path / "x.png"
        with pytest.raises(SchemaError):
            render(PlotSpec([str(src)], "heatmap", str(out)))
        assert not out.exists()

    def test_missing_input(self, tmp_path):
        with pytest.raises(SchemaError):
            render(PlotSpec([str(tmp_path / "nope.csv")], "cdf",
                            str(tmp_path / "x.png")))

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ValueError):
            PlotSpec(["a.csv"], "sparkline", str(tmp_path / "x.png"))

    def test_cli_exit_codes(self, csvs, tmp_path):
        ok = render_main(["--kind", "heatmap", "--in",
                          str(csvs / "heatmap.csv"), "--out",
                          str(tmp_path / "ok.png")])
        assert ok == 0
        bad = render_main(["--kind", "heatmap", "--in", str(csvs / "mac.csv"),
                           "--out", str(tmp_path / "bad.png")])
        assert bad == 2
        assert not (tmp_path / "bad.png").exists()


class TestDeterminism:
    def test_same_input_same_bytes(self, csvs, tmp_path):
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        spec_a = PlotSpec([str(csvs / "heatmap.csv")], "heatmap", str(a))
        spec_b = PlotSpec([str(csvs / "heatmap.csv")], "heatmap", str(b))
        render(spec_a)
        render(spec_b)
        assert a.read_bytes() == b.read_bytes()

    def test_inputs_unmodified(self, csvs, tmp_path):
        src = csvs / "sweep.csv"
        before = src.read_bytes()
        render(PlotSpec([str(src)], "lines", str(tmp_path / "s.png")))
        assert src.read_bytes() == before
