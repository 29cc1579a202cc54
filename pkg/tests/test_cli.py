import csv
import io
import json
import math
import re

import numpy as np
import pytest

from delayreg.cli import main
from delayreg.scenario import preset_text

W0 = 8 * math.pi

STABLE_ZERO_CONTROLLER = """\
[plant]
num = [{ coeffs = [1.0] }]
den = [{ coeffs = [1.0, 1.0] }]

[controller]
kp = 0.0
ki = 0.0

[factorization]
plant = "generic-shift"
controller = "static"

[target]
f_hz = 4.0
harmonics = 1

[qm]
spacing = 0.05
count = 2
gains = [0.0, 0.0, 0.0]
"""


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def variant(tmp_path):
    """Write a preset with textual replacements and return the path."""

    def make(name, *edits, base=None):
        text = preset_text(base) if base else ""
        for old, new in edits:
            assert old in text
            text = text.replace(old, new)
        path = tmp_path / f"{name}.toml"
        path.write_text(text)
        return path

    return make


class TestDesign:
    def test_example2(self, capsys, tmp_path):
        out_file = tmp_path / "d.json"
        code, out, _ = run(capsys, "design", "example2", "--out", out_file)
        assert code == 0
        assert "PASS" in out
        doc = json.loads(out_file.read_text())
        np.testing.assert_allclose(doc["gains"], [0, -21.3792, 13.2131, -13.2131, 21.3792], atol=5e-4)
        assert doc["rank"] == doc["rows"] == 5

    def test_example1_three_gains(self, capsys, tmp_path):
        out_file = tmp_path / "d.json"
        code, out, _ = run(capsys, "design", "example1", "--out", out_file)
        doc = json.loads(out_file.read_text())
        assert code == 0
        assert len(doc["gains"]) == 3 and doc["residual_inf"] < 1e-10

    def test_human_report_six_digits(self, capsys):
        _, out, _ = run(capsys, "design", "example2")
        gains_line = next(line for line in out.splitlines() if line.startswith("gains"))
        assert "-21.3792" in gains_line and "13.2131" in gains_line

    def test_aliasing_exit_2(self, capsys, variant):
        path = variant("alias", ("spacing = 0.05", "spacing = 0.25"), base="example2")
        code, out, err = run(capsys, "design", path)
        assert code == 2
        assert "aliased harmonic" in err and "25.1327" in err
        assert "FAIL" in out

    def test_tolerance_flag(self, capsys):
        code, _, _ = run(capsys, "design", "example1", "--tol", "1e-20")
        assert code == 2

    def test_parse_error_exit_1(self, capsys, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text(STABLE_ZERO_CONTROLLER.replace("count = 2", "count = 2\nbogus = 1"))
        code, _, err = run(capsys, "design", path)
        assert code == 1
        assert re.search(r"bad\.toml:\d+: unknown key 'bogus'", err)

    def test_missing_file_exit_1(self, capsys):
        assert run(capsys, "design", "no/such/file.toml")[0] == 1


class TestSpectrum:
    def test_harmonic_zeros(self, capsys):
        code, out, _ = run(capsys, "spectrum", "example2", "--kind", "zeros")
        assert code == 0
        zs = np.array([complex(float(r["re"]), float(r["im"])) for r in rows(out)])
        for w in (W0, 2 * W0):
            assert np.min(np.abs(zs - 1j * w)) < 1e-6
        assert {r["kind"] for r in rows(out)} == {"zero"}

    def test_poles_stable(self, capsys):
        code, out, _ = run(capsys, "spectrum", "example2", "--kind", "poles")
        assert code == 0
        assert rows(out) and all(float(r["re"]) < 0 for r in rows(out))

    def test_empty_region(self, capsys, variant):
        path = variant("empty", ("im_min = 0.0\nim_max = 60.0", "im_min = 5.0\nim_max = 5.0"), base="example2")
        code, out, _ = run(capsys, "spectrum", path)
        assert code == 0
        assert out == "re,im,residual,kind,coincident\n"

    def test_coarse_grid_needs_force(self, capsys, variant, tmp_path):
        path = variant("coarse", ("im_max = 60.0", "im_max = 60.0\ngrid_step = 8.0"), base="example2")
        code, _, err = run(capsys, "spectrum", path)
        assert code == 1 and "grid" in err
        out_file = tmp_path / "s.csv"
        code, _, _ = run(capsys, "spectrum", path, "--force", "--out", out_file)
        assert code == 0 and out_file.read_text().startswith("re,im")

    def test_deterministic(self, capsys):
        first = run(capsys, "spectrum", "example1")[1]
        second = run(capsys, "spectrum", "example1")[1]
        assert first == second


class TestSimulate:
    def _summary(self, text):
        m = re.search(r"before augmentation (\S+), after (\S+) ", text)
        return float(m.group(1)), float(m.group(2))

    def test_zero_disturbance(self, capsys, variant, tmp_path):
        path = variant(
            "quiet",
            ("amplitudes = [1.0, 1.0]", "amplitudes = [0.0, 0.0]"),
            ("initial_output = 1.0", "initial_output = 0.0"),
            ("t_end = 15.0", "t_end = 6.0"),
            base="example2",
        )
        out_file = tmp_path / "ts.csv"
        code, out, _ = run(capsys, "simulate", path, "--out", out_file)
        assert code == 0
        pre, post = self._summary(out)
        assert pre == pytest.approx(0.0, abs=1e-12) and post == pytest.approx(0.0, abs=1e-12)
        assert out_file.read_text().splitlines()[0] == "t,y,u,d,e"

    def test_short_run_to_stdout(self, capsys, variant):
        path = variant("short", ("t_end = 15.0", "t_end = 6.0"), base="example2")
        code, out, err = run(capsys, "simulate", path)
        assert code == 0
        data = rows(out)
        assert len(data) == 6001
        pre, post = self._summary(err)
        assert pre > 0.1 * 2.0

    def test_step_mismatch_exit_1(self, capsys, variant):
        path = variant("mismatch", ("step = 0.001", "step = 0.003"), base="example2")
        code, _, err = run(capsys, "simulate", path)
        assert code == 1 and "error" in err

    def test_no_simulation_table(self, capsys, tmp_path):
        path = tmp_path / "nosim.toml"
        path.write_text(STABLE_ZERO_CONTROLLER)
        assert run(capsys, "simulate", path)[0] == 1


class TestFreqresp:
    def test_notch_at_harmonic(self, capsys):
        code, out, _ = run(capsys, "freqresp", "example2", "--wmin", W0, "--wmax", 2 * W0, "--points", 3)
        assert code == 0
        data = rows(out)
        assert list(data[0]) == ["omega", "abs_S", "arg_S"]
        assert float(data[0]["abs_S"]) < 1e-8 and float(data[2]["abs_S"]) < 1e-8
        assert float(data[1]["abs_S"]) > 1e-3

    def test_high_frequency_limit(self, capsys):
        _, out, _ = run(capsys, "freqresp", "example2", "--wmin", 1e6, "--wmax", 1e6, "--points", 1)
        assert abs(float(rows(out)[0]["abs_S"]) - 1.0) < 1e-3

    def test_integrator_without_augmentation(self, capsys, variant):
        path = variant("noqm", ("count = 4", "count = 4\ngains = [0.0, 0.0, 0.0, 0.0, 0.0]"), base="example2")
        _, out, _ = run(capsys, "freqresp", path, "--wmin", 1e-6, "--wmax", 1e-3, "--points", 4)
        mags = [float(r["abs_S"]) for r in rows(out)]
        assert mags[0] < 1e-5 and mags == sorted(mags)

    @pytest.mark.parametrize("args", [("--wmin", "0"), ("--wmin", "5", "--wmax", "1"), ("--points", "0")])
    def test_bad_range(self, capsys, args):
        assert run(capsys, "freqresp", "example2", *args)[0] == 1


class TestVerify:
    @pytest.mark.parametrize("name", ["example1", "example2", "example3"])
    def test_presets_pass(self, capsys, name):
        code, out, _ = run(capsys, "verify", name)
        assert code == 0, out
        assert "overall: PASS" in out

    def test_unstabilized_plant(self, capsys, variant):
        path = variant("kp0", ("kp = 1.27", "kp = 0.0"), base="example1")
        code, out, _ = run(capsys, "verify", path)
        assert code == 2
        line = next(x for x in out.splitlines() if "closed-loop" in x)
        assert line.startswith("FAIL")
        assert re.search(r"rightmost at 0\.9", line)

    def test_zero_controller(self, capsys, tmp_path):
        path = tmp_path / "zero.toml"
        path.write_text(STABLE_ZERO_CONTROLLER)
        out_file = tmp_path / "v.json"
        code, out, _ = run(capsys, "verify", path, "--out", out_file)
        assert code == 2
        checks = {c["name"]: c["passed"] for c in json.loads(out_file.read_text())["checks"]}
        assert checks == {
            "factor properness": True,
            "factor stability": True,
            "closed-loop stability": True,
            "regulation": False,
        }
