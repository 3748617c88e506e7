import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from nvnmr import cli
from nvnmr.core import F19, H1, NumericalError, larmor_frequency
from nvnmr.ddmodel.kernel import coherence
from nvnmr.ddmodel.traces import read_trace

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr() if capsys is not None else None
    return code, out


def strip_timestamp(text):
    return "\n".join(line for line in text.splitlines() if '"generated_at"' not in line)


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(cli.OUTPUT_ENV, raising=False)
    return tmp_path


@pytest.fixture
def model_file(workdir):
    p = workdir / "model.json"
    p.write_text(json.dumps({"b0_mT": 40, "t2_us": 50, "stretch_p": 1.5,
                             "resonances": [{"species": "1H", "brms_nT": 300}]}))
    return p


def test_depth_command(workdir, capsys):
    code, out = run(["depth", "--brms-nT", 331, "--delta-nm", 1, "--rho-nm3", 60, "--species", "1H"], capsys)
    assert code == 0
    assert "depth = 6.33 nm" in out.out
    doc = json.loads((workdir / "depth.json").read_text())
    assert doc["outputs"]["depth_nm"] == pytest.approx(6.3319, abs=1e-3)
    assert doc["provenance"]["tool"]["version"] == cli.__version__


def test_depth_zero_brms_is_input_error(workdir, capsys):
    code, out = run(["depth", "--brms-nT", 0], capsys)
    assert code == 1
    assert "infinite depth" in out.err


def test_depth_half_space_keyword(workdir, capsys):
    code, _ = run(["depth", "--brms-nT", 331, "--delta-nm", "inf"], capsys)
    assert code == 0
    doc = json.loads((workdir / "depth.json").read_text())
    assert doc["inputs"]["assumed"]["delta_nm"] == "inf"
    assert doc["outputs"]["depth_nm"] == pytest.approx(8.935, abs=1e-3)


@pytest.mark.parametrize("argv", [
    ["depth"],
    ["depth", "--brms-nT", "abc"],
    ["depth", "--brms-nT", 331, "--delta-nm", "thick"],
    ["depth", "--brms-nT", 331, "--delta-nm", -1],
    ["depth", "--brms-nT", 331, "--species", "31P"],
    ["nonsense"],
])
def test_usage_errors_exit_1(workdir, capsys, argv):
    code, _ = run(argv, capsys)
    assert code == 1


def test_numerical_failure_exit_2(workdir, capsys, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("bracket failed")
    monkeypatch.setattr(cli, "depth_from_brms", boom)
    code, out = run(["depth", "--brms-nT", 331], capsys)
    assert code == 2
    assert "numerical failure" in out.err


def test_underflowing_field_exit_2(workdir, capsys):
    code, out = run(["depth", "--brms-nT", "1e-300"], capsys)
    assert code == 2
    assert "not representable" in out.err


def test_config_precedence(workdir, capsys):
    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps({"defaults": {"delta_nm": 2}}))
    run(["depth", "--brms-nT", 331, "--config", cfg, "-o", "a.json"], capsys)
    run(["depth", "--brms-nT", 331, "--config", cfg, "--delta-nm", 1, "-o", "b.json"], capsys)
    a = json.loads((workdir / "a.json").read_text())["outputs"]["depth_nm"]
    b = json.loads((workdir / "b.json").read_text())["outputs"]["depth_nm"]
    assert a == pytest.approx(7.190, abs=1e-3)
    assert b == pytest.approx(6.332, abs=1e-3)


@pytest.mark.parametrize("doc", [
    {"defaults": {"assignment_window_pct": 30}},
    {"defaults": {"rho3d_nm3": -1}},
    {"defaults": {"colour": "blue"}},
    {"extras": {}},
    {"seeds": {"mc": -3}},
    [],
])
def test_bad_config_exit_1(workdir, capsys, doc):
    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps(doc))
    code, _ = run(["depth", "--brms-nT", 331, "--config", cfg], capsys)
    assert code == 1


def test_output_dir_env_override(workdir, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(workdir / "out"))
    assert run(["depth", "--brms-nT", 331], capsys)[0] == 0
    assert (workdir / "out" / "depth.json").exists()
    assert run(["depth", "--brms-nT", 331, "--output-dir", workdir / "flag"], capsys)[0] == 0
    assert (workdir / "flag" / "depth.json").exists()


def _report(workdir, capsys, argv, name="report.json"):
    code, out = run(["report", *argv, "-o", name], capsys)
    assert code == 0, out.err
    return json.loads((workdir / name).read_text()), out


def test_report_nv6_schema_and_values(workdir, capsys):
    doc, out = _report(workdir, capsys, ["--label", "NV 6", "--brms-h-nT", 331, "--brms-f-nT", 163])
    assert doc["nv_label"] == "NV 6"
    assert set(doc["inputs"]) >= {"brms_h_nT", "brms_f_nT", "b0_mT", "assumed"}
    assert doc["inputs"]["assumed"] == {"delta_nm": 1.0, "rho3d_nm3": 60.0, "atoms_per_molecule": 3}
    o = doc["outputs"]
    assert set(o) >= {"depth_nm", "sigma_depth_nm", "rho2d_f_nm2", "rho2d_mol_nm2", "area_nm2", "molecules"}
    assert o["depth_nm"] == pytest.approx(6.3, abs=0.1)
    assert o["rho2d_f_nm2"] == pytest.approx(12.1, abs=0.3)
    assert o["molecules"] == pytest.approx(117, abs=2)
    assert len(doc["thickness_table"]) == 5
    assert doc["thickness_table"][-1]["delta_nm"] == "inf"
    assert set(doc["thickness_table"][0]) == {"delta_nm", "depth_nm", "rho_mol_nm2", "molecules"}
    # full precision in JSON, nearest integer on screen
    assert o["molecules"] != round(o["molecules"])
    assert f"{round(o['molecules'])} molecules" in out.out


def test_report_nv4_with_known_depth(workdir, capsys):
    doc, _ = _report(workdir, capsys, ["--label", "NV 4", "--depth-nm", 6.4, "--brms-f-nT", 102])
    assert doc["outputs"]["rho2d_f_nm2"] == pytest.approx(5.0, abs=0.2)
    assert round(doc["outputs"]["molecules"]) == 51


def test_report_zero_fluorine(workdir, capsys):
    doc, _ = _report(workdir, capsys, ["--brms-h-nT", 331, "--brms-f-nT", 0])
    assert doc["outputs"]["rho2d_f_nm2"] == 0.0
    assert doc["outputs"]["molecules"] == 0.0


def test_report_requires_inputs(workdir, capsys):
    assert run(["report", "--brms-h-nT", 331], capsys)[0] == 1
    assert run(["report", "--brms-f-nT", 100], capsys)[0] == 1
    assert run(["report", "--fit-f", "missing.json", "--depth-nm", 6], capsys)[0] == 1


def test_report_is_byte_identical_modulo_timestamp(workdir, capsys):
    args = ["--label", "NV 6", "--brms-h-nT", 331, "--brms-f-nT", 163]
    _report(workdir, capsys, args, "r1.json")
    _report(workdir, capsys, args, "r2.json")
    a, b = (workdir / "r1.json").read_text(), (workdir / "r2.json").read_text()
    assert strip_timestamp(a) == strip_timestamp(b)


def test_source_date_epoch_makes_output_fully_identical(workdir, capsys, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    _report(workdir, capsys, ["--brms-h-nT", 331, "--brms-f-nT", 163], "r1.json")
    _report(workdir, capsys, ["--brms-h-nT", 331, "--brms-f-nT", 163], "r2.json")
    assert (workdir / "r1.json").read_bytes() == (workdir / "r2.json").read_bytes()


def test_synth_deterministic_and_noiseless(workdir, capsys, model_file):
    base = ["synth", model_file, "--n-points", 20, "--dip-points", 20]
    assert run([*base, "--noise", 0.01, "--seed", 3, "-o", "a.csv"], capsys)[0] == 0
    assert run([*base, "--noise", 0.01, "--seed", 3, "-o", "b.csv"], capsys)[0] == 0
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()
    assert run([*base, "-o", "clean.csv"], capsys)[0] == 0
    tr = read_trace(workdir / "clean.csv")
    model, _ = cli._load_model(model_file, cli.RunConfig())
    assert tr.signal == pytest.approx(coherence(model, tr.sequence, tr.tau), rel=1e-12)
    meta = json.loads((workdir / "clean.json").read_text())
    assert {"n_pulses", "phase_cycle", "b0_mT", "pulse_length_ns"} <= set(meta)
    assert meta["provenance"]["seeds"] == {"synth": 0}


def test_synth_two_species_two_dips(workdir, capsys):
    p = workdir / "two.json"
    p.write_text(json.dumps({"b0_mT": 40, "t2_us": 200, "resonances": [
        {"species": "1H", "brms_nT": 300}, {"species": "19F", "brms_nT": 200}]}))
    assert run(["synth", p, "--n-points", 10, "--dip-points", 40, "-o", "two.csv"], capsys)[0] == 0
    tr = read_trace(workdir / "two.csv")
    t_h, t_f = (1 / (2 * larmor_frequency(sp, 0.04)) for sp in (H1, F19))

    def near(t, pct):
        return tr.signal[np.abs(tr.tau / t - 1) <= pct / 100]

    dip_h, dip_f = near(t_h, 0.5).min(), near(t_f, 0.5).min()
    between = tr.signal[np.argmin(np.abs(tr.tau - np.sqrt(t_h * t_f)))]
    assert dip_h < 0.5 and dip_f < 0.5
    assert between > max(dip_h, dip_f) + 0.3


def test_synth_then_fit_then_report(workdir, capsys, model_file):
    assert run(["synth", model_file, "--noise", 0.005, "--seed", 1, "-o", "h.csv"], capsys)[0] == 0
    code, out = run(["fit", "h.csv", "--species", "1H", "-o", "fit_h.json"], capsys)
    assert code == 0, out.err
    fit = json.loads((workdir / "fit_h.json").read_text())
    r = fit["resonances"][0]
    assert r["species"] == "1H"
    assert r["brms_nT"] == pytest.approx(300, rel=0.05)
    assert "deviation_pct" in r and r["dip_found"]
    assert set(fit["provenance"]["input_digests"]) == {"trace", "meta"}
    doc, _ = _report(workdir, capsys, ["--fit-h", "fit_h.json", "--brms-f-nT", 100])
    assert doc["inputs"]["brms_h_nT"] == pytest.approx(r["brms_nT"])
    assert doc["inputs"]["b0_mT"] == 40.0
    assert "fit_h" in doc["provenance"]["input_digests"]


def test_fit_errors(workdir, capsys):
    (workdir / "empty.csv").write_text("")
    (workdir / "empty.json").write_text(json.dumps({"n_pulses": 192, "phase_cycle": "XY8", "b0_mT": 40}))
    code, out = run(["fit", "empty.csv"], capsys)
    assert code == 1 and "empty" in out.err
    (workdir / "lonely.csv").write_text("tau_us,signal\n0.3,0.9\n")
    code, out = run(["fit", "lonely.csv"], capsys)
    assert code == 1 and "expected" in out.err and "lonely.json" in out.err
    (workdir / "bad.csv").write_text("tau_us,signal\n0.3,0.9\n0.4,x\n")
    (workdir / "bad.json").write_text((workdir / "empty.json").read_text())
    code, out = run(["fit", "bad.csv"], capsys)
    assert code == 1 and "bad.csv:3" in out.err


def test_mc_small_grid(workdir, capsys):
    code, out = run(["mc", "--depths-nm", 5, "--deltas-nm", 1, "--realizations", 4, "--seed", 42], capsys)
    assert code == 0
    doc = json.loads((workdir / "mc.json").read_text())
    assert doc["seed"] == 42 and doc["provenance"]["seeds"] == {"mc": 42}
    assert "seed 42" in out.out
    zero = doc["rows"][-1]
    assert zero["rho3d_nm3"] == 0.0 and zero["mc_nT"] == 0.0 and zero["analytic_nT"] == 0.0
    assert all(r["pass"] for r in doc["rows"])


def test_profile_area_and_map(workdir, capsys):
    code, out = run(["profile", "--depth-nm", 5, "--fraction", 0.5, "--map-csv", "map.csv",
                     "--cells-per-depth", 20], capsys)
    assert code == 0
    doc = json.loads((workdir / "profile.json").read_text())
    assert doc["outputs"]["area_nm2"] == pytest.approx(18.4, abs=0.2)
    with open(workdir / "map.csv") as fh:
        rows = sum(1 for _ in csv.reader(fh)) - 1
    assert rows == doc["outputs"]["grid_cells"] == doc["outputs"]["map_rows"]


def test_profile_extent_warning(workdir, capsys):
    code, out = run(["profile", "--depth-nm", 5, "--fraction", 0.999], capsys)
    assert code == 0
    assert "extent-limited" in out.err
    assert json.loads((workdir / "profile.json").read_text())["outputs"]["extent_limited"] is True


def test_help_lists_every_flag():
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)


def test_console_entry_point(workdir):
    proc = subprocess.run([sys.executable, "-m", "nvnmr", "depth", "--brms-nT", "0"],
                          capture_output=True, text=True, cwd=workdir)
    assert proc.returncode == 1
    assert "infinite depth" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "nvnmr", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and cli.__version__ in proc.stdout


def test_json_digest_ignores_timestamp(tmp_path):
    from nvnmr import provenance as pv
    a, b, c = tmp_path / "a.json", tmp_path / "b.json", tmp_path / "c.csv"
    a.write_text('{"x": 1, "provenance": {"generated_at": "2020-01-01"}}')
    b.write_text('{"provenance": {"generated_at": "2021-05-05"},\n "x": 1}')
    assert pv.digest_file(a) == pv.digest_file(b)
    b.write_text('{"x": 2}')
    assert pv.digest_file(a) != pv.digest_file(b)
    c.write_bytes(b"a,b\n")
    assert pv.digest_file(c) == pv.digest_bytes(b"a,b\n")
