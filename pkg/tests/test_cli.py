import json

import numpy as np
import pytest

from rkkytune import __version__
from rkkytune.cli import main, parse_override, resolve_config, ConfigError


def _run(capsys, *argv):
    code = main(list(argv))
    err = capsys.readouterr().err
    return code, (json.loads(err) if err.strip() else None)


def _rows(path):
    lines = [l for l in open(path).read().splitlines() if not l.startswith("#")]
    return lines[0].split(","), [l.split(",") for l in lines[1:]]


def test_spectrum_levels_and_header(tmp_path, capsys):
    code, _ = _run(capsys, "spectrum", "--out", str(tmp_path), "--set", "n_fermions=5")
    assert code == 0
    text = open(tmp_path / "energies.csv").read().splitlines()
    assert text[0] == f"# rkkytune {__version__}"
    assert "# config n_fermions = 5" in text
    cols, rows = _rows(tmp_path / "energies.csv")
    assert cols == ["n", "energy"]
    np.testing.assert_allclose([float(r[1]) for r in rows], np.arange(5) + 0.5, atol=1e-3)
    assert all(len(r[1].split("e")[0].replace("-", "").replace(".", "")) == 12 for r in rows)
    summary = json.load(open(tmp_path / "summary.json"))
    assert summary["config"]["n_fermions"] == 5 and "gap_open" in summary


def test_missing_unknown_and_bad_keys(tmp_path, capsys):
    code, err = _run(capsys, "spectrum", "--out", str(tmp_path))
    assert code == 2 and err["key"] == "n_fermions"
    code, err = _run(capsys, "spectrum", "--out", str(tmp_path), "--set", "n_fermions=5",
                     "--set", "bogus=1")
    assert code == 2 and err["key"] == "bogus"
    code, err = _run(capsys, "spectrum", "--out", str(tmp_path), "--set", "n_fermions=five")
    assert code == 2 and err["key"] == "n_fermions"
    code, err = _run(capsys, "chain", "--out", str(tmp_path), "--set", "length=30",
                     "--set", "couplings=[1.0]")
    assert code == 2 and err["error"] == "SizeError"


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text("n_fermions = 7\nvp_ratio = 10.0\n")
    r = resolve_config("spectrum", str(cfg), ["vp_ratio=20"])
    assert r["n_fermions"] == 7 and r["vp_ratio"] == 20.0 and r["points_per_wavelength"] == 40
    assert parse_override("k_ref=fermi") == ("k_ref", "fermi")
    assert parse_override('grid={start=1, stop=2, count=3}')[1] == {"start": 1, "stop": 2,
                                                                   "count": 3}
    with pytest.raises(ConfigError):
        resolve_config("scan-ratios", None, ["n_fermions=5", "vp_ratios=[]", "kf_d=[1.0]"])


def test_threads_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("RKKYTUNE_THREADS", "many")
    code, err = _run(capsys, "spectrum", "--out", str(tmp_path), "--set", "n_fermions=3")
    assert code == 2 and "RKKYTUNE_THREADS" in err["message"]
    monkeypatch.setenv("RKKYTUNE_THREADS", "1")
    assert _run(capsys, "spectrum", "--out", str(tmp_path), "--set", "n_fermions=3")[0] == 0


def test_kernel_outputs_and_errors(tmp_path, capsys):
    out = tmp_path / "k"
    code, _ = _run(capsys, "kernel", "--out", str(out), "--set", "n_fermions=30",
                   "--set", "kfr_max=20")
    assert code == 0
    fit = json.load(open(out / "yukawa.json"))
    assert fit["ell"] is None and fit["decays"] is False
    cols, rows = _rows(out / "kernel.csv")
    assert cols == ["kf_r", "F"] and float(rows[0][1]) < 0
    code, err = _run(capsys, "kernel", "--out", str(out), "--set", "n_fermions=30",
                     "--set", "fit_kfr_min=30", "--set", "kfr_max=20")
    assert code == 2 and err["key"] == "fit_kfr_min"
    code, err = _run(capsys, "kernel", "--out", str(tmp_path / "k3"), "--set", "n_fermions=10",
                     "--set", "kfr_max=4")
    assert code == 3 and err["error"] == "FitFailure"
    assert (tmp_path / "k3" / "kernel.csv").exists()


def test_couplings_and_chain(tmp_path, capsys):
    code, _ = _run(capsys, "couplings", "--out", str(tmp_path), "--set", "n_fermions=30",
                   "--set", "kfr_max=20", "--set", "spacing_kf=2.0")
    assert code == 0
    cols, rows = _rows(tmp_path / "couplings.csv")
    assert cols == ["s", "kf_r", "v", "v_rescaled"] and len(rows) == 5
    assert float(rows[0][3]) == pytest.approx(4.0)
    code, _ = _run(capsys, "chain", "--out", str(tmp_path), "--set", "length=8",
                   "--set", "couplings=[4.0, 2.0]")
    assert code == 0
    obs = json.load(open(tmp_path / "observables.json"))
    assert {"energy", "q0", "s_max", "bond_order", "berry_phase"} <= set(obs)
    assert len(_rows(tmp_path / "sofq.csv")[1]) == 8


SCAN = ["--set", "n_fermions=24", "--set", "kfr_max=16", "--set", "vp_ratios=[0, 40]",
        "--set", "kf_d={start=1.5, stop=3.0, count=4}"]


def test_scan_resume_and_threads(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(capsys, "scan-ratios", "--out", str(a), *SCAN)[0] == 0
    assert _run(capsys, "scan-ratios", "--out", str(b), "--threads", "2", *SCAN)[0] == 0
    ref = (a / "ratios.csv").read_bytes()
    assert ref == (b / "ratios.csv").read_bytes()
    assert (a / "bow_target.json").read_bytes() == (b / "bow_target.json").read_bytes()
    # drop the last rows and resume
    lines = ref.decode().splitlines(keepends=True)
    (a / "ratios.csv").write_text("".join(lines[:-3]))
    assert _run(capsys, "scan-ratios", "--out", str(a), *SCAN)[0] == 0
    assert (a / "ratios.csv").read_bytes() == ref
    assert _run(capsys, "scan-ratios", "--out", str(a), *SCAN)[0] == 0
    assert (a / "ratios.csv").read_bytes() == ref
    code, err = _run(capsys, "scan-ratios", "--out", str(a), *SCAN, "--set", "width_ratio=0.2")
    assert code == 2 and err["error"] == "ConfigError"


def test_scan_all_cells_fail(tmp_path, capsys):
    code, err = _run(capsys, "scan-ratios", "--out", str(tmp_path), "--set", "n_fermions=12",
                     "--set", "kfr_max=10", "--set", "vp_ratios=[0]", "--set", "kf_d=[50.0]")
    assert code == 3 and err["error"] == "ScanFailure"
    _, rows = _rows(tmp_path / "ratios.csv")
    assert rows[0][4] == "error:RangeError"


def test_scan_phase_and_kagome(tmp_path, capsys):
    code, _ = _run(capsys, "scan-phase", "--out", str(tmp_path), "--set", "n_fermions=30",
                   "--set", "kfr_max=25", "--set", "vp_ratios=[0]", "--set", "kf_d=[1.5, 2.5]",
                   "--set", "length=8")
    assert code == 0
    cols, rows = _rows(tmp_path / "phase.csv")
    assert cols == ["vp_ratio", "kf_d", "q0", "s_max", "bond", "gamma", "error"]
    assert len(rows) == 2
    code, _ = _run(capsys, "kagome", "--out", str(tmp_path), "--set", "n_fermions=30",
                   "--set", "anis_over_n=[0.2, 1.0]", "--set", "kf_d=[1.0, 2.0, 3.0]",
                   "--set", 'open_shell="exclude"')
    assert code == 0
    cols, rows = _rows(tmp_path / "kagome.csv")
    assert cols == ["anis_over_N", "kf_d", "v1", "v2", "v3", "flags"] and len(rows) == 6
    assert (tmp_path / "candidates.csv").exists()


def test_crossover(tmp_path, capsys):
    code, _ = _run(capsys, "crossover", "--out", str(tmp_path), "--set", "n_fermions=30",
                   "--set", "anis_over_n=[3.0]", "--set", "kfr_max=15")
    assert code == 0
    cols, rows = _rows(tmp_path / "beats.csv")
    assert cols[:3] == ["anis_over_n", "rank", "k_peak"]
    # at N = 30 the falling local density pulls the peak slightly below 2
    assert abs(float(rows[0][2]) - 2.0) <= 0.03
