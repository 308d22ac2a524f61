import subprocess
import sys

import numpy as np
import pytest

from helpers import edit_text, edited_config
from spinlab import analysis as an
from spinlab.cli import EXIT_CONFIG, EXIT_FIT, EXIT_IO, EXIT_OK, main
from spinlab.config import bundled_config, bundled_configs
from spinlab.engine import SweepResult
from spinlab.protocols import PROTOCOLS, env_threads, execute, plan

# cost reductions for the round trip; ODMR keeps enough trajectories to
# populate all seven hyperfine lines, CPMG drops the long pulse trains
REDUCED = {
    "fig1e": {"sim__n_traj": 2000},
    "fig2a": {"sim__n_traj": 8, "sequence__N": "1, 4, 16", "sweep__n": 16},
}


def write_cfg(tmp_path, name, **overrides):
    text = open(bundled_config(name)).read()
    path = tmp_path / f"{name}.cfg"
    path.write_text(edit_text(text, overrides))
    return path


def test_registry_complete():
    assert {"odmr", "rabi", "t1", "echo", "cpmg", "xy8", "spinlock", "dressed-rabi", "casr", "eseem"} <= set(PROTOCOLS)


def test_list_protocols(capsys):
    assert main(["list-protocols"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in PROTOCOLS:
        assert name in out


def test_list_protocols_schema(capsys):
    assert main(["list-protocols", "--schema"]) == EXIT_OK
    assert "[sweep]" in capsys.readouterr().out


@pytest.mark.parametrize("name", sorted(bundled_configs()))
def test_validate_bundled(name, capsys):
    assert main(["validate", name]) == EXIT_OK
    assert ": ok (" in capsys.readouterr().out


def test_validate_empty_sweep(tmp_path, capsys):
    path = write_cfg(tmp_path, "fig1g", sweep__n=0)
    assert main(["validate", str(path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "empty sweep" in err and "sweep.n" in err


def test_run_empty_sweep_nonzero(tmp_path, capsys):
    path = write_cfg(tmp_path, "fig1g", sweep__n=0)
    assert main(["run", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert not list(tmp_path.glob("*.csv"))


def test_unknown_key_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("[experiment]\nprotocol = t1\n[sweep]\nstart = 0\nstop = 1e-6\nn = 3\nwidth = 4\n")
    assert main(["validate", str(path)]) == EXIT_CONFIG
    assert "bad.cfg:7 [sweep.width]" in capsys.readouterr().err


def test_unknown_protocol(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("[experiment]\nprotocol = nmr\n[sweep]\nstart = 0\nstop = 1e-6\nn = 3\n")
    assert main(["validate", str(path)]) == EXIT_CONFIG
    assert "unknown protocol" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    path = write_cfg(tmp_path, "fig1g", sim__n_traj=2)
    assert main(["run", str(path), "--out", str(blocker / "sub")]) == EXIT_IO
    assert "cannot write" in capsys.readouterr().err


def test_bad_threads(tmp_path, monkeypatch, capsys):
    path = write_cfg(tmp_path, "fig1g", sim__n_traj=2)
    assert main(["run", str(path), "--threads", "0", "--out", str(tmp_path)]) == EXIT_CONFIG
    monkeypatch.setenv("SPINLAB_THREADS", "many")
    assert main(["run", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_env_threads(monkeypatch):
    monkeypatch.delenv("SPINLAB_THREADS", raising=False)
    assert env_threads() is None
    monkeypatch.setenv("SPINLAB_THREADS", "3")
    assert env_threads() == 3
    monkeypatch.setenv("SPINLAB_THREADS", "0")
    with pytest.raises(ValueError):
        env_threads()


def test_t1_run_then_fit(tmp_path, capsys):
    path = write_cfg(tmp_path, "fig1g")
    assert main(["run", str(path), "--out", str(tmp_path), "--svg"]) == EXIT_OK
    csv = tmp_path / "fig1g.csv"
    assert csv.exists() and (tmp_path / "fig1g.svg").exists() and (tmp_path / "fig1g_fit.txt").exists()
    capsys.readouterr()
    assert main(["fit", str(csv), "--model", "monoexp"]) == EXIT_OK
    res = an.FitResult.from_block(capsys.readouterr().out)
    assert res.model == "monoexp" and res.converged
    assert res["T1"] == pytest.approx(5.84e-6, rel=0.01)


def test_svg_is_self_contained(tmp_path):
    path = write_cfg(tmp_path, "fig1g", sim__n_traj=2)
    assert main(["run", str(path), "--out", str(tmp_path), "--svg"]) == EXIT_OK
    svg = (tmp_path / "fig1g.svg").read_text()
    assert svg.startswith("<svg") or svg.startswith("<?xml")
    assert "<polyline" in svg and "http://www.w3.org/2000/svg" in svg
    assert "href" not in svg


def test_fit_exit_codes(tmp_path, capsys):
    t = np.linspace(0, 1e-6, 20)
    SweepResult(t, np.ones_like(t), np.zeros_like(t), "tau", "s", {}).write_csv(tmp_path / "flat.csv")
    # a power law through N = 0 cannot be fitted
    assert main(["fit", str(tmp_path / "flat.csv"), "--model", "power_law"]) == EXIT_FIT
    assert main(["fit", str(tmp_path / "flat.csv"), "--model", "spline"]) == EXIT_CONFIG
    assert main(["fit", str(tmp_path / "missing.csv"), "--model", "monoexp"]) == EXIT_IO
    (tmp_path / "junk.csv").write_text("not,a\ncsv file\n")
    assert main(["fit", str(tmp_path / "junk.csv"), "--model", "monoexp"]) == EXIT_CONFIG
    assert main(["fit", str(tmp_path / "flat.csv"), "--model", "monoexp", "--fixed", "a"]) == EXIT_CONFIG


def test_fit_with_baseline_and_fixed(tmp_path, capsys):
    nu = np.linspace(15e6, 25e6, 201)
    y = an.sinc2_func(nu, -1e-3, 13e-9, 16, 19.8e6, 0.0) + 1e-4 * (nu - 15e6) / 1e7 + 0.05
    SweepResult(nu, y, np.zeros_like(y), "nu_rf", "Hz", {}).write_csv(tmp_path / "xy8.csv")
    argv = ["fit", str(tmp_path / "xy8.csv"), "--model", "sinc2", "--fixed", "tau=13e-9",
            "--baseline", "15e6:15.8e6", "--baseline", "24.2e6:25e6"]
    assert main(argv) == EXIT_OK
    res = an.FitResult.from_block(capsys.readouterr().out)
    assert abs(res["nu_rf"] - 19.8e6) < 0.1e6


def test_csv_identical_across_threads(tmp_path):
    path = write_cfg(tmp_path, "fig1h", sim__n_traj=24, sweep__n=6)
    outs = []
    for threads in ("1", "3"):
        d = tmp_path / f"t{threads}"
        assert main(["run", str(path), "--out", str(d), "--threads", threads, "--seed", "11"]) == EXIT_OK
        outs.append((d / "fig1h.csv").read_bytes())
    assert outs[0] == outs[1]


def test_csv_identical_across_runs(tmp_path):
    path = write_cfg(tmp_path, "fig3b", sim__n_traj=4, sweep__n=12)
    outs = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        assert main(["run", str(path), "--out", str(d), "--seed", "5"]) == EXIT_OK
        outs.append((d / "fig3b.csv").read_bytes())
    assert outs[0] == outs[1]


def test_seed_changes_output(tmp_path):
    path = write_cfg(tmp_path, "fig1h", sim__n_traj=8, sweep__n=4)
    outs = []
    for seed in ("1", "2"):
        d = tmp_path / seed
        main(["run", str(path), "--out", str(d), "--seed", seed])
        outs.append((d / "fig1h.csv").read_bytes())
    assert outs[0] != outs[1]


def test_plan_counts_curves():
    assert len(plan(edited_config("fig2a"))) == 8
    assert len(plan(edited_config("fig3c"))) == 4
    assert len(plan(edited_config("fig3e"))) == 4


@pytest.mark.parametrize("name", sorted(bundled_configs()))
def test_bundled_round_trip(name, tmp_path, capsys):
    """validate -> run -> fit on the written CSV, no manual input."""
    path = write_cfg(tmp_path, name, **REDUCED.get(name, {"sim__n_traj": 4}))
    assert main(["validate", str(path)]) == EXIT_OK
    assert main(["run", str(path), "--out", str(tmp_path / "out")]) == EXIT_OK
    cfg = edited_config(name)
    model = cfg["fit"]["model"]
    csvs = sorted(p for p in (tmp_path / "out").glob("*.csv") if "spectrum" not in p.name)
    assert csvs
    capsys.readouterr()
    argv = ["fit", str(csvs[0]), "--model", model]
    for k, v in cfg["fit"]["fixed"].items():
        argv += ["--fixed", f"{k}={v}"]
    for lo, hi in cfg["fit"]["baseline"]:
        argv += ["--baseline", f"{lo}:{hi}"]
    if cfg.protocol == "cpmg":
        argv += ["--x-scale", "0.5"]
    assert main(argv) == EXIT_OK
    res = an.FitResult.from_block(capsys.readouterr().out)
    assert res.model == model and res.converged


def test_odmr_run_spacing():
    out = execute(edited_config("fig1e"), seed=1)
    fit = out.curves[0].fit
    assert fit.converged
    assert abs(np.mean(an.line_spacing(fit, 7)) - 44e6) < 1.5e6


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "spinlab.cli", "list-protocols"], capture_output=True, text=True)
    assert r.returncode == 0 and "casr" in r.stdout
