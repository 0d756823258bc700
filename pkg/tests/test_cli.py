import json

import numpy as np
import pytest

from dpcollapse import io
from dpcollapse.cli import main
from dpcollapse.config import load_config, shipped_config

FIG4 = str(shipped_config("fig4_r1k.cfg"))
FIG4_25K = str(shipped_config("fig4_r25k.cfg"))
CONST = str(shipped_config("constant_rate.cfg"))
TAGG = str(shipped_config("tagg_symmetric.cfg"))


def run(*argv):
    return main([str(a) for a in argv])


def test_validate(capsys):
    assert run("validate", "--config", FIG4) == 0
    assert "config ok" in capsys.readouterr().out


def test_bad_config_exit_code(capsys):
    assert run("validate", "--config", FIG4, "--set", "photodiode.eta=1.2") == 2
    assert "photodiode.eta" in capsys.readouterr().err


def test_dp_energy(tmp_path, capsys):
    assert run("dp-energy", "--config", FIG4, "--coefficient", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "k = 3.2194e-10" in out
    assert run("dp-energy", "--config", FIG4, "--ds", 2.1e-9, "--out", tmp_path) == 0
    cols, meta = io.read_table(tmp_path / "dp_energy.csv", ["value"])
    names = meta["quantities"].split()
    values = dict(zip(names, cols["value"]))
    assert values["gamma_smeared_per_s"] == pytest.approx(1.35e7, rel=0.01)
    assert run("dp-energy", "--config", FIG4, "--ds", 0, "--out", tmp_path) == 0
    cols, meta = io.read_table(tmp_path / "dp_energy.csv", ["value"])
    values = dict(zip(meta["quantities"].split(), cols["value"]))
    assert values["E_smeared_J"] == 0.0
    assert json.loads((tmp_path / "run.json").read_text())["command"] == "dp-energy"


def test_curves_plateau_and_start(tmp_path):
    assert run("curves", "--config", FIG4, "--out", tmp_path, "--svg") == 0
    cols, meta = io.read_table(tmp_path / "curves.csv", ["t_s", "ds_m", "dev_mean_to_dc"])
    assert cols["ds_m"][-1] == pytest.approx(7.2e-9, rel=1e-3)
    assert abs(cols["dev_mean_to_dc"][0]) < 0.1  # percent, first bin
    assert meta["config_hash"] == load_config(FIG4).config_hash
    assert (tmp_path / "curves.svg").read_bytes().rstrip().endswith(b"</svg>")


def test_curves_slow_drive(tmp_path):
    assert run("curves", "--config", FIG4_25K, "--out", tmp_path, "--format", "json") == 0
    cols, _ = io.read_table(tmp_path / "curves.json", ["t_s", "ds_m"])
    early = cols["t_s"] <= 8e-6
    assert np.all(cols["ds_m"][early] < 2e-9)


def test_simulate_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("simulate", "--config", FIG4, "--trajectories", 300, "--out", out,
                   "--dump-trajectories", "--seed", 99) == 0
    for name in ("summary.csv", "trajectories.csv", "trajectory_counts.npz"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    _, meta = io.read_table(a / "summary.csv")
    assert meta["seed"] == "99"


def test_estimate_from_noiseless_curves(tmp_path):
    assert run("curves", "--config", FIG4, "--out", tmp_path) == 0
    assert run("estimate", "--config", FIG4, "--from", tmp_path / "curves.csv",
               "--out", tmp_path) == 0
    cols, _ = io.read_table(tmp_path / "estimate.csv", ["t", "cumulative", "mask"])
    sc = load_config(FIG4).scenario()
    truth = sc.decay_history().cumulative(cols["t"])
    m = cols["mask"] == 1
    assert m.sum() > 20
    assert np.allclose(cols["cumulative"][m], truth[m], rtol=1e-3, atol=0)


@pytest.mark.slow
def test_estimate_from_simulation(tmp_path, capsys):
    assert run("simulate", "--config", CONST, "--out", tmp_path, "--dump-trajectories") == 0
    assert run("estimate", "--config", CONST, "--from", tmp_path / "summary.csv",
               "--out", tmp_path, "--max-rel-err", 0.05, "--bootstrap", 200) == 0
    cols, _ = io.read_table(tmp_path / "estimate.csv", ["t", "cumulative", "mask", "ci_lo"])
    m = cols["mask"] == 1
    t, y = cols["t"][m], cols["cumulative"][m]
    slope = float(t @ y / (t @ t))
    assert slope == pytest.approx(1e6, rel=0.2)
    assert np.all(cols["ci_lo"][m] <= cols["ci_hi"][m])
    assert "goodness" in capsys.readouterr().out


def test_estimate_missing_column(tmp_path, capsys):
    path = io.write_table(tmp_path / "ext", {"t_s": [1e-9, 3e-9], "N_dc": [1.0, 1.0],
                                             "N_zero": [1.0, 1.0]}, {})
    assert run("estimate", "--config", FIG4, "--from", path, "--out", tmp_path) == 2
    assert "N_mean_to_dc" in capsys.readouterr().err


def test_tagg_inverted(tmp_path):
    assert run("tagg", "--config", TAGG, "--inverted", "--out", tmp_path) == 0
    cols, meta = io.read_table(tmp_path / "tagg.csv", ["N_dc_plus", "N_dc_minus", "N_zero"])
    assert meta["inverted"] == "1"
    assert np.allclose(cols["N_dc_plus"], cols["N_dc_minus"], rtol=1e-12, atol=0)


def test_tagg_single_channel(tmp_path):
    zeros = tmp_path / "zeros.csv"
    zeros.write_text("t_s,gamma_per_s\n0,0\n")
    assert run("tagg", "--config", TAGG, "--out", tmp_path, "--set",
               f"tagg.gamma_ps_table={zeros}", "--set", "tagg.minus_rate=zero") == 0
    cols, _ = io.read_table(tmp_path / "tagg.csv")
    doc = load_config(TAGG, [f"tagg.gamma_ps_table={zeros}", "tagg.minus_rate=zero"])
    sc = doc.mz_scenario()
    w = sc.weights
    a = sc.histories()["mirror_plus"].cumulative(cols["t_s"])
    dcp, n0, dcm = cols["N_dc_plus"], cols["N_zero"], cols["N_dc_minus"]
    hand = dcp - (w.w_minus * (dcp - dcm) + w.w_zero * (dcp - n0)) * np.exp(-a)
    assert np.allclose(cols["N_mean_to_dc_plus"], hand, rtol=1e-8)


def test_tagg_with_simulation(tmp_path, capsys):
    assert run("tagg", "--config", TAGG, "--out", tmp_path, "--trajectories", 200) == 0
    cols, _ = io.read_table(tmp_path / "tagg.csv", ["N_mean_to_dc_plus_mc",
                                                    "se_mean_to_dc_plus_mc"])
    assert "bins within 3 stderr" in capsys.readouterr().out


def test_unwritable_output(capsys):
    assert run("curves", "--config", FIG4, "--out", "/proc/forbidden") == 4
