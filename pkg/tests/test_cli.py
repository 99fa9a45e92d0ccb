import json

import numpy as np
import pytest

from tube_empc.cli import main

E1_DOC = {
    "schema_version": 1,
    "name": "custom",
    "model": {"A": [[1.0]], "B": [[1.0]], "K": [[-0.5]]},
    "constraints": {"Z": {"box": {"lo": [-2.0, -1.0], "hi": [2.0, 1.0]}},
                    "W": {"box": {"lo": [-0.1], "hi": [0.1]}}},
    "cost": {"H": [[2.0, 0.0], [0.0, 2.0]], "g": [-3.0, 0.0], "c0": 2.25},
    "N": 6, "T": 8, "N_inf": 100, "x0": [0.0],
    "disturbance": {"kind": "uniform_seeded"},
}


def write_scenario(tmp_path, **overrides):
    doc = json.loads(json.dumps(E1_DOC))
    doc.update(overrides)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_rci_e1(tmp_path):
    assert main(["rci", "--scenario", "e1", "--out", str(tmp_path), "--samples", "2000"]) == 0
    omega = json.loads((tmp_path / "omega.json").read_text())
    assert omega["schema_version"] == 1
    report = json.loads((tmp_path / "rci_report.json").read_text())
    assert np.ravel(report["omega_vertices"]) == pytest.approx([-0.2, 0.2], abs=1e-6) or \
        sorted(np.ravel(report["omega_vertices"])) == pytest.approx([-0.2, 0.2], abs=1e-6)
    assert report["sampled"]["holds"]
    assert (tmp_path / "sets.png").stat().st_size > 0
    assert (tmp_path / "zbar.json").is_file()


def test_rci_zero_dynamics_gives_w(tmp_path):
    path = write_scenario(tmp_path, model={"A": [[0.0]], "B": [[1.0]], "K": [[0.0]]})
    assert main(["rci", "--scenario", path, "--out", str(tmp_path / "o"), "--no-figures",
                 "--samples", "500"]) == 0
    report = json.loads((tmp_path / "o" / "rci_report.json").read_text())
    assert sorted(np.ravel(report["omega_vertices"])) == pytest.approx([-0.1, 0.1], abs=1e-9)


def test_rci_empty_tightening_exits_config(tmp_path):
    path = write_scenario(tmp_path, constraints={"Z": {"box": {"lo": [-2.0, -1.0], "hi": [2.0, 1.0]}},
                                                 "W": {"box": {"lo": [-1.5], "hi": [1.5]}}})
    assert main(["rci", "--scenario", path, "--out", str(tmp_path / "o"), "--no-figures"]) == 2


def test_missing_scenario_exits_config(tmp_path, capsys):
    assert main(["simulate", "--scenario", str(tmp_path / "nope.json")]) == 2
    assert "not found" in capsys.readouterr().err


def test_simulate_is_byte_reproducible(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["simulate", "--scenario", "e2", "--out", str(out), "--steps", "15",
                     "--seed", "4"] + (["--no-figures"] if k else [])) == 0
        outs.append(out)
    assert (outs[0] / "log.csv").read_bytes() == (outs[1] / "log.csv").read_bytes()
    assert (outs[0] / "summary.json").read_bytes() == (outs[1] / "summary.json").read_bytes()
    assert (outs[0] / "closed_loop.png").is_file() and not (outs[1] / "closed_loop.png").exists()
    meta = json.loads((outs[0] / "run_meta.json").read_text())
    assert meta["timing"]["solves"] == 16


def test_disturbance_outside_w_exits_4(tmp_path):
    seq = tmp_path / "w.json"
    seq.write_text(json.dumps({"sequence": [[0.05], [0.5], [0.0]]}))
    code = main(["simulate", "--scenario", "e1", "--out", str(tmp_path / "o"), "--steps", "3",
                 "--dist", "file", "--dist-file", str(seq), "--no-figures"])
    assert code == 4


def test_initial_infeasibility_exits_6(tmp_path):
    path = write_scenario(tmp_path, x0=[2.5])
    assert main(["simulate", "--scenario", path, "--out", str(tmp_path / "o"), "--no-figures"]) == 6


def test_selector_errors_exit_5(tmp_path):
    base = ["verify", "--scenario", "equilibrium", "--out", str(tmp_path), "--no-figures"]
    assert main(base + ["--select", "nap_uc", "--N-list", "10"]) == 5
    assert main(base + ["--select", "nonsense"]) == 5


def test_verify_equilibrium_all_pass(tmp_path):
    assert main(["verify", "--scenario", "equilibrium", "--out", str(tmp_path), "--select", "all"]) == 0
    verdicts = json.loads((tmp_path / "verdicts.json").read_text())
    assert verdicts["passed"]
    assert (tmp_path / "nap_tc.csv").read_text().startswith("N,T,seed,lhs,rhs_core,gap,status")
    assert any(p.suffix == ".png" for p in tmp_path.iterdir())


def test_sweep_writes_every_selector(tmp_path):
    path = write_scenario(tmp_path, sweep={"N_list": [6, 10], "T_list": [4], "seeds": [0],
                                           "points": [[0.0]]})
    assert main(["sweep", "--scenario", path, "--out", str(tmp_path / "o"), "--no-figures"]) == 0
    verdicts = json.loads((tmp_path / "o" / "verdicts.json").read_text())
    from tube_empc.analysis import SELECTORS
    for name in SELECTORS:
        assert (tmp_path / "o" / f"{name}.csv").is_file()
        assert name in verdicts["selectors"]
