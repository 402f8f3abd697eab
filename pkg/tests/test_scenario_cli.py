import json

import numpy as np
import pytest

from ultrahyp import __version__
from ultrahyp.cli import UsageError, main, render_heatmap
from ultrahyp.scenario import Scenario, ScenarioError, env_overrides, shipped_names


def test_every_shipped_scenario_loads():
    names = shipped_names()
    assert "flat" in names and "mizohata" in names
    for n in names:
        sc = Scenario.shipped(n)
        assert len(sc.fingerprint()) == 16


def test_minimal_scenario_runs_on_defaults():
    sc = Scenario.from_dict({})
    assert sc.grid().n == 128 and sc.d == 2


def test_fingerprint_tracks_content():
    a = Scenario.from_dict({"grid": {"n": 64}})
    b = Scenario.from_dict({"grid": {"n": 64}})
    c = Scenario.from_dict({"grid": {"n": 32}})
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


def test_unknown_key_rejected():
    with pytest.raises(ScenarioError):
        Scenario.from_dict({"grid": {"points": 64}})


def test_support_outside_middle_third_rejected():
    with pytest.raises(ScenarioError):
        Scenario.from_dict({"grid": {"box_length": 6.0},
                            "metric": {"profile": "elliptic-bump", "radius": 2.0}})


def test_env_override_case_insensitive():
    ov = env_overrides({"ULTRAHYP_FLOW__R": "3.5", "ULTRAHYP_RENORM__K_PRIME": "2", "HOME": "/x"})
    assert ov == {"flow": {"R": 3.5}, "renorm": {"K_prime": 2}}
    sc = Scenario.shipped("flat", environ={"ULTRAHYP_GRID__N": "64"})
    assert sc.grid().n == 64
    with pytest.raises(ScenarioError):
        env_overrides({"ULTRAHYP_GRID__NOPE": "1"})


def test_heatmap_bytes(tmp_path):
    data = np.arange(12, dtype=float).reshape(3, 4)
    p = render_heatmap(data, tmp_path / "a.pgm", colormap="gray", comment="t")
    blob = p.read_bytes()
    assert blob.startswith(b"P5\n# t\n4 3\n255\n")
    body = blob[-12:]
    assert body[0] == 0 and body[-1] == 255
    q = render_heatmap(data, tmp_path / "b.pgm", colormap="gray", comment="t")
    assert q.read_bytes() == blob


def test_heatmap_zero_field_uniform(tmp_path):
    p = render_heatmap(np.zeros((4, 4)), tmp_path / "z.ppm", comment="z")
    assert set(p.read_bytes()[-48:]) == {0}


def test_heatmap_rejects_bad_input(tmp_path):
    with pytest.raises(UsageError):
        render_heatmap(np.zeros((2, 2, 2)), tmp_path / "x.ppm")
    with pytest.raises(UsageError):
        render_heatmap(np.array([[np.nan, 1.0]]), tmp_path / "x.ppm")


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["bogus"]) == 2
    assert main(["trap", "--out", str(tmp_path)]) == 2
    assert main(["trap", "--scenario", "no-such-scenario", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid]\npoints = 3\n")
    assert main(["trap", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["regress", "--only", "99", "--out", str(tmp_path)]) == 2


def test_mizohata_command_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["mizohata", "--scenario", "mizohata", "--out", str(a)]) == 0
    assert main(["mizohata", "--scenario", "mizohata", "--out", str(b)]) == 0
    for name in ("mizohata.csv", "mizohata.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    meta = json.loads((a / "mizohata.json").read_text())["meta"]
    assert meta["version"] == __version__
    assert meta["fingerprint"] == Scenario.shipped("mizohata").fingerprint()
    assert (a / "mizohata.csv").read_text().startswith(f"# ultrahyp {__version__}")


def test_verify_mizohata_exit_0(tmp_path):
    assert main(["verify", "--scenario", "mizohata", "--kind", "mizohata", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "growth_curve.csv").read_text().splitlines()
    ratios = [float(r.split(",")[1]) for r in rows[2:]]
    assert ratios == sorted(ratios) and ratios[-1] > 1


def test_trap_flat_exit_0(tmp_path):
    assert main(["trap", "--scenario", "flat", "--out", str(tmp_path)]) == 0
    crit = json.loads((tmp_path / "trap.json").read_text())["criteria"]
    assert crit[0]["passed"] and crit[0]["value"] <= 0.05


def test_failure_writes_failures_json(tmp_path, monkeypatch):
    # an impossible verify threshold turns into a criterion failure
    monkeypatch.setenv("ULTRAHYP_VERIFY__MAX_RATIO", "0.0")
    monkeypatch.setenv("ULTRAHYP_VERIFY__KIND", "energy")
    monkeypatch.setenv("ULTRAHYP_SOLVER__T", "0.01")
    assert main(["verify", "--scenario", "flat", "--out", str(tmp_path)]) == 1
    assert json.loads((tmp_path / "failures.json").read_text())["failures"]


def test_solve_linear_outputs(tmp_path):
    assert main(["solve-linear", "--scenario", "solver-2d", "--out", str(tmp_path)]) == 0
    img = (tmp_path / "solve-linear_final.ppm").read_bytes()
    assert img.startswith(b"P6\n# ultrahyp")
