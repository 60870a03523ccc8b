import json
import math

import numpy as np
import pytest

from oohomog import harness
from oohomog.cli import main
from oohomog.coeffs import ConstantField
from oohomog.macrosolver import assemble_solve, fem_space, relative_errors
from oohomog.harness import (
    ERROR_COLUMNS,
    ConfigError,
    StudyConfig,
    cost_report,
    cost_scaling_holds,
    coupled_q,
    fit_slope,
    read_csv,
    run_convergence_study,
    run_ensemble,
    run_offline,
    run_online,
)

EMOD_TOML = """
seed = 3
[problem]
coefficient = "analytic_effective"
[offline]
q = [4, 8, 16]
m = [1, 2]
analytic = true
probe = 64
[study]
kind = "emod"
"""

MANUFACTURED_TOML = """
[problem]
coefficient = "identity"
[online]
n = [4, 8, 16]
l = 1
[study]
kind = "manufactured"
"""


def write(tmp_path, text, name="study.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- config

@pytest.mark.parametrize("bad", [
    {"problem": {"coefficient": "marble"}},
    {"coupling": {"rule": "cubic"}, "online": {"n": [4, 8, 16]}},
    {"coupling": {"rule": "h1"}},
    {"online": {"n": [16, 8, 32]}},
    {"offline": {"q": [4, 4, 8]}},
    {"offline": {"m": 5}},
    {"online": {"l": 3}},
    {"ensemble": {"L": [8, 4]}},
    {"offline": {"cell": {"bc": "neumann"}}},
    {"plotting": {}},
])
def test_config_rejects(bad):
    with pytest.raises((ConfigError, ValueError)):
        StudyConfig.from_dict(bad)


def test_config_from_toml_and_cell_template(tmp_path):
    cfg = StudyConfig.from_toml(write(tmp_path, '[problem]\ncoefficient = "locally_periodic"\nepsilon = 1e-4\n'
                                      '[offline]\nq = 8\n[offline.cell]\nresolution = 16\n'))
    t = cfg.cell_template()
    assert t.delta == 1e-4 and t.resolution == 16 and t.freeze_slow
    assert cfg.q_schedule == [8] and cfg.m_values == [2] and cfg.l == 2


# -- coupling and slopes

def test_coupled_q_values():
    assert [coupled_q(n, 2, 2, "h1", 2.0) for n in (16, 32, 64)] == [13, 21, 32]
    assert [coupled_q(n, 2, 2, "l2", 2.0) for n in (16, 32, 64)] == [32, 64, 128]
    assert coupled_q(100, 2, 3, "h1", 2.5) == 25
    with pytest.raises(ConfigError):
        coupled_q(16, 2, 2, "none", 2.0)


def test_fit_slope():
    x = np.array([8.0, 16.0, 32.0, 64.0])
    s, r = fit_slope(x, 3 * x**-2.0)
    assert s == pytest.approx(-2.0, abs=1e-12) and r < 1e-12
    s, r = fit_slope(x, x**-1.0 * np.array([1.0, 1.1, 0.9, 1.0]))
    assert r > 0
    with pytest.raises(ValueError):
        fit_slope([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_slope([1, 2, 3], [1, 0, 2])


def test_cost_scaling():
    assert cost_scaling_holds(range(16, 2000), m=3, c=2.5)
    assert all(math.ceil(2.5 * math.sqrt(n)) ** 2 < (n + 1) ** 2 for n in range(16, 2000))
    assert cost_scaling_holds([16, 32, 64, 128], m=2, c=2.0)
    rows = [{"q": 12, "n": 64, "m": 3, "l": 2, "cell_problems": 144, "h1_error": 0.1},
            {"q": 29, "n": 64, "m": 1, "l": 2, "cell_problems": 841, "h1_error": 0.1}]
    t = cost_report(rows, [{"offline_time": 1.0, "online_time": 2.0}] * 2)
    assert [r["hmm_ls_proxy"] for r in t] == [4225, 4225] and t[0]["total_time"] == 3.0
    with pytest.raises(ValueError):
        cost_report(rows[:1])


# -- offline / online

def test_offline_analytic_counts(tmp_path):
    cfg = StudyConfig.from_dict({"problem": {"coefficient": "analytic_effective"},
                                 "offline": {"q": 18, "m": 3, "analytic": True}})
    art = run_offline(cfg)
    assert len(art.table) == 324 and art.cell_problems == 0
    paths = art.write(tmp_path)
    assert json.loads(paths["cost"].read_text())["q"] == 18
    assert paths["field"].name == "field_q18_m3.json"


def test_identity_sweep_and_rerun_identical(tmp_path):
    cfg = StudyConfig.from_dict({"problem": {"coefficient": "identity", "epsilon": 0.01},
                                 "offline": {"q": 3, "m": 1, "cell": {"resolution": 4, "degree": 1}}})
    a = run_offline(cfg)
    assert a.cell_problems == 9
    x = np.random.default_rng(0).uniform(0, 1, (100, 2))
    assert np.allclose(a.field(x), np.eye(2), atol=1e-12)
    b = run_offline(cfg)
    da, db = a.table.to_dict(), b.table.to_dict()
    da.pop("wall_time"), db.pop("wall_time")
    assert json.dumps(da) == json.dumps(db)
    assert a.field.to_json() == b.field.to_json()


def test_online_with_exact_field_matches_direct_solve():
    M = [[2.0, 0.5], [0.5, 3.0]]
    cfg = StudyConfig.from_dict({"problem": {"coefficient": "constant", "matrix": M},
                                 "offline": {"q": 4, "m": 1, "analytic": True, "probe": 16},
                                 "online": {"n": 8, "l": 2, "reference_n": 16}})
    art = run_offline(cfg)
    row = run_online(cfg, art)
    ref = assemble_solve(fem_space((0, 0, 1, 1), 16, 2), ConstantField(np.array(M)))
    direct = assemble_solve(fem_space((0, 0, 1, 1), 8, 2), ConstantField(np.array(M)))
    h1, l2 = relative_errors(direct, ref)
    assert row["h1_error"] == pytest.approx(h1, abs=1e-9) and row["l2_error"] == pytest.approx(l2, abs=1e-9)
    assert row["emod"] < 1e-12 and row["e1mod"] < 1e-12


def test_online_zero_load_is_flagged():
    cfg = StudyConfig.from_dict({"problem": {"coefficient": "identity", "f": 0.0},
                                 "offline": {"q": 4, "m": 1, "analytic": True, "probe": 16},
                                 "online": {"n": 4, "l": 1, "reference_n": 8}})
    with pytest.raises(ValueError, match="vanishes"):
        run_online(cfg, run_offline(cfg))


def test_online_domain_mismatch():
    cfg = StudyConfig.from_dict({"problem": {"coefficient": "identity"},
                                 "offline": {"q": 4, "m": 1, "analytic": True}, "online": {"n": 4}})
    other = StudyConfig.from_dict({"problem": {"coefficient": "identity", "domain": [0, 0, 2, 1]},
                                   "offline": {"q": 4, "m": 1, "analytic": True}, "online": {"n": 4}})
    with pytest.raises(ConfigError):
        run_online(other, run_offline(cfg))


# -- studies

def test_emod_study_deterministic_csv(tmp_path):
    cfg = StudyConfig.from_toml(write(tmp_path, EMOD_TOML))
    run_convergence_study(cfg, out=tmp_path / "a")
    rep = run_convergence_study(cfg, out=tmp_path / "b")
    a = (tmp_path / "a" / "errors.csv").read_bytes()
    assert a == (tmp_path / "b" / "errors.csv").read_bytes()
    rows = read_csv(tmp_path / "a" / "errors.csv")
    assert list(rows[0]) == ERROR_COLUMNS and len(rows) == 6
    assert {r["schema"] for r in rows} == {harness.ERRORS_SCHEMA}
    assert set(rep.slopes) == {"emod_vs_q_m1", "emod_vs_q_m2"}
    assert (tmp_path / "a" / "timings.csv").exists()


def test_study_needs_three_points():
    cfg = StudyConfig.from_dict({"problem": {"coefficient": "identity"}, "online": {"n": [4, 8]},
                                 "study": {"kind": "manufactured"}})
    with pytest.raises(ConfigError):
        run_convergence_study(cfg)


def test_sweep_cell_count_matches_samples(tmp_path):
    cfg = StudyConfig.from_dict({"problem": {"coefficient": "locally_periodic"},
                                 "offline": {"q": [3, 4, 5], "m": 1, "cell": {"resolution": 4, "degree": 1},
                                             "probe": 16},
                                 "study": {"kind": "emod"}})
    rep = run_convergence_study(cfg)
    assert [r["cell_problems"] for r in rep.rows] == [9, 16, 25]


def test_ensemble_degenerate_and_reproducible(tmp_path):
    base = {"problem": {"coefficient": "checkerboard", "epsilon": 1e-3,
                        "checkerboard": {"p1": 1.0, "k1": 2.0, "k2": 8.0, "a0": "zero"}},
            "ensemble": {"realizations": 3, "L": [1, 2, 4], "degree": 1}}
    rep = run_ensemble(StudyConfig.from_dict(base))
    assert np.all(rep.sigma_diag < 1e-12) and np.all(rep.sigma_12 < 1e-12)
    assert np.allclose(rep.mean, 2.0 * np.eye(2), atol=1e-12)
    base["problem"]["checkerboard"].update(p1=0.5, a0="slow")
    cfg = StudyConfig.from_dict(base)
    a = run_ensemble(cfg, out=tmp_path / "a")
    b = run_ensemble(cfg, jobs=2, out=tmp_path / "b")
    assert np.array_equal(a.samples, b.samples)
    assert (tmp_path / "a" / "ensemble.csv").read_bytes() == (tmp_path / "b" / "ensemble.csv").read_bytes()
    assert np.allclose(a.mean, np.swapaxes(a.mean, -1, -2), atol=1e-12)
    assert np.all(a.sigma_diag > 0)


def test_ensemble_requires_checkerboard():
    with pytest.raises(ConfigError):
        run_ensemble(StudyConfig.from_dict({"problem": {"coefficient": "identity"}}))


# -- command line

def test_cli_study_and_report(tmp_path, capsys):
    cfg = write(tmp_path, MANUFACTURED_TOML)
    out = tmp_path / "out"
    assert main(["study", "--config", str(cfg), "--out", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["slopes"]["h1_vs_n"]["slope"] == pytest.approx(-1.0, abs=0.2)
    assert main(["report", "--out", str(out)]) == 0
    assert (out / "cost.csv").exists()


def test_cli_offline_online_roundtrip(tmp_path, capsys):
    cfg = write(tmp_path, '[problem]\ncoefficient = "analytic_effective"\n'
                          '[offline]\nq = 6\nm = 2\nanalytic = true\nprobe = 32\n'
                          '[online]\nn = [4, 8]\nl = 1\nreference_n = 16\n')
    out = tmp_path / "o"
    assert main(["offline", "--config", str(cfg), "--out", str(out), "--seed", "5"]) == 0
    assert (out / "field_q6_m2.json").exists()
    assert main(["online", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "errors.csv")
    assert [int(r["n"]) for r in rows] == [4, 8]
    capsys.readouterr()


def test_cli_errors_are_records(tmp_path, capsys):
    assert main(["study", "--config", str(tmp_path / "missing.toml")]) == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["status"] == "error" and rec["command"] == "study"
    bad = write(tmp_path, '[problem]\ncoefficient = "marble"\n')
    assert main(["offline", "--config", str(bad)]) == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["type"] == "ConfigError"
