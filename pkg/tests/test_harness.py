import copy
import json
import math

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from acns import __version__
from acns import config as cfgmod
from acns import runner
from acns import snapshot as snp
from acns.cli import main
from acns.galerkin import make_state

BASE = {
    "domain": {"N": 16, "L": 6.283185307179586},
    "regularization": {"lambda": 0.01},
    "noise": {"seed": 7, "K1": 4, "K2": 2, "amp1": 0.1, "amp2": 0.1},
    "stepper": {"dt": 0.001, "T": 0.01},
    "initial": {"phase": "bubble", "velocity": "zero", "width": 0.5},
    "output": {"cadence": 5, "plots": False},
}


def cfg_dict(**sections):
    d = copy.deepcopy(BASE)
    for name, vals in sections.items():
        if vals is None:
            d[name] = None
        else:
            d.setdefault(name, {}).update(vals)
    return d


def write_cfg(path, **sections):
    p = path / "cfg.yaml"
    p.write_text(yaml.safe_dump(cfg_dict(**sections)))
    return p


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def files(d):
    return sorted(str(p.relative_to(d)) for p in d.rglob("*") if p.is_file())


# configuration ------------------------------------------------------------------

def test_round_trip_identity():
    cfg = cfgmod.from_dict(cfg_dict(dependence={"eps": [0.01, 0.005]}, convergence={"kind": "in_lambda", "ladder": [0.1, 0.05]}))
    again = cfgmod.from_dict(yaml.safe_load(cfgmod.dumps(cfg)))
    assert again == cfg
    assert again.digest() == cfg.digest()
    assert again.regularization.lam == 0.01
    assert "lambda" in cfgmod.dumps(cfg)


@given(N=st.sampled_from([8, 16, 64]), lam=st.floats(1e-4, 1.0), seed=st.integers(0, 2 ** 32),
       amp=st.floats(0.0, 1.0), cadence=st.integers(1, 100))
def test_round_trip_property(N, lam, seed, amp, cadence):
    d = cfg_dict(domain={"N": N}, regularization={"lambda": lam}, noise={"seed": seed},
                 initial={"amplitude": amp}, output={"cadence": cadence}, stepper={"dt": 1e-4, "T": 1e-3})
    cfg = cfgmod.from_dict(d)
    assert cfgmod.from_dict(yaml.safe_load(cfgmod.dumps(cfg))) == cfg


@pytest.mark.parametrize("bad,path", [
    ({"domian": {}}, "domian"),
    ({"noise": {"sede": 1}}, "noise.sede"),
    ({"regularization": {"lam": 0.1}}, "regularization.lam"),
    ({"domain": {"N": 15}}, "domain.N"),
    ({"domain": {"N": "big"}}, "domain.N"),
    ({"stepper": {"dt": 0.003, "T": 0.01}}, "stepper.T"),
    ({"initial": {"phase": "square"}}, "initial.phase"),
    ({"initial": {"amplitude": 1.5}}, "initial.amplitude"),
    ({"ensemble": {"members": 0}}, "ensemble.members"),
    ({"dependence": {"eps": []}}, "dependence.eps"),
    ({"convergence": {"kind": "in_space"}}, "convergence.kind"),
])
def test_rejections_name_the_key(bad, path):
    d = cfg_dict()
    for k, v in bad.items():
        if k in d and isinstance(v, dict):
            d[k].update(v)
        else:
            d[k] = v
    with pytest.raises(cfgmod.ConfigError) as info:
        cfgmod.from_dict(d)
    assert info.value.path == path


@pytest.mark.parametrize("theta,theta0", [(2.0, 2.0), (3.0, 2.0), (0.0, 2.0)])
def test_theta_constraint(theta, theta0):
    with pytest.raises(cfgmod.ConfigError) as info:
        cfgmod.from_dict(cfg_dict(potential={"theta": theta, "theta0": theta0}))
    assert info.value.path == "potential"
    assert "theta < theta0" in info.value.message


def test_explicit_scheme_dt_guard():
    with pytest.raises(cfgmod.ConfigError) as info:
        cfgmod.from_dict(cfg_dict(stepper={"scheme": "fully_explicit_em", "dt": 0.02, "T": 0.02}))
    assert info.value.path == "stepper.dt"
    cfgmod.from_dict(cfg_dict(stepper={"scheme": "fully_explicit_em", "dt": 0.01, "T": 0.02}))


def test_neumann_rejects_velocity_noise():
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.from_dict(cfg_dict(domain={"boundary_mode": "neumann_cosine"}))
    cfgmod.from_dict(cfg_dict(domain={"boundary_mode": "neumann_cosine"}, noise={"K1": 0}))


def test_bad_yaml(tmp_path):
    p = tmp_path / "x.yaml"
    p.write_text("domain: [unclosed")
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.load(p)


# snapshots ------------------------------------------------------------------------

def test_snapshot_round_trip(tmp_path):
    cfg = cfgmod.from_dict(cfg_dict(initial={"velocity": "random-band", "velocity_amplitude": 0.3}))
    model = runner.build_model(cfg)
    s = runner.initial_state(cfg, model)
    snap = snp.from_state(model.basis, s)
    snp.write(tmp_path / "s.acns", snap)
    back = snp.read(tmp_path / "s.acns")
    assert back.N == 16 and back.t == s.t and back.lam == 0.01
    a, b = snp.to_coefficients(model.basis, back)
    # real orthonormal coordinates on disk; the sqrt(2) rescaling costs at most an ulp
    assert np.max(np.abs(a - s.a)) < 1e-15 and np.max(np.abs(b - s.b)) < 1e-15
    assert snp.pack(back) == snp.pack(snap)
    assert np.array_equal(back.arrays["u"], model.basis.velocity_to_real(s.a))


def test_snapshot_corruption_detected():
    cfg = cfgmod.from_dict(cfg_dict())
    model = runner.build_model(cfg)
    data = snp.pack(snp.from_state(model.basis, runner.initial_state(cfg, model)))
    with pytest.raises(snp.SnapshotError, match="magic"):
        snp.unpack(b"XXXX" + data[4:])
    with pytest.raises(snp.SnapshotError):
        snp.unpack(data[:-8])
    with pytest.raises(snp.SnapshotError):
        snp.unpack(data[:20])
    with pytest.raises(snp.SnapshotError, match="trailing"):
        snp.unpack(data + b"\0")
    other = runner.build_model(cfgmod.from_dict(cfg_dict(domain={"N": 32})))
    with pytest.raises(snp.SnapshotError, match="N=16"):
        snp.to_coefficients(other.basis, snp.unpack(data))


def test_snapshot_preset_restarts_from_file(tmp_path):
    cfg = cfgmod.from_dict(cfg_dict(initial={"velocity": "random-band", "velocity_amplitude": 0.2}))
    model = runner.build_model(cfg)
    s = runner.initial_state(cfg, model)
    snp.write(tmp_path / "s.acns", snp.from_state(model.basis, s))
    path = str(tmp_path / "s.acns")
    cfg2 = cfgmod.from_dict(cfg_dict(initial={"phase": "snapshot", "phase_path": path,
                                              "velocity": "snapshot", "velocity_path": path}))
    s2 = runner.initial_state(cfg2, runner.build_model(cfg2))
    assert np.max(np.abs(s2.a - s.a)) < 1e-15 and np.max(np.abs(s2.b - s.b)) < 1e-15


# CLI: validate / run -----------------------------------------------------------------

def test_cli_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_cli_validate(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "validate", write_cfg(tmp_path))
    assert code == 0 and json.loads(out)["valid"]


def test_cli_invalid_config_exit_code(tmp_path, capsys):
    p = write_cfg(tmp_path, potential={"theta": 3.0, "theta0": 2.0})
    code, out, err = run_cli(capsys, "run", p, tmp_path / "out")
    assert code == 2 and out == ""
    msg = json.loads(err)
    assert msg["error"] == "config" and msg["path"] == "potential"
    assert not (tmp_path / "out").exists()


def test_cli_missing_file(tmp_path, capsys):
    code, _, err = run_cli(capsys, "validate", tmp_path / "nope.yaml")
    assert code == 5 and json.loads(err)["error"] == "rundir"


def test_cli_run_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    code, stdout, _ = run_cli(capsys, "run", write_cfg(tmp_path, output={"plots": True}), out)
    assert code == 0
    summary = json.loads(stdout)
    assert summary["steps"] == 10
    names = files(out)
    for f in ("manifest.jsonl", "config.yaml", "energy.csv", "summary.json", "energy.png",
              "snapshots/step_00000000.acns", "snapshots/step_00000005.acns", "snapshots/step_00000010.acns"):
        assert f in names
    recs = runner.read_manifest(out)
    assert recs[0]["record"] == "manifest" and recs[-1]["record"] == "complete"
    assert recs[0]["config_sha256"] == cfgmod.load(out / "config.yaml").digest()
    assert set(recs[-1]["outputs"]) == set(names) - {"manifest.jsonl"}
    rows = (out / "energy.csv").read_text().splitlines()
    assert len(rows) == 12


def test_run_is_reproducible_from_manifest(tmp_path, capsys):
    run_cli(capsys, "run", write_cfg(tmp_path), tmp_path / "a")
    head = runner.read_manifest(tmp_path / "a")[0]
    (tmp_path / "again.yaml").write_text(yaml.safe_dump(head["config"]))
    run_cli(capsys, "run", tmp_path / "again.yaml", tmp_path / "b")
    for f in files(tmp_path / "a"):
        if f != "manifest.jsonl":
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_zero_horizon_writes_only_initial_snapshot(tmp_path, capsys):
    out = tmp_path / "run"
    code, stdout, _ = run_cli(capsys, "run", write_cfg(tmp_path, stepper={"T": 0.0}), out)
    assert code == 0 and json.loads(stdout)["steps"] == 0
    assert [f for f in files(out) if f.startswith("snapshots/")] == ["snapshots/step_00000000.acns"]


def test_refuses_non_empty_run_dir(tmp_path, capsys):
    out = tmp_path / "run"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    code, _, err = run_cli(capsys, "run", write_cfg(tmp_path), out)
    assert code == 5 and "not empty" in json.loads(err)["message"]
    assert (out / "keep.txt").read_text() == "x"


def test_blow_up_exit_code(tmp_path, capsys):
    p = write_cfg(tmp_path, initial={"velocity": "random-band", "velocity_amplitude": 1e5},
                  stepper={"cfl_guard": True})
    code, _, err = run_cli(capsys, "run", p, tmp_path / "run")
    assert code == 3
    assert json.loads(err)["step"] == 1
    assert "blowup.json" in files(tmp_path / "run")
    assert runner.read_manifest(tmp_path / "run")[-1]["status"] == "blowup"


def test_pure_phase_run_reports_deviation(tmp_path, capsys):
    p = write_cfg(tmp_path, initial={"phase": "pure-phase"}, stepper={"T": 0.005})
    code, out, _ = run_cli(capsys, "run", p, tmp_path / "run")
    s = json.loads(out)
    assert code == 0 and s["max_deviation_from_one"] >= 0.0 and math.isfinite(s["max_abs_phi"])


# CLI: ensemble ----------------------------------------------------------------------------

def test_single_member_ensemble(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "ensemble", write_cfg(tmp_path, ensemble={"members": 1}), tmp_path / "e")
    s = json.loads(out)
    assert code == 0 and s["members"] == 1 and s["underpowered"]
    lines = (tmp_path / "e" / "verdict.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["record"] == "summary" and len(lines) == 12


def test_identical_seed_identical_verdict_bytes(tmp_path, capsys):
    p = write_cfg(tmp_path, ensemble={"members": 3})
    run_cli(capsys, "ensemble", p, tmp_path / "a")
    run_cli(capsys, "ensemble", p, tmp_path / "b", "--workers", 2)
    for f in ("verdict.jsonl", "terms.csv", "config.yaml"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert runner.read_manifest(tmp_path / "b")[-1]["workers"] == 2


def test_standard_error_scales_with_members():
    cfg = cfgmod.from_dict(cfg_dict(ensemble={"members": 128}, noise={"amp1": 0.3, "amp2": 0.3}))
    ledgers = runner.ensemble_ledgers(cfg, workers=1)
    from acns.diagnostics import verify_energy_inequality

    half = verify_energy_inequality(ledgers[:64], bias_rate=0.0)
    full = verify_energy_inequality(ledgers, bias_rate=0.0)
    ratio = half.table["diff_se"][1:] / full.table["diff_se"][1:]
    assert float(np.median(ratio)) == pytest.approx(math.sqrt(2), rel=0.2)


def test_member_failure_exit_code(tmp_path, capsys):
    p = write_cfg(tmp_path, ensemble={"members": 2},
                  initial={"velocity": "random-band", "velocity_amplitude": 1e5}, stepper={"cfl_guard": True})
    code, _, err = run_cli(capsys, "ensemble", p, tmp_path / "e")
    assert code == 4
    fails = json.loads(err)["failures"]
    assert [f["member"] for f in fails] == [0, 1]
    assert "failures.jsonl" in files(tmp_path / "e")
    assert "verdict.jsonl" not in files(tmp_path / "e")


def test_workers_env(monkeypatch, tmp_path, capsys):
    cfg = cfgmod.from_dict(cfg_dict(ensemble={"workers": 3}))
    monkeypatch.delenv(runner.WORKERS_ENV, raising=False)
    assert runner.resolve_workers(cfg) == 3
    monkeypatch.setenv(runner.WORKERS_ENV, "2")
    assert runner.resolve_workers(cfg) == 2
    for bad in ("two", "0"):
        monkeypatch.setenv(runner.WORKERS_ENV, bad)
        with pytest.raises(cfgmod.ConfigError):
            runner.resolve_workers(cfg)
    monkeypatch.setenv(runner.WORKERS_ENV, "0")
    code, _, err = run_cli(capsys, "ensemble", write_cfg(tmp_path), tmp_path / "e")
    assert code == 2 and json.loads(err)["path"] == runner.WORKERS_ENV


def test_workers_flag_validation(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "ensemble", write_cfg(tmp_path), tmp_path / "e", "--workers", 0)
    assert code == 2


def test_seed_ledger_in_manifest(tmp_path, capsys):
    run_cli(capsys, "ensemble", write_cfg(tmp_path, ensemble={"members": 2}), tmp_path / "e")
    seeds = runner.read_manifest(tmp_path / "e")[0]["seeds"]
    assert [s["member"] for s in seeds] == [0, 1]
    assert seeds[0]["philox_keys"]["phase"] != seeds[1]["philox_keys"]["phase"]


# CLI: dependence -------------------------------------------------------------------------

DEP = {"eps": [0.01, 0.005], "n_level": 50.0, "perturbation": {"phase": "random-band", "kmax": 3, "seed": 2}}


def test_dependence_zero_eps(tmp_path, capsys):
    p = write_cfg(tmp_path, dependence=DEP)
    code, out, _ = run_cli(capsys, "dependence", p, tmp_path / "d", "--eps", 0)
    assert code == 0
    rep = json.loads((tmp_path / "d" / "dependence.json").read_text())
    assert rep["reports"][0]["stopped_distance"] == 0.0
    # the override is part of what the manifest records
    assert runner.read_manifest(tmp_path / "d")[0]["config"]["dependence"]["eps"] == [0.0]


def test_dependence_ladder(tmp_path, capsys):
    p = write_cfg(tmp_path, dependence=DEP, output={"plots": True})
    code, out, _ = run_cli(capsys, "dependence", p, tmp_path / "d")
    assert code == 0
    assert json.loads(out)["slope"] == pytest.approx(1.0, abs=0.2)
    assert {"dependence.json", "dependence.csv", "dependence.png"} <= set(files(tmp_path / "d"))


def test_dependence_needs_second_datum(tmp_path, capsys):
    code, _, err = run_cli(capsys, "dependence", write_cfg(tmp_path), tmp_path / "d")
    assert code == 2 and json.loads(err)["path"] == "dependence"
    p = write_cfg(tmp_path, dependence={"eps": [0.01]})
    code, _, err = run_cli(capsys, "dependence", p, tmp_path / "d2")
    assert code == 2 and json.loads(err)["path"] == "dependence.perturbation"


# CLI: pressure ---------------------------------------------------------------------------

def test_pressure_closure_and_idempotence(tmp_path, capsys):
    p = write_cfg(tmp_path, output={"cadence": 1},
                  initial={"velocity": "random-band", "velocity_amplitude": 0.2})
    assert run_cli(capsys, "run", p, tmp_path / "traj")[0] == 0
    code, out, _ = run_cli(capsys, "pressure", tmp_path / "traj", tmp_path / "p1")
    assert code == 0
    rep = json.loads(out)
    assert rep["max_closure_residual"] < 1e-9 and rep["max_abs_mean"] < 1e-12
    assert rep["max_solenoidal_part"] < 1e-9
    run_cli(capsys, "pressure", tmp_path / "traj", tmp_path / "p2")
    f1, f2 = files(tmp_path / "p1"), files(tmp_path / "p2")
    assert f1 == f2 and len([f for f in f1 if f.startswith("pressure/")]) == 10
    for f in f1:
        if f != "manifest.jsonl":
            assert (tmp_path / "p1" / f).read_bytes() == (tmp_path / "p2" / f).read_bytes()


def test_pressure_of_zero_trajectory(tmp_path, capsys):
    p = write_cfg(tmp_path, output={"cadence": 1}, noise={"enabled": False},
                  initial={"phase": "pure-phase", "amplitude": 0.0}, stepper={"T": 0.003})
    run_cli(capsys, "run", p, tmp_path / "traj")
    code, _, _ = run_cli(capsys, "pressure", tmp_path / "traj", tmp_path / "p")
    assert code == 0
    for f in files(tmp_path / "p"):
        if f.startswith("pressure/"):
            sn = snp.read(tmp_path / "p" / f)
            assert all(np.all(arr == 0.0) for arr in sn.arrays.values())


def test_pressure_needs_every_step(tmp_path, capsys):
    run_cli(capsys, "run", write_cfg(tmp_path), tmp_path / "traj")
    code, _, err = run_cli(capsys, "pressure", tmp_path / "traj", tmp_path / "p")
    assert code == 5 and "cadence" in json.loads(err)["message"]


# CLI: converge -----------------------------------------------------------------------------

def test_converge_command(tmp_path, capsys):
    p = write_cfg(tmp_path, convergence={"kind": "in_lambda", "ladder": [0.1, 0.05, 0.025], "members": 1},
                  output={"plots": True})
    code, out, _ = run_cli(capsys, "converge", p, tmp_path / "c")
    rep = json.loads(out)
    assert code == 0 and rep["monotone"] and len(rep["distances"]) == 2
    assert {"convergence.json", "convergence.png"} <= set(files(tmp_path / "c"))


def test_converge_needs_section(tmp_path, capsys):
    code, _, err = run_cli(capsys, "converge", write_cfg(tmp_path), tmp_path / "c")
    assert code == 2 and json.loads(err)["path"] == "convergence"


def test_make_state_accepts_loaded_coefficients(tmp_path, capsys):
    p = write_cfg(tmp_path, output={"cadence": 1})
    run_cli(capsys, "run", p, tmp_path / "traj")
    cfg, model, stepper, states, incs = runner.load_trajectory(tmp_path / "traj")
    assert len(states) == 11 and len(incs) == 10
    assert states[-1].step == 10 and incs[3].step == 3
    s = runner.initial_state(cfg, model)
    assert np.max(np.abs(s.b - states[0].b)) < 1e-15
