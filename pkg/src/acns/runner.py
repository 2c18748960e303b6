"""Orchestration: build models from a RunConfig, run single trajectories and
ensembles, and persist everything under one directory per run.

Run directory layout::

    manifest.jsonl          header record first, completion record last
    config.yaml             the parsed configuration, re-serialized
    energy.csv              energy ledger (single runs)
    summary.json
    snapshots/step_00000000.acns ...
    verdict.jsonl, terms.csv                      (ensemble)
    dependence.json, dependence.csv               (dependence)
    pressure/…, pressure_report.csv, pressure_norms.json   (pressure)
    convergence.json                              (converge)

Nothing in a run directory is rewritten once it exists; the manifest only
grows.  Every numeric artifact except the wall-clock fields in the manifest
is a pure function of the configuration.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import snapshot as snp
from .diagnostics import COLUMNS, EnergyLedger, dependence_experiment, verify_energy_inequality, convergence_study
from .galerkin import ACNSModel, BlowUpError, StepperConfig, make_state, n_steps_for, simulate
from .initial import initial_coefficients, random_band_phase, random_band_velocity
from .noise import STREAM_INITIAL, STREAM_PHASE, STREAM_VELOCITY, NoiseConfig, NoiseModel, _key
from .potential import PotentialSpec, YosidaLayer
from .pressure import pressure_norm_report, pressure_series
from .spectral import build_basis

WORKERS_ENV = "ACNS_WORKERS"


class MemberFailure(RuntimeError):
    """One or more ensemble members failed; aggregation was refused."""

    def __init__(self, failures):
        super().__init__(f"{len(failures)} member(s) failed: " + ", ".join(str(f["member"]) for f in failures))
        self.failures = failures


class RunDirError(RuntimeError):
    pass


# model construction ---------------------------------------------------------

def build_model(cfg: cfgmod.RunConfig, *, N=None, lam=None):
    d, r, n = cfg.domain, cfg.regularization, cfg.noise
    basis = build_basis(N=N or d.N, L=d.L, boundary_mode=d.boundary_mode, dealias_fraction=d.dealias_fraction)
    potential = PotentialSpec(cfg.potential.theta, cfg.potential.theta0)
    layer = YosidaLayer(lam if lam is not None else r.lam, r.root_tolerance, r.quadrature_order,
                        r.quadrature_panels, r.energy_method)
    ncfg = NoiseConfig(n.seed, n.K1 if basis.has_velocity else 0, n.K2, n.decay, n.amp1, n.amp2,
                       n.g1_kind, n.kappa, n.enabled)
    return ACNSModel(basis, potential, layer, NoiseModel.from_config(ncfg))


def build_stepper(cfg: cfgmod.RunConfig, dt=None) -> StepperConfig:
    s = cfg.stepper
    return StepperConfig(dt if dt is not None else s.dt, s.scheme, s.max_phase_clip, s.cfl_guard)


def initial_state(cfg, model, member=0):
    a, b = initial_coefficients(model.basis, cfg.initial, model.potential, member)
    return make_state(model, b, a)


def perturbation_direction(cfg, model):
    """(da, db) for the dependence experiment; sup|db| <= 1 and ||da|| = 1 (or zero)."""
    if cfg.dependence is None or cfg.dependence.perturbation is None:
        raise cfgmod.ConfigError("dependence.perturbation", "the second initial datum needs a perturbation section")
    p = cfg.dependence.perturbation
    basis = model.basis
    if p.phase == "random-band":
        db = random_band_phase(basis, 1.0, p.kmax, p.seed, 0, stream_offset=1)
    elif p.phase == "zero":
        db = basis.zeros()
    else:
        raise cfgmod.ConfigError("dependence.perturbation.phase", "must be 'random-band' or 'zero'")
    da = None
    if basis.has_velocity:
        if p.velocity == "random-band":
            da = random_band_velocity(basis, 1.0, p.kmax, p.seed, 0, stream_offset=1)
        elif p.velocity == "zero":
            da = basis.zeros()
        else:
            raise cfgmod.ConfigError("dependence.perturbation.velocity", "must be 'random-band' or 'zero'")
    return da, db


def resolve_workers(cfg) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            w = int(env)
        except ValueError as exc:
            raise cfgmod.ConfigError(WORKERS_ENV, f"not an integer: {env!r}") from exc
        if w < 1:
            raise cfgmod.ConfigError(WORKERS_ENV, "must be >= 1")
        return w
    return cfg.ensemble.workers


def seed_ledger(cfg, member):
    n = cfg.noise
    keys = {name: [f"{k:016x}" for k in _key(n.seed, member, stream)]
            for name, stream in (("velocity", STREAM_VELOCITY), ("phase", STREAM_PHASE))}
    keys["initial"] = [f"{k:016x}" for k in _key(cfg.initial.seed, member, STREAM_INITIAL)]
    return {"member": member, "noise_seed": n.seed, "initial_seed": cfg.initial.seed, "philox_keys": keys}


# run directories ------------------------------------------------------------

class RunDir:
    """Append-only output directory."""

    def __init__(self, path, cfg, kind, members=1):
        self.path = Path(path)
        if self.path.exists() and any(self.path.iterdir()):
            raise RunDirError(f"{self.path} already exists and is not empty")
        self.path.mkdir(parents=True, exist_ok=True)
        self.outputs = []
        self.t0 = time.perf_counter()
        header = {
            "record": "manifest", "kind": kind, "config_sha256": cfg.digest(), "code_version": __version__,
            "python": platform.python_version(), "numpy": np.__version__,
            "config": cfg.to_dict(), "seeds": [seed_ledger(cfg, m) for m in range(members)],
        }
        self._append_manifest(header)
        self.write_text("config.yaml", cfgmod.dumps(cfg))

    def _append_manifest(self, record):
        with open(self.path / "manifest.jsonl", "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def _claim(self, name):
        p = self.path / name
        if p.exists():
            raise RunDirError(f"refusing to overwrite {p}")
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return p

    def write_text(self, name, text):
        self._claim(name).write_text(text)

    def write_bytes(self, name, data):
        self._claim(name).write_bytes(data)

    def write_json(self, name, obj):
        self.write_text(name, json.dumps(obj, sort_keys=True, indent=1) + "\n")

    def plot(self, name, fn, *args):
        fn(self._claim(name), *args)

    def finish(self, status="ok", **extra):
        rec = {"record": "complete", "status": status, "outputs": list(self.outputs),
               "wall_clock_s": time.perf_counter() - self.t0, **extra}
        self._append_manifest(rec)


def read_manifest(path):
    lines = (Path(path) / "manifest.jsonl").read_text().splitlines()
    records = [json.loads(x) for x in lines if x.strip()]
    if not records or records[0].get("record") != "manifest":
        raise RunDirError(f"{path} has no manifest header")
    return records


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def jsonl_text(records):
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


# single trajectory ----------------------------------------------------------

class SnapshotWriter:
    """Observer writing a snapshot every ``cadence`` steps (and at the end)."""

    def __init__(self, rundir: RunDir, cadence):
        self.rundir = rundir
        self.cadence = cadence
        self.last = None

    def _write(self, model, state):
        self.rundir.write_bytes(f"snapshots/step_{state.step:08d}.acns", snp.pack(snp.from_state(model.basis, state)))
        self.last = state.step

    def on_start(self, model, state):
        self._write(model, state)

    def on_step(self, model, old, new, info):
        if new.step % self.cadence == 0:
            self._write(model, new)

    def on_finish(self, model, state):
        if self.last != state.step:
            self._write(model, state)


class PhaseMonitor:
    """Largest deviation from the pure phase and the largest |phi| seen."""

    def __init__(self):
        self.max_dev_one = 0.0
        self.max_abs = 0.0

    def _see(self, state):
        phi = state.phi_grid
        self.max_dev_one = max(self.max_dev_one, float(np.max(np.abs(phi - 1.0))))
        self.max_abs = max(self.max_abs, float(np.max(np.abs(phi))))

    def on_start(self, model, state):
        self._see(state)

    def on_step(self, model, old, new, info):
        self._see(new)


def run_single(cfg, out_dir, member=0):
    """One trajectory with snapshots, the energy ledger and a summary."""
    model = build_model(cfg)
    stepper = build_stepper(cfg)
    init = initial_state(cfg, model, member)
    rd = RunDir(out_dir, cfg, "run")
    ledger, mon = EnergyLedger(), PhaseMonitor()
    observers = [ledger, mon]
    if cfg.output.snapshots:
        observers.append(SnapshotWriter(rd, cfg.output.cadence))
    try:
        tr = simulate(model, stepper, init, cfg.stepper.T, observers, member=member)
    except BlowUpError as exc:
        rd.write_json("blowup.json", {"message": str(exc), "step": exc.step, "t": exc.t, "report": exc.report})
        rd.finish("blowup")
        raise
    rd.write_text("energy.csv", csv_text(COLUMNS, zip(*(ledger.rows[k] for k in COLUMNS))))
    e = ledger.array("energy")
    summary = {
        "steps": tr.n_steps, "t_final": tr.final.t, "energy_initial": float(e[0]), "energy_final": float(e[-1]),
        "max_energy_increase": float(np.max(np.diff(e))) if e.size > 1 else 0.0,
        "max_abs_phi": mon.max_abs, "max_deviation_from_one": mon.max_dev_one,
        "max_outside_fraction": float(np.max(ledger.array("outside_fraction"))),
    }
    rd.write_json("summary.json", summary)
    if cfg.output.plots and e.size > 1:
        from . import plots
        rd.plot("energy.png", plots.energy_curve, ledger)
    rd.finish()
    return summary


# ensemble -------------------------------------------------------------------

def _member_task(args):
    cfg_dict, member = args
    cfg = cfgmod.from_dict(cfg_dict)
    model = build_model(cfg)
    stepper = build_stepper(cfg)
    try:
        init = initial_state(cfg, model, member)
        ledger = EnergyLedger()
        simulate(model, stepper, init, cfg.stepper.T, [ledger], member=member)
    except (BlowUpError, ValueError) as exc:
        return {"member": member, "ok": False, "error": type(exc).__name__, "message": str(exc),
                "step": getattr(exc, "step", None)}
    return {"member": member, "ok": True, "ledger": ledger.to_dict()}


def map_members(fn, tasks, workers):
    """Ordered map; one worker runs in-process."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def ensemble_ledgers(cfg, workers=None):
    workers = resolve_workers(cfg) if workers is None else workers
    tasks = [(cfg.to_dict(), m) for m in range(cfg.ensemble.members)]
    results = map_members(_member_task, tasks, workers)
    failures = [r for r in results if not r["ok"]]
    if failures:
        raise MemberFailure(failures)
    return [EnergyLedger.from_dict(r["ledger"]) for r in results]


def verdict_records(verdict):
    return [{"record": "summary", **verdict.summary()}] + [{"record": "time", **row} for row in verdict.rows()]


def run_ensemble(cfg, out_dir, workers=None):
    """M members, the Monte-Carlo energy verdict and its term table."""
    rd = RunDir(out_dir, cfg, "ensemble", cfg.ensemble.members)
    workers = resolve_workers(cfg) if workers is None else workers
    try:
        ledgers = ensemble_ledgers(cfg, workers)
    except MemberFailure as exc:
        rd.write_text("failures.jsonl", jsonl_text(exc.failures))
        rd.finish("member_failure")
        raise
    M = len(ledgers)
    verdict = verify_energy_inequality(ledgers, cfg.ensemble.bias_rate, min_members=min(30, M), z=cfg.ensemble.z)
    verdict.underpowered = M < 30
    rd.write_text("verdict.jsonl", jsonl_text(verdict_records(verdict)))
    keys = list(verdict.table)
    rd.write_text("terms.csv", csv_text(keys, zip(*(verdict.table[k] for k in keys))))
    if cfg.output.plots and len(verdict.table["t"]) > 1:
        from . import plots
        rd.plot("energy_ci.png", plots.energy_bands, verdict)
    rd.finish(passed=verdict.passed, workers=workers)
    return verdict


# continuous dependence ------------------------------------------------------

def dependence_records(summary):
    head = {"record": "summary", "slope": summary.slope, "gronwall_C": summary.gronwall_C,
            "dominated": summary.dominated}
    return head, [r.to_dict() for r in summary.reports]


def run_dependence(cfg, out_dir, eps=None, member=0):
    if cfg.dependence is None:
        raise cfgmod.ConfigError("dependence", "missing: the experiment needs a perturbed second initial datum")
    if eps is not None:
        # the manifest must describe what actually ran
        cfg = dataclasses.replace(cfg, dependence=dataclasses.replace(cfg.dependence, eps=[float(e) for e in eps]))
        cfgmod.validate(cfg)
    eps_list = list(cfg.dependence.eps)
    model = build_model(cfg)
    stepper = build_stepper(cfg)
    init = initial_state(cfg, model, member)
    direction = perturbation_direction(cfg, model)
    rd = RunDir(out_dir, cfg, "dependence")
    summary = dependence_experiment(model, stepper, init, direction, eps_list, cfg.stepper.T,
                                    cfg.dependence.n_level, member)
    head, rows = dependence_records(summary)
    rd.write_json("dependence.json", {**head, "reports": rows})
    keys = list(rows[0])
    rd.write_text("dependence.csv", csv_text(keys, ([r[k] for k in keys] for r in rows)))
    if cfg.output.plots and sum(r["eps"] > 0 for r in rows) >= 2:
        from . import plots
        rd.plot("dependence.png", plots.dependence_scaling, rows, summary.slope)
    rd.finish()
    return summary


# pressure -------------------------------------------------------------------

def load_trajectory(traj_dir):
    """Config, model, stepper, states and regenerated increments of a stored run."""
    from .noise import sample_increment

    traj_dir = Path(traj_dir)
    head = read_manifest(traj_dir)[0]
    cfg = cfgmod.from_dict(head["config"])
    if cfg.output.cadence != 1 or not cfg.output.snapshots:
        raise RunDirError("pressure recovery needs a trajectory stored with output.cadence = 1")
    model = build_model(cfg)
    if not model.basis.has_velocity:
        raise RunDirError("pressure recovery needs a periodic run with velocity")
    stepper = build_stepper(cfg)
    files = sorted((traj_dir / "snapshots").glob("step_*.acns"))
    states = []
    for f in files:
        sn = snp.read(f)
        a, b = snp.to_coefficients(model.basis, sn)
        states.append(make_state(model, b, a, sn.t, sn.step))
    if len(states) < 2:
        raise RunDirError("need at least two stored steps")
    noisy = model.noise.enabled and (model.noise.K1 or model.noise.K2)
    incs = [sample_increment(model.noise, stepper.dt, s.step, 0) if noisy else None for s in states[:-1]]
    return cfg, model, stepper, states, incs


def run_pressure(traj_dir, out_dir):
    from .pressure import momentum_residual

    cfg, model, stepper, states, incs = load_trajectory(traj_dir)
    basis = model.basis
    rd = RunDir(out_dir, cfg, "pressure")
    series = pressure_series(model, stepper, states, incs)
    rows = []
    for m, (s0, s1) in enumerate(zip(states[:-1], states[1:])):
        h = momentum_residual(model, stepper, s0, s1, incs[m])
        sol = float(np.sqrt(np.sum(np.abs(basis.to_stokes(h)) ** 2)))
        rows.append((s1.step, s1.t, series.closure[m], series.mean[m], sol, series.uniform[m],
                     basis.norm_H(series.pi[m]), basis.norm_H(series.primitive[m + 1])))
        rd.write_bytes(f"pressure/step_{s1.step:08d}.acns",
                       snp.pack(snp.pressure_record(basis, s1.t, s1.step, series.pi[m], series.primitive[m + 1])))
    rd.write_text("pressure_report.csv", csv_text(
        ("step", "t", "closure_residual", "abs_mean", "solenoidal_part", "mean_force", "pi_norm", "primitive_norm"),
        rows))
    report = pressure_norm_report(basis, series)
    report["max_solenoidal_part"] = max(r[4] for r in rows)
    report["source"] = str(Path(traj_dir).name)
    rd.write_json("pressure_norms.json", report)
    rd.finish()
    return report


# self-convergence -----------------------------------------------------------

def run_converge(cfg, out_dir):
    if cfg.convergence is None:
        raise cfgmod.ConfigError("convergence", "missing section")
    cv = cfg.convergence
    ladder = [int(v) for v in cv.ladder] if cv.kind == "in_n" else list(cv.ladder)
    fine = min(ladder) if cv.kind == "in_dt" else None
    T = cfg.stepper.T

    def make_run(value):
        if cv.kind == "in_dt":
            model = build_model(cfg)
            stepper = build_stepper(cfg, dt=value)
            refine = int(round(value / fine))
        elif cv.kind == "in_lambda":
            model = build_model(cfg, lam=value)
            stepper = build_stepper(cfg)
            refine = 1
        else:
            model = build_model(cfg, N=value)
            stepper = build_stepper(cfg)
            refine = 1
        return model, stepper, initial_state(cfg, model, 0), refine

    rd = RunDir(out_dir, cfg, "converge")
    report = convergence_study(cv.kind, ladder, make_run, T, members=tuple(range(cv.members)))
    rd.write_json("convergence.json", report.to_dict())
    if cfg.output.plots:
        from . import plots
        rd.plot("convergence.png", plots.convergence_curve, report)
    rd.finish()
    return report
