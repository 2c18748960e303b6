"""Energy bookkeeping, the stochastic energy inequality check, pathwise
continuous dependence and self-convergence studies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .galerkin import FieldState, make_state, n_steps_for, simulate, step_with_info
from .noise import g1_coefficients, sample_increment
from .spectral import dual_distance
from .potential import yosida_slack


class InsufficientEnsembleError(ValueError):
    pass


class LedgerMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyParts:
    kinetic: float
    interface: float
    potential: float

    @property
    def total(self) -> float:
        return self.kinetic + self.interface + self.potential


def energy(model, state: FieldState) -> EnergyParts:
    """Kinetic + interface + regularized potential energy."""
    basis = model.basis
    kin = 0.5 * basis.norm_Hsigma(state.a) ** 2 if state.a is not None else 0.0
    return EnergyParts(kin, 0.5 * basis.grad_sq(state.b), basis.integrate(state.yosida.F))


COLUMNS = (
    "t", "kinetic", "interface", "potential", "energy",
    "diss_u", "diss_mu",
    "ito_g1", "ito_grad_g2", "ito_comp",
    "qv_g1", "qv_grad_g2", "qv_comp",
    "mart_u", "mart_phi",
    "u_sq_dt", "grad_phi_sq_dt",
    "max_abs_phi", "outside_fraction",
)


class EnergyLedger:
    """Per-step record of every term in the discrete Ito energy balance.

    Row 0 is the initial state.  Row m >= 1 holds the energy at t_m and the
    increments accumulated over the step t_{m-1} -> t_m:

    * ``diss_*``: dt ||grad u^m||^2 and dt ||mu^{m-1/2}||^2
    * ``ito_*``: (dt/2) times the Hilbert-Schmidt (compensator) terms at t_{m-1}
    * ``qv_*``: the same second-order terms built from the realized increment
    * ``mart_*``: (u^{m-1}, G1 dW1) and (mu^{m-1}, G2 dW2)
    * ``u_sq_dt``, ``grad_phi_sq_dt``: left-point integrands for the bound
    """

    def __init__(self):
        self.rows = {k: [] for k in COLUMNS}
        self.constants = {}

    # observer hooks ---------------------------------------------------------
    def on_start(self, model, state):
        basis = model.basis
        s2 = float(np.sum(model.noise.sigma2 ** 2)) if model.noise.enabled else 0.0
        self.constants = {
            "C_G1": model.noise.C_G1() if model.noise.enabled else 0.0,
            "L2_squared": model.noise.L2_squared(model.potential) if model.noise.enabled else 0.0,
            "sigma2_sq": s2,
            "area": basis.area,
            "lam": model.layer.lam,
        }
        for k in COLUMNS:
            self.rows[k] = []
        e = energy(model, state)
        self._append(
            t=state.t, kinetic=e.kinetic, interface=e.interface, potential=e.potential, energy=e.total,
            max_abs_phi=float(np.max(np.abs(state.phi_grid))), outside_fraction=0.0,
        )

    def on_step(self, model, old, new, info):
        basis = model.basis
        dt = info.dt
        e = energy(model, new)
        vals = dict(
            t=new.t, kinetic=e.kinetic, interface=e.interface, potential=e.potential, energy=e.total,
            diss_mu=dt * basis.norm_H(info.mu_half) ** 2,
            max_abs_phi=float(np.max(np.abs(new.phi_grid))),
            outside_fraction=info.outside_fraction,
            grad_phi_sq_dt=dt * basis.grad_sq(old.b),
        )
        if new.a is not None:
            vals["diss_u"] = dt * basis.norm_Vsigma(new.a) ** 2
            vals["u_sq_dt"] = dt * basis.norm_Hsigma(old.a) ** 2
        noise = model.noise
        if info.increment is not None and noise.enabled:
            s2 = float(np.sum(noise.sigma2 ** 2))
            fpp = old.yosida.Fpp
            if noise.K2:
                prof_grid = basis.to_grid(info.profile)
                vals["ito_grad_g2"] = 0.5 * dt * s2 * basis.grad_sq(info.profile)
                vals["ito_comp"] = 0.5 * dt * s2 * basis.integrate(fpp * prof_grid ** 2)
                amp = float(np.dot(noise.sigma2, info.increment.dW2))
                vals["qv_grad_g2"] = 0.5 * basis.grad_sq(info.noise_phi)
                vals["qv_comp"] = 0.5 * amp * amp * basis.integrate(fpp * prof_grid ** 2)
                vals["mart_phi"] = basis.inner(old.c, info.noise_phi)
            if noise.K1 and old.a is not None:
                coef = g1_coefficients(noise, basis, old.a)
                vals["ito_g1"] = 0.5 * dt * float(np.sum(coef ** 2))
                vals["qv_g1"] = 0.5 * basis.norm_Hsigma(info.noise_u) ** 2
                vals["mart_u"] = basis.inner(old.a, info.noise_u)
        self._append(**vals)

    def _append(self, **vals):
        for k in COLUMNS:
            self.rows[k].append(float(vals.get(k, 0.0)))

    # access -----------------------------------------------------------------
    def array(self, name):
        return np.asarray(self.rows[name])

    def __len__(self):
        return len(self.rows["t"])

    def to_dict(self):
        return {"constants": dict(self.constants), "rows": {k: list(v) for k, v in self.rows.items()}}

    @classmethod
    def from_dict(cls, d):
        led = cls()
        led.constants = dict(d["constants"])
        led.rows = {k: list(d["rows"][k]) for k in COLUMNS}
        return led

    def cumulative(self, *names):
        total = np.zeros(len(self))
        for n in names:
            total = total + self.array(n)
        return np.cumsum(total)

    def dissipation(self):
        return self.cumulative("diss_u", "diss_mu")


def ito_residual(ledger: EnergyLedger, start: int = 0, stop: int | None = None,
                 quadratic: str = "compensator") -> float:
    """Discrete defect of the Ito energy identity over rows (start, stop].

    R = E(start) - E(stop) - dissipation + Ito correction + martingale terms.
    In the noise-free case R >= 0 is the numerical dissipation of the scheme.
    ``quadratic='realized'`` uses the realized quadratic variation instead of
    the compensator, which gives a pathwise first-order residual.
    """
    n = len(ledger)
    stop = n - 1 if stop is None else stop
    if not 0 <= start <= stop < n:
        raise IndexError(f"window ({start}, {stop}] outside ledger of {n} rows")
    if quadratic == "compensator":
        keys = ("ito_g1", "ito_grad_g2", "ito_comp")
    elif quadratic == "realized":
        keys = ("qv_g1", "qv_grad_g2", "qv_comp")
    else:
        raise ValueError(f"unknown quadratic variation mode {quadratic!r}")
    sl = slice(start + 1, stop + 1)
    e = ledger.array("energy")
    diss = np.sum(ledger.array("diss_u")[sl] + ledger.array("diss_mu")[sl])
    corr = sum(np.sum(ledger.array(k)[sl]) for k in keys)
    mart = np.sum(ledger.array("mart_u")[sl] + ledger.array("mart_phi")[sl])
    return float(e[start] - e[stop] - diss + corr + mart)


def ito_residual_path(ledger: EnergyLedger, quadratic: str = "compensator") -> np.ndarray:
    """ito_residual(ledger, 0, m) for every row m."""
    keys = ("ito_g1", "ito_grad_g2", "ito_comp") if quadratic == "compensator" else ("qv_g1", "qv_grad_g2", "qv_comp")
    e = ledger.array("energy")
    return e[0] - e - ledger.dissipation() + ledger.cumulative(*keys) + ledger.cumulative("mart_u", "mart_phi")


@dataclass
class EnergyVerdict:
    members: int
    table: dict
    passed: bool
    passed_literal: bool
    bias_rate: float
    z: float
    constants: dict
    underpowered: bool = False

    def rows(self):
        keys = list(self.table)
        n = len(self.table["t"])
        return [{k: _py(self.table[k][i]) for k in keys} for i in range(n)]

    def summary(self):
        return {
            "members": self.members,
            "passed": self.passed,
            "passed_literal_form": self.passed_literal,
            "bias_rate": self.bias_rate,
            "z": self.z,
            "underpowered": self.underpowered,
            "constants": self.constants,
            "max_margin": _py(np.max(self.table["diff_mean"] - self.table["tolerance"])),
        }


def _py(v):
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    return float(v)


def _mean_se(x):
    m = x.shape[0]
    mean = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / math.sqrt(m) if m > 1 else np.zeros_like(mean)
    return mean, se


def verify_energy_inequality(ledgers, bias_rate: float | None = None, min_members: int = 30,
                             z: float = 2.0) -> EnergyVerdict:
    """Monte-Carlo check of the energy inequality at every recorded time.

    For each member i the left side is E_i(t) + int_0^t (|grad u|^2 + |mu|^2)
    and the right side is

        (C^2 + L2^2 |O| / 2) t + E_i(0) + C^2 int |u|^2 + (L2^2 / 2) int |grad phi|^2.

    The check passes at time t when mean(lhs - rhs) <= z * SE + bias_rate * dt * t.
    ``bias_rate`` defaults to a least-squares fit of the adverse mean Ito
    residual (realized quadratic variation) against dt*t.
    The form with separate suprema on the left is reported for information.
    """
    ledgers = list(ledgers)
    M = len(ledgers)
    if M < min_members:
        raise InsufficientEnsembleError(f"need at least {min_members} members, got {M}")
    t = ledgers[0].array("t")
    for led in ledgers[1:]:
        if len(led) != len(t) or not np.array_equal(led.array("t"), t):
            raise LedgerMismatchError("ledgers are not on a common time grid")
    const = ledgers[0].constants
    C2 = const["C_G1"] ** 2
    L2sq = const["L2_squared"]
    area = const["area"]
    dt = float(t[1] - t[0]) if len(t) > 1 else 0.0

    def stack(fn):
        return np.stack([fn(led) for led in ledgers])

    kin = stack(lambda l: l.array("kinetic"))
    inter = stack(lambda l: l.array("interface"))
    pot = stack(lambda l: l.array("potential"))
    en = kin + inter + pot
    diss = stack(lambda l: l.dissipation())
    lhs = en + diss
    rhs_const = np.broadcast_to((C2 + 0.5 * L2sq * area) * t, en.shape)
    rhs_init = np.broadcast_to(en[:, :1], en.shape)
    rhs_u = C2 * stack(lambda l: l.cumulative("u_sq_dt"))
    rhs_phi = 0.5 * L2sq * stack(lambda l: l.cumulative("grad_phi_sq_dt"))
    rhs = rhs_const + rhs_init + rhs_u + rhs_phi
    diff = lhs - rhs
    resid = stack(lambda l: ito_residual_path(l, "compensator"))

    realized = stack(lambda l: ito_residual_path(l, "realized"))
    if bias_rate is None:
        # the realized form has the compensator's conditional mean without the
        # (dW^2 - dt) fluctuation; least squares through the origin in dt * t
        x = dt * t
        denom = float(np.dot(x, x))
        bias_rate = float(max(0.0, -np.dot(realized.mean(axis=0), x) / denom)) if denom > 0 else 0.0

    table = {"t": t}
    for name, arr in (("kinetic", kin), ("interface", inter), ("potential", pot), ("energy", en),
                      ("dissipation", diss), ("lhs", lhs), ("rhs_noise", rhs_const), ("rhs_initial", rhs_init),
                      ("rhs_velocity", rhs_u), ("rhs_phase", rhs_phi), ("rhs", rhs), ("ito_residual", resid),
                      ("ito_residual_realized", realized),
                      ("diff", diff)):
        m, se = _mean_se(np.asarray(arr))
        table[f"{name}_mean"] = m
        table[f"{name}_se"] = se
    bias = bias_rate * dt * t
    tol = z * table["diff_se"] + bias
    table["bias"] = bias
    table["tolerance"] = tol
    ok = table["diff_mean"] <= tol
    table["pass"] = ok

    lhs_lit = np.max(table["energy_mean"]) + table["dissipation_mean"][-1]
    rhs_lit = table["rhs_mean"][-1]
    se_lit = float(np.sqrt(np.max(table["energy_se"]) ** 2 + table["dissipation_se"][-1] ** 2 + table["rhs_se"][-1] ** 2))
    passed_literal = bool(lhs_lit <= rhs_lit + z * se_lit + bias[-1])

    return EnergyVerdict(
        members=M, table=table, passed=bool(np.all(ok)), passed_literal=passed_literal,
        bias_rate=bias_rate, z=z, constants=dict(const), underpowered=M < 30,
    )


# continuous dependence ------------------------------------------------------

@dataclass
class DependenceReport:
    eps: float
    n_level: float
    times: np.ndarray
    dual_sq: np.ndarray
    phase_sq: np.ndarray
    int_u_sq: np.ndarray
    int_phase_V1_sq: np.ndarray
    zeta: float
    initial_distance: float

    def distance_path(self):
        """sup|du|_{V*} + (int |du|^2)^(1/2) + sup|dphi| + (int |dphi|_{V1}^2)^(1/2)."""
        return (np.sqrt(np.maximum.accumulate(self.dual_sq)) + np.sqrt(self.int_u_sq)
                + np.sqrt(np.maximum.accumulate(self.phase_sq)) + np.sqrt(self.int_phase_V1_sq))

    @property
    def stopped_distance(self) -> float:
        return float(self.distance_path()[-1])

    def to_dict(self):
        return {
            "eps": self.eps, "n_level": self.n_level, "zeta": self.zeta,
            "initial_distance": self.initial_distance, "stopped_distance": self.stopped_distance,
            "final_dual_sq": float(self.dual_sq[-1]), "final_phase_sq": float(self.phase_sq[-1]),
            "int_u_sq": float(self.int_u_sq[-1]), "int_phase_V1_sq": float(self.int_phase_V1_sq[-1]),
        }


@dataclass
class DependenceSummary:
    reports: list
    slope: float
    gronwall_C: float
    dominated: bool
    extras: dict = field(default_factory=dict)


def _path_functional(basis, state):
    """(||u||^2, ||u||_V^2 + ||phi||_{V2}^2) for the stopping rule."""
    u2 = basis.norm_Hsigma(state.a) ** 2 if state.a is not None else 0.0
    v2 = (basis.norm_Vsigma(state.a) ** 2 if state.a is not None else 0.0) + basis.norm_V2(state.b) ** 2
    return u2, v2


def paired_run(model, stepper, s1: FieldState, s2: FieldState, T: float, n_level: float,
               member: int = 0, eps: float = float("nan")) -> DependenceReport:
    """Drive two initial data with the same Brownian path up to min(zeta_n, T)."""
    basis = model.basis
    thr = n_level ** 2
    n = n_steps_for(T, stepper.dt)

    sup1, int1 = _path_functional(basis, s1)[0], 0.0
    sup2, int2 = _path_functional(basis, s2)[0], 0.0
    if sup1 >= thr or sup2 >= thr:
        raise ValueError(f"stopping level n={n_level} is already reached at t=0; choose a larger n")

    def metrics(x, y):
        da = (x.a - y.a) if x.a is not None else None
        db = x.b - y.b
        dual = dual_distance(basis, x.a, y.a) if da is not None else 0.0
        return dual, basis.norm_H(db) ** 2, (basis.norm_Hsigma(da) ** 2 if da is not None else 0.0), basis.norm_V1(db) ** 2

    d0 = metrics(s1, s2)
    D0 = math.sqrt(d0[0]) + math.sqrt(d0[1])
    times, dual, ph, iu, iv = [s1.t], [d0[0]], [d0[1]], [0.0], [0.0]
    zeta = s1.t + T
    noisy = model.noise.enabled and (model.noise.K1 or model.noise.K2)
    x, y = s1, s2
    for _ in range(n):
        inc = sample_increment(model.noise, stepper.dt, x.step, member) if noisy else None
        x_new, _ = step_with_info(model, stepper, x, inc)
        y_new, _ = step_with_info(model, stepper, y, inc)
        m = metrics(x_new, y_new)
        times.append(x_new.t)
        dual.append(m[0])
        ph.append(m[1])
        iu.append(iu[-1] + stepper.dt * m[2])
        iv.append(iv[-1] + stepper.dt * m[3])
        u1, v1 = _path_functional(basis, x_new)
        u2, v2 = _path_functional(basis, y_new)
        sup1, int1 = max(sup1, u1), int1 + stepper.dt * v1
        sup2, int2 = max(sup2, u2), int2 + stepper.dt * v2
        x, y = x_new, y_new
        if sup1 + int1 >= thr or sup2 + int2 >= thr:
            zeta = x.t
            break
    return DependenceReport(eps, n_level, np.array(times), np.array(dual), np.array(ph), np.array(iu),
                            np.array(iv), zeta, D0)


def dependence_experiment(model, stepper, initial: FieldState, perturbation, eps_list, T: float,
                          n_level: float, member: int = 0) -> DependenceSummary:
    """Stopped distance between paired runs for a ladder of initial separations.

    ``perturbation = (da, db)`` is the direction of the initial perturbation;
    run two starts from ``initial`` shifted by eps * (da, db).  The slope of
    log(stopped distance) against log(eps) is fitted over eps > 0.
    """
    da, db = perturbation
    reports = []
    for eps in eps_list:
        a2 = None if initial.a is None else initial.a + eps * da
        s2 = make_state(model, initial.b + eps * db, a2, initial.t, initial.step)
        reports.append(paired_run(model, stepper, initial, s2, T, n_level, member, float(eps)))
    pos = [r for r in reports if r.eps > 0]
    slope = float("nan")
    if len(pos) >= 2:
        slope = float(np.polyfit(np.log([r.eps for r in pos]), np.log([r.stopped_distance for r in pos]), 1)[0])
    C, dominated = gronwall_fit(pos)
    return DependenceSummary(reports, slope, C, dominated)


def gronwall_fit(reports):
    """Fit C in D(t) <= D0 exp(C (t + n^4)) on the widest separation, then test the rest."""
    if not reports:
        return float("nan"), True
    ref = max(reports, key=lambda r: r.eps)
    n4 = ref.n_level ** 4
    path = ref.distance_path()
    with np.errstate(divide="ignore"):
        rates = np.log(np.maximum(path, 1e-300) / ref.initial_distance) / (ref.times - ref.times[0] + n4)
    C = float(max(0.0, np.max(rates)))
    dominated = True
    for r in reports:
        env = r.initial_distance * np.exp(C * (r.times - r.times[0] + n4))
        if np.any(r.distance_path() > env * (1 + 1e-9)):
            dominated = False
    return C, dominated


# self-convergence -----------------------------------------------------------

@dataclass
class ConvergenceReport:
    kind: str
    ladder: list
    distances: list
    rates: list
    monotone: bool

    @property
    def order(self) -> float:
        return float(min(self.rates)) if self.rates else float("nan")

    def to_dict(self):
        return {"kind": self.kind, "ladder": list(self.ladder), "distances": list(self.distances),
                "rates": list(self.rates), "monotone": self.monotone, "order": self.order}


def convergence_study(kind: str, ladder, make_run, T: float, members=(0,)) -> ConvergenceReport:
    """Successive-rung distances for a refinement ladder.

    ``make_run(value)`` returns ``(model, stepper, initial_state, refine)``.
    Ladders go from coarse to fine: decreasing dt or lambda, increasing N.
    Final states are compared on the coarsest basis in the ladder.
    """
    if kind not in ("in_dt", "in_lambda", "in_n"):
        raise ValueError(f"unknown convergence kind {kind!r}")
    ladder = list(ladder)
    if len(ladder) < 2:
        raise ValueError("a ladder needs at least two rungs")
    finals = []
    for value in ladder:
        model, stepper, init, refine = make_run(value)
        per_member = []
        for m in members:
            tr = simulate(model, stepper, init, T, member=m, refine=refine)
            per_member.append((model.basis, tr.final))
        finals.append(per_member)
    coarse = min((f[0][0] for f in finals), key=lambda b: b.N)
    distances = []
    for i in range(len(ladder) - 1):
        sq = []
        for (b1, x), (b2, y) in zip(finals[i], finals[i + 1]):
            dphi = b1.restrict(x.b, coarse) - b2.restrict(y.b, coarse)
            d = coarse.norm_H(dphi) ** 2
            if x.a is not None:
                du = b1.restrict_velocity(x.a, coarse) - b2.restrict_velocity(y.a, coarse)
                d += coarse.norm_Hsigma(du) ** 2
            sq.append(d)
        distances.append(float(math.sqrt(np.mean(sq))))
    rates = []
    for i in range(len(distances) - 1):
        ratio = ladder[i] / ladder[i + 1] if kind != "in_n" else ladder[i + 1] / ladder[i]
        if distances[i] > 0 and distances[i + 1] > 0:
            rates.append(float(math.log(distances[i] / distances[i + 1]) / math.log(ratio)))
        else:
            rates.append(float("inf") if distances[i + 1] == 0 else float("nan"))
    monotone = all(distances[i + 1] < distances[i] for i in range(len(distances) - 1))
    return ConvergenceReport(kind, ladder, distances, rates, monotone)


def slack_bound(model) -> float:
    """Yosida slack: how far sum F_lam can sit below zero per unit area."""
    return yosida_slack(model.layer, model.potential)
