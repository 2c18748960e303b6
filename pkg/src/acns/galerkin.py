"""Semi-implicit Euler-Maruyama integration of the projected stochastic system.

State: Stokes coefficients ``a`` of the velocity, coefficients ``b`` of the
phase field, and the chemical potential ``c = -Lap(phi) + P F_lam'(phi)``,
which is always recomputed from ``b`` and never integrated.

One step of size dt (linear parts implicit, everything else explicit):

    (1 + dt beta) a+ = a + dt [-B(u) + P(mu grad phi)] + G1(u) dW1
    (1 + dt alpha) b+ = b - dt [u . grad phi + P F_lam'(phi)] + G2_lam(phi) dW2
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import noise as nz
from .potential import PotentialDomainError, YosidaEval, YosidaLayer, evaluate
from .spectral import SpectralBasis, _advection_grid

SCHEMES = ("semi_implicit_em", "fully_explicit_em")


class BlowUpError(RuntimeError):
    """Non-finite state (or a CFL violation when guarded)."""

    def __init__(self, message, step=None, t=None, report=None):
        super().__init__(message)
        self.step = step
        self.t = t
        self.report = report or {}


@dataclass(frozen=True)
class StepperConfig:
    dt: float = 1e-3
    scheme: str = "semi_implicit_em"
    max_phase_clip: float = 1.0
    cfl_guard: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not self.max_phase_clip > 0:
            raise ValueError("max_phase_clip must be positive")


@dataclass(frozen=True, eq=False)
class ACNSModel:
    basis: SpectralBasis
    potential: object
    layer: YosidaLayer
    noise: nz.NoiseModel = field(default_factory=nz.NoiseModel.silent)
    transport: bool = True
    capillary: bool = True

    def __post_init__(self):
        nz.check_capacity(self.noise, self.basis)

    @property
    def coupled(self) -> bool:
        return self.basis.has_velocity


@dataclass(frozen=True, eq=False)
class FieldState:
    t: float
    step: int
    a: np.ndarray | None
    b: np.ndarray
    c: np.ndarray
    lam: float
    yosida: YosidaEval = field(repr=False)

    @property
    def phi_grid(self):
        return self.yosida.x


@dataclass(eq=False)
class StepInfo:
    dt: float
    increment: nz.WienerIncrement | None
    noise_u: np.ndarray | None  # G1(u^m) dW1, Stokes coefficients
    noise_phi: np.ndarray  # G2_lam(phi^m) dW2
    profile: np.ndarray  # P(1 - J_lam(phi^m)^2)
    mu_half: np.ndarray  # chemical potential used by the step
    outside_fraction: float


def assemble_mu(model: ACNSModel, b, guess=None):
    """Chemical potential coefficients and the pointwise potential data at phi = b."""
    basis = model.basis
    phi = basis.to_grid(b)
    try:
        ev = evaluate(model.layer, model.potential, phi, guess)
    except PotentialDomainError as exc:
        raise BlowUpError(f"phase field became non-finite: {exc}") from exc
    return basis.alpha * b + basis.project(ev.Fp), ev


def make_state(model: ACNSModel, b, a=None, t=0.0, step=0) -> FieldState:
    basis = model.basis
    b = np.asarray(b) * basis.mask
    if basis.has_velocity:
        a = basis.zeros() if a is None else np.asarray(a) * basis.vmask
    elif a is not None:
        raise ValueError("velocity given for a scalar-only basis")
    c, ev = assemble_mu(model, b)
    return FieldState(float(t), int(step), a, b, c, model.layer.lam, ev)


def _explicit_terms(model, state):
    """Explicit velocity forcing -B(u) + P(mu grad phi) and transport u . grad phi."""
    basis = model.basis
    if state.a is None:
        return None, 0.0
    vel = basis.zeros()
    conv = 0.0
    need_grad = model.transport or model.capillary
    grad_phi = basis.grad_grid(state.b) if need_grad else None
    if model.transport:
        u_grid = basis.velocity_grid(state.a)
        adv = _advection_grid(basis, u_grid, basis.velocity_hat(state.a))
        vel = vel - basis.to_stokes(basis.vector_project(adv))
        conv = basis.project(u_grid[0] * grad_phi[0] + u_grid[1] * grad_phi[1])
    if model.capillary:
        mu = basis.to_grid(state.c)
        vel = vel + basis.to_stokes(basis.vector_project(mu * grad_phi))
    return vel, conv


def drift(model: ACNSModel, state: FieldState):
    """Deterministic right-hand sides (da/dt, db/dt) at ``state``."""
    basis = model.basis
    vel, conv = _explicit_terms(model, state)
    db = -conv - state.c
    da = None if vel is None else vel - basis.beta * state.a
    return da, db


def step_with_info(model: ACNSModel, stepper: StepperConfig, state: FieldState, increment=None):
    basis = model.basis
    dt = stepper.dt
    if stepper.scheme == "fully_explicit_em" and dt > model.layer.lam:
        raise ValueError(f"explicit scheme needs dt <= lambda (dt={dt}, lambda={model.layer.lam})")
    vel, conv = _explicit_terms(model, state)
    fp = state.c - basis.alpha * state.b
    profile = basis.project(state.yosida.gap)

    noise_u = None
    noise_phi = basis.zeros()
    if increment is not None and model.noise.enabled:
        if model.noise.K2:
            noise_phi = profile * float(np.dot(model.noise.sigma2, increment.dW2))
        if state.a is not None and model.noise.K1:
            noise_u = nz.apply_G1(model.noise, basis, state.a, increment.dW1)

    a_new = None
    if stepper.scheme == "semi_implicit_em":
        rhs_b = state.b - dt * (conv + fp) + noise_phi
        b_new = rhs_b / (1.0 + dt * basis.alpha) * basis.mask
        if state.a is not None:
            rhs_a = state.a + dt * vel
            if noise_u is not None:
                rhs_a = rhs_a + noise_u
            a_new = rhs_a / (1.0 + dt * basis.beta) * basis.vmask
        mu_half = basis.alpha * b_new + fp
    else:
        b_new = (state.b - dt * (conv + state.c) + noise_phi) * basis.mask
        if state.a is not None:
            a_new = state.a + dt * (vel - basis.beta * state.a)
            if noise_u is not None:
                a_new = a_new + noise_u
            a_new = a_new * basis.vmask
        mu_half = state.c

    if not np.all(np.isfinite(b_new)) or (a_new is not None and not np.all(np.isfinite(a_new))):
        raise BlowUpError(
            f"non-finite state at step {state.step + 1}",
            step=state.step + 1,
            t=state.t + dt,
            report={"max_abs_phi_before": float(np.max(np.abs(state.phi_grid)))},
        )
    c_new, ev = assemble_mu(model, b_new, state.yosida.s)
    if stepper.cfl_guard and a_new is not None:
        umax = float(np.max(np.abs(basis.velocity_grid(a_new))))
        if umax * dt > basis.h:
            raise BlowUpError(
                f"CFL violation at step {state.step + 1}: max|u| dt / h = {umax * dt / basis.h:.3g}",
                step=state.step + 1, t=state.t + dt, report={"max_abs_u": umax},
            )
    outside = float(np.mean(np.abs(ev.x) > stepper.max_phase_clip))
    new = FieldState(state.t + dt, state.step + 1, a_new, b_new, c_new, model.layer.lam, ev)
    info = StepInfo(dt, increment, noise_u, noise_phi, profile, mu_half, outside)
    return new, info


def step(model: ACNSModel, stepper: StepperConfig, state: FieldState, increment=None) -> FieldState:
    """Advance one step; ``increment=None`` runs the deterministic scheme."""
    return step_with_info(model, stepper, state, increment)[0]


@dataclass(eq=False)
class Trajectory:
    initial: FieldState
    final: FieldState
    n_steps: int
    dt: float
    observers: tuple
    wall_time: float


def n_steps_for(T, dt):
    n = T / dt
    m = int(round(n))
    if abs(n - m) > 1e-9 * max(1.0, n):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return m


def simulate(model: ACNSModel, stepper: StepperConfig, initial: FieldState, T: float,
             observers=(), member: int = 0, refine: int = 1) -> Trajectory:
    """Integrate from ``initial`` over [t0, t0 + T].

    Observers are plain objects; any of ``on_start(model, state)``,
    ``on_step(model, old, new, info)`` and ``on_finish(model, state)`` that
    exist are called.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    n = n_steps_for(T, stepper.dt)
    t0 = time.perf_counter()
    for ob in observers:
        if hasattr(ob, "on_start"):
            ob.on_start(model, initial)
    state = initial
    noisy = model.noise.enabled and (model.noise.K1 or model.noise.K2)
    for _ in range(n):
        inc = nz.sample_increment(model.noise, stepper.dt, state.step, member, refine) if noisy else None
        new, info = step_with_info(model, stepper, state, inc)
        for ob in observers:
            if hasattr(ob, "on_step"):
                ob.on_step(model, state, new, info)
        state = new
    for ob in observers:
        if hasattr(ob, "on_finish"):
            ob.on_finish(model, state)
    return Trajectory(initial, state, n, stepper.dt, tuple(observers), time.perf_counter() - t0)


def state_distance(basis, s1: FieldState, s2: FieldState) -> float:
    """sqrt(||phi1 - phi2||^2 + ||u1 - u2||^2)."""
    d = basis.norm_H(s1.b - s2.b) ** 2
    if s1.a is not None:
        d += basis.norm_Hsigma(s1.a - s2.a) ** 2
    return math.sqrt(d)
