"""Pressure recovery from the unprojected discrete momentum balance.

For a step u^m -> u^{m+1} the residual

    h = (u^{m+1} - u^m - G1 dW1) / dt + L u* + (u^m . grad) u^m - mu^m grad phi^m

(u* = u^{m+1} for the semi-implicit scheme, u^m for the explicit one) is
orthogonal to every mean-free solenoidal field.  Away from k = 0 it is
therefore a gradient and the pressure is the mean-free pi with grad pi = h.
The k = 0 part is a uniform force: the discrete capillary term has a small
spatial mean (a truncation effect) that the zero-mean velocity space absorbs.
No periodic pressure can balance it, so it is reported separately as the
multiplier of the zero-mean constraint.  The time primitive Pi^m = sum_j pi^j dt is
the object whose norm is bounded in terms of the solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .galerkin import FieldState, StepperConfig, step_with_info
from .noise import apply_G1
from .spectral import advection_full, korteweg_full


def momentum_residual(model, stepper: StepperConfig, s0: FieldState, s1: FieldState, increment=None,
                      extra_nonlinearity=None):
    """Componentwise coefficients (2, N, N) of the momentum residual h for one step.

    ``extra_nonlinearity`` is added to the unprojected nonlinear term; the
    projected dynamics never see a pure gradient, so it lands in h unchanged.
    """
    basis = model.basis
    if s0.a is None:
        raise ValueError("pressure needs a velocity field")
    if s1.step != s0.step + 1:
        raise ValueError(f"states are not consecutive ({s0.step} -> {s1.step})")
    if increment is not None and increment.step != s0.step:
        raise ValueError(f"increment belongs to step {increment.step}, not {s0.step}")
    dt = stepper.dt
    du = s1.a - s0.a
    if increment is not None and model.noise.enabled and model.noise.K1:
        du = du - apply_G1(model.noise, basis, s0.a, increment.dW1)
    implicit = s1.a if stepper.scheme == "semi_implicit_em" else s0.a
    h = basis.velocity_hat(du / dt + basis.beta * implicit)
    if model.transport:
        h = h + advection_full(basis, s0.a)
    if model.capillary:
        h = h - korteweg_full(basis, s0.c, s0.b)
    if extra_nonlinearity is not None:
        h = h + extra_nonlinearity
    return h


def recover_pressure(basis, h):
    """Mean-free pi with grad pi equal to the gradient part of h."""
    pi = -1j * (basis.kx * h[0] + basis.ky * h[1]) * basis.inv_k2 * basis.mask
    pi[0, 0] = 0.0
    return pi


def closure_residual(basis, h, pi) -> float:
    """||h - grad pi|| over the non-constant modes."""
    r = h - basis.gradient_hat(pi)
    r[:, 0, 0] = 0.0
    return math.sqrt(float(np.sum(np.abs(r) ** 2)))


def mean_force(basis, h) -> float:
    """L2 norm of the uniform (k = 0) part of h."""
    return math.sqrt(float(np.sum(np.abs(h[:, 0, 0]) ** 2)))


def solenoidal_pairing(basis, h, a) -> float:
    """(h, w) for the solenoidal field with Stokes coefficients a."""
    return basis.inner(basis.velocity_hat(a), h)


@dataclass
class PressureSeries:
    times: np.ndarray
    pi: list
    primitive: list
    closure: np.ndarray
    mean: np.ndarray
    uniform: np.ndarray
    stats: dict = field(default_factory=dict)

    def primitive_norms(self, basis):
        return np.array([basis.norm_H(p) for p in self.primitive])


def pressure_series(model, stepper, states, increments) -> PressureSeries:
    """Pressure and its primitive along consecutive states s_0, ..., s_M.

    ``increments[m]`` is the Wiener increment used for s_m -> s_{m+1}
    (or ``None`` for noise-free steps).
    """
    basis = model.basis
    if len(states) < 2:
        raise ValueError("need at least two consecutive states")
    dt = stepper.dt
    for s0, s1 in zip(states[:-1], states[1:]):
        if s1.step != s0.step + 1:
            raise ValueError(f"states are not consecutive steps ({s0.step} -> {s1.step})")
    pis, prims, closure, means, uniform, times = [], [basis.zeros()], [], [], [], [states[0].t]
    sup_u = basis.norm_Hsigma(states[0].a)
    int_uV = int_phiV2 = int_fp = 0.0
    for m, (s0, s1) in enumerate(zip(states[:-1], states[1:])):
        h = momentum_residual(model, stepper, s0, s1, increments[m])
        pi = recover_pressure(basis, h)
        pis.append(pi)
        prims.append(prims[-1] + dt * pi)
        closure.append(closure_residual(basis, h, pi))
        means.append(abs(basis.integrate(basis.to_grid(pi))))
        uniform.append(mean_force(basis, h))
        times.append(s1.t)
        sup_u = max(sup_u, basis.norm_Hsigma(s1.a))
        int_uV += dt * basis.norm_Vsigma(s1.a) ** 2
        int_phiV2 += dt * basis.norm_V2(s1.b) ** 2
        fp = s1.c - basis.alpha * s1.b
        int_fp += dt * basis.norm_H(fp) ** 2
    stats = {"sup_u_H": sup_u, "int_u_V_sq": int_uV, "int_phi_V2_sq": int_phiV2, "int_Fprime_sq": int_fp}
    return PressureSeries(np.array(times), pis, prims, np.array(closure), np.array(means),
                          np.array(uniform), stats)


def pressure_norm_report(basis, series: PressureSeries) -> dict:
    """Discrete W^{-1,inf}(0,T;H) proxy of pi and the solution-dependent bound.

    lhs = max_m ||Pi^m||; the bound is a sum of the factors
    1, sup ||u||, (int ||u||_V^2)^(1/2), int ||u||_V^2, int ||phi||_{V2}^2 and
    int ||P F_lam'(phi)||^2.  Only the ratio is meaningful (the constant is
    not tracked).
    """
    lhs = float(np.max(series.primitive_norms(basis)))
    s = series.stats
    factors = {
        "one": 1.0,
        "sup_u_H": s["sup_u_H"],
        "sqrt_int_u_V_sq": math.sqrt(s["int_u_V_sq"]),
        "int_u_V_sq": s["int_u_V_sq"],
        "int_phi_V2_sq": s["int_phi_V2_sq"],
        "int_Fprime_sq": s["int_Fprime_sq"],
    }
    rhs = sum(factors.values())
    return {"lhs": lhs, "factors": factors, "rhs": rhs, "ratio": lhs / rhs,
            "max_closure_residual": float(np.max(series.closure)) if series.closure.size else 0.0,
            "max_abs_mean": float(np.max(series.mean)) if series.mean.size else 0.0,
            "max_mean_force": float(np.max(series.uniform)) if series.uniform.size else 0.0}


def run_with_pressure(model, stepper, initial: FieldState, n_steps: int, member: int = 0):
    """Step forward while collecting the states and increments needed for the pressure."""
    from .noise import sample_increment

    states, incs = [initial], []
    noisy = model.noise.enabled and (model.noise.K1 or model.noise.K2)
    s = initial
    for _ in range(n_steps):
        inc = sample_increment(model.noise, stepper.dt, s.step, member) if noisy else None
        s, _ = step_with_info(model, stepper, s, inc)
        states.append(s)
        incs.append(inc)
    return states, incs
