"""Logarithmic (Flory-Huggins) potential and its Moreau-Yosida regularization.

The potential is split as F'(x) = gamma(x) - c_F x with gamma monotone.  The
resolvent J = (I + lam*gamma)^{-1} is solved in the unbounded chart variable
s with y = y(s), which keeps every quantity finite even when J is within
round-off of the singular endpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import optimize
from scipy.special import xlogy

_LOG2 = math.log(2.0)


class PotentialDomainError(ValueError):
    """Argument outside the closed domain of a singular potential."""


class ResolventConvergenceError(RuntimeError):
    """Safeguarded Newton failed to reach the requested tolerance."""


def _as_array(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class PotentialSpec:
    """Flory-Huggins potential

        F(x) = theta/2 [(1+x)log(1+x) + (1-x)log(1-x)] - theta0/2 x^2 + shift

    on [-1, 1].  ``shift`` is fixed so that min F = 0.
    """

    theta: float = 1.0
    theta0: float = 2.0
    shift: float = field(init=False)
    c_F: float = field(init=False)

    def __post_init__(self):
        if not (self.theta > 0 and self.theta < self.theta0):
            raise ValueError(
                "potential parameters need 0 < theta < theta0 so that "
                f"c_F = theta0 - theta > 0; got theta={self.theta}, theta0={self.theta0}"
            )
        object.__setattr__(self, "c_F", self.theta0 - self.theta)
        object.__setattr__(self, "shift", -self._raw_minimum()[1])

    # raw (unshifted) potential ------------------------------------------
    def _raw(self, x):
        return 0.5 * self.theta * (xlogy(1 + x, 1 + x) + xlogy(1 - x, 1 - x)) - 0.5 * self.theta0 * x * x

    def _raw_prime(self, x):
        return self.theta * np.arctanh(x) - self.theta0 * x

    def _gamma(self, x):
        # theta (artanh x - x); the odd series keeps full relative accuracy near 0
        x = np.asarray(x, dtype=float)
        small = np.abs(x) < 0.05
        xs = np.where(small, x, 0.0)
        x2 = xs * xs
        series = xs * x2 * (1 / 3 + x2 * (1 / 5 + x2 * (1 / 7 + x2 * (1 / 9 + x2 * (1 / 11 + x2 / 13)))))
        with np.errstate(invalid="ignore", divide="ignore"):
            direct = np.arctanh(x) - x
        return self.theta * np.where(small, series, direct)

    def _raw_minimum(self):
        # grid scan on [0, 1] (F is even), then refine the positive root of F'
        grid = np.linspace(0.0, 1.0, 20001)
        i = int(np.argmin(self._raw(grid)))
        lo = grid[i - 1] if i > 1 else 0.5 * grid[1]
        hi = min(grid[i + 1], np.nextafter(1.0, 0.0)) if i + 1 < grid.size else np.nextafter(1.0, 0.0)
        if self._raw_prime(lo) < 0 < self._raw_prime(hi):
            xs = optimize.brentq(self._raw_prime, lo, hi, xtol=1e-16, rtol=8.9e-16, maxiter=200)
        else:
            xs = float(grid[i])
        return xs, float(self._raw(xs))

    @property
    def minimizer(self) -> float:
        """Positive minimizer x* of F (root of theta*artanh(x) = theta0*x)."""
        return self._raw_minimum()[0]

    @property
    def F0(self) -> float:
        return self.shift

    # chart: y = tanh(s) --------------------------------------------------
    def _y(self, s):
        return np.tanh(s)

    def _dy(self, s):
        return _sech2(s)

    def _one_minus_y2(self, s):
        return _sech2(s)

    def _gamma_s(self, s):
        return self.theta * (s - np.tanh(s))

    def _dgamma_s(self, s):
        t = np.tanh(s)
        return self.theta * t * t

    def _Gamma_s(self, s):
        # int_0^y gamma = theta [y artanh y + log(1-y^2)/2 - y^2/2], written in s
        a = np.abs(s)
        t = np.tanh(a)
        log_cosh = a + np.log1p(np.exp(-2 * a)) - _LOG2
        return self.theta * (t * a - log_cosh - 0.5 * t * t)

    def _initial_guess(self, lam, x):
        inside = np.arctanh(np.clip(x, -0.999, 0.999))
        far = np.sign(x) * (1.0 + (np.abs(x) - 1.0) / (lam * self.theta))
        return np.where(np.abs(x) < 0.999, inside, np.where(np.abs(far) > np.abs(inside), far, inside))

    def compensation_sup(self) -> float:
        """sup over (-1, 1) of |F''(x)| (1 - x^2)^2."""
        return max(self.theta ** 2 / (4 * self.theta0), self.theta0 - self.theta)

    def regularized_compensation_sup(self) -> float:
        """Bound on |F_lam''(x)| (1 - J_lam(x)^2)^2, uniform in lam and x."""
        return 0.25 * self.theta + self.c_F


@dataclass(frozen=True)
class QuadraticPotential:
    """Smooth test double F(x) = F0 + (k - c_F) x^2 / 2 with gamma(y) = k y.

    Setting k = c_F = 0 switches the potential off entirely, which makes the
    phase equation linear.
    """

    k: float = 1.0
    c_F: float = 0.0
    F0: float = 0.0

    @property
    def shift(self) -> float:
        return self.F0

    def _raw(self, x):
        return 0.5 * (self.k - self.c_F) * x * x

    def _raw_prime(self, x):
        return (self.k - self.c_F) * x

    def _gamma(self, x):
        return self.k * np.asarray(x, dtype=float)

    def _y(self, s):
        return s

    def _dy(self, s):
        return np.ones_like(s)

    def _one_minus_y2(self, s):
        return 1.0 - s * s

    def _gamma_s(self, s):
        return self.k * s

    def _dgamma_s(self, s):
        return np.full_like(s, self.k)

    def _Gamma_s(self, s):
        return 0.5 * self.k * s * s

    def _initial_guess(self, lam, x):
        return x / (1.0 + lam * self.k)

    def compensation_sup(self) -> float:
        return abs(self.k - self.c_F)

    def regularized_compensation_sup(self) -> float:
        return abs(self.k) + abs(self.c_F)


def _sech2(s):
    q = np.exp(-2.0 * np.abs(s))
    return 4.0 * q / (1.0 + q) ** 2


def _singular(spec) -> bool:
    return isinstance(spec, PotentialSpec)


def eval_F(spec, x):
    """F(x), including the normalizing shift.  |x| <= 1 is required for the log potential."""
    x = _as_array(x)
    if _singular(spec) and np.any(~(np.abs(x) <= 1.0)):
        raise PotentialDomainError("F is only defined on [-1, 1]")
    return spec._raw(x) + spec.shift


def eval_Fprime(spec, x):
    """F'(x) on the open interval; blows up like artanh at the endpoints."""
    x = _as_array(x)
    if _singular(spec) and np.any(~(np.abs(x) < 1.0)):
        raise PotentialDomainError("F' is only defined on (-1, 1)")
    return spec._raw_prime(x)


def gamma(spec, x):
    """Monotone part F'(x) + c_F x."""
    x = _as_array(x)
    if _singular(spec) and np.any(~(np.abs(x) < 1.0)):
        raise PotentialDomainError("gamma is only defined on (-1, 1)")
    return spec._gamma(x)


@dataclass(frozen=True)
class YosidaLayer:
    lam: float = 1e-2
    root_tolerance: float = 1e-12
    quadrature_order: int = 8
    quadrature_panels: int = 32
    energy_method: str = "envelope"
    max_iter: int = 200

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.energy_method not in ("envelope", "quadrature"):
            raise ValueError(f"unknown energy_method {self.energy_method!r}")
        if self.quadrature_order < 1 or self.quadrature_panels < 1:
            raise ValueError("quadrature order and panel count must be positive")


def _bracket(spec, lam, x):
    """Chart interval [lo, hi] with h(lo) <= 0 <= h(hi) for h(s) = y + lam*gamma - x."""

    def h(s):
        return spec._y(s) + lam * spec._gamma_s(s) - x

    width = 1.0 + np.abs(x)
    lo, hi = -width, width.copy()
    for _ in range(2100):
        bad_hi = h(hi) < 0
        bad_lo = h(lo) > 0
        if not (bad_hi.any() or bad_lo.any()):
            return lo, hi
        hi = np.where(bad_hi, 2 * hi, hi)
        lo = np.where(bad_lo, 2 * lo, lo)
    raise ResolventConvergenceError("could not bracket the resolvent root")


def resolvent_param(layer: YosidaLayer, spec, x, guess=None):
    """Chart coordinate s with J_lam(x) = y(s).  ``guess`` warm-starts Newton."""
    x = _as_array(x)
    lam = layer.lam
    flat = x.ravel()
    if not np.all(np.isfinite(flat)):
        raise PotentialDomainError("resolvent needs finite input")
    lo, hi = _bracket(spec, lam, flat)
    if guess is None:
        guess = spec._initial_guess(lam, flat)
    else:
        guess = np.asarray(guess, dtype=float).ravel()
    s = np.clip(guess, lo, hi)
    tol = layer.root_tolerance
    done = np.zeros(flat.shape, dtype=bool)
    for _ in range(layer.max_iter):
        val = spec._y(s) + lam * spec._gamma_s(s) - flat
        der = spec._dy(s) + lam * spec._dgamma_s(s)
        neg = val < 0
        lo = np.where(neg, s, lo)
        hi = np.where(neg, hi, s)
        with np.errstate(divide="ignore", invalid="ignore"):
            new = s - val / der
        outside = ~((new > lo) & (new < hi))
        new = np.where(outside, 0.5 * (lo + hi), new)
        new = np.where((val == 0) | done, s, new)
        scale = tol * np.maximum(1.0, np.abs(s))
        done |= (np.abs(new - s) <= scale) | (hi - lo <= scale)
        s = new
        if done.all():
            return s.reshape(x.shape)
    raise ResolventConvergenceError(
        f"resolvent did not converge in {layer.max_iter} iterations ({int((~done).sum())} points left)"
    )


def resolvent_J(layer: YosidaLayer, spec, x):
    """J_lam(x) = (I + lam*gamma)^{-1}(x)."""
    return spec._y(resolvent_param(layer, spec, x))


def yosida_gamma(layer: YosidaLayer, spec, x):
    """gamma_lam(x) = (x - J_lam(x)) / lam."""
    x = _as_array(x)
    return (x - resolvent_J(layer, spec, x)) / layer.lam


def eval_Fprime_lambda(layer: YosidaLayer, spec, x):
    return yosida_gamma(layer, spec, x) - spec.c_F * _as_array(x)


def eval_Fsecond_lambda(layer: YosidaLayer, spec, x):
    s = resolvent_param(layer, spec, x)
    return _gamma_lam_prime(layer, spec, s) - spec.c_F


def _gamma_lam_prime(layer, spec, s):
    dg = spec._dgamma_s(s)
    return dg / (spec._dy(s) + layer.lam * dg)


def _envelope(layer, spec, x, s):
    J = spec._y(s)
    gl = (x - J) / layer.lam
    return spec.F0 + spec._Gamma_s(s) + 0.5 * layer.lam * gl * gl - 0.5 * spec.c_F * x * x


def eval_F_lambda(layer: YosidaLayer, spec, x, method: str | None = None):
    """Regularized potential F_lam(x) = F(0) + int_0^x gamma_lam - c_F x^2 / 2.

    ``method='envelope'`` uses the closed-form Moreau envelope of the convex
    part; ``method='quadrature'`` integrates gamma_lam by composite
    Gauss-Legendre, doubling the panel count until it settles.
    """
    x = _as_array(x)
    method = method or layer.energy_method
    if method == "envelope":
        return _envelope(layer, spec, x, resolvent_param(layer, spec, x))
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    flat = x.ravel()
    nodes, weights = leggauss(layer.quadrature_order)
    panels = layer.quadrature_panels
    prev = None
    for _ in range(12):
        u = ((np.arange(panels)[:, None] + 0.5 * (nodes[None, :] + 1.0)) / panels).ravel()
        w = np.tile(0.5 * weights / panels, panels)
        vals = yosida_gamma(layer, spec, flat[:, None] * u[None, :])
        integral = flat * (vals @ w)
        if prev is not None and np.all(np.abs(integral - prev) <= 1e-13 * (1.0 + np.abs(integral))):
            break
        prev = integral
        panels *= 2
    out = spec.F0 + integral - 0.5 * spec.c_F * flat * flat
    return out.reshape(x.shape)


@dataclass(frozen=True)
class YosidaEval:
    """Everything the stepper and the energy ledger need at one phase field."""

    x: np.ndarray
    s: np.ndarray
    J: np.ndarray
    gap: np.ndarray  # 1 - J^2, accurate near the endpoints
    gamma_lam: np.ndarray
    Fp: np.ndarray
    Fpp: np.ndarray
    F: np.ndarray


def evaluate(layer: YosidaLayer, spec, x, guess=None) -> YosidaEval:
    """Single resolvent solve, all derived quantities."""
    x = _as_array(x)
    s = resolvent_param(layer, spec, x, guess)
    J = spec._y(s)
    gl = (x - J) / layer.lam
    if layer.energy_method == "envelope":
        F = _envelope(layer, spec, x, s)
    else:
        F = eval_F_lambda(layer, spec, x, method="quadrature")
    return YosidaEval(
        x=x,
        s=s,
        J=J,
        gap=spec._one_minus_y2(s),
        gamma_lam=gl,
        Fp=gl - spec.c_F * x,
        Fpp=_gamma_lam_prime(layer, spec, s) - spec.c_F,
        F=F,
    )


def yosida_slack(layer: YosidaLayer, spec) -> float:
    """max(0, -inf F_lam): how far the regularized potential dips below zero."""
    grid = np.linspace(-3.0, 3.0, 60001)
    vals = eval_F_lambda(layer, spec, grid)
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(
        lambda t: float(eval_F_lambda(layer, spec, t)), bounds=(a, b), method="bounded",
        options={"xatol": 1e-12},
    )
    low = min(float(vals[i]), float(res.fun))
    return max(0.0, -low)
