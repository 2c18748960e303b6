"""Cylindrical Wiener increments and the two noise operators.

Velocity noise acts on the first K1 real Stokes modes (ordered by
eigenvalue), either additively or with a bounded linear multiplicative
factor.  Phase noise uses the degenerate profile g_k(x) = sigma_k (1 - x^2)
evaluated at the resolvent J_lam(phi), so the increment is the projection of
(1 - J_lam(phi)^2) times the scalar sum_k sigma_k dW_k.

Random numbers come from a counter-based Philox stream keyed on
(seed, member, stream); the counter holds the fine step index.  Any step of
any member can be regenerated on its own, in any order, on any worker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

STREAM_VELOCITY = 1
STREAM_PHASE = 2
STREAM_INITIAL = 3


@dataclass(frozen=True)
class NoiseConfig:
    seed: int = 0
    K1: int = 8
    K2: int = 4
    decay: float = 2.0
    amp1: float = 0.1
    amp2: float = 0.1
    g1_kind: str = "additive"
    kappa: float = 0.0
    enabled: bool = True


@dataclass(frozen=True, eq=False)
class NoiseModel:
    sigma1: np.ndarray
    sigma2: np.ndarray
    g1_kind: str = "additive"
    kappa: float = 0.0
    seed: int = 0
    enabled: bool = True

    @property
    def K1(self) -> int:
        return int(self.sigma1.size)

    @property
    def K2(self) -> int:
        return int(self.sigma2.size)

    @classmethod
    def from_config(cls, cfg: NoiseConfig) -> "NoiseModel":
        if cfg.K1 < 0 or cfg.K2 < 0:
            raise ValueError("K1 and K2 must be non-negative")
        if cfg.g1_kind not in ("additive", "multiplicative"):
            raise ValueError(f"unknown g1_kind {cfg.g1_kind!r}")
        if cfg.decay <= 0.5:
            raise ValueError("decay exponent must exceed 1/2 for summable amplitudes")
        if cfg.kappa < 0:
            raise ValueError("kappa must be non-negative")
        # cos/sin pairs share an amplitude, decaying like (pair index)^-decay
        sigma1 = cfg.amp1 * (1.0 + np.arange(cfg.K1) // 2) ** (-cfg.decay)
        sigma2 = cfg.amp2 * (1.0 + np.arange(cfg.K2)) ** (-cfg.decay)
        kappa = cfg.kappa if cfg.g1_kind == "multiplicative" else 0.0
        return cls(sigma1, sigma2, cfg.g1_kind, kappa, int(cfg.seed), bool(cfg.enabled))

    @classmethod
    def silent(cls) -> "NoiseModel":
        return cls(np.zeros(0), np.zeros(0), enabled=False)

    # constants of the noise assumptions ------------------------------------
    def C_G1(self) -> float:
        """C with ||G1(u)||_HS <= C (1 + ||u||)."""
        s = float(np.sqrt(np.sum(self.sigma1 ** 2)))
        peak = float(self.sigma1.max()) if self.sigma1.size else 0.0
        return max(s, self.kappa * peak)

    def L1(self) -> float:
        """Lipschitz constant of G1 from the dual space into L2(U, dual)."""
        peak = float(self.sigma1.max()) if self.sigma1.size else 0.0
        return self.kappa * peak

    def L2_squared(self, potential) -> float:
        """sum_k ||g_k||_{W^{1,inf}}^2 + ||F'' g_k^2||_inf for g_k = sigma_k (1 - x^2)."""
        s2 = float(np.sum(self.sigma2 ** 2))
        return s2 * (4.0 + potential.compensation_sup())


@dataclass(frozen=True, eq=False)
class WienerIncrement:
    dt: float
    dW1: np.ndarray
    dW2: np.ndarray
    step: int = 0


@lru_cache(maxsize=4096)
def _key(seed, member, stream):
    return tuple(int(v) for v in np.random.SeedSequence([seed, member, stream]).generate_state(2, dtype=np.uint64))


def normals(seed, member, stream, index, size):
    """Standard normals at counter position ``index`` of one stream."""
    bg = np.random.Philox(key=np.array(_key(seed, member, stream), dtype=np.uint64),
                          counter=np.array([0, 0, index, 0], dtype=np.uint64))
    return np.random.Generator(bg).standard_normal(size)


def sample_increment(model: NoiseModel, dt: float, step_index: int, member: int = 0, refine: int = 1) -> WienerIncrement:
    """Increment over coarse step ``step_index`` of size dt.

    With ``refine = r`` the increment is the sum of r fine increments of size
    dt / r, taken from fine counters step_index * r ... step_index * r + r - 1.
    Coarse and fine runs therefore see the same Brownian path.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if refine < 1:
        raise ValueError("refine must be >= 1")
    if not model.enabled:
        return WienerIncrement(dt, np.zeros(model.K1), np.zeros(model.K2), step_index)
    scale = math.sqrt(dt / refine)
    dW1 = np.zeros(model.K1)
    dW2 = np.zeros(model.K2)
    for j in range(refine):
        idx = step_index * refine + j
        if model.K1:
            dW1 += scale * normals(model.seed, member, STREAM_VELOCITY, idx, model.K1)
        if model.K2:
            dW2 += scale * normals(model.seed, member, STREAM_PHASE, idx, model.K2)
    return WienerIncrement(dt, dW1, dW2, step_index)


def check_capacity(model: NoiseModel, basis):
    if model.K1 and not basis.has_velocity:
        raise ValueError("velocity noise requested on a basis without velocity")
    if model.K1 > getattr(basis, "n_velocity", 0):
        raise ValueError(f"K1={model.K1} exceeds the {basis.n_velocity} retained Stokes modes")


def g1_coefficients(model: NoiseModel, basis, a):
    """Real Stokes coordinates sigma_k (1 + kappa (u, e_k)) of G1(u) e_k."""
    coef = model.sigma1.copy()
    if model.kappa and model.K1:
        coef = coef * (1.0 + model.kappa * basis.velocity_to_real(a)[: model.K1])
    return coef


def apply_G1(model: NoiseModel, basis, a, dW1):
    """Stokes coefficients of G1(u) dW1."""
    if model.K1 == 0:
        return basis.zeros()
    return basis.velocity_from_real(g1_coefficients(model, basis, a) * dW1)


def g2_profile(basis, x_grid):
    """Projection of the clipped profile 1 - x^2 (zero outside [-1, 1])."""
    return basis.project(np.clip(1.0 - x_grid * x_grid, 0.0, None))


def apply_G2(model: NoiseModel, basis, phi, dW2):
    """Unregularized G2(phi) dW2, with g_k evaluated at phi itself."""
    return g2_profile(basis, basis.to_grid(phi)) * float(np.dot(model.sigma2, dW2))


def apply_G2_lambda(model: NoiseModel, basis, gap_grid, dW2):
    """G2_lam(phi) dW2 given the grid values of 1 - J_lam(phi)^2."""
    return basis.project(gap_grid) * float(np.dot(model.sigma2, dW2))


@dataclass(frozen=True)
class HSRecord:
    g1_sq: float
    g1_bound: float
    g2_sq: float
    g2_bound: float
    grad_g2_sq: float
    grad_g2_bound: float
    compensator: float
    compensator_abs: float
    compensator_bound: float


def hs_norms(model: NoiseModel, basis, potential, a, phi, yosida) -> HSRecord:
    """Hilbert-Schmidt quantities entering the Ito correction, with their bounds.

    ``yosida`` is the regularized evaluation at the grid values of phi.
    """
    C = model.C_G1()
    L2sq = model.L2_squared(potential)
    s2 = float(np.sum(model.sigma2 ** 2))
    if model.K1:
        coef = g1_coefficients(model, basis, a)
        g1_sq = float(np.sum(coef ** 2))
        u_sq = basis.norm_Hsigma(a) ** 2 if a is not None else 0.0
    else:
        g1_sq, u_sq = 0.0, 0.0
    prof = basis.project(yosida.gap)
    prof_grid = basis.to_grid(prof)
    w = yosida.Fpp * prof_grid ** 2
    return HSRecord(
        g1_sq=g1_sq,
        g1_bound=2 * C * C * (1.0 + u_sq),
        g2_sq=s2 * basis.norm_H(prof) ** 2,
        g2_bound=L2sq * basis.area,
        grad_g2_sq=s2 * basis.grad_sq(prof),
        grad_g2_bound=L2sq * basis.grad_sq(phi),
        compensator=s2 * basis.integrate(w),
        compensator_abs=s2 * basis.integrate(np.abs(w)),
        compensator_bound=basis.area * s2 * potential.regularized_compensation_sup(),
    )
