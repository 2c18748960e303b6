"""Spectral Galerkin bases and the projected nonlinear operators.

Periodic torus [0, L)^2
    Scalar fields are stored as full ``N x N`` complex arrays of normalized
    Fourier coefficients c_k = (f, E_k) with E_k = exp(i k.x) / L, so
    ||f||^2 = sum |c_k|^2.  Velocity fields are stored as one complex number
    per mode, the coefficient along the unit polarization p_k = k_perp / |k|;
    every stored velocity is solenoidal by construction.

Homogeneous Neumann square [0, L]^2
    Scalar fields are stored as real arrays of orthonormal cosine
    coefficients on a cell-centred grid.  There is no velocity space.

Only modes in the retained set (|k_i| < dealias_fraction * N / 2) are ever
non-zero.  With dealias_fraction <= 2/3 a product of two retained fields,
truncated back to the retained set, is computed without aliasing error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft


@dataclass(frozen=True)
class DomainConfig:
    N: int = 64
    L: float = 4 * math.pi
    boundary_mode: str = "periodic"
    dealias_fraction: float = 2.0 / 3.0
    velocity: bool = True


class BasisError(ValueError):
    pass


def _cutoff(fraction, n_freq):
    # largest integer strictly below fraction * n_freq
    return max(int(math.ceil(fraction * n_freq)) - 1, 0)


class SpectralBasis:
    """Common bookkeeping; see :class:`PeriodicBasis` and :class:`NeumannBasis`."""

    boundary_mode = ""
    has_velocity = False

    def __init__(self, N, L, dealias_fraction):
        if N < 4 or N % 2:
            raise BasisError(f"N must be an even integer >= 4, got {N}")
        if not L > 0:
            raise BasisError(f"L must be positive, got {L}")
        if not 0 < dealias_fraction <= 1:
            raise BasisError(f"dealias_fraction must lie in (0, 1], got {dealias_fraction}")
        self.N = int(N)
        self.L = float(L)
        self.dealias_fraction = float(dealias_fraction)
        self.h = self.L / self.N
        self.area = self.L * self.L
        self.cell = self.h * self.h

    # generic helpers on coefficient arrays -------------------------------
    def inner(self, f, g):
        return float(np.real(np.vdot(f, g)))

    def norm_H(self, b):
        return math.sqrt(self.inner(b, b))

    def norm_V1(self, b):
        return math.sqrt(float(np.sum((1.0 + self.alpha) * np.abs(b) ** 2)))

    def norm_V2(self, b):
        a = self.alpha
        return math.sqrt(float(np.sum((1.0 + a + a * a) * np.abs(b) ** 2)))

    def grad_sq(self, b):
        """||grad f||^2."""
        return float(np.sum(self.alpha * np.abs(b) ** 2))

    def laplacian(self, b):
        return -self.alpha * b

    def integrate(self, f_grid):
        """Grid quadrature of a physical field (exact for retained products)."""
        return float(self.cell * np.sum(f_grid))

    def scalar_basis_grid(self, j):
        """Real orthonormal scalar basis function number j on the grid."""
        v = np.zeros(self.n_scalar)
        v[j] = 1.0
        return self.to_grid(self.scalar_from_real(v))

    def restrict(self, b, coarse):
        """Coefficients of ``b`` re-expressed in a coarser basis of the same kind."""
        if type(coarse) is not type(self) or coarse.L != self.L or coarse.K > self.K:
            raise BasisError("restriction needs a coarser basis of the same kind and size")
        out = coarse.zeros()
        out[coarse.mask] = b[self._locate(coarse)]
        return out


class PeriodicBasis(SpectralBasis):
    boundary_mode = "periodic"
    has_velocity = True

    def __init__(self, N, L, dealias_fraction=2.0 / 3.0):
        super().__init__(N, L, dealias_fraction)
        N = self.N
        kint = np.fft.fftfreq(N, 1.0 / N).round().astype(int)
        self.kx_int, self.ky_int = np.meshgrid(kint, kint, indexing="ij")
        self.K = _cutoff(self.dealias_fraction, N / 2)
        two_pi_L = 2 * math.pi / self.L
        self.kx = two_pi_L * self.kx_int
        self.ky = two_pi_L * self.ky_int
        self.k2 = self.kx ** 2 + self.ky ** 2
        self.mask = (np.abs(self.kx_int) <= self.K) & (np.abs(self.ky_int) <= self.K)
        self.vmask = self.mask & (self.k2 > 0)
        self.alpha = np.where(self.mask, self.k2, 0.0)
        self.beta = np.where(self.vmask, self.k2, 0.0)
        kmag = np.sqrt(self.k2)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.px = np.where(self.k2 > 0, -self.ky / kmag, 0.0)
            self.py = np.where(self.k2 > 0, self.kx / kmag, 0.0)
            self.inv_k2 = np.where(self.k2 > 0, 1.0 / self.k2, 0.0)
        self._fwd = self.L / N ** 2
        self._inv = N ** 2 / self.L

        # half-plane representatives of the retained modes, sorted by |k|
        kx, ky = self.kx_int, self.ky_int
        half = self.mask & ((ky > 0) | ((ky == 0) & (kx > 0)))
        hx, hy = kx[half], ky[half]
        order = np.lexsort((hy, hx, hx ** 2 + hy ** 2))
        hx, hy = hx[order], hy[order]
        self.half_k = np.stack([hx, hy], axis=1)
        self._pos = (hx % N, hy % N)
        self._neg = ((-hx) % N, (-hy) % N)
        self.n_half = hx.size
        self.n_scalar = 1 + 2 * self.n_half
        self.n_velocity = 2 * self.n_half
        lam = (two_pi_L ** 2) * (hx ** 2 + hy ** 2)
        self.scalar_eigenvalues = np.concatenate([[0.0], np.repeat(lam, 2)])
        self.stokes_eigenvalues = np.repeat(lam, 2)
        self.x = np.arange(N) * self.h

    # grids --------------------------------------------------------------
    def grid(self):
        return np.meshgrid(self.x, self.x, indexing="ij")

    def to_grid(self, c):
        return np.real(sfft.ifft2(c)) * self._inv

    def project(self, f_grid):
        """Galerkin projection P_n of a physical scalar field."""
        return sfft.fft2(f_grid) * self._fwd * self.mask

    def zeros(self):
        return np.zeros((self.N, self.N), dtype=complex)

    def grad(self, c):
        return 1j * self.kx * c, 1j * self.ky * c

    def grad_grid(self, c):
        gx, gy = self.grad(c)
        return np.stack([self.to_grid(gx), self.to_grid(gy)])

    # velocity -------------------------------------------------------------
    def velocity_hat(self, a):
        """Componentwise Fourier coefficients of the velocity with polarization coefficients a."""
        return np.stack([self.px * a, self.py * a])

    def velocity_grid(self, a):
        return np.stack([self.to_grid(self.px * a), self.to_grid(self.py * a)])

    def vector_project(self, v_grid):
        """Componentwise Fourier projection (no Leray step) of a physical vector field."""
        return np.stack([self.project(v_grid[0]), self.project(v_grid[1])])

    def to_stokes(self, vhat):
        """Leray projection followed by reading off the polarization coefficient."""
        return (self.px * vhat[0] + self.py * vhat[1]) * self.vmask

    def gradient_hat(self, c):
        return np.stack(self.grad(c))

    # real orthonormal coordinates -----------------------------------------
    def scalar_to_real(self, c):
        pos = c[self._pos]
        out = np.empty(self.n_scalar)
        out[0] = c[0, 0].real
        out[1::2] = math.sqrt(2) * pos.real
        out[2::2] = -math.sqrt(2) * pos.imag
        return out

    def scalar_from_real(self, v):
        v = np.asarray(v, dtype=float)
        if v.size != self.n_scalar:
            raise BasisError(f"expected {self.n_scalar} scalar coefficients, got {v.size}")
        c = self.zeros()
        z = (v[1::2] - 1j * v[2::2]) / math.sqrt(2)
        c[0, 0] = v[0]
        c[self._pos] = z
        c[self._neg] = np.conj(z)
        return c

    def velocity_to_real(self, a):
        pos = a[self._pos]
        out = np.empty(self.n_velocity)
        out[0::2] = math.sqrt(2) * pos.real
        out[1::2] = -math.sqrt(2) * pos.imag
        return out

    def velocity_from_real(self, v):
        v = np.asarray(v, dtype=float)
        if v.size > self.n_velocity:
            raise BasisError(f"at most {self.n_velocity} velocity coefficients, got {v.size}")
        full = np.zeros(self.n_velocity)
        full[: v.size] = v
        a = self.zeros()
        z = (full[0::2] - 1j * full[1::2]) / math.sqrt(2)
        a[self._pos] = z
        a[self._neg] = -np.conj(z)
        return a

    def velocity_basis_grid(self, j):
        v = np.zeros(self.n_velocity)
        v[j] = 1.0
        return self.velocity_grid(self.velocity_from_real(v))

    def _locate(self, coarse):
        return (coarse.kx_int[coarse.mask] % self.N, coarse.ky_int[coarse.mask] % self.N)

    def restrict_velocity(self, a, coarse):
        return self.restrict(a, coarse)

    # Stokes norms -----------------------------------------------------------
    def norm_Hsigma(self, a):
        return math.sqrt(float(np.sum(np.abs(a) ** 2)))

    def norm_Vsigma(self, a):
        return math.sqrt(float(np.sum(self.beta * np.abs(a) ** 2)))

    def norm_Vsigma_star(self, a):
        return math.sqrt(float(np.sum(self.inv_k2 * self.vmask * np.abs(a) ** 2)))

    def inverse_stokes(self, a):
        return a * self.inv_k2 * self.vmask


class NeumannBasis(SpectralBasis):
    boundary_mode = "neumann_cosine"
    has_velocity = False

    def __init__(self, N, L, dealias_fraction=2.0 / 3.0):
        super().__init__(N, L, dealias_fraction)
        N = self.N
        j = np.arange(N)
        self.jx, self.jy = np.meshgrid(j, j, indexing="ij")
        self.K = _cutoff(self.dealias_fraction, N)
        self.mask = (self.jx <= self.K) & (self.jy <= self.K)
        pi_L = math.pi / self.L
        self.kx = pi_L * self.jx
        self.ky = pi_L * self.jy
        self.alpha = np.where(self.mask, self.kx ** 2 + self.ky ** 2, 0.0)
        jx, jy = self.jx[self.mask], self.jy[self.mask]
        order = np.lexsort((jy, jx, jx ** 2 + jy ** 2))
        self._idx = (jx[order], jy[order])
        self.n_scalar = jx.size
        self.scalar_eigenvalues = (pi_L ** 2) * (jx[order] ** 2 + jy[order] ** 2).astype(float)
        self.x = (np.arange(N) + 0.5) * self.h

    def grid(self):
        return np.meshgrid(self.x, self.x, indexing="ij")

    def to_grid(self, b):
        return sfft.idctn(b, type=2, norm="ortho") / self.h

    def project(self, f_grid):
        return sfft.dctn(f_grid, type=2, norm="ortho") * self.h * self.mask

    def zeros(self):
        return np.zeros((self.N, self.N))

    def grad_grid(self, b):
        # d/dx of cos(j pi x / L) is -(j pi / L) sin(j pi x / L); evaluate with DST-II
        gx = -self.kx * b
        gy = -self.ky * b
        sx = _shift_for_dst(gx, axis=0)
        sy = _shift_for_dst(gy, axis=1)
        out_x = sfft.idct(sfft.idst(sx, type=2, norm="ortho", axis=0), type=2, norm="ortho", axis=1)
        out_y = sfft.idst(sfft.idct(sy, type=2, norm="ortho", axis=0), type=2, norm="ortho", axis=1)
        return np.stack([out_x, out_y]) / self.h

    def _locate(self, coarse):
        return (coarse.jx[coarse.mask], coarse.jy[coarse.mask])

    def scalar_to_real(self, b):
        return np.asarray(b[self._idx], dtype=float)

    def scalar_from_real(self, v):
        v = np.asarray(v, dtype=float)
        if v.size != self.n_scalar:
            raise BasisError(f"expected {self.n_scalar} scalar coefficients, got {v.size}")
        b = self.zeros()
        b[self._idx] = v
        return b


def _shift_for_dst(c, axis):
    """Move cosine index j to sine index j-1 along ``axis`` and fix normalization.

    The orthonormal cosine of index 0 carries an extra 1/sqrt(2) that the sine
    family does not, so only the j >= 1 entries survive a derivative anyway.
    """
    out = np.zeros_like(c)
    src = [slice(None)] * c.ndim
    dst = [slice(None)] * c.ndim
    src[axis] = slice(1, None)
    dst[axis] = slice(0, -1)
    out[tuple(dst)] = c[tuple(src)]
    return out


def build_basis(config: DomainConfig | None = None, **kwargs) -> SpectralBasis:
    """Construct the Galerkin basis described by ``config`` (or keyword overrides)."""
    if config is None:
        config = DomainConfig(**kwargs)
    elif kwargs:
        raise TypeError("pass either a DomainConfig or keyword arguments, not both")
    if config.boundary_mode == "periodic":
        return PeriodicBasis(config.N, config.L, config.dealias_fraction)
    if config.boundary_mode == "neumann_cosine":
        if config.velocity:
            raise BasisError("the cosine basis is scalar only; it cannot carry the coupled velocity field")
        return NeumannBasis(config.N, config.L, config.dealias_fraction)
    raise BasisError(f"unknown boundary_mode {config.boundary_mode!r}")


def _require_velocity(basis):
    if not basis.has_velocity:
        raise BasisError(f"{basis.boundary_mode} basis has no velocity space")


# operators -----------------------------------------------------------------

def leray_project(basis: PeriodicBasis, vhat):
    """Orthogonal projection of componentwise coefficients onto mean-free solenoidal fields.

    Acts mode by mode as f - (k.f) k / |k|^2; the mean (k = 0) is removed.
    """
    _require_velocity(basis)
    vhat = np.asarray(vhat)
    kdot = basis.kx * vhat[0] + basis.ky * vhat[1]
    out = np.stack([vhat[0] - kdot * basis.kx * basis.inv_k2, vhat[1] - kdot * basis.ky * basis.inv_k2])
    out[:, 0, 0] = 0.0
    return out


def _advection_grid(basis, u_grid, v_hat):
    """(u . grad) v on the grid for a velocity v given componentwise."""
    out = np.empty_like(u_grid)
    for i in range(2):
        gx, gy = basis.grad(v_hat[i])
        out[i] = u_grid[0] * basis.to_grid(gx) + u_grid[1] * basis.to_grid(gy)
    return out


def advection_full(basis: PeriodicBasis, u, v=None):
    """Componentwise retained coefficients of (u . grad) v, without the Leray step."""
    _require_velocity(basis)
    v = u if v is None else v
    u_grid = basis.velocity_grid(u)
    return basis.vector_project(_advection_grid(basis, u_grid, basis.velocity_hat(v)))


def nonlinear_B(basis: PeriodicBasis, u, v=None):
    """Stokes coefficients of P[(u . grad) v]."""
    return basis.to_stokes(advection_full(basis, u, v))


def trilinear_b(basis: PeriodicBasis, u, v, w) -> float:
    """b(u, v, w) = ((u . grad) v, w) for Stokes coefficient arrays."""
    return basis.inner(basis.velocity_hat(w), advection_full(basis, u, v))


def convect(basis: PeriodicBasis, u, phi):
    """Retained coefficients of u . grad(phi)."""
    _require_velocity(basis)
    u_grid = basis.velocity_grid(u)
    g = basis.grad_grid(phi)
    return basis.project(u_grid[0] * g[0] + u_grid[1] * g[1])


def korteweg_full(basis: PeriodicBasis, mu, phi):
    """Componentwise retained coefficients of mu grad(phi), before the Leray step."""
    _require_velocity(basis)
    m = basis.to_grid(mu)
    g = basis.grad_grid(phi)
    return basis.vector_project(m * g)


def korteweg(basis: PeriodicBasis, mu, phi):
    """Stokes coefficients of P(mu grad phi)."""
    return basis.to_stokes(korteweg_full(basis, mu, phi))


def korteweg_stress(basis: PeriodicBasis, phi):
    """Stokes coefficients of -P div(grad phi (x) grad phi)."""
    _require_velocity(basis)
    g = basis.grad_grid(phi)
    out = []
    for i in range(2):
        div = 0.0
        for j, kj in enumerate((basis.kx, basis.ky)):
            div = div + 1j * kj * basis.project(g[i] * g[j])
        out.append(-div)
    return basis.to_stokes(np.stack(out))


def dual_distance(basis: PeriodicBasis, a1, a2) -> float:
    """||grad A^{-1}(u1 - u2)||^2, i.e. the squared dual (V_sigma^*) distance."""
    d = a1 - a2
    return float(np.sum(basis.inv_k2 * basis.vmask * np.abs(d) ** 2))
