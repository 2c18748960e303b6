"""Initial-data presets.

bubble
    phi = A tanh((R - r) / w) around ``center`` (periodic distance), with A the
    positive minimizer of F by default.
random-band
    phi = A sum_j z_j e_j / (sum_j |z_j| max|e_j|) over the real modes with
    max(|k_x|, |k_y|) <= kmax, z_j iid standard normal.  |phi| <= A by
    construction and the draw does not depend on N.
pure-phase
    phi = A (default 1).
pure-phase-with-defect
    phi = 1 - depth exp(-r^2 / (2 w^2)).
snapshot
    read from a binary snapshot.

Velocity presets: zero, random-band (same mode set, scaled to
||u|| = velocity_amplitude), snapshot.  Random draws use their own counter
stream keyed on (initial.seed, member).
"""

from __future__ import annotations

import math

import numpy as np

from . import snapshot as snp
from .noise import STREAM_INITIAL, normals
from .potential import PotentialSpec, eval_F


def _periodic_radius(basis, center):
    X, Y = basis.grid()
    L = basis.L
    dx = X - center[0]
    dy = Y - center[1]
    if basis.boundary_mode == "periodic":
        dx = (dx + L / 2) % L - L / 2
        dy = (dy + L / 2) % L - L / 2
    return np.hypot(dx, dy)


def _band_modes(basis, kmax, scalar=True):
    """Positions, in real-coordinate order, of the modes with max(|k_x|, |k_y|) <= kmax."""
    if basis.boundary_mode == "periodic":
        k = np.abs(basis.half_k).max(axis=1)
        pairs = np.flatnonzero(k <= kmax)
        idx = np.stack([2 * pairs, 2 * pairs + 1], axis=1).ravel()
        return idx + 1 if scalar else idx
    jx, jy = basis._idx
    return np.flatnonzero((np.maximum(jx, jy) <= kmax) & ((jx + jy) > 0))


def _sup_basis(basis):
    if basis.boundary_mode == "periodic":
        return math.sqrt(2) / basis.L
    return 2.0 / basis.L


def random_band_phase(basis, amplitude, kmax, seed, member, stream_offset=0):
    idx = _band_modes(basis, kmax)
    z = normals(seed, member, STREAM_INITIAL, 2 * stream_offset, idx.size)
    v = np.zeros(basis.n_scalar)
    v[idx] = z
    scale = amplitude / (np.sum(np.abs(z)) * _sup_basis(basis)) if idx.size else 0.0
    return basis.scalar_from_real(v * scale)


def random_band_velocity(basis, amplitude, kmax, seed, member, stream_offset=0):
    idx = _band_modes(basis, kmax, scalar=False)
    z = normals(seed, member, STREAM_INITIAL, 2 * stream_offset + 1, idx.size)
    v = np.zeros(basis.n_velocity)
    v[idx] = z
    a = basis.velocity_from_real(v)
    nrm = basis.norm_Hsigma(a)
    return a * (amplitude / nrm) if nrm > 0 else a


def phase_grid(basis, init, potential):
    """Physical phase field for the analytic presets."""
    L = basis.L
    center = init.center if init.center is not None else [L / 2, L / 2]
    if init.phase == "bubble":
        amp = init.amplitude
        if amp is None:
            amp = potential.minimizer if isinstance(potential, PotentialSpec) else 0.9
        R = init.radius if init.radius is not None else L / 4
        return amp * np.tanh((R - _periodic_radius(basis, center)) / init.width)
    if init.phase == "pure-phase":
        amp = 1.0 if init.amplitude is None else init.amplitude
        return np.full((basis.N, basis.N), amp)
    if init.phase == "pure-phase-with-defect":
        r = _periodic_radius(basis, center)
        return 1.0 - init.depth * np.exp(-r ** 2 / (2 * init.width ** 2))
    raise ValueError(f"{init.phase!r} is not an analytic preset")


def initial_coefficients(basis, init, potential, member=0):
    """(a, b) coefficient arrays for member ``member``."""
    if init.phase == "snapshot":
        _, b = snp.to_coefficients(basis, snp.read(init.phase_path))
    elif init.phase == "random-band":
        amp = 0.9 if init.amplitude is None else init.amplitude
        b = random_band_phase(basis, amp, init.kmax, init.seed, member)
    else:
        phi = phase_grid(basis, init, potential)
        check_phase(phi, potential)
        b = basis.project(phi)
    a = None
    if basis.has_velocity:
        if init.velocity == "zero":
            a = basis.zeros()
        elif init.velocity == "random-band":
            a = random_band_velocity(basis, init.velocity_amplitude, init.kmax, init.seed, member)
        else:
            a, _ = snp.to_coefficients(basis, snp.read(init.velocity_path))
            if a is None:
                raise ValueError(f"{init.velocity_path} has no velocity")
    return a, b


def check_phase(phi, potential):
    """|phi| <= 1 and F(phi) finite on the grid."""
    if not np.all(np.abs(phi) <= 1.0 + 1e-12):
        raise ValueError(f"initial phase field leaves [-1, 1] (max |phi| = {np.max(np.abs(phi)):.6g})")
    if not np.all(np.isfinite(eval_F(potential, np.clip(phi, -1.0, 1.0)))):
        raise ValueError("F(phi0) is not integrable on the grid")
