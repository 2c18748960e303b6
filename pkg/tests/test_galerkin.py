import math

import numpy as np
import pytest

from acns import noise as nz
from acns.diagnostics import energy
from acns.galerkin import (
    ACNSModel,
    BlowUpError,
    StepperConfig,
    assemble_mu,
    drift,
    make_state,
    n_steps_for,
    simulate,
    step,
    step_with_info,
)
from acns.potential import PotentialSpec, QuadraticPotential, YosidaLayer, eval_Fprime, eval_Fprime_lambda
from acns.spectral import build_basis

from conftest import random_scalar, random_velocity

SPEC = PotentialSpec(1.0, 2.0)
OFF = QuadraticPotential(k=0.0, c_F=0.0)


def vinner(basis, a1, a2):
    return float(np.dot(basis.velocity_to_real(a1), basis.velocity_to_real(a2)))


def linear_model(basis, noise=None):
    return ACNSModel(basis, OFF, YosidaLayer(0.01), noise or nz.NoiseModel.silent(), transport=False, capillary=False)


def bubble(basis, radius=None, width=0.5, amp=0.9):
    X, Y = basis.grid()
    c = basis.L / 2
    r = np.hypot(X - c, Y - c)
    return basis.project(amp * np.tanh(((radius or basis.L / 4) - r) / width))


@pytest.fixture(scope="module")
def b32():
    return build_basis(N=32, L=2 * math.pi)


# chemical potential -----------------------------------------------------------

def test_mu_of_zero_phase(b32):
    m = ACNSModel(b32, SPEC, YosidaLayer(0.01))
    c, _ = assemble_mu(m, b32.zeros())
    assert np.max(np.abs(c)) < 1e-15


def test_mu_linearization(b32):
    lay = YosidaLayer(0.01)
    m = ACNSModel(b32, SPEC, lay)
    h = 1e-5
    Fpp0 = float((eval_Fprime_lambda(lay, SPEC, h) - eval_Fprime_lambda(lay, SPEC, -h)) / (2 * h))
    X, Y = b32.grid()
    eps = 1e-6
    phi = b32.project(eps * np.cos(2 * X) * np.cos(Y))
    c, _ = assemble_mu(m, phi)
    expected = (b32.alpha + Fpp0) * phi
    assert np.max(np.abs(c - expected)) <= 1e-9 * np.max(np.abs(phi)) + 1e-16


def test_mu_converges_to_unregularized(b32):
    X, Y = b32.grid()
    grid = 0.5 * np.sin(X) * np.cos(2 * Y)
    phi = b32.project(grid)
    phi = phi * 0.5 / np.max(np.abs(b32.to_grid(phi)))
    exact = b32.alpha * phi + b32.project(eval_Fprime(SPEC, b32.to_grid(phi)))
    errs = []
    for lam in (1e-2, 1e-3, 1e-4, 1e-5):
        c, _ = assemble_mu(ACNSModel(b32, SPEC, YosidaLayer(lam)), phi)
        errs.append(b32.norm_H(c - exact))
    assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
    assert errs[-1] < 1e-4 * b32.norm_H(exact)


def test_state_mu_is_recomputed(b32, rng):
    m = ACNSModel(b32, SPEC, YosidaLayer(0.01), nz.NoiseModel.from_config(nz.NoiseConfig(seed=2)))
    s = make_state(m, random_scalar(b32, rng, 0.3), random_velocity(b32, rng, 0.3))
    for i in range(3):
        prev = s
        s = step(m, StepperConfig(1e-3), s, nz.sample_increment(m.noise, 1e-3, i))
        # the stepper warm-starts the root solve from the previous state
        c, _ = assemble_mu(m, s.b, prev.yosida.s)
        assert np.array_equal(c, s.c)
        cold, _ = assemble_mu(m, s.b)
        assert np.max(np.abs(cold - s.c)) < 1e-12


# drift --------------------------------------------------------------------------

def test_linear_phase_drift_is_heat(b32, rng):
    m = ACNSModel(b32, OFF, YosidaLayer(0.01), capillary=False)
    b = random_scalar(b32, rng)
    da, db = drift(m, make_state(m, b))
    assert np.max(np.abs(db + b32.alpha * b)) < 1e-13
    assert np.max(np.abs(da)) == 0.0


def test_single_mode_velocity_is_stationary_under_advection(b32):
    m = ACNSModel(b32, OFF, YosidaLayer(0.01))
    for j in range(0, 12, 2):
        v = np.zeros(b32.n_velocity)
        v[j] = 1.3
        v[j + 1] = -0.4  # same wavevector, both phases
        a = b32.velocity_from_real(v)
        da, _ = drift(m, make_state(m, b32.zeros(), a))
        assert np.max(np.abs(da + b32.beta * a)) < 1e-12


def test_coupling_powers_cancel(b32, rng):
    cap = ACNSModel(b32, SPEC, YosidaLayer(0.01), transport=False, capillary=True)
    tra = ACNSModel(b32, SPEC, YosidaLayer(0.01), transport=True, capillary=False)
    for _ in range(20):
        a = random_velocity(b32, rng, 0.5)
        b = random_scalar(b32, rng, 0.3)
        s_cap, s_tra = make_state(cap, b, a), make_state(tra, b, a)
        da, _ = drift(cap, s_cap)
        _, db = drift(tra, s_tra)
        korteweg_power = vinner(b32, da + b32.beta * a, a)
        convective_power = b32.inner(-db - s_tra.c, s_tra.c)
        assert abs(korteweg_power - convective_power) <= 1e-9
        assert abs(korteweg_power) > 1e-6


# stepping -----------------------------------------------------------------------

@pytest.mark.parametrize("scheme", ["semi_implicit_em", "fully_explicit_em"])
def test_geometric_decay(scheme, b32, rng):
    m = linear_model(b32)
    dt = 1e-3
    s0 = make_state(m, random_scalar(b32, rng), random_velocity(b32, rng))
    s = s0
    for _ in range(25):
        s = step(m, StepperConfig(dt, scheme), s)
    if scheme == "semi_implicit_em":
        fa, fb = (1 + dt * b32.beta) ** -25, (1 + dt * b32.alpha) ** -25
    else:
        fa, fb = (1 - dt * b32.beta) ** 25, (1 - dt * b32.alpha) ** 25
    assert np.max(np.abs(s.a - s0.a * fa)) < 1e-14
    assert np.max(np.abs(s.b - s0.b * fb)) < 1e-14


def test_one_step_pure_noise_from_rest(b32):
    noise = nz.NoiseModel.from_config(nz.NoiseConfig(seed=4, K1=6, K2=3))
    m = ACNSModel(b32, SPEC, YosidaLayer(0.01), noise)
    dt = 1e-2
    inc = nz.sample_increment(noise, dt, 0)
    s0 = make_state(m, b32.zeros())
    g1 = nz.apply_G1(noise, b32, s0.a, inc.dW1)
    # J_lam(0) = 0, so the phase increment is the constant profile
    g2 = nz.apply_G2(noise, b32, s0.b, inc.dW2)
    s1 = step(m, StepperConfig(dt, "fully_explicit_em"), s0, inc)
    assert np.max(np.abs(s1.a - g1)) < 1e-15
    assert np.max(np.abs(s1.b - g2)) < 1e-15
    s1 = step(m, StepperConfig(dt), s0, inc)
    assert np.max(np.abs(s1.a - g1 / (1 + dt * b32.beta))) < 1e-15
    assert np.max(np.abs(s1.b - g2)) < 1e-15


def test_zero_length_simulation_returns_initial(b32, rng):
    m = ACNSModel(b32, SPEC, YosidaLayer(0.01), nz.NoiseModel.from_config(nz.NoiseConfig()))
    s0 = make_state(m, random_scalar(b32, rng, 0.2))
    traj = simulate(m, StepperConfig(1e-3), s0, 0.0)
    assert traj.n_steps == 0 and traj.final is s0


def test_deterministic_energy_decay():
    basis = build_basis(N=32, L=2 * math.pi)
    m = ACNSModel(basis, SPEC, YosidaLayer(0.01))
    rng = np.random.default_rng(3)
    s = make_state(m, bubble(basis, amp=0.8), random_velocity(basis, rng, 0.1))
    e_prev = energy(m, s).total
    for _ in range(200):
        s = step(m, StepperConfig(1e-3), s)
        e = energy(m, s).total
        assert e <= e_prev + 1e-10
        e_prev = e


def test_seed_reproducibility_bitwise(b32, rng):
    noise = nz.NoiseModel.from_config(nz.NoiseConfig(seed=17, K1=8, K2=4, amp1=0.3, amp2=0.3))
    m = ACNSModel(b32, SPEC, YosidaLayer(0.01), noise)
    s0 = make_state(m, bubble(b32), random_velocity(b32, rng, 0.2))
    f1 = simulate(m, StepperConfig(1e-3), s0, 0.02, member=3).final
    f2 = simulate(m, StepperConfig(1e-3), s0, 0.02, member=3).final
    assert f1.a.tobytes() == f2.a.tobytes() and f1.b.tobytes() == f2.b.tobytes()
    f3 = simulate(m, StepperConfig(1e-3), s0, 0.02, member=4).final
    assert not np.array_equal(f1.b, f3.b)


def test_velocity_stays_solenoidal(b32, rng):
    noise = nz.NoiseModel.from_config(nz.NoiseConfig(seed=1, K1=10, amp1=0.5))
    m = ACNSModel(b32, SPEC, YosidaLayer(0.01), noise)
    s = simulate(m, StepperConfig(1e-3), make_state(m, bubble(b32), random_velocity(b32, rng)), 0.01).final
    u = b32.vector_project(b32.velocity_grid(s.a))
    div = 1j * b32.kx * u[0] + 1j * b32.ky * u[1]
    assert np.max(np.abs(div)) < 1e-10 * np.max(np.abs(u))
    assert np.max(np.abs(b32.velocity_hat(s.a)[:, 0, 0])) == 0.0


def test_refined_noise_path_converges(b32):
    # same Brownian path at dt and dt/2: results agree to O(dt^{1/2})
    noise = nz.NoiseModel.from_config(nz.NoiseConfig(seed=9, K1=6, K2=4))
    m = ACNSModel(b32, SPEC, YosidaLayer(0.01), noise)
    s0 = make_state(m, bubble(b32))
    T = 0.02
    finals = []
    for r in (1, 2, 4):
        dt = 4e-3 / r
        s = s0
        for i in range(n_steps_for(T, dt)):
            # coarse increment i sums fine increments i*r' ... on the finest path
            inc = nz.sample_increment(noise, dt, i, refine=4 // r)
            s = step(m, StepperConfig(dt), s, inc)
        finals.append(s)
    d1 = b32.norm_H(finals[0].b - finals[1].b)
    d2 = b32.norm_H(finals[1].b - finals[2].b)
    assert d2 < d1


def test_phase_excursions_shrink_with_lambda():
    basis = build_basis(N=32, L=2 * math.pi)
    noise = nz.NoiseModel.from_config(nz.NoiseConfig(seed=5, K1=4, K2=4, amp2=0.3))
    peaks = []
    for lam in (0.05, 0.01, 0.002):
        m = ACNSModel(basis, SPEC, YosidaLayer(lam), noise)
        s = make_state(m, bubble(basis, amp=0.99, width=0.2))
        excess = 0.0
        for i in range(60):
            s = step(m, StepperConfig(1e-3), s, nz.sample_increment(noise, 1e-3, i))
            excess = max(excess, float(np.max(np.abs(s.phi_grid))) - 1.0)
        peaks.append(excess)
    assert all(p2 <= p1 for p1, p2 in zip(peaks, peaks[1:]))


# errors -------------------------------------------------------------------------

def test_stepper_config_validation():
    with pytest.raises(ValueError):
        StepperConfig(0.0)
    with pytest.raises(ValueError):
        StepperConfig(1e-3, "rk4")
    with pytest.raises(ValueError):
        StepperConfig(1e-3, max_phase_clip=0.0)


def test_explicit_scheme_requires_dt_below_lambda(b32):
    m = ACNSModel(b32, SPEC, YosidaLayer(1e-3))
    s = make_state(m, b32.zeros())
    with pytest.raises(ValueError):
        step(m, StepperConfig(2e-3, "fully_explicit_em"), s)
    step(m, StepperConfig(2e-3, "semi_implicit_em"), s)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_reported(b32):
    m = linear_model(b32)
    b = b32.zeros()
    b[1, 1] = np.inf
    bad = make_state(m, b32.zeros())
    bad = type(bad)(bad.t, bad.step, bad.a, b, bad.c, bad.lam, bad.yosida)
    with pytest.raises(BlowUpError) as info:
        step(m, StepperConfig(1e-3), bad)
    assert info.value.step == 1


def test_cfl_guard(b32):
    m = ACNSModel(b32, OFF, YosidaLayer(0.01), transport=False, capillary=False)
    v = np.zeros(b32.n_velocity)
    v[0] = 1e4
    s = make_state(m, b32.zeros(), b32.velocity_from_real(v))
    with pytest.raises(BlowUpError, match="CFL"):
        step(m, StepperConfig(1e-3, cfl_guard=True), s)


def test_step_count_must_divide():
    assert n_steps_for(0.5, 1e-3) == 500
    with pytest.raises(ValueError):
        n_steps_for(0.5, 0.3)
    with pytest.raises(ValueError):
        simulate(None, StepperConfig(1e-3), None, -1.0)


def test_scalar_only_basis_runs():
    nb = build_basis(N=16, L=2.0, boundary_mode="neumann_cosine", velocity=False)
    m = ACNSModel(nb, SPEC, YosidaLayer(0.01), nz.NoiseModel.from_config(nz.NoiseConfig(K1=0, K2=2)))
    X, Y = nb.grid()
    s0 = make_state(m, nb.project(0.5 * np.cos(math.pi * X / 2.0)))
    assert s0.a is None
    out = simulate(m, StepperConfig(1e-3), s0, 0.01).final
    assert np.all(np.isfinite(out.b))
    with pytest.raises(ValueError):
        make_state(m, nb.zeros(), a=np.zeros(3))


def test_step_info_carries_increment(b32):
    noise = nz.NoiseModel.from_config(nz.NoiseConfig(seed=2))
    m = ACNSModel(b32, SPEC, YosidaLayer(0.01), noise)
    inc = nz.sample_increment(noise, 1e-3, 0)
    _, info = step_with_info(m, StepperConfig(1e-3), make_state(m, bubble(b32)), inc)
    assert info.increment is inc and info.dt == 1e-3
    assert 0.0 <= info.outside_fraction <= 1.0


def test_pure_phase_drifts_by_regularized_derivative():
    # phi = 1 is not a rest state once F' is replaced by F'_lambda, which is finite and
    # nonzero at 1; the uniform mode then moves by exactly -dt F'_lambda(1)
    b = build_basis(N=16, L=2 * math.pi)
    drifts = []
    for lam in (0.1, 0.01, 0.001):
        lay = YosidaLayer(lam)
        m = ACNSModel(b, SPEC, lay)
        s = make_state(m, b.project(np.ones((16, 16))))
        g = b.to_grid(step(m, StepperConfig(1e-4), s, None).b)
        drift = float(eval_Fprime_lambda(lay, SPEC, 1.0))
        assert np.allclose(g - 1.0, -1e-4 * drift, rtol=1e-9, atol=1e-15)
        drifts.append(drift)
    # the pull grows without bound as lambda shrinks, so no finite lambda pins phi = 1
    assert drifts[0] < drifts[1] < drifts[2] and abs(drifts[1]) > 0.1
