import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphene_mep.closure import PhysicalScales
from graphene_mep.errors import DomainError, InvariantViolation, StabilityError
from graphene_mep.io import read_csv
from graphene_mep.reduced_models import (
    REGIMES,
    CollimationState,
    DiffusionConfig,
    WaveConfig,
    collimation_max_dt,
    collimation_step,
    collimation_turning_rate,
    density_from_level,
    drift_diffusion_rhs,
    drift_diffusion_step,
    geometric_optics_residual,
    mobility,
    oscillation_frequency,
    quasi_fermi_level,
    snell_ray_bundle,
    steady_state_density,
    steady_state_residual,
    step_profile,
    trace_ray,
    wave_coefficient,
    wave_energy,
    wave_init,
    wave_step,
    write_rays_csv,
)
from oracles import heat_kernel_periodic, phi_mp

L = 2.0 * math.pi
LEVELS = {"general": 1.0, "maxwell_boltzmann": -2.0, "degenerate": 10.0}


def _centres(N, length=L):
    return (np.arange(N) + 0.5) * length / N


class TestRegimeFunctions:
    @pytest.mark.parametrize("regime", REGIMES)
    def test_level_round_trip(self, scales, regime):
        n = np.logspace(-4, 3, 15) * scales.n_T
        assert np.allclose(density_from_level(regime, quasi_fermi_level(regime, n, scales), scales), n, rtol=1e-12)

    @pytest.mark.parametrize("regime", REGIMES)
    def test_level_derivative_is_inverse_mobility(self, scales, regime):
        n = np.logspace(-3, 2, 9) * scales.n_T
        h = 1e-6 * n
        dphi = (quasi_fermi_level(regime, n + h, scales) - quasi_fermi_level(regime, n - h, scales)) / (2 * h)
        assert np.allclose(dphi * mobility(regime, n, scales), 1.0, rtol=1e-8)

    def test_general_mobility_against_polylog(self, scales):
        # n = n_T phi_2(A), mu = (n_T/kT) phi_1(A), reference from mpmath.
        for A in (-5.0, 0.0, 2.5, 12.0):
            n = scales.n_T * phi_mp(2, A)
            assert float(mobility("general", n, scales)) == pytest.approx(scales.n_T * phi_mp(1, A), rel=1e-12)

    @pytest.mark.parametrize("nu", [1e-8, 1e-7, 1e-6])
    def test_general_reduces_to_maxwell_boltzmann(self, scales, nu):
        n = nu * scales.n_T
        mu_g = float(mobility("general", n, scales))
        mu_mb = float(mobility("maxwell_boltzmann", n, scales))
        assert mu_g / mu_mb - 1 == pytest.approx(0.0, abs=1e-6)

    @pytest.mark.parametrize("nu", [1e4, 1e6, 1e8])
    def test_general_reduces_to_degenerate(self, scales, nu):
        # Leading Sommerfeld correction is pi^2 / (6 A^2) with A^2 ~ 2 nu.
        n = nu * scales.n_T
        rel = float(mobility("general", n, scales)) / float(mobility("degenerate", n, scales)) - 1
        assert abs(rel) <= math.pi ** 2 / (6 * nu)

    def test_unknown_regime(self, scales):
        with pytest.raises(DomainError):
            mobility("quantum", 1.0, scales)

    def test_degenerate_level_domain(self, scales):
        with pytest.raises(DomainError):
            density_from_level("degenerate", -1.0, scales)


class TestDiffusionConfig:
    def test_coefficients(self, scales):
        cfg = DiffusionConfig("general", 0.2, (0.1, 0.05), np.zeros((3, 3)))
        assert cfg.diffusion_coefficient(scales) == pytest.approx(0.1)
        assert cfg.max_stable_dt(scales) == pytest.approx(0.05 ** 2 / (4 * 0.1))
        assert cfg.periodic == (True, True)

    def test_validation(self):
        with pytest.raises(DomainError):
            DiffusionConfig("general", math.inf, (0.1,), np.zeros(3))
        with pytest.raises(DomainError):
            DiffusionConfig("general", 0.1, (0.1,), np.zeros((3, 3)))
        with pytest.raises(DomainError):
            DiffusionConfig("general", 0.1, (0.1,), np.zeros(3), species_sign=2)


class TestDriftDiffusion:
    @pytest.mark.parametrize("regime", REGIMES)
    @pytest.mark.parametrize("sign", [1, -1])
    def test_steady_state_residual(self, scales, regime, sign):
        N = 64
        x = _centres(N)
        V = 0.8 * np.sin(x) + 0.3 * np.cos(3 * x)
        cfg = DiffusionConfig(regime, 0.1, (L / N,), V, sign)
        n = steady_state_density(cfg, LEVELS[regime], scales)
        assert steady_state_residual(cfg, n, scales) <= 1e-10

    def test_two_dimensional_steady_state_with_walls(self, scales):
        N = 24
        X, Y = np.meshgrid(_centres(N), _centres(N), indexing="ij")
        cfg = DiffusionConfig("general", 0.1, (L / N, L / N), np.sin(X) * np.cos(Y), 1, (True, False))
        n = steady_state_density(cfg, 0.5, scales)
        assert steady_state_residual(cfg, n, scales) <= 1e-10

    def test_steady_state_stays_put(self, scales):
        N = 32
        V = 0.5 * np.sin(_centres(N))
        cfg = DiffusionConfig("maxwell_boltzmann", 0.1, (L / N,), V, -1)
        n0 = steady_state_density(cfg, -1.0, scales)
        n = n0.copy()
        for _ in range(100):
            n = drift_diffusion_step(cfg, n, cfg.max_stable_dt(scales), scales)
        assert np.max(np.abs(n / n0 - 1)) < 1e-12

    @pytest.mark.parametrize("periodic", [True, False])
    def test_mass_conservation(self, scales, rng, periodic):
        N = 40
        V = rng.normal(scale=0.3, size=N)
        cfg = DiffusionConfig("general", 0.05, (0.1,), V, 1, (periodic,))
        n = 0.5 + 0.3 * rng.random(N)
        m0 = n.sum()
        for _ in range(200):
            n = drift_diffusion_step(cfg, n, 0.9 * cfg.max_stable_dt(scales), scales)
        assert abs(n.sum() / m0 - 1) < 1e-13

    def test_heat_kernel_convergence(self, scales):
        # Without a potential the equation is the heat equation.
        length, tau0, T = 20.0, 0.2, 1.0
        amp, width, bg = 1.0, 0.6, 0.01
        errors = []
        for N in (100, 200, 400):
            x = _centres(N, length)
            cfg = DiffusionConfig("maxwell_boltzmann", tau0, (length / N,), np.zeros(N))
            D = cfg.diffusion_coefficient(scales)
            n = heat_kernel_periodic(x, length, D, 0.0, length / 2, amp, width, bg)
            steps = math.ceil(T / (0.5 * cfg.max_stable_dt(scales)))
            for _ in range(steps):
                n = drift_diffusion_step(cfg, n, T / steps, scales)
            exact = heat_kernel_periodic(x, length, D, T, length / 2, amp, width, bg)
            errors.append(math.sqrt(np.sum((n - exact) ** 2) / np.sum((exact - bg) ** 2)))
        assert errors[-1] <= 1e-3
        assert errors[0] > errors[1] > errors[2]
        assert math.log2(errors[1] / errors[2]) > 1.8

    def test_uniform_potential_gives_pure_diffusion(self, scales, rng):
        N = 16
        n = 1.0 + 0.1 * rng.random(N)
        a = DiffusionConfig("general", 0.1, (0.2,), np.zeros(N))
        b = DiffusionConfig("general", 0.1, (0.2,), np.full(N, 3.0))
        assert np.array_equal(drift_diffusion_rhs(a, n, scales), drift_diffusion_rhs(b, n, scales))

    def test_general_matches_maxwell_boltzmann_when_dilute(self, scales):
        N = 32
        V = 0.5 * np.sin(_centres(N))
        n = 1e-7 * scales.n_T * (1 + 0.2 * np.cos(_centres(N)))
        rg = drift_diffusion_rhs(DiffusionConfig("general", 0.1, (L / N,), V), n, scales)
        rm = drift_diffusion_rhs(DiffusionConfig("maxwell_boltzmann", 0.1, (L / N,), V), n, scales)
        assert np.max(np.abs(rg - rm)) <= 1e-6 * np.max(np.abs(rm))

    def test_rejects_unstable_step(self, scales):
        cfg = DiffusionConfig("general", 0.1, (0.1,), np.zeros(8))
        with pytest.raises(StabilityError):
            drift_diffusion_step(cfg, np.ones(8), 1.01 * cfg.max_stable_dt(scales), scales)

    def test_shape_mismatch(self, scales):
        cfg = DiffusionConfig("general", 0.1, (0.1,), np.zeros(8))
        with pytest.raises(DomainError):
            drift_diffusion_rhs(cfg, np.ones(7), scales)

    @settings(max_examples=25)
    @given(st.integers(0, 2**31), st.sampled_from(REGIMES), st.sampled_from([1, -1]))
    def test_positivity_and_mass_property(self, seed, regime, sign):
        scales = PhysicalScales.reduced()
        rng = np.random.default_rng(seed)
        N = 24
        # Potential jumps stay below the cell-Peclet limit of the explicit scheme.
        V = rng.normal(scale=0.1, size=N)
        cfg = DiffusionConfig(regime, 0.1, (0.2,), V, sign)
        n = scales.n_T * 10.0 ** rng.uniform(0, 2, N)
        m0 = n.sum()
        for _ in range(20):
            n = drift_diffusion_step(cfg, n, 0.5 * cfg.max_stable_dt(scales), scales)
        assert np.all(n > 0)
        assert abs(n.sum() / m0 - 1) < 1e-12


class TestWave:
    def test_coefficient_limits(self, scales):
        # Dilute: kappa -> c^2 n0 / (2 kT); reference value from mpmath.
        assert wave_coefficient(1e-9 * scales.n_T, scales) == pytest.approx(0.5e-9 * scales.n_T, rel=1e-8)
        A = 1.3
        n0 = scales.n_T * phi_mp(2, A)
        assert wave_coefficient(n0, scales) == pytest.approx(0.5 * scales.n_T * phi_mp(1, A), rel=1e-12)

    def test_speed_and_energy(self, scales):
        N = 128
        x = _centres(N)
        cfg = WaveConfig((L / N,), np.zeros(N), 0.3)
        dt = 0.5 * cfg.max_stable_dt(scales)
        state = wave_init(cfg, 0.3 + 1e-3 * np.cos(x), np.zeros(N), dt, scales)
        E0 = wave_energy(cfg, state, scales)
        amp, drift = [], 0.0
        for _ in range(1000):
            amp.append(np.dot(state.n - 0.3, np.cos(x)))
            state = wave_step(cfg, state, scales)
            drift = max(drift, abs(wave_energy(cfg, state, scales) / E0 - 1))
        speed = oscillation_frequency(amp, dt)
        assert speed == pytest.approx(scales.c / math.sqrt(2), rel=0.01)
        assert drift <= 1e-4

    def test_zero_data_stays_zero(self, scales):
        cfg = WaveConfig((0.1,), np.zeros(20), 1.0)
        state = wave_init(cfg, np.zeros(20), np.zeros(20), 0.05, scales)
        for _ in range(50):
            state = wave_step(cfg, state, scales)
        assert np.all(state.n == 0.0)

    def test_static_potential_balance(self, scales):
        # n = n0 - sign kappa V / (c^2/2) is a stationary solution.
        N = 64
        x = _centres(N)
        V = 0.01 * np.sin(x)
        cfg = WaveConfig((L / N,), V, 0.4, species_sign=-1)
        kappa = wave_coefficient(0.4, scales)
        n = 0.4 + kappa * V / (0.5 * scales.c ** 2)
        state = wave_init(cfg, n, np.zeros(N), 0.5 * cfg.max_stable_dt(scales), scales)
        for _ in range(20):
            state = wave_step(cfg, state, scales)
        assert np.max(np.abs(state.n - n)) < 1e-14

    def test_rejects_unstable_step(self, scales):
        cfg = WaveConfig((0.1,), np.zeros(8), 1.0)
        with pytest.raises(StabilityError):
            wave_init(cfg, np.zeros(8), np.zeros(8), 1.01 * cfg.max_stable_dt(scales), scales)

    def test_frequency_estimator(self):
        dt = 0.01
        t = np.arange(400) * dt
        assert oscillation_frequency(np.cos(3.3 * t + 0.2), dt) == pytest.approx(3.3, rel=1e-12)
        with pytest.raises(DomainError):
            oscillation_frequency([1.0, 0.5], dt)


def _strip(Nx, delta_K, angle, half_length=4.0, width=0.5, regime="maxwell_boltzmann", sign=1):
    dx = 2 * half_length / Nx
    x = (np.arange(Nx) + 0.5) * dx - half_length
    K, _ = step_profile(delta_K, width)
    u = np.zeros((Nx, 2, 2))
    u[..., 0], u[..., 1] = math.cos(angle), math.sin(angle)
    return CollimationState(u, np.repeat(K(x)[:, None], 2, axis=1), (dx, dx), sign, regime, periodic=(False, True))


def _relax(state, scales, transits=1.5, drift_tol=1e-3):
    dt = 0.9 * collimation_max_dt(state, scales)
    t_end = transits * state.K.shape[0] * state.dx[0] / scales.c
    while state.time < t_end:
        state = collimation_step(state, dt, scales, drift_tol)
    return state


class TestCollimation:
    def test_uniform_beam_in_uniform_potential(self, scales):
        u = np.tile([0.6, 0.8], (10, 10, 1))
        state = CollimationState(u, np.full((10, 10), 0.7), (0.1, 0.1))
        out = state
        for _ in range(20):
            out = collimation_step(out, collimation_max_dt(out, scales), scales)
        assert np.max(np.abs(out.u - u)) < 1e-15

    @pytest.mark.parametrize("delta_K, Nx", [(0.1, 400), (0.5, 400), (1.0, 800)])
    def test_grid_snell_and_drift(self, scales, delta_K, Nx):
        angle = math.radians(10.0)
        state = _relax(_strip(Nx, delta_K, angle), scales)
        probe = state.u[-5, 0]
        ratio = math.sin(angle) / math.sin(math.atan2(probe[1], probe[0]))
        assert ratio == pytest.approx(math.exp(-delta_K), rel=0.01)
        assert state.norm_drift <= 1e-3

    def test_drift_monitor_raises(self, scales):
        state = _strip(50, 1.0, math.radians(30.0))
        with pytest.raises(InvariantViolation):
            _relax(state, scales, drift_tol=1e-9)

    def test_bending_direction_by_species(self, scales):
        # Entering the higher-K side electrons bend away from the normal, holes towards it.
        a = math.radians(10.0)
        state = _relax(_strip(400, 0.5, a), scales)
        assert math.atan2(state.u[-5, 0, 1], state.u[-5, 0, 0]) > a
        holes = _relax(_strip(400, 0.5, a, sign=-1), scales)
        assert math.atan2(holes.u[-5, 0, 1], holes.u[-5, 0, 0]) < a

    def test_geometric_optics_residual_constant_K(self, scales):
        state = CollimationState(np.tile([0.8, 0.6], (12, 12, 1)), np.full((12, 12), 0.4), (0.1, 0.1))
        assert np.max(np.abs(geometric_optics_residual(state))) == 0.0

    def test_geometric_optics_residual_first_order(self, scales):
        res = []
        for Nx in (200, 400, 800):
            state = _relax(_strip(Nx, 0.5, math.radians(10.0)), scales)
            res.append(float(np.max(np.abs(geometric_optics_residual(state)[2:-2]))))
        assert res[0] > res[1] > res[2]
        assert 0.7 < math.log2(res[1] / res[2]) < 1.5

    def test_degenerate_is_force_free(self, scales):
        state = _strip(32, 1.0, math.radians(25.0), regime="degenerate")
        assert np.all(collimation_turning_rate(state, scales) == 0.0)
        moved = collimation_step(state, 0.5 * collimation_max_dt(state, scales), scales)
        assert np.max(np.abs(moved.u - state.u)) < 1e-15

    def test_validation(self, scales):
        with pytest.raises(DomainError):
            CollimationState(np.zeros((4, 2)), np.zeros(4), (0.1,), regime="general")
        with pytest.raises(DomainError):
            CollimationState(np.zeros((4, 3)), np.zeros(4), (0.1,))
        state = _strip(16, 0.1, 0.1)
        with pytest.raises(StabilityError):
            collimation_step(state, 1.01 * collimation_max_dt(state, scales), scales)

    @settings(max_examples=20)
    @given(st.floats(0.0, 2 * math.pi), st.floats(-2.0, 2.0))
    def test_rotation_preserves_norm(self, theta, k):
        # A uniform beam in a linear potential is only rotated, never stretched.
        scales = PhysicalScales.reduced()
        N = 8
        x = (np.arange(N) + 0.5) * 0.1
        K = np.repeat((k * x)[:, None], N, axis=1)
        u = np.tile([math.cos(theta), math.sin(theta)], (N, N, 1))
        state = CollimationState(u, K, (0.1, 0.1), periodic=(False, True))
        out = collimation_step(state, 0.5 * collimation_max_dt(state, scales), scales)
        interior = np.linalg.norm(out.u[2:-2], axis=-1)
        assert np.max(np.abs(interior - 1.0)) < 1e-14


class TestRays:
    def test_step_profile(self):
        K, dK = step_profile(0.8, 0.3)
        assert K(-50.0) == pytest.approx(0.0, abs=1e-15)
        assert K(50.0) == pytest.approx(0.8, rel=1e-15)
        x = np.linspace(-2, 2, 9)
        h = 1e-6
        assert np.allclose(dK(x), (K(x + h) - K(x - h)) / (2 * h), rtol=1e-7, atol=1e-9)
        assert dK(1e4) == 0.0

    @pytest.mark.parametrize("delta_K", [0.1, 0.5, 1.0])
    @pytest.mark.parametrize("sign", [1, -1])
    def test_snell_bundle(self, scales, delta_K, sign):
        angles = np.radians([5.0, 10.0, 15.0, 20.0])
        rays, rows = snell_ray_bundle(delta_K, angles, scales, sign)
        assert np.all(np.abs(rows[:, 2] / rows[:, 3] - 1) <= 0.01)
        for r in rays:
            assert np.max(np.abs(np.hypot(r.y[2], r.y[3]) - 1)) <= 1e-3

    def test_conserved_transverse_momentum(self, scales):
        # exp(-K) sin(angle) is constant along an electron ray.
        K, dK = step_profile(0.7, 0.2)
        ray = trace_ray((-8.0, 0.0), 0.3, dK, 8.0, scales)
        invariant = np.exp(-K(ray.y[0])) * ray.y[3] / np.hypot(ray.y[2], ray.y[3])
        assert np.max(np.abs(invariant - invariant[0])) < 1e-9

    def test_flat_potential_keeps_direction(self, scales):
        ray = trace_ray((0.0, 0.0), 0.4, lambda x: 0.0 * x, 5.0, scales)
        assert ray.final_angle == pytest.approx(0.4, abs=1e-12)
        assert ray.y[1, -1] == pytest.approx(5.0 * math.tan(0.4), rel=1e-9)

    def test_total_reflection_rejected(self, scales):
        with pytest.raises(DomainError):
            snell_ray_bundle(1.0, [math.radians(80.0)], scales, species_sign=1)
        with pytest.raises(DomainError):
            snell_ray_bundle(0.5, [0.0], scales)

    def test_rays_csv(self, scales, tmp_path):
        rays, _ = snell_ray_bundle(0.5, [0.2, 0.3], scales)
        write_rays_csv(tmp_path / "r.csv", rays, {"delta_K": 0.5})
        meta, header, rows = read_csv(tmp_path / "r.csv")
        assert header == ["ray", "t", "x", "y", "ux", "uy"]
        assert meta["delta_K"] == "0.5"
        assert set(rows[:, 0]) == {0.0, 1.0}
        assert rows.shape[0] == sum(r.t.size for r in rays)
