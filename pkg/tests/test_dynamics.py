import math
import os

import numpy as np
import pytest

from llns.basis import FOUR_PI_SQ, Basis, ModeIndex, SpectralField, build_table
from llns.dynamics import (
    EXPONENTIAL,
    EXPONENTIAL_RK2,
    SEMI_IMPLICIT,
    Forcing,
    IntegrationError,
    IntegratorConfig,
    Trajectory,
    energy_identity_check,
    energy_residual,
    ensemble_blocks,
    phi1,
    phi2,
    run_block,
    simulate,
    skeleton,
    step,
)
from llns.noise import NoiseParams, replica_rng

K100 = ModeIndex.wave((1, 0, 0), 0, "cos")
ALL_SCHEMES = [EXPONENTIAL, EXPONENTIAL_RK2, SEMI_IMPLICIT]


def smooth_forcing(basis, dt, steps, amp=5.0):
    i = basis.index(K100)
    j = basis.index(ModeIndex.wave((0, 1, 0), 1, "sin"))

    def fn(t):
        v = np.zeros(len(basis))
        v[i] = amp * math.cos(2 * t)
        v[j] = amp * t
        return v

    return Forcing.from_function(basis, dt, steps, fn)


class TestPhi:
    @pytest.mark.parametrize("z", [-50.0, -1.0, -1e-3, -1e-9, 0.0])
    def test_phi_functions(self, z):
        if z == 0.0:
            want1, want2 = 1.0, 0.5
        else:
            want1 = math.expm1(z) / z
            want2 = (math.expm1(z) - z) / z**2
        assert phi1(np.array([z]))[0] == pytest.approx(want1, rel=1e-7)
        assert phi2(np.array([z]))[0] == pytest.approx(want2, rel=1e-6)


class TestLinearDecay:
    @pytest.mark.parametrize("scheme", [EXPONENTIAL, EXPONENTIAL_RK2])
    @pytest.mark.parametrize("k", [(1, 0, 0), (1, 1, 0), (2, 0, 0)])
    def test_exact_decay(self, scheme, k):
        b = Basis.galerkin(2)
        md = ModeIndex.wave(k, 1, "sin")
        cfg = IntegratorConfig(scheme, dt=1e-3, T=0.01)
        tr = skeleton(b.unit(md), None, cfg)
        lam = FOUR_PI_SQ * sum(c * c for c in k)
        got = tr.states[:, b.index(md)]
        np.testing.assert_allclose(got, np.exp(-lam * tr.times), rtol=1e-12, atol=0)
        others = np.delete(tr.states, b.index(md), axis=1)
        assert np.abs(others).max() < 1e-12

    def test_semi_implicit_first_order(self):
        b = Basis.galerkin(1)
        errs = []
        for dt in (1e-3, 5e-4):
            tr = skeleton(b.unit(K100), None, IntegratorConfig(SEMI_IMPLICIT, dt=dt, T=0.1))
            errs.append(abs(tr.states[-1, b.index(K100)] - math.exp(-FOUR_PI_SQ * 0.1)))
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)

    def test_constant_modes_frozen(self):
        b = Basis.galerkin(2)
        rng = np.random.default_rng(3)
        u0 = SpectralField(b, rng.standard_normal(len(b)))
        tr = simulate(u0, NoiseParams(0.5, 0.0, 1.5, 2), IntegratorConfig(dt=1e-3, T=0.05), rng=1)
        np.testing.assert_array_equal(tr.states[:, :3], np.tile(u0.coeffs[:3], (tr.steps + 1, 1)))


class TestSkeletonEnergy:
    @pytest.mark.parametrize("scheme", [EXPONENTIAL, EXPONENTIAL_RK2])
    def test_second_order_defect(self, scheme):
        """The trapezoid energy defect shrinks like dt^2 for smooth data."""
        b = Basis.galerkin(2)
        rng = np.random.default_rng(5)
        u0 = SpectralField(b, np.r_[0, 0, 0, 0.2 * rng.standard_normal(64)])
        defects = []
        for dt in (1e-3, 5e-4):
            N = int(round(0.5 / dt))
            f = smooth_forcing(b, dt, N)
            tr = skeleton(u0, f, IntegratorConfig(scheme, dt=dt, T=0.5))
            defects.append(abs(energy_identity_check(tr, f)))
        assert defects[1] < defects[0]
        assert defects[0] / defects[1] > 3.0

    @pytest.mark.parametrize("scheme", ALL_SCHEMES)
    @pytest.mark.parametrize("dt", [1e-3, 1e-2])
    @pytest.mark.parametrize("amp", [0.3, 3.0])
    def test_unforced_energy_nonincreasing(self, scheme, dt, amp):
        b = Basis.galerkin(2)
        rng = np.random.default_rng(int(amp * 10))
        u0 = SpectralField(b, np.r_[0, 0, 0, amp * rng.standard_normal(64)])
        tr = skeleton(u0, None, IntegratorConfig(scheme, dt=dt, T=0.5))
        E = 0.5 * np.sum(tr.states**2, axis=1)
        assert np.all(np.diff(E) <= 1e-14 * E[0])

    def test_gentle_case_tight(self):
        b = Basis.galerkin(2)
        u0 = b.unit(K100, 0.1)
        tr = skeleton(u0, None, IntegratorConfig(EXPONENTIAL_RK2, dt=1e-4, T=0.1))
        assert abs(energy_identity_check(tr)) < 1e-6

    def test_nonlinear_switch(self):
        b = Basis.galerkin(2)
        rng = np.random.default_rng(2)
        u0 = SpectralField(b, np.r_[0, 0, 0, rng.standard_normal(64)])
        lin = skeleton(u0, None, IntegratorConfig(dt=1e-3, T=0.02, nonlinear=False))
        want = u0.coeffs * np.exp(-b.eigenvalues * 0.02)
        np.testing.assert_allclose(lin.states[-1], want, rtol=1e-12)


class TestOrnsteinUhlenbeck:
    def test_variance_at_T(self):
        """Linear dynamics from zero: Var c(T) = (eps/2) sigma^2 (1 - e^{-2 lambda T}) per mode."""
        b = Basis.galerkin(1)
        p = NoiseParams(0.5, 1e-3, 1.5, 1)
        T = 0.02
        cfg = IntegratorConfig(EXPONENTIAL, dt=5e-3, T=T, nonlinear=False)
        R = 4000
        blk = run_block(b.zeros(), p, cfg, [replica_rng(9, r) for r in range(R)], record_steps=[cfg.steps])
        final = blk.states[:, 0]
        wave = b.is_wave
        lam = b.eigenvalues[wave]
        want = 0.5 * p.epsilon * p.sigma_vector(b)[wave] ** 2 * -np.expm1(-2 * lam * T)
        z = (final[:, wave].var(axis=0, ddof=1) / want - 1) / math.sqrt(2 / (R - 1))
        assert np.abs(z).max() < 4.0

    def test_gaussian_start_stationary(self):
        b = Basis.galerkin(1)
        p = NoiseParams(0.5, 0.0, 1.5, 1)
        cfg = IntegratorConfig(EXPONENTIAL, dt=1e-2, T=0.1, nonlinear=False)
        R = 4000
        blk = run_block(b.zeros(), p, cfg, [replica_rng(4, r) for r in range(R)],
                        record_steps=[0, cfg.steps], gaussian_start=True)
        for s in range(2):
            v = blk.states[:, s, b.is_wave].var(axis=0, ddof=1)
            z = (v / 0.25 - 1) / math.sqrt(2 / (R - 1))
            assert np.abs(z).max() < 4.0


class TestDeterminism:
    def test_block_size_and_threads_do_not_matter(self, monkeypatch):
        b = Basis.galerkin(1)
        p = NoiseParams(0.3, 0.0, 1.5, 1)
        cfg = IntegratorConfig(EXPONENTIAL, dt=1e-3, T=0.3)  # 300 steps crosses a noise chunk
        u0 = b.unit(K100, 0.5)

        def collect(block_size):
            return np.concatenate([blk.states for blk in ensemble_blocks(u0, p, cfg, 10, 42, block_size=block_size)])

        a = collect(10)
        assert np.array_equal(a, collect(3))
        monkeypatch.setenv("LLNS_THREADS", "3")
        assert np.array_equal(a, collect(4))

    def test_single_replica_matches_simulate(self):
        b = Basis.galerkin(1)
        p = NoiseParams(0.3, 0.0, 1.5, 1)
        cfg = IntegratorConfig(EXPONENTIAL_RK2, dt=1e-3, T=0.3)
        u0 = b.unit(K100, 0.5)
        blk = next(ensemble_blocks(u0, p, cfg, 3, 8))
        tr = simulate(u0, p, cfg, rng=replica_rng(8, 2))
        assert np.array_equal(blk.states[2], tr.states)

    def test_step_matches_block(self):
        b = Basis.galerkin(1)
        p = NoiseParams(0.3, 0.0, 1.5, 1)
        cfg = IntegratorConfig(EXPONENTIAL, dt=1e-3, T=1e-3)
        u0 = b.unit(K100, 0.5)
        one = step(u0, p, cfg, rng=np.random.default_rng(1))
        tr = simulate(u0, p, cfg, rng=np.random.default_rng(1))
        np.testing.assert_allclose(one.coeffs, tr.states[1], rtol=1e-14)


class TestEnergyResidual:
    def test_mean_zero(self):
        b = Basis.galerkin(1)
        p = NoiseParams(0.5, 0.0, 1.5, 1)
        cfg = IntegratorConfig(EXPONENTIAL_RK2, dt=1e-3, T=0.2, record_noise=True)
        finals = []
        for blk in ensemble_blocks(b.zeros(), p, cfg, 400, 3, block_size=200, gaussian_start=True):
            for r in range(len(blk.replica_ids)):
                tr = Trajectory(b, cfg.dt, blk.states[r], noise_log=blk.noise[r])
                finals.append(energy_residual(tr, p)[-1])
        finals = np.asarray(finals)
        assert abs(finals.mean()) < 4 * finals.std(ddof=1) / math.sqrt(len(finals))

    def test_zero_noise_first_order(self):
        """Without noise the left-point bookkeeping error is O(dt)."""
        b = Basis.galerkin(1)
        p = NoiseParams(0.0, 0.0, 1.5, 1)
        errs = []
        for dt in (2e-4, 1e-4):
            N = int(round(0.1 / dt))
            f = smooth_forcing(b, dt, N, amp=1.0)
            cfg = IntegratorConfig(EXPONENTIAL_RK2, dt=dt, T=0.1, record_noise=True)
            tr = simulate(b.unit(K100, 0.1), p, cfg, f)
            errs.append(abs(energy_residual(tr, p, f)[-1]))
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.15)

    def test_requires_noise_log(self):
        b = Basis.galerkin(1)
        tr = skeleton(b.zeros(), None, IntegratorConfig(dt=1e-3, T=1e-2))
        with pytest.raises(ValueError):
            energy_residual(tr, NoiseParams(0.1, 0, 1.5, 1))


class TestErrors:
    def test_blowup_detected(self):
        b = Basis.galerkin(2)
        rng = np.random.default_rng(0)
        u0 = SpectralField(b, 1e4 * rng.standard_normal(len(b)))
        with pytest.raises(IntegrationError) as info:
            skeleton(u0, None, IntegratorConfig(EXPONENTIAL, dt=1e-2, T=1.0))
        assert info.value.step >= 1

    @pytest.mark.parametrize("kw", [dict(scheme="rk4"), dict(dt=0.0), dict(dt=2.0, T=1.0)])
    def test_bad_config(self, kw):
        with pytest.raises(ValueError):
            IntegratorConfig(**kw)

    def test_forcing_length_checked(self):
        b = Basis.galerkin(1)
        with pytest.raises(ValueError):
            skeleton(b.zeros(), Forcing.zeros(b, 1e-3, 5), IntegratorConfig(dt=1e-3, T=1e-2))

    def test_forcing_drops_constants(self):
        b = Basis.galerkin(1)
        f = Forcing(b, 0.1, np.ones((3, len(b))))
        assert np.all(f.values[:, :3] == 0)


class TestTrajectoryIO:
    def test_csv_round_trip(self, tmp_path):
        b = Basis.galerkin(1)
        tr = simulate(b.unit(K100, 0.3), NoiseParams(0.2, 0, 1.5, 1), IntegratorConfig(dt=1e-2, T=0.05), rng=5)
        tr.write(tmp_path / "t.csv")
        back = Trajectory.read(tmp_path / "t.csv")
        assert back.basis == b
        assert back.dt == tr.dt
        assert np.array_equal(back.states, tr.states)

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            Trajectory(Basis.galerkin(1), 0.1, np.zeros((3, 4)))
