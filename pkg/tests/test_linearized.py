"""Linearized-system tests: frozen coefficients, linearity, per-mode oracle."""

import numpy as np
import pytest

from mfglab import linearized as lin, mfg, model, spectral as sp
from mfglab.errors import NonConvergenceError

MBAR = 1.0 / (2.0 * np.pi)


class TestFrozenCoefficients:
    def test_separable_cross_term_vanishes(self, ham_c, base_a):
        coeffs = lin.freeze_coefficients(ham_c, base_a)
        assert np.max(np.abs(coeffs.m_cross)) == 0.0

    def test_coupled_dp_at_zero_u_equals_density(self, grid64, ham_a):
        # H = |p|^2/2 + p_1 q around u = 0: D_p H = (m,)
        tg = mfg.TimeGrid(0.0, 0.05, 4)
        x = grid64.nodes()[0]
        m = sp.analyze(grid64, MBAR * (1.0 + 0.2 * np.cos(2 * x)))
        u_path = np.zeros((5,) + grid64.shape, dtype=complex)
        m_path = np.broadcast_to(m.coeffs, (5,) + grid64.shape)
        base = mfg.PathPair(grid64, tg, u_path, np.array(m_path))
        coeffs = lin.freeze_coefficients(ham_a, base)
        assert np.max(np.abs(coeffs.dp[2, 0] - m.coeffs)) < 1e-13

    def test_coefficients_real(self, coeffs_a, grid64):
        for arr in (coeffs_a.dp, coeffs_a.dq, coeffs_a.m_hess, coeffs_a.m_cross):
            vals = sp.inverse_values(grid64, arr)
            assert np.max(np.abs(vals.imag)) < 1e-12


class TestSolve:
    def test_zero_datum_gives_exact_zero(self, coeffs_a, payoff, base_a,
                                         setup_std):
        zero = sp.ZeroMeanField(sp.constant_field(setup_std.grid, 0.0))
        pair, diag = lin.solve_linearized(coeffs_a, payoff, base_a, zero,
                                          setup_std.picard, s=setup_std.s)
        assert np.max(np.abs(pair.v_coeffs)) == 0.0
        assert np.max(np.abs(pair.mu_coeffs)) == 0.0
        assert diag.final_defect == 0.0

    def test_superposition(self, coeffs_a, payoff, base_a, setup_std):
        grid = setup_std.grid
        rng = np.random.default_rng(21)
        a = sp.random_real_field(grid, rng, kmax=10, zero_mean=True)
        b = sp.random_real_field(grid, rng, kmax=10, zero_mean=True)
        al, be = 0.6, -1.4
        sols = {}
        for key, field in (("a", a), ("b", b), ("c", al * a + be * b)):
            pair, _ = lin.solve_linearized(coeffs_a, payoff, base_a,
                                           sp.ZeroMeanField(field),
                                           setup_std.picard, s=setup_std.s)
            sols[key] = pair
        defect = sols["c"].v_coeffs - al * sols["a"].v_coeffs - be * sols["b"].v_coeffs
        rel = (np.max(sp.sobolev_norm_arr(grid, defect, setup_std.s))
               / np.max(sp.sobolev_norm_arr(grid, sols["c"].v_coeffs, setup_std.s)))
        assert rel <= 1e-10

    def test_scaling_homogeneity(self, coeffs_a, payoff, base_a, setup_std):
        grid = setup_std.grid
        rng = np.random.default_rng(23)
        f = sp.random_real_field(grid, rng, kmax=8, zero_mean=True)
        lam = -2.5
        p1, _ = lin.solve_linearized(coeffs_a, payoff, base_a,
                                     sp.ZeroMeanField(f),
                                     setup_std.picard, s=setup_std.s)
        p2, _ = lin.solve_linearized(coeffs_a, payoff, base_a,
                                     sp.ZeroMeanField(lam * f),
                                     setup_std.picard, s=setup_std.s)
        n1 = np.max(sp.sobolev_norm_arr(grid, p1.v_coeffs, -setup_std.s))
        n2 = np.max(sp.sobolev_norm_arr(grid, p2.v_coeffs, -setup_std.s))
        assert n2 == pytest.approx(abs(lam) * n1, rel=1e-10)

    def test_zero_mass_datum_conserves_zero_mass(self, coeffs_a, payoff,
                                                 base_a, setup_std):
        grid = setup_std.grid
        rng = np.random.default_rng(29)
        f = sp.random_real_field(grid, rng, kmax=8, zero_mean=True)
        pair, _ = lin.solve_linearized(coeffs_a, payoff, base_a,
                                       sp.ZeroMeanField(f),
                                       setup_std.picard, s=setup_std.s)
        assert np.max(np.abs(pair.mu_coeffs[:, 0])) < 1e-15

    def test_dirac_mass_constant_in_time(self, coeffs_a, payoff, base_a,
                                         setup_std):
        pair, _ = lin.solve_linearized(coeffs_a, payoff, base_a,
                                       sp.DiracAt((1.0,)),
                                       setup_std.picard, s=setup_std.s)
        col = pair.mu_coeffs[:, 0]
        assert np.max(np.abs(col - col[0])) < 1e-14

    def test_terminal_coupling_exact(self, coeffs_a, payoff, base_a, setup_std):
        grid = setup_std.grid
        rng = np.random.default_rng(31)
        f = sp.random_real_field(grid, rng, kmax=8, zero_mean=True)
        pair, _ = lin.solve_linearized(coeffs_a, payoff, base_a,
                                       sp.ZeroMeanField(f),
                                       setup_std.picard, s=setup_std.s)
        n = setup_std.time_grid.n_steps
        expected = model.dg_dm_apply(payoff, base_a.m_field(n), pair.mu_field(n))
        assert np.max(np.abs(pair.v_coeffs[n] - expected.coeffs)) < 1e-15

    def test_nonconvergence_raises(self, coeffs_a, payoff, base_a, setup_std):
        pic = mfg.PicardParams(tol=1e-18, max_iter=2)
        with pytest.raises(NonConvergenceError):
            lin.solve_linearized(coeffs_a, payoff, base_a, sp.DiracAt((0.5,)),
                                 pic, s=setup_std.s)


class TestPerModeOracle:
    def test_uniform_separable_base_matches_scalar_recursion(self, grid64,
                                                             ham_c):
        """Frozen at the uniform base, the system decouples per mode; a scalar
        integrating-factor recursion reproduces the solver exactly."""
        payoff = model.builtin_payoff()
        tg = mfg.TimeGrid(0.0, 0.1, 40)
        n = tg.n_steps
        mbar = sp.uniform_density(grid64)
        base = mfg.PathPair(
            grid64, tg,
            np.zeros((n + 1,) + grid64.shape, dtype=complex),
            np.broadcast_to(mbar.coeffs, (n + 1,) + grid64.shape).copy())
        coeffs = lin.freeze_coefficients(ham_c, base)

        k = 3
        datum = np.zeros(grid64.shape, dtype=complex)
        datum[k] = 1.0
        pic = mfg.PicardParams(tol=1e-13, max_iter=300, damping=1.0)
        v, mu, _, _, _ = lin.solve_linearized_batch(
            coeffs, payoff, base, datum[None], pic, s=6.0, stages=(0.0,))

        # scalar replication of the same sweeps at mode k
        dt = tg.dt
        decay = np.exp(-float(k ** 2) * dt)
        what = float(payoff.kernel_symbol(np.array([float(k ** 2)]))[0])
        gprime = 1.0 / np.cosh(1.0 / (2 * np.pi)) ** 2
        mb = 1.0 / (2 * np.pi)
        v_sc = np.zeros(n + 1, dtype=complex)
        mu_sc = np.zeros(n + 1, dtype=complex)
        first = True
        prev = (v_sc.copy(), mu_sc.copy())
        for _ in range(300):
            mu_new = np.zeros(n + 1, dtype=complex)
            mu_new[0] = 1.0
            for i in range(n):
                # flux = mbar * d_x v; div = ik * flux_hat = -k^2 mbar v
                div = -float(k ** 2) * mb * v_sc[i]
                mu_new[i + 1] = decay * (mu_new[i] + dt * div)
            v_new = np.zeros(n + 1, dtype=complex)
            v_new[n] = what * gprime * mu_new[n]
            for i in range(n - 1, -1, -1):
                src = 1.0 * mu_new[i + 1]  # d_q H = 1
                v_new[i] = decay * (v_new[i + 1] - dt * src)
            if not first and (np.max(np.abs(v_new - prev[0]))
                              + np.max(np.abs(mu_new - prev[1]))) < 1e-15:
                v_sc, mu_sc = v_new, mu_new
                break
            first = False
            prev = (v_new, mu_new)
            v_sc, mu_sc = v_new, mu_new

        assert np.max(np.abs(v[:, 0, k] - v_sc)) < 1e-12
        assert np.max(np.abs(mu[:, 0, k] - mu_sc)) < 1e-12
        # all other modes stay empty
        mask = np.ones(64, dtype=bool)
        mask[k] = False
        assert np.max(np.abs(v[:, 0, mask])) < 1e-15


class TestNegativeNormTrace:
    def test_zero_datum_sentinel(self, coeffs_a, payoff, base_a, setup_std):
        zero = sp.ZeroMeanField(sp.constant_field(setup_std.grid, 0.0))
        pair, _ = lin.solve_linearized(coeffs_a, payoff, base_a, zero,
                                       setup_std.picard, s=setup_std.s)
        report = lin.negative_norm_trace(pair, setup_std.s)
        row = report.rows[0]
        assert row["sup_v"] == 0.0
        assert np.isnan(row["ratio_v"])

    def test_dirac_trace_measurements(self, coeffs_a, payoff, base_a,
                                      setup_std):
        pair, _ = lin.solve_linearized(coeffs_a, payoff, base_a,
                                       sp.DiracAt((2.0,)),
                                       setup_std.picard, s=setup_std.s)
        report = lin.negative_norm_trace(pair, setup_std.s)
        row = report.rows[0]
        assert row["mu0_norm"] == pytest.approx(0.16039555927830815, rel=1e-12)
        assert 0 < row["ratio_v"] < 10.0
        assert row["grad_v_integral"] > 0
        assert row["grad_mu_integral"] > 0
