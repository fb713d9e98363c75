"""Master function, kernel extraction, Wasserstein gradient, residual."""

import numpy as np
import pytest

from mfglab import master, mfg, model, spectral as sp
from mfglab.errors import PartialKernelError, UnsupportedGridError

MBAR = 1.0 / (2.0 * np.pi)


def decoupled_model():
    ham = model.builtin_hamiltonian("separable-quadratic", q_weight=0.0)
    payoff = model.builtin_payoff(g="zero", offset=lambda nodes: np.cos(nodes[0]))
    return ham, payoff


def synthetic_kernel(grid, fn):
    """Kernel with prescribed values K(x, y) = fn(x, y) on the full grid."""
    probes = master.full_probe_grid(grid)
    x = grid.nodes()[0]
    cols = np.stack([sp.analyze(grid, fn(x, float(y[0]))).coeffs
                     for y in probes])
    return master.Kernel(0.0, sp.uniform_density(grid), grid, probes, cols)


class TestEvaluateMaster:
    def test_decoupled_value_ignores_density(self, grid64, setup_std):
        ham, payoff = decoupled_model()
        x = grid64.nodes()[0]
        m1 = sp.analyze(grid64, MBAR * (1.0 + 0.3 * np.cos(x)))
        m2 = sp.analyze(grid64, MBAR * (1.0 - 0.05 * np.cos(2 * x)))
        e1 = master.evaluate_master(ham, payoff, m1, setup_std)
        e2 = master.evaluate_master(ham, payoff, m2, setup_std)
        diff = np.max(np.abs(e1.u0.coeffs - e2.u0.coeffs))
        assert diff < 1e-11

    def test_terminal_limit(self, grid64, ham_a, payoff, m0_bump):
        # u0 -> G(., m0) as the horizon shrinks; equality at t0 = T
        target = model.g_eval(payoff, m0_bump)
        errs = []
        for horizon in (0.02, 0.01, 0.005):
            setup = mfg.ProblemSetup(grid64, mfg.TimeGrid(0.0, horizon, 40),
                                     mfg.PicardParams(tol=1e-11))
            ev = master.evaluate_master(ham_a, payoff, m0_bump, setup)
            errs.append(sp.sobolev_norm(ev.u0 - target, 0.0))
        assert all(a > b for a, b in zip(errs, errs[1:]))
        term = master.evaluate_master_terminal(payoff, m0_bump, 0.1)
        assert np.array_equal(term.u0.coeffs, target.coeffs)

    def test_bit_stable_across_reruns(self, grid64, ham_a, payoff, m0_bump):
        setup = mfg.ProblemSetup(grid64, mfg.TimeGrid(0.0, 0.05, 50),
                                 mfg.PicardParams(tol=1e-10))
        e1 = master.evaluate_master(ham_a, payoff, m0_bump, setup)
        e2 = master.evaluate_master(ham_a, payoff, m0_bump, setup)
        assert np.array_equal(e1.u0.coeffs, e2.u0.coeffs)

    def test_slice_is_exact_base_node(self, ham_a, payoff, m0_bump, setup_std):
        ev = master.evaluate_master(ham_a, payoff, m0_bump, setup_std)
        assert np.array_equal(ev.u0.coeffs, ev.base.u_coeffs[0])


class TestKernel:
    def test_decoupled_kernel_is_zero(self, grid64, m0_bump):
        # d_q H = 0 and m-independent G: the perturbation never reaches v
        ham, payoff = decoupled_model()
        setup = mfg.ProblemSetup(grid64, mfg.TimeGrid(0.0, 0.1, 50),
                                 mfg.PicardParams(tol=1e-10))
        kern = master.extract_kernel(ham, payoff, m0_bump, setup)
        assert np.max(np.abs(kern.values())) == 0.0

    def test_representation_reproduces_direct_solve(self, kernel_a64, coeffs_a,
                                                    payoff, base_a, setup_std):
        from mfglab.linearized import solve_linearized
        grid = setup_std.grid
        rng = np.random.default_rng(41)
        for _ in range(3):
            mu0 = sp.random_real_field(grid, rng, kmax=12, zero_mean=True)
            direct, _ = solve_linearized(coeffs_a, payoff, base_a,
                                         sp.ZeroMeanField(mu0),
                                         setup_std.picard, s=setup_std.s)
            v_direct = direct.v_field(0).values()
            v_kernel = kernel_a64.pair_with(mu0)
            scale = np.max(np.abs(v_direct))
            assert np.max(np.abs(v_kernel - v_direct)) <= 1e-6 * scale

    def test_columns_match_single_probe_solves(self, kernel_a64, coeffs_a,
                                               payoff, base_a, setup_std):
        from mfglab.linearized import solve_linearized
        j = 17
        y = kernel_a64.probes[j]
        pair, _ = solve_linearized(coeffs_a, payoff, base_a,
                                   sp.DiracAt(tuple(y)),
                                   setup_std.picard, s=setup_std.s)
        col = kernel_a64.values()[:, j]
        direct = pair.v_field(0).values()
        assert np.max(np.abs(col - direct)) < 1e-9

    def test_lipschitz_in_probe(self, kernel_a64, setup_std):
        vals = kernel_a64.column_coeffs
        dy = 2 * np.pi / kernel_a64.n_probes
        diffs = sp.sobolev_norm_arr(setup_std.grid,
                                    np.roll(vals, -1, axis=0) - vals,
                                    -setup_std.s) / dy
        assert np.max(diffs) / np.min(diffs) < 10.0

    def test_normalized_variant_has_zero_average(self, kernel_a64, m0_bump):
        norm_kern = kernel_a64.normalized()
        grid = kernel_a64.grid
        w = m0_bump.values() * grid.spacing
        avg = norm_kern.values() @ w
        assert np.max(np.abs(avg)) < 1e-12

    def test_failed_probes_reported(self, grid64, ham_a, payoff, m0_bump,
                                    base_a, coeffs_a, setup_std):
        from dataclasses import replace
        bad = replace(setup_std, picard=mfg.PicardParams(tol=1e-18, max_iter=1))
        with pytest.raises(PartialKernelError) as err:
            master.extract_kernel(ham_a, payoff, m0_bump, bad,
                                  master.probe_line(4),
                                  base=base_a, coeffs=coeffs_a)
        assert len(err.value.failed_probes) > 0


class TestWassersteinGradient:
    def test_zero_kernel(self, grid64):
        kern = synthetic_kernel(grid64, lambda x, y: np.zeros_like(x))
        grad, div = master.wasserstein_gradient(kern)
        assert np.max(np.abs(grad)) == 0.0
        assert np.max(np.abs(div)) == 0.0

    def test_cos_y(self, grid64):
        kern = synthetic_kernel(grid64, lambda x, y: np.full_like(x, np.cos(y)))
        grad, _ = master.wasserstein_gradient(kern)
        ys = kern.probes[:, 0]
        assert np.max(np.abs(grad[0] - (-np.sin(ys))[None, :])) < 1e-12

    def test_divergence_of_cos_2y(self, grid64):
        kern = synthetic_kernel(grid64,
                                lambda x, y: np.full_like(x, np.cos(2 * y)))
        _, div = master.wasserstein_gradient(kern)
        ys = kern.probes[:, 0]
        assert np.max(np.abs(div - (-4.0 * np.cos(2 * ys))[None, :])) < 1e-11

    def test_partial_probe_grid_rejected(self, grid64):
        probes = master.probe_line(8)
        cols = np.zeros((8,) + grid64.shape, dtype=complex)
        kern = master.Kernel(0.0, sp.uniform_density(grid64), grid64, probes,
                             cols)
        with pytest.raises(UnsupportedGridError):
            master.wasserstein_gradient(kern)

    def test_divergence_integrates_to_zero(self, kernel_a64):
        # closed-manifold integration by parts: int div_y(grad_w) dy = 0 per x
        _, div = master.wasserstein_gradient(kernel_a64)
        grid = kernel_a64.grid
        integral = div.sum(axis=1) * grid.spacing
        assert np.max(np.abs(integral)) < 1e-10


class TestResidualAndUniqueness:
    def test_decoupled_residual_small_and_refining(self, grid64, m0_bump):
        ham, payoff = decoupled_model()
        pic = mfg.PicardParams(tol=1e-12)
        r = {}
        for n in (50, 100):
            setup = mfg.ProblemSetup(grid64, mfg.TimeGrid(0.0, 0.1, n), pic)
            r[n] = master.master_residual(ham, payoff, m0_bump, setup).sup_norm
        assert r[50] / r[100] >= 1.8
        assert r[100] < 0.01

    def test_uniqueness_decoupled(self, grid64, m0_bump):
        ham, payoff = decoupled_model()
        setup = mfg.ProblemSetup(grid64, mfg.TimeGrid(0.0, 0.1, 20),
                                 mfg.PicardParams(tol=1e-11))
        defect, history = master.uniqueness_consistency(ham, payoff, m0_bump,
                                                        setup)
        assert defect <= 10 * setup.picard.tol
        assert len(history) == 21

    def test_uniqueness_fixture_a(self, grid64, ham_a, payoff, m0_bump):
        for n in (20, 40):
            setup = mfg.ProblemSetup(grid64, mfg.TimeGrid(0.0, 0.1, n),
                                     mfg.PicardParams(tol=1e-10))
            defect, _ = master.uniqueness_consistency(ham_a, payoff, m0_bump,
                                                      setup)
            # the flow reproduces the one-step base path modulo Picard noise
            # at every matching resolution
            assert defect <= 10 * setup.picard.tol


class TestKernelSerialization:
    def test_round_trip(self, kernel_a64):
        data = master.kernel_to_bytes(kernel_a64)
        back = master.kernel_from_bytes(data)
        assert back.n_probes == kernel_a64.n_probes
        assert np.allclose(back.values(), kernel_a64.values(), atol=1e-14)

    def test_header_layout(self, grid64):
        kern = synthetic_kernel(grid64, lambda x, y: np.cos(x) * np.cos(y))
        data = master.kernel_to_bytes(kern)
        assert data[:4] == b"MFGK"
        assert data[4] == 1       # version
        assert data[5] == 1       # dimension
        assert int.from_bytes(data[6:10], "little") == 64
        assert int.from_bytes(data[10:14], "little") == 64
        vals = np.frombuffer(data[14:], dtype="<f8")
        assert vals.size == 64 * 64
