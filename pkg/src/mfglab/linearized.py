"""Linearized forward-backward system around a converged MFG solution.

The coefficient fields are frozen once per base solution; the linear system
is then integrated with the same Lawson-Euler sweeps and damped Picard
coupling as the nonlinear solver, with a finite Friedrichs mollification
schedule applied to the data and source terms (final stage unmollified).

Solves are batched over initial data: all Dirac probes of a kernel
extraction run through one set of sweeps with a leading batch axis.

For distributional data the Picard defect is measured in (H^{-s}, H^{-s-1});
the H^{s-1} norm of a truncated Dirac sits at the float64 roundoff floor, and
the negative pair is the space the solution actually lives in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, NonConvergenceError
from .mfg import SolveDiagnostics
from .model import (ClampCounter, analyze_fine, compose, dg_dm_coeffs,
                    fine_density, synth_fine)
from .report import StudyReport
from .spectral import (
    DiracAt,
    DiracGradientAt,
    SpectralField,
    gradient_norm_arr,
    mollifier_symbol,
    sobolev_norm_arr,
    synthesize_datum,
)

DEFAULT_STAGES = (0.5, 0.25, 0.125, 0.0)


@dataclass(frozen=True)
class FrozenCoefficients:
    """Linearization coefficient fields composed on the base (u, m), per node.

    Shapes: dp (N+1, d, grid), dq (N+1, grid), m_hess (N+1, d, d, grid) for
    m D^2_pp H, m_cross (N+1, d, grid) for m D_p(d_q H).
    """

    grid: "TorusGrid"
    time_grid: "TimeGrid"
    dp: np.ndarray
    dq: np.ndarray
    m_hess: np.ndarray
    m_cross: np.ndarray


def freeze_coefficients(ham, base, clamp=None):
    """Compose all four coefficient families along the base trajectory."""
    grid, tg = base.grid, base.time_grid
    if clamp is None:
        clamp = ClampCounter()
    n_nodes = tg.n_steps + 1
    d = grid.d
    times = tg.nodes()
    dp = np.empty((n_nodes, d) + grid.shape, dtype=np.complex128)
    dq = np.empty((n_nodes,) + grid.shape, dtype=np.complex128)
    m_hess = np.empty((n_nodes, d, d) + grid.shape, dtype=np.complex128)
    m_cross = np.empty((n_nodes, d) + grid.shape, dtype=np.complex128)
    for i in range(n_nodes):
        u_hat = base.u_coeffs[i]
        m_hat = base.m_coeffs[i]
        ugrad = np.stack([1j * grid.dkvec[j] * u_hat for j in range(d)])
        parts = compose(ham, ("grad_p", "d_q"), times[i], ugrad, m_hat, grid, clamp)
        dp[i] = parts["grad_p"]
        dq[i] = parts["d_q"]
        # m-weighted second derivatives in one refined-grid pass
        p = synth_fine(grid, ugrad).real
        q_raw, q = fine_density(ham, grid, m_hat, clamp)
        x = grid.refined().nodes()
        m_hess[i] = analyze_fine(grid, q_raw * np.asarray(
            ham.hess_pp(times[i], x, p, q), dtype=float))
        m_cross[i] = analyze_fine(grid, q_raw * np.asarray(
            ham.cross_pq(times[i], x, p, q), dtype=float))
    return FrozenCoefficients(grid, tg, dp, dq, m_hess, m_cross)


@dataclass(frozen=True)
class LinearizedPair:
    """(v, mu) trajectories for one initial datum."""

    grid: "TorusGrid"
    time_grid: "TimeGrid"
    v_coeffs: np.ndarray
    mu_coeffs: np.ndarray
    datum: object

    def v_field(self, i):
        return SpectralField(self.grid, self.v_coeffs[i])

    def mu_field(self, i):
        return SpectralField(self.grid, self.mu_coeffs[i])


def _is_distributional(datum):
    return isinstance(datum, (DiracAt, DiracGradientAt))


def _fine_coefficient_values(grid, coeffs):
    return synth_fine(grid, coeffs)


class _FineCoefficients:
    """Refined-grid nodal values of the frozen coefficients, cached per solve."""

    def __init__(self, coeffs):
        self.grid = coeffs.grid
        self.dp = _fine_coefficient_values(self.grid, coeffs.dp).real
        self.dq = _fine_coefficient_values(self.grid, coeffs.dq).real
        self.m_hess = _fine_coefficient_values(self.grid, coeffs.m_hess).real
        self.m_cross = _fine_coefficient_values(self.grid, coeffs.m_cross).real


def _grad_fine(grid, hat):
    """Refined-grid gradient values of a batched coefficient array."""
    stacked = np.stack([1j * grid.dkvec[j] * hat for j in range(grid.d)])
    return synth_fine(grid, stacked)


def _backward_v_sweep(fine, payoff, base, mu_path, grid, tg, moll):
    """v(T) = J_eps((dG/dm)(m_T) mu_T); backward integrating-factor steps."""
    n = tg.n_steps
    dt = tg.dt
    decay = np.exp(-grid.ksq * dt)
    v = np.empty_like(mu_path)
    v[n] = moll * dg_dm_coeffs(payoff, grid, base.m_coeffs[n], mu_path[n])
    for i in range(n - 1, -1, -1):
        gv = _grad_fine(grid, v[i + 1])                       # (d, B, fine)
        mu_fine = synth_fine(grid, mu_path[i + 1])            # (B, fine)
        src = (np.sum(fine.dp[i + 1][:, None] * gv, axis=0)
               + fine.dq[i + 1] * mu_fine)
        v[i] = decay * (v[i + 1] - dt * moll * analyze_fine(grid, src))
        if not np.all(np.isfinite(v[i])):
            raise BlowUpError("linearized backward sweep blew up", time_index=i)
    return v


def _forward_mu_sweep(fine, v_path, mu0_hat, grid, tg, moll):
    """Forward sweep of the linearized continuity equation (divergence form)."""
    n = tg.n_steps
    dt = tg.dt
    d = grid.d
    decay = np.exp(-grid.ksq * dt)
    mu = np.empty_like(v_path)
    mu[0] = moll * mu0_hat
    for i in range(n):
        gv = _grad_fine(grid, v_path[i])                      # (d, B, fine)
        mu_fine = synth_fine(grid, mu[i])                     # (B, fine)
        flux = (fine.dp[i][:, None] * mu_fine
                + np.einsum("jl...,lb...->jb...", fine.m_hess[i], gv)
                + fine.m_cross[i][:, None] * mu_fine)
        flux_hat = analyze_fine(grid, flux)                   # (d, B, shape)
        div_hat = sum(1j * grid.dkvec[j] * flux_hat[j] for j in range(d))
        mu[i + 1] = decay * (mu[i] + dt * moll * div_hat)
        if not np.all(np.isfinite(mu[i + 1])):
            raise BlowUpError("linearized forward sweep blew up", time_index=i + 1)
    return mu


def solve_linearized_batch(coeffs, payoff, base, mu0_hats, picard, *, s,
                           stages=DEFAULT_STAGES, negative=False, strict=True):
    """Solve the linearized system for a batch of initial data.

    ``mu0_hats`` has shape (B,) + grid shape.  Returns (v_paths, mu_paths)
    with shape (N+1, B) + grid shape, the iteration count, the per-element
    final defects and the defect history.  With ``strict`` unset,
    non-convergence returns the last iterate instead of raising; callers can
    inspect the per-element defects.
    """
    grid, tg = coeffs.grid, coeffs.time_grid
    fine = _FineCoefficients(coeffs)
    n_nodes = tg.n_steps + 1
    batch = mu0_hats.shape[0]
    iv, imu = (-s, -s - 1.0) if negative else (s, s - 1.0)

    v_prev = np.zeros((n_nodes, batch) + grid.shape, dtype=np.complex128)
    mu_prev = np.broadcast_to(mu0_hats, (n_nodes, batch) + grid.shape).copy()
    theta = picard.damping
    history = []
    iterations = 0
    first_update = True
    per_elem = np.full(batch, np.inf)
    for stage_index, eps in enumerate(stages):
        moll = mollifier_symbol(grid, eps)
        data = moll * mu0_hats
        last_stage = stage_index == len(stages) - 1
        inner = picard.max_iter if last_stage else 1
        for _ in range(inner):
            iterations += 1
            mu_raw = _forward_mu_sweep(fine, v_prev, mu0_hats, grid, tg, moll)
            if first_update:
                mu_new = mu_raw
                first_update = False
            else:
                mu_new = theta * mu_raw + (1.0 - theta) * mu_prev
            mu_new[0] = data  # the datum itself is never damped
            v_new = _backward_v_sweep(fine, payoff, base, mu_new, grid, tg, moll)
            dv = np.max(sobolev_norm_arr(grid, v_new - v_prev, iv), axis=0)
            dmu = np.max(sobolev_norm_arr(grid, mu_new - mu_prev, imu), axis=0)
            per_elem = dv + dmu
            defect = float(np.max(per_elem))
            history.append(defect)
            v_prev, mu_prev = v_new, mu_new
            if last_stage and defect <= picard.tol:
                return v_prev, mu_prev, iterations, per_elem, history
    if strict:
        raise NonConvergenceError(
            f"linearized Picard coupling did not reach tol {picard.tol} "
            f"(last defect {history[-1]:.3e})", defect_history=history)
    return v_prev, mu_prev, iterations, per_elem, history


def solve_linearized(coeffs, payoff, base, mu0, picard, *, s,
                     stages=DEFAULT_STAGES):
    """Solve for a single datum (a DistributionalDatum or a SpectralField)."""
    grid = coeffs.grid
    datum = mu0
    if isinstance(mu0, SpectralField):
        field = mu0
    else:
        field = synthesize_datum(mu0, grid)
    negative = _is_distributional(datum)
    v, mu, iters, per_elem, history = solve_linearized_batch(
        coeffs, payoff, base, field.coeffs[None], picard, s=s,
        stages=stages, negative=negative)
    pair = LinearizedPair(grid, coeffs.time_grid, v[:, 0], mu[:, 0], datum)
    diag = SolveDiagnostics(iters, float(per_elem[0]), 0.0, True, history)
    return pair, diag


def negative_norm_trace(pair, s):
    """Negative-norm observables of one solved pair.

    Reports sup_t ||v||_{H^{-s}}, sup_t ||mu||_{H^{-s-1}}, their ratios to
    ||mu_0||_{H^{-s-1}}, and the time-integrated gradient terms from the
    energy argument.
    """
    grid, tg = pair.grid, pair.time_grid
    v_norms = sobolev_norm_arr(grid, pair.v_coeffs, -s)
    mu_norms = sobolev_norm_arr(grid, pair.mu_coeffs, -s - 1.0)
    mu0_norm = float(mu_norms[0])
    sup_v = float(np.max(v_norms))
    sup_mu = float(np.max(mu_norms))
    times = tg.nodes()
    grad_v_sq = gradient_norm_arr(grid, pair.v_coeffs, -s) ** 2
    grad_mu_sq = gradient_norm_arr(grid, pair.mu_coeffs, -s - 1.0) ** 2
    row = {
        "mu0_norm": mu0_norm,
        "sup_v": sup_v,
        "sup_mu": sup_mu,
        "ratio_v": sup_v / mu0_norm if mu0_norm > 0 else float("nan"),
        "ratio_mu": sup_mu / mu0_norm if mu0_norm > 0 else float("nan"),
        "grad_v_integral": float(np.trapezoid(grad_v_sq, times)),
        "grad_mu_integral": float(np.trapezoid(grad_mu_sq, times)),
    }
    return StudyReport(
        name="negative-norm-trace",
        parameter="mu0_norm",
        rows=[row],
        metadata={"s": s, "datum": repr(pair.datum)},
    )
