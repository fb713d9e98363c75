"""Hamiltonian and terminal-payoff abstractions with analytic derivatives.

Built-in Hamiltonians (vectorized over nodes; ``x`` has shape (d,)+grid,
``p`` has shape (d,)+grid, ``q`` has the grid shape):

* ``coupled-quadratic``   H = 1/2 |p|^2 + p_1 q   (non-separable, polynomial)
* ``sin-log``             H = sin(|p|^2) ln(1 + q^2)
* ``separable-quadratic`` H = pw * 1/2 |p|^2 + qw * q

The payoff is the smoothing functional G(x, m) = offset(x) + [W * g(m)](x),
acting spectrally as multiplication by the kernel symbol What(k).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (AuditDomainError, DensityDomainError, InputShapeError,
                     NonlinearityDomainError)
from .report import StudyReport, Verdict, fit_loglog, rate_verdict
from .spectral import (
    SpectralField,
    forward_coeffs,
    inverse_values,
    pad_spectrum,
    sobolev_norm,
    truncate_spectrum,
    random_real_field,
    uniform_density,
)


class ClampCounter:
    """Tracks how many refined-grid density evaluations hit the floor."""

    def __init__(self):
        self.clamped = 0
        self.total = 0

    def add(self, clamped, total):
        self.clamped += int(clamped)
        self.total += int(total)

    @property
    def fraction(self):
        return self.clamped / self.total if self.total else 0.0

    @property
    def flagged(self):
        return self.fraction > 1e-3


@dataclass(frozen=True)
class HamiltonianSpec:
    """Closed-form H(t, x, p, q) with analytic derivatives up to second order."""

    name: str
    eval: Callable
    grad_p: Callable
    d_q: Callable
    hess_pp: Callable
    cross_pq: Callable
    q_domain_floor: float = 1.0e-8


@dataclass(frozen=True)
class PayoffSpec:
    """Terminal payoff G(x, m) = offset(x) + [W * g(m)](x)."""

    name: str
    kernel_symbol: Callable  # |k|^2 array -> What array
    g: Callable
    g_prime: Callable
    offset: Optional[Callable] = None  # node coordinates (d,)+grid -> values


def _eye_like(d, q):
    out = np.zeros((d, d) + q.shape)
    for i in range(d):
        out[i, i] = 1.0
    return out


def builtin_hamiltonian(name, **params):
    if name == "coupled-quadratic":
        def h_eval(t, x, p, q):
            return 0.5 * np.sum(p * p, axis=0) + p[0] * q

        def h_grad(t, x, p, q):
            out = np.array(p, copy=True)
            out[0] = out[0] + q
            return out

        def h_dq(t, x, p, q):
            return np.array(p[0], copy=True)

        def h_hess(t, x, p, q):
            return _eye_like(p.shape[0], q)

        def h_cross(t, x, p, q):
            out = np.zeros_like(p)
            out[0] = 1.0
            return out

        return HamiltonianSpec(name, h_eval, h_grad, h_dq, h_hess, h_cross)

    if name == "sin-log":
        def h_eval(t, x, p, q):
            return np.sin(np.sum(p * p, axis=0)) * np.log1p(q * q)

        def h_grad(t, x, p, q):
            s2 = np.sum(p * p, axis=0)
            return 2.0 * p * np.cos(s2) * np.log1p(q * q)

        def h_dq(t, x, p, q):
            return np.sin(np.sum(p * p, axis=0)) * 2.0 * q / (1.0 + q * q)

        def h_hess(t, x, p, q):
            d = p.shape[0]
            s2 = np.sum(p * p, axis=0)
            lg = np.log1p(q * q)
            out = 2.0 * np.cos(s2) * _eye_like(d, q)
            out = out - 4.0 * np.sin(s2) * p[:, None] * p[None, :]
            return out * lg

        def h_cross(t, x, p, q):
            s2 = np.sum(p * p, axis=0)
            return 2.0 * p * np.cos(s2) * 2.0 * q / (1.0 + q * q)

        return HamiltonianSpec(name, h_eval, h_grad, h_dq, h_hess, h_cross)

    if name == "separable-quadratic":
        pw = float(params.pop("p_weight", 1.0))
        qw = float(params.pop("q_weight", 1.0))

        def h_eval(t, x, p, q):
            return pw * 0.5 * np.sum(p * p, axis=0) + qw * q

        def h_grad(t, x, p, q):
            return pw * np.array(p, copy=True)

        def h_dq(t, x, p, q):
            return np.full(q.shape, qw)

        def h_hess(t, x, p, q):
            return pw * _eye_like(p.shape[0], q)

        def h_cross(t, x, p, q):
            return np.zeros_like(p)

        return HamiltonianSpec(f"{name}(pw={pw},qw={qw})",
                               h_eval, h_grad, h_dq, h_hess, h_cross)

    raise InputShapeError(f"unknown hamiltonian {name!r}")


_PAYOFF_G = {
    "tanh": (np.tanh, lambda q: 1.0 / np.cosh(q) ** 2),
    "identity": (lambda q: np.array(q, copy=True), lambda q: np.ones_like(q)),
    "zero": (lambda q: np.zeros_like(q), lambda q: np.zeros_like(q)),
}


def builtin_payoff(decay=1.0, g="tanh", offset=None, zero_mean_kernel=False):
    """Gaussian kernel symbol What(k) = exp(-decay |k|^2) with a pointwise g.

    With ``zero_mean_kernel`` the interaction kernel W has zero mean
    (What(0) = 0), which removes the neutral mass channel from the terminal
    coupling; W stays smooth and rapidly decaying.
    """
    if g not in _PAYOFF_G:
        raise InputShapeError(f"unknown payoff nonlinearity {g!r}")
    g_fn, gp_fn = _PAYOFF_G[g]
    decay = float(decay)

    def symbol(ksq):
        out = np.exp(-decay * ksq)
        if zero_mean_kernel:
            out = np.where(ksq == 0, 0.0, out)
        return out

    return PayoffSpec(
        name=f"gauss(decay={decay},g={g},zero_mean={zero_mean_kernel})",
        kernel_symbol=symbol,
        g=g_fn,
        g_prime=gp_fn,
        offset=offset,
    )


# ---------------------------------------------------------------------------
# Dealiased compositions along a base (u, m)

_SELECTORS = ("h", "grad_p", "d_q", "hess_pp", "cross_pq")


def synth_fine(grid, coeffs):
    """Complex nodal values on the dealiasing grid (batched)."""
    fine = grid.refined()
    return inverse_values(fine, pad_spectrum(grid, coeffs))


def analyze_fine(grid, values):
    """Project refined-grid values back onto the retained mode set (batched).

    Accepts real or complex values; linear solves carry complex data.
    """
    fine = grid.refined()
    return truncate_spectrum(grid, forward_coeffs(fine, values))


def fine_density(ham, grid, m_coeffs, clamp=None):
    """Synthesize the density on the refined grid and apply the clamp policy."""
    q_raw = synth_fine(grid, m_coeffs).real
    if not np.all(np.isfinite(q_raw)):
        raise DensityDomainError("density synthesis produced non-finite values")
    q = np.maximum(q_raw, ham.q_domain_floor)
    if clamp is not None:
        clamp.add(np.count_nonzero(q_raw < ham.q_domain_floor), q_raw.size)
    return q_raw, q


def compose(ham, which, t, ugrad_coeffs, m_coeffs, grid, clamp=None):
    """Compose selected Hamiltonian derivative fields on the base (u, m).

    ``ugrad_coeffs`` has shape (d,) + grid shape.  Returns a dict mapping each
    selector to a retained-mode coefficient array (scalar, (d,...) or
    (d,d,...) shaped according to the derivative order).
    """
    fine = grid.refined()
    p = synth_fine(grid, ugrad_coeffs).real
    _, q = fine_density(ham, grid, m_coeffs, clamp)
    x = fine.nodes()
    fns = {"h": ham.eval, "grad_p": ham.grad_p, "d_q": ham.d_q,
           "hess_pp": ham.hess_pp, "cross_pq": ham.cross_pq}
    out = {}
    for name in which:
        if name not in fns:
            raise InputShapeError(f"unknown selector {name!r}")
        vals = np.asarray(fns[name](t, x, p, q), dtype=float)
        if not np.all(np.isfinite(vals)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(vals))[0])
            raise NonlinearityDomainError(
                f"{ham.name}:{name} returned a non-finite value", node=bad)
        out[name] = analyze_fine(grid, vals)
    return out


def h_fields(ham, t, u_grad, m, which, clamp=None):
    """Public composed-field access; returns SpectralField(s) per selector."""
    grid = m.grid
    ugrad = np.stack([f.coeffs for f in u_grad])
    res = compose(ham, (which,), t, ugrad, m.coeffs, grid, clamp)[which]
    if which in ("h", "d_q"):
        return SpectralField(grid, res)
    if which in ("grad_p", "cross_pq"):
        return tuple(SpectralField(grid, res[j]) for j in range(grid.d))
    return tuple(tuple(SpectralField(grid, res[i, j]) for j in range(grid.d))
                 for i in range(grid.d))


def g_eval(payoff, m):
    """Terminal payoff field G(., m) = offset + W * g(m)."""
    grid = m.grid
    gm = analyze_fine(grid, payoff.g(synth_fine(grid, m.coeffs).real))
    coeffs = payoff.kernel_symbol(grid.ksq) * gm
    if payoff.offset is not None:
        coeffs = coeffs + forward_coeffs(grid, np.asarray(payoff.offset(grid.nodes()),
                                                          dtype=float))
    return SpectralField(grid, coeffs)


def dg_dm_coeffs(payoff, grid, m_coeffs, mu_coeffs):
    """delta G / delta m action W * (g'(m) mu) at coefficient level (batched mu)."""
    gp = payoff.g_prime(synth_fine(grid, m_coeffs).real)
    mu_fine = synth_fine(grid, mu_coeffs)
    return payoff.kernel_symbol(grid.ksq) * analyze_fine(grid, gp * mu_fine)


def dg_dm_apply(payoff, m, mu):
    """Apply the payoff's measure derivative to a perturbation (linear in mu)."""
    return SpectralField(m.grid, dg_dm_coeffs(payoff, m.grid, m.coeffs, mu.coeffs))


# ---------------------------------------------------------------------------
# Assumption audit


def taylor_remainder_fields(ham, grid, t, u, u_tilde, m, m_tilde, clamp=None):
    """The quadratic remainders of H and of the divergence drift.

    F1 is the second-order Taylor remainder of H at (grad u, m) evaluated in
    the direction (grad(u~ - u), m~ - m); F2 is the corresponding remainder of
    the drift div(m D_p H).  Both are computed in a single refined-grid pass,
    so F1 = F2 = 0 exactly for zero increments.
    """
    fine = grid.refined()
    d = grid.d

    def grad_coeffs(f):
        return np.stack([1j * grid.dkvec[j] * f.coeffs for j in range(d)])

    p = synth_fine(grid, grad_coeffs(u)).real
    pt = synth_fine(grid, grad_coeffs(u_tilde)).real
    q_raw, q = fine_density(ham, grid, m.coeffs, clamp)
    q_raw_t, qt = fine_density(ham, grid, m_tilde.coeffs, clamp)
    x = fine.nodes()

    dp = ham.grad_p(t, x, p, q)
    dq = ham.d_q(t, x, p, q)
    hess = ham.hess_pp(t, x, p, q)
    cross = ham.cross_pq(t, x, p, q)
    dpt = ham.grad_p(t, x, pt, qt)

    dgrad = pt - p
    ddens = q_raw_t - q_raw

    f1_fine = (ham.eval(t, x, pt, qt) - ham.eval(t, x, p, q)
               - np.sum(dp * dgrad, axis=0) - dq * ddens)
    f1 = SpectralField(grid, analyze_fine(grid, f1_fine))

    # remainder flux of m D_p H; F2 is its divergence
    flux = (q_raw_t * dpt - q_raw * dp
            - ddens * dp
            - q_raw * np.einsum("ij...,j...->i...", hess, dgrad)
            - q_raw * cross * ddens)
    flux_hat = analyze_fine(grid, flux)
    f2_coeffs = sum(1j * grid.dkvec[j] * flux_hat[j] for j in range(d))
    f2 = SpectralField(grid, f2_coeffs)
    return f1, f2


def _default_corpus(ham, grid, rng, eps_list):
    """epsilon-family corpus around a smooth positive base (u, m)."""
    phi = random_real_field(grid, rng, kmax=4, amplitude=0.5)
    psi = random_real_field(grid, rng, kmax=4, amplitude=0.05, zero_mean=True)
    u = random_real_field(grid, rng, kmax=3, amplitude=0.4)
    m = uniform_density(grid) + random_real_field(grid, rng, kmax=3,
                                                  amplitude=0.02, zero_mean=True)
    return [(u, u + eps * phi, m, m + eps * psi) for eps in eps_list]


def audit_assumptions(ham, payoff, grid, *, r, s, radius=10.0, seed=0,
                      eps_list=None, corpus=None):
    """Numerical audit of the quadratic-remainder and payoff bounds.

    Reports, per epsilon, the remainder norms and the smallest constants that
    dominate them, plus the measured payoff constants kappa and Upsilon and a
    sampled Lipschitz constant for the supplied derivative callables.
    """
    rng = np.random.default_rng(seed)
    if eps_list is None:
        eps_list = [2.0 ** (-j) for j in range(2, 9)]
    fit_slopes = corpus is None
    if corpus is None:
        corpus = _default_corpus(ham, grid, rng, eps_list)
        eps_for_row = list(eps_list)
    else:
        eps_for_row = list(range(1, len(corpus) + 1))

    rows = []
    c1_max = 0.0
    c2_max = 0.0
    for eps, (u, ut, m, mt) in zip(eps_for_row, corpus):
        for f, l, label in ((u, r + 1, "u"), (ut, r + 1, "u~"),
                            (m, r, "m"), (mt, r, "m~")):
            nrm = sobolev_norm(f, l)
            if nrm > radius:
                raise AuditDomainError(
                    f"corpus entry {label} has H^{l} norm {nrm:.3g} > radius {radius}")
        f1, f2 = taylor_remainder_fields(ham, grid, 0.0, u, ut, m, mt)
        du1 = sobolev_norm(ut - u, r + 1)
        dm0 = sobolev_norm(mt - m, r)
        du0 = sobolev_norm(ut - u, r)
        dmm = sobolev_norm(mt - m, r - 1)
        n1 = sobolev_norm(f1, r)
        n2 = sobolev_norm(f2, r - 1)
        denom1 = du1 ** 4 + dm0 ** 4
        denom2 = du0 ** 4 + dmm ** 4
        c1 = n1 ** 2 / denom1 if denom1 > 0 else 0.0
        c2 = n2 ** 2 / denom2 if denom2 > 0 else 0.0
        c1_max = max(c1_max, c1)
        c2_max = max(c2_max, c2)
        rows.append({"eps": eps, "f1_norm": n1, "f2_norm": n2,
                     "du_Hr1": du1, "dm_Hr": dm0, "c1": c1, "c2": c2})

    # zero-increment exactness
    u0, _, m0, _ = corpus[0]
    f1z, f2z = taylor_remainder_fields(ham, grid, 0.0, u0, u0, m0, m0)
    zero_ok = sobolev_norm(f1z, r) == 0.0 and sobolev_norm(f2z, r - 1) == 0.0

    fits = {}
    verdicts = [Verdict("zero_increment_exact", "pass" if zero_ok else "fail",
                        0.0, "F1 = F2 = 0 exactly for zero increments")]
    if fit_slopes:
        eps_arr = np.array([row["eps"] for row in rows], dtype=float)
        for key, col in (("f1_slope", "f1_norm"), ("f2_slope", "f2_norm")):
            vals = np.array([row[col] for row in rows])
            ok = vals > 0
            fit = fit_loglog(eps_arr[ok], vals[ok])
            fits[key] = fit
            verdicts.append(rate_verdict(key, fit, 1.9))

    kappa, upsilon = _payoff_constants(payoff, grid, rng, s)
    h3 = _h3_lipschitz(ham, grid.d, rng)

    return StudyReport(
        name=f"audit-assumptions[{ham.name}]",
        parameter="eps",
        rows=rows,
        fits=fits,
        verdicts=verdicts,
        metadata={
            "hamiltonian": ham.name,
            "payoff": payoff.name,
            "r": r, "s": s, "seed": seed,
            "kappa": kappa, "upsilon": upsilon, "h3_lipschitz": h3,
            "columns": "eps: increment scale; f1_norm: ||F1||_{H^r}; "
                       "f2_norm: ||F2||_{H^{r-1}}; c1, c2: smallest dominating constants",
        },
    )


def _payoff_constants(payoff, grid, rng, s):
    """Empirical payoff constants: kappa dominating the squared smoothing
    bound ||dG/dm mu||^2_{H^s} <= kappa ||mu||^2_{H^{s-1}}, and Upsilon
    dominating ||G(m1) - G(m2)||^2_{H^1} <= Upsilon ||m1 - m2||^2_{L^2}."""
    kappa = 0.0
    upsilon = 0.0
    mbar = uniform_density(grid)
    for _ in range(8):
        m = mbar + random_real_field(grid, rng, kmax=4, amplitude=0.03, zero_mean=True)
        mu = random_real_field(grid, rng, kmax=6, amplitude=1.0, zero_mean=True)
        out = dg_dm_apply(payoff, m, mu)
        kappa = max(kappa, sobolev_norm(out, s) ** 2 / sobolev_norm(mu, s - 1) ** 2)
        m2 = mbar + random_real_field(grid, rng, kmax=4, amplitude=0.03, zero_mean=True)
        num = sobolev_norm(g_eval(payoff, m) - g_eval(payoff, m2), 1.0) ** 2
        den = sobolev_norm(m - m2, 0.0) ** 2
        if den > 0:
            upsilon = max(upsilon, num / den)
    return kappa, upsilon


def _h3_lipschitz(ham, d, rng, n_samples=100):
    """Sampled Lipschitz constant of the supplied derivatives in (p, q)."""
    best = 0.0
    t = 0.0
    x = np.zeros((d, 1))
    for _ in range(n_samples):
        p1 = rng.uniform(-1.0, 1.0, size=(d, 1))
        p2 = p1 + rng.uniform(-0.1, 0.1, size=(d, 1))
        q1 = rng.uniform(0.05, 1.0, size=(1,))
        q2 = q1 + rng.uniform(-0.02, 0.02, size=(1,))
        dist = float(np.sum(np.abs(p1 - p2)) + np.abs(q1 - q2).item())
        if dist == 0:
            continue
        diffs = [
            np.abs(ham.eval(t, x, p1, q1) - ham.eval(t, x, p2, q2)).max(),
            np.abs(ham.grad_p(t, x, p1, q1) - ham.grad_p(t, x, p2, q2)).max(),
            np.abs(ham.d_q(t, x, p1, q1) - ham.d_q(t, x, p2, q2)).max(),
            np.abs(ham.hess_pp(t, x, p1, q1) - ham.hess_pp(t, x, p2, q2)).max(),
            np.abs(ham.cross_pq(t, x, p1, q1) - ham.cross_pq(t, x, p2, q2)).max(),
        ]
        best = max(best, max(diffs) / dist)
    return best
