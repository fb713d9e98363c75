"""Parameter sweeps that verify the quantitative estimates empirically.

Each study emits a StudyReport: one row per sweep point, least-squares rate
fits where a rate is asserted, and verdicts that name the threshold they were
judged against.  A rate fit with R^2 below 0.98 is reported as inconclusive,
never as a pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MfgLabError
from .linearized import freeze_coefficients, solve_linearized, solve_linearized_batch
from .master import kernel_y_derivative
from .mfg import solve_mfg
from .model import dg_dm_apply, g_eval
from .report import StudyReport, Verdict, fit_loglog, rate_verdict, spread_verdict
from .spectral import (
    TWO_PI,
    DiracAt,
    SpectralField,
    ZeroMeanField,
    analyze,
    forward_coeffs,
    sobolev_norm,
    sobolev_norm_arr,
    synthesize_datum,
)

TAYLOR_SLOPE_FLOOR = 1.25 - 0.05  # the guaranteed 5/4 exponent, minus tolerance


@dataclass(frozen=True)
class TaylorTriple:
    """Measured norms for one epsilon of the Taylor sweep."""

    eps: float
    z_sup: float          # sup_t ||u~ - u - v||_{H^r}
    dm0_hminus: float     # ||m0 - m0~||_{H^-1}
    dm0_hs: float         # ||m0 - m0~||_{H^s}


def default_direction(grid, amplitude=1.0):
    """The fixed zero-mean sweep direction cos(x) + 0.5 cos(2x + 1)."""
    x = grid.nodes()[0]
    return analyze(grid, amplitude * (np.cos(x) + 0.5 * np.cos(2.0 * x + 1.0)))


def taylor_rate_study(ham, payoff, m0, chi, eps_list, setup, *,
                      noise_floor_factor=100.0, workers=1):
    """Measured decay rate of z = u~ - u - v against the perturbation size.

    Solves the base problem once, the linearized system once (v scales
    linearly in epsilon), and the perturbed problem per epsilon.  The fit
    window drops the largest epsilon and any epsilon whose remainder norm is
    within ``noise_floor_factor`` of the Picard tolerance.  Sweep points are
    independent; ``workers`` > 1 fans them out to a thread pool.
    """
    grid, tg = setup.grid, setup.time_grid
    base, _ = solve_mfg(ham, payoff, m0, setup)
    coeffs = freeze_coefficients(ham, base)
    vpair, _ = solve_linearized(coeffs, payoff, base, ZeroMeanField(chi),
                                setup.picard, s=setup.s)
    chi_hminus = sobolev_norm(chi, -1.0)
    chi_hs = sobolev_norm(chi, setup.s)

    eps_sorted = sorted(eps_list, reverse=True)

    def solve_one(eps):
        try:
            return solve_mfg(ham, payoff, m0 + eps * chi, setup)[0]
        except MfgLabError as exc:
            return exc

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solved = list(pool.map(solve_one, eps_sorted))
    else:
        solved = [solve_one(eps) for eps in eps_sorted]

    rows = []
    triples = []
    n_term = tg.n_steps
    for eps, pert in zip(eps_sorted, solved):
        if isinstance(pert, MfgLabError):
            rows.append({"eps": eps, "status": f"failed: {pert}"})
            continue
        z = pert.u_coeffs - base.u_coeffs - eps * vpair.v_coeffs
        z_sup = float(np.max(sobolev_norm_arr(grid, z, setup.r)))

        # re-verify the terminal identity z(T) = G(m~_T) - G(m_T) - dG/dm mu_T
        m_t = base.m_field(n_term)
        rhs = (g_eval(payoff, pert.m_field(n_term)) - g_eval(payoff, m_t)
               - eps * dg_dm_apply(payoff, m_t, vpair.mu_field(n_term)))
        term_defect = float(sobolev_norm_arr(
            grid, z[n_term] - rhs.coeffs, setup.r))

        triples.append(TaylorTriple(eps, z_sup, eps * chi_hminus, eps * chi_hs))
        rows.append({"eps": eps, "z_sup": z_sup,
                     "dm0_hminus": eps * chi_hminus, "dm0_hs": eps * chi_hs,
                     "term_defect": term_defect, "status": "ok"})

    ordered = sorted(triples, key=lambda tr: tr.eps)
    floor = noise_floor_factor * setup.picard.tol
    window = [tr for tr in ordered[:-1] if tr.z_sup >= floor]
    fits = {}
    verdicts = []
    if len(window) >= 2:
        z_vals = np.array([tr.z_sup for tr in window])
        for key, ctrl in (("slope_hminus", [tr.dm0_hminus for tr in window]),
                          ("slope_hs", [tr.dm0_hs for tr in window])):
            fits[key] = fit_loglog(np.array(ctrl), z_vals)
            verdicts.append(rate_verdict(key, fits[key], TAYLOR_SLOPE_FLOOR))
    else:
        verdicts.append(Verdict("slope_hminus", "inconclusive", float("nan"),
                                f"fit window too small ({len(window)} points)"))
    term_max = max((row["term_defect"] for row in rows if "term_defect" in row),
                   default=float("nan"))
    term_tol = 10.0 * setup.picard.tol
    verdicts.append(Verdict(
        "terminal_identity", "pass" if term_max <= term_tol else "fail",
        term_max, f"max terminal-identity defect <= {term_tol:g}"))

    return StudyReport(
        name=f"taylor-rate[{ham.name}]",
        parameter="eps",
        rows=rows,
        fits=fits,
        verdicts=verdicts,
        metadata={"hamiltonian": ham.name, "payoff": payoff.name,
                  "r": setup.r, "s": setup.s,
                  "chi_hminus": chi_hminus, "noise_floor": floor,
                  "columns": "z_sup: sup_t ||z||_{H^r}; dm0_hminus/hs: "
                             "perturbation size in the two control norms"},
    )


def stability_study(ham, payoff, m0_pairs, setup):
    """Ratio of trajectory distance to initial-density distance, per pair."""
    grid = setup.grid
    rows = []
    cache = {}

    def solve_cached(m0):
        key = m0.coeffs.tobytes()
        if key not in cache:
            cache[key] = solve_mfg(ham, payoff, m0, setup)[0]
        return cache[key]

    for m0_a, m0_b in m0_pairs:
        den = sobolev_norm(m0_a - m0_b, 0.0) ** 2
        try:
            pa = solve_cached(m0_a)
            pb = solve_cached(m0_b)
        except MfgLabError as exc:
            rows.append({"dm0_l2_sq": den, "status": f"failed: {exc}"})
            continue
        du = sobolev_norm_arr(grid, pa.u_coeffs - pb.u_coeffs, 1.0) ** 2
        dm = sobolev_norm_arr(grid, pa.m_coeffs - pb.m_coeffs, 0.0) ** 2
        num = float(np.max(du + dm))
        rows.append({"dm0_l2_sq": den, "numerator": num,
                     "ratio": num / den if den > 0 else float("nan"),
                     "status": "ok"})

    ratios = [row.get("ratio", float("nan")) for row in rows]
    verdicts = [spread_verdict("stability_ratio_spread", ratios, 3.0)]
    return StudyReport(
        name=f"stability[{ham.name}]",
        parameter="dm0_l2_sq",
        rows=rows,
        verdicts=verdicts,
        metadata={"hamiltonian": ham.name, "payoff": payoff.name,
                  "columns": "numerator: sup_t(||du||^2_{H^1} + ||dm||^2_{L^2}); "
                             "ratio: numerator / ||dm0||^2_{L^2}"},
    )


def hminus_bound_study(ham, payoff, m0, datum_family, setup, *, base=None,
                       coeffs=None):
    """Uniformity of sup_t ||v||_{H^-s} / ||mu_0||_{H^-s-1} over a datum family.

    ``datum_family`` is a list of (label, datum) pairs; a None datum is the
    zero-data sentinel row.  All data are solved in one batch.
    """
    grid = setup.grid
    s = setup.s
    if base is None:
        base, _ = solve_mfg(ham, payoff, m0, setup)
    if coeffs is None:
        coeffs = freeze_coefficients(ham, base)

    labels = []
    stack = []
    for label, datum in datum_family:
        labels.append(label)
        if datum is None:
            stack.append(np.zeros(grid.shape, dtype=np.complex128))
        elif isinstance(datum, SpectralField):
            stack.append(datum.coeffs)
        else:
            stack.append(synthesize_datum(datum, grid).coeffs)
    data = np.stack(stack)
    v, mu, _, _, _ = solve_linearized_batch(
        coeffs, payoff, base, data, setup.picard, s=s, negative=True)

    v_norms = sobolev_norm_arr(grid, v, -s)          # (N+1, B)
    mu0_norms = sobolev_norm_arr(grid, data, -s - 1.0)
    rows = []
    mode_ratios = []
    for b, label in enumerate(labels):
        sup_v = float(np.max(v_norms[:, b]))
        mu0n = float(mu0_norms[b])
        ratio = sup_v / mu0n if mu0n > 0 else float("nan")
        row = {"datum": label, "mu0_norm": mu0n, "sup_v": sup_v,
               "ratio_v": ratio}
        if label.startswith("mode:"):
            row["k"] = int(label.split(":", 1)[1])
            mode_ratios.append((row["k"], ratio))
        rows.append(row)

    ratios = [row["ratio_v"] for row in rows]
    verdicts = [spread_verdict("hminus_ratio_spread", ratios, 10.0)]
    if len(mode_ratios) >= 3:
        mode_ratios.sort()
        diffs = np.diff([r for _, r in mode_ratios])
        growing = bool(np.all(diffs > 0))
        verdicts.append(Verdict(
            "no_monotone_growth_in_k", "fail" if growing else "pass",
            float(diffs.max()), "mode ratios must not grow monotonically in k"))
    return StudyReport(
        name=f"hminus-bound[{ham.name}]",
        parameter="datum",
        rows=rows,
        verdicts=verdicts,
        metadata={"hamiltonian": ham.name, "payoff": payoff.name, "s": s,
                  "columns": "ratio_v: sup_t ||v||_{H^-s} / ||mu0||_{H^-s-1}"},
    )


def mode_datum(grid, k):
    """The complex exponential e^{i k x_1} as an initial perturbation."""
    coeffs = np.zeros(grid.shape, dtype=np.complex128)
    idx = (k % grid.n_per_dim,) + (0,) * (grid.d - 1)
    coeffs[idx] = 1.0
    return SpectralField(grid, coeffs)


def standard_datum_family(grid, modes=range(2, 17), n_diracs=8):
    """The acceptance family: Fourier modes, Dirac probes, zero sentinel."""
    family = [("zero", None)]
    family += [(f"mode:{k}", mode_datum(grid, k)) for k in modes]
    ys = TWO_PI * (np.arange(n_diracs) + 0.5) / n_diracs
    family += [(f"dirac:{y:.6f}", DiracAt((float(y),) * grid.d)) for y in ys]
    return family


def _columns_coeffs(grid, matrix):
    """x-coefficients of a (n^d, P) value matrix, shape (P,) + grid shape."""
    p = matrix.shape[1]
    return forward_coeffs(grid, matrix.T.reshape((p,) + grid.shape))


def _lipschitz_family(grid, coeff_cols, dy, s):
    """Cyclic adjacent difference quotients in H^{-s}; coeff_cols: (P,)+shape."""
    diff = np.roll(coeff_cols, -1, axis=0) - coeff_cols
    return sobolev_norm_arr(grid, diff, -s) / dy


def kernel_lipschitz_ratios(kernel, s):
    """Difference-quotient families for K, grad_y K and D2_yy K (d = 1)."""
    grid = kernel.grid
    p = kernel.n_probes
    dy = TWO_PI / p
    fam_k = _lipschitz_family(grid, kernel.column_coeffs, dy, s)
    grad = kernel_y_derivative(kernel, 1)
    hess = kernel_y_derivative(kernel, 2)
    d = grad.shape[0]
    grad_cols = np.stack([_columns_coeffs(grid, grad[j]) for j in range(d)])
    fam_grad = np.sqrt(sum(_lipschitz_family(grid, grad_cols[j], dy, s) ** 2
                           for j in range(d)))
    fam_hess = np.sqrt(sum(
        _lipschitz_family(grid, _columns_coeffs(grid, hess[i, j]), dy, s) ** 2
        for i in range(d) for j in range(d)))
    return fam_k, fam_grad, fam_hess


def kernel_regularity_study(kernel, s, *, refined=None, spread_limit=10.0,
                            growth_limit=1.25):
    """Lipschitz-in-y regularity of the kernel and its first two y-derivatives."""
    fam_k, fam_grad, fam_hess = kernel_lipschitz_ratios(kernel, s)
    p = kernel.n_probes
    dy = TWO_PI / p
    rows = [{"y": float(kernel.probes[j, 0]), "dy": dy,
             "lip_k": float(fam_k[j]), "lip_grad": float(fam_grad[j]),
             "lip_hess": float(fam_hess[j])} for j in range(p)]
    verdicts = [
        spread_verdict("lip_k_spread", fam_k, spread_limit),
        spread_verdict("lip_grad_spread", fam_grad, spread_limit),
        spread_verdict("lip_hess_spread", fam_hess, spread_limit),
    ]
    metadata = {"s": s, "n_probes": p,
                "columns": "lip_*: ||column difference||_{H^-s} / |dy| for K, "
                           "grad_y K, D2_yy K over adjacent probes"}
    if refined is not None:
        ref_k, ref_grad, ref_hess = kernel_lipschitz_ratios(refined, s)
        for name, coarse, fine in (("k", fam_k, ref_k),
                                   ("grad", fam_grad, ref_grad),
                                   ("hess", fam_hess, ref_hess)):
            growth = float(np.max(fine) / np.max(coarse))
            verdicts.append(Verdict(
                f"lip_{name}_refinement_stable",
                "pass" if growth <= growth_limit else "fail", growth,
                f"max ratio growth under probe refinement <= {growth_limit}"))
        metadata["refined_probes"] = refined.n_probes
    return StudyReport(
        name="kernel-regularity",
        parameter="y",
        rows=rows,
        verdicts=verdicts,
        metadata=metadata,
    )
