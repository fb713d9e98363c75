"""Configuration-driven command-line front end.

Subcommands write their artifacts (CSV tables, rendered figures, binary
snapshots) into the output directory together with a ``run.log``.  Exit
status: 0 on success/pass, 2 when a study verdict fails, 1 on error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cache import ArtifactCache, NullCache
from .config import load_config, parse_datum, parse_field
from .errors import MfgLabError
from .experiments import (
    default_direction,
    hminus_bound_study,
    kernel_regularity_study,
    standard_datum_family,
    stability_study,
    taylor_rate_study,
)
from .figures import render_report
from .linearized import freeze_coefficients, negative_norm_trace, solve_linearized
from .master import (
    extract_kernel,
    kernel_from_bytes,
    kernel_to_bytes,
    master_residual,
    probe_line,
    uniqueness_consistency,
)
from .mfg import TimeGrid, pair_from_bytes, pair_to_bytes, path_to_bytes, solve_mfg
from .model import audit_assumptions
from .report import StudyReport, Verdict
from .spectral import sobolev_norm

logger = logging.getLogger("mfglab")

SUBCOMMANDS = (
    "solve-mfg", "solve-linearized", "extract-kernel", "check-master",
    "taylor-rate", "stability", "hminus-bound", "kernel-regularity",
    "audit-assumptions", "norms",
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mfglab",
        description="Pseudo-spectral laboratory for the MFG master equation "
                    "on the flat torus.")
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE",
                        help="override a config entry (repeatable)")
    parser.add_argument("--cache-dir", default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    return parser


class RunContext:
    def __init__(self, cfg, out_dir, cache):
        self.cfg = cfg
        self.out = out_dir
        self.cache = cache
        self.setup = cfg.setup()
        self.ham = cfg.hamiltonian()
        self.payoff = cfg.payoff()
        self.grid = cfg.grid()

    def base_payload(self, **extra):
        payload = {sec: self.cfg.sections.get(sec, {})
                   for sec in ("problem", "hamiltonian", "payoff", "picard")}
        payload.update(extra)
        return payload

    def cached_base(self, m0):
        payload = self.base_payload(op="solve-mfg")

        def produce():
            pair, diag = solve_mfg(self.ham, self.payoff, m0, self.setup)
            logger.info("solve-mfg: %d iterations, defect %.3e",
                        diag.picard_iterations, diag.final_defect)
            return pair_to_bytes(pair)

        data = self.cache.get_or_compute("mfg-path", payload, produce)
        return pair_from_bytes(data, self.setup.time_grid)

    def cached_kernel(self, m0, n_probes=None):
        payload = self.base_payload(op="extract-kernel", probes=n_probes or "full")

        def produce():
            probes = None if n_probes is None else probe_line(n_probes)
            base = self.cached_base(m0)
            kern = extract_kernel(self.ham, self.payoff, m0, self.setup, probes,
                                  base=base)
            return kernel_to_bytes(kern)

        return kernel_from_bytes(self.cache.get_or_compute(
            "kernel", payload, produce))


def _emit_study(ctx, report, name):
    report.metadata.setdefault("config_hash", ctx.cfg.content_hash())
    csv_path = ctx.out / f"{name}.csv"
    report.write_csv(csv_path)
    fig_path = render_report(report, ctx.out / f"{name}.png")
    logger.info("wrote %s%s", csv_path, f" and {fig_path}" if fig_path else "")
    print(report.summary_line())
    return 0 if report.passed else 2


def cmd_norms(ctx):
    cfg = ctx.cfg
    field = parse_field(ctx.grid, str(cfg.get("norms", "field", "constant:1.0")),
                        seed=cfg.seed)
    indices = [float(tok) for tok in
               str(cfg.get("norms", "indices", "-6,-1,0,1,6")).split(",") if tok]
    rows = []
    for l in indices:
        val = sobolev_norm(field, l)
        print(f"H^{l:g} norm = {val!r}")
        rows.append({"index": l, "norm": val})
    report = StudyReport("norms", "index", rows,
                         metadata={"field": cfg.get("norms", "field", "constant:1.0")})
    return _emit_study(ctx, report, "norms")


def cmd_solve_mfg(ctx):
    m0 = ctx.cfg.m0()
    pair = ctx.cached_base(m0)
    (ctx.out / "u_path.mfgp").write_bytes(path_to_bytes(pair.grid, pair.u_coeffs))
    (ctx.out / "m_path.mfgp").write_bytes(path_to_bytes(pair.grid, pair.m_coeffs))
    print(f"solve-mfg: nodes={pair.n_nodes} "
          f"mass_dev={pair.mass_deviation():.3e} "
          f"u0_H1={sobolev_norm(pair.u_field(0), 1.0):.6e}")
    print(f"cache: hits={ctx.cache.hits} misses={ctx.cache.misses}")
    return 0


def cmd_solve_linearized(ctx):
    cfg = ctx.cfg
    m0 = cfg.m0()
    base = ctx.cached_base(m0)
    coeffs = freeze_coefficients(ctx.ham, base)
    datum = parse_datum(ctx.grid, str(cfg.get("linearized", "datum", "dirac:3.141592653589793")),
                        seed=cfg.seed)
    pair, diag = solve_linearized(coeffs, ctx.payoff, base, datum,
                                  ctx.setup.picard, s=ctx.setup.s)
    (ctx.out / "v_path.mfgp").write_bytes(path_to_bytes(ctx.grid, pair.v_coeffs))
    (ctx.out / "mu_path.mfgp").write_bytes(path_to_bytes(ctx.grid, pair.mu_coeffs))
    report = negative_norm_trace(pair, ctx.setup.s)
    print(f"solve-linearized: iterations={diag.picard_iterations} "
          f"defect={diag.final_defect:.3e}")
    return _emit_study(ctx, report, "linearized_trace")


def cmd_extract_kernel(ctx):
    cfg = ctx.cfg
    m0 = cfg.m0()
    spec = str(cfg.get("kernel", "probes", "full"))
    n_probes = None if spec == "full" else int(spec)
    kern = ctx.cached_kernel(m0, n_probes)
    (ctx.out / "kernel.mfgk").write_bytes(kernel_to_bytes(kern))
    vals = kern.values()
    print(f"extract-kernel: probes={kern.n_probes} sup|K|={np.max(np.abs(vals)):.6e}")
    print(f"cache: hits={ctx.cache.hits} misses={ctx.cache.misses}")
    return 0


def cmd_check_master(ctx):
    cfg = ctx.cfg
    m0 = cfg.m0()
    setup = ctx.setup
    h_steps = cfg.get_int("master", "h_t_steps", 1)
    res = master_residual(ctx.ham, ctx.payoff, m0, setup,
                          h_t=h_steps * setup.time_grid.dt)
    rows = [{"n_steps": setup.time_grid.n_steps,
             "h_t": h_steps * setup.time_grid.dt,
             "residual_sup": res.sup_norm}]
    verdicts = []
    if cfg.get_bool("master", "refine", "true"):
        tg = setup.time_grid
        fine_setup = replace(setup, time_grid=TimeGrid(tg.t0, tg.T, 2 * tg.n_steps))
        res2 = master_residual(ctx.ham, ctx.payoff, m0, fine_setup,
                               h_t=h_steps * fine_setup.time_grid.dt)
        rows.append({"n_steps": fine_setup.time_grid.n_steps,
                     "h_t": h_steps * fine_setup.time_grid.dt,
                     "residual_sup": res2.sup_norm})
        factor = res.sup_norm / res2.sup_norm if res2.sup_norm > 0 else float("inf")
        verdicts.append(Verdict("residual_refinement",
                                "pass" if factor >= 1.8 else "fail", factor,
                                "residual sup-norm drops by >= 1.8 when dt and "
                                "h_t are halved"))
    if cfg.get_bool("master", "uniqueness", "false"):
        steps = cfg.get_int("master", "uniq_steps", 40)
        tg = setup.time_grid
        uniq_setup = replace(setup, time_grid=TimeGrid(tg.t0, tg.T, steps))
        defect, _ = uniqueness_consistency(ctx.ham, ctx.payoff, m0, uniq_setup)
        rows.append({"n_steps": steps, "uniqueness_defect": defect})
        tol = 10.0 * setup.picard.tol
        verdicts.append(Verdict("uniqueness_consistency",
                                "pass" if defect <= tol else "fail", defect,
                                f"flow self-consistency defect <= {tol:g}"))
    report = StudyReport("check-master", "n_steps", rows, verdicts=verdicts,
                         metadata={"hamiltonian": ctx.ham.name,
                                   "payoff": ctx.payoff.name})
    return _emit_study(ctx, report, "check_master")


def cmd_taylor_rate(ctx):
    cfg = ctx.cfg
    m0 = cfg.m0()
    amp = cfg.get_float("taylor", "chi_amplitude", 0.25)
    chi_spec = cfg.get("taylor", "chi", None)
    if chi_spec:
        chi = amp * parse_field(ctx.grid, str(chi_spec), seed=cfg.seed)
    else:
        chi = default_direction(ctx.grid, amplitude=amp)
    pmin = cfg.get_int("taylor", "eps_pow_min", 3)
    pmax = cfg.get_int("taylor", "eps_pow_max", 9)
    eps = [2.0 ** (-j) for j in range(pmin, pmax + 1)]
    report = taylor_rate_study(ctx.ham, ctx.payoff, m0, chi, eps, ctx.setup,
                               workers=cfg.workers)
    return _emit_study(ctx, report, "taylor_rate")


def cmd_stability(ctx):
    cfg = ctx.cfg
    m0 = cfg.m0()
    amp = cfg.get_float("stability", "chi_amplitude", 0.05)
    chi = default_direction(ctx.grid, amplitude=amp)
    jmin = cfg.get_int("stability", "j_min", 1)
    jmax = cfg.get_int("stability", "j_max", 6)
    pairs = [(m0, m0 + (2.0 ** -j) * chi) for j in range(jmin, jmax + 1)]
    report = stability_study(ctx.ham, ctx.payoff, pairs, ctx.setup)
    return _emit_study(ctx, report, "stability")


def cmd_hminus_bound(ctx):
    cfg = ctx.cfg
    m0 = cfg.m0()
    kmin = cfg.get_int("hminus", "k_min", 2)
    kmax = cfg.get_int("hminus", "k_max", 16)
    n_diracs = cfg.get_int("hminus", "n_diracs", 8)
    family = standard_datum_family(ctx.grid, modes=range(kmin, kmax + 1),
                                   n_diracs=n_diracs)
    report = hminus_bound_study(ctx.ham, ctx.payoff, m0, family, ctx.setup)
    return _emit_study(ctx, report, "hminus_bound")


def cmd_kernel_regularity(ctx):
    cfg = ctx.cfg
    m0 = cfg.m0()
    kern = ctx.cached_kernel(m0)
    refine = cfg.get_int("kernel", "refine", 2 * ctx.grid.n_per_dim)
    refined = ctx.cached_kernel(m0, refine) if refine else None
    report = kernel_regularity_study(kern, ctx.setup.s, refined=refined)
    return _emit_study(ctx, report, "kernel_regularity")


def cmd_audit(ctx):
    cfg = ctx.cfg
    report = audit_assumptions(ctx.ham, ctx.payoff, ctx.grid,
                               r=ctx.setup.r, s=ctx.setup.s,
                               radius=cfg.get_float("audit", "radius", 50.0),
                               seed=cfg.seed)
    return _emit_study(ctx, report, "audit_assumptions")


_HANDLERS = {
    "norms": cmd_norms,
    "solve-mfg": cmd_solve_mfg,
    "solve-linearized": cmd_solve_linearized,
    "extract-kernel": cmd_extract_kernel,
    "check-master": cmd_check_master,
    "taylor-rate": cmd_taylor_rate,
    "stability": cmd_stability,
    "hminus-bound": cmd_hminus_bound,
    "kernel-regularity": cmd_kernel_regularity,
    "audit-assumptions": cmd_audit,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.workers is not None:
            cfg.sections.setdefault("run", {})["workers"] = str(args.workers)
        cfg.validate()
    except MfgLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out_dir = Path(args.out or cfg.get("run", "out_dir", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = args.cache_dir or cfg.get("run", "cache_dir", None)
    cache = ArtifactCache(cache_dir) if cache_dir else NullCache()

    handler = logging.FileHandler(out_dir / "run.log")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("mfglab")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    started = time.time()
    try:
        logger.info("command=%s config_hash=%s", args.command, cfg.content_hash())
        ctx = RunContext(cfg, out_dir, cache)
        code = _HANDLERS[args.command](ctx)
        logger.info("finished %s in %.2f s (cache hits=%d misses=%d) exit=%d",
                    args.command, time.time() - started, cache.hits,
                    cache.misses, code)
        return code
    except MfgLabError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    finally:
        root.removeHandler(handler)
        handler.close()


if __name__ == "__main__":
    sys.exit(main())
