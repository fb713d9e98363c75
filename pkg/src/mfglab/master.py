"""Master function U, the measure-derivative kernel K, and residual checks.

U(t0, x, m0) is read off the backward component of the MFG solve started at
(t0, m0).  The kernel K(t0, x, m0, y) collects, column by column, the value
perturbation produced by a Dirac probe at y; with probes on the full grid the
pairing of K against any band-limited zero-mass perturbation reproduces the
direct linearized solve exactly (up to solver tolerance).

The master-equation residual assembles all five terms at (t0, ., m0):
the time derivative by a one-sided difference (re-solving at t0 + h_t), the
Laplacian and Hamiltonian spectrally, and the two nonlocal terms by
spectrally accurate trapezoid quadrature in y.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputShapeError, PartialKernelError, UnsupportedGridError
from .linearized import freeze_coefficients, solve_linearized_batch
from .mfg import PathPair, SolveDiagnostics, _drift_divergence, solve_mfg
from .model import ClampCounter, compose, g_eval
from .spectral import (
    TWO_PI,
    SpectralField,
    dirac_coeffs,
    forward_coeffs,
    inverse_values,
    sobolev_norm_arr,
    torus_grid,
    uniform_density,
)

_KERNEL_MAGIC = b"MFGK"
_KERNEL_VERSION = 1


@dataclass(frozen=True)
class MasterEvaluation:
    """One evaluation U(t0, ., m0) together with its generating trajectory."""

    t0: float
    m0: SpectralField
    u0: SpectralField
    base: Optional[PathPair]
    diagnostics: Optional[SolveDiagnostics]


def evaluate_master(ham, payoff, m0, setup):
    """Solve the MFG on [t0, T] and read off the t0 slice of the value."""
    tg = setup.time_grid
    base, diag = solve_mfg(ham, payoff, m0, setup)
    return MasterEvaluation(tg.t0, m0, base.u_field(0), base, diag)


def evaluate_master_terminal(payoff, m0, t0):
    """Degenerate horizon t0 = T: U equals the terminal payoff exactly."""
    return MasterEvaluation(t0, m0, g_eval(payoff, m0), None, None)


def full_probe_grid(grid):
    """All grid nodes as probe points, shape (n^d, d), row-major."""
    nodes = grid.nodes().reshape(grid.d, -1)
    return nodes.T.copy()


def probe_line(n_probes):
    """Uniform probe points on [0, 2pi) for d = 1 refinement studies."""
    return (TWO_PI * np.arange(n_probes) / n_probes)[:, None]


@dataclass(frozen=True)
class Kernel:
    """K(t0, x_i, m0, y_j): value response at x to a Dirac probe at y.

    ``column_coeffs`` holds one x-coefficient array per probe, shape
    (P,) + grid shape.  Columns are the real parts of the probe solves.
    """

    t0: float
    m0: SpectralField
    grid: "TorusGrid"
    probes: np.ndarray
    column_coeffs: np.ndarray

    @property
    def n_probes(self):
        return self.probes.shape[0]

    def values(self):
        """Real matrix of shape (n^d, P), x index row-major."""
        vals = inverse_values(self.grid, self.column_coeffs).real
        return vals.reshape(self.n_probes, -1).T.copy()

    def normalized(self, m0=None):
        """The variant K - <K, m0> with the m0-average removed per x."""
        m0 = self.m0 if m0 is None else m0
        w = m0.values().reshape(-1) * self.grid.cell_volume
        vals = self.values()
        avg = vals @ w
        shifted = vals - avg[:, None]
        cols = forward_coeffs(self.grid, shifted.T.reshape(
            (self.n_probes,) + self.grid.shape))
        return Kernel(self.t0, self.m0, self.grid, self.probes, cols)

    def pair_with(self, mu0):
        """Trapezoid quadrature of K(t0, x, .) against a smooth density mu0.

        Requires probes on the full grid; exact for band-limited mu0 up to
        solver tolerance.
        """
        _require_full_grid(self)
        w = mu0.values().reshape(-1) * self.grid.cell_volume
        return self.values() @ w


def _require_full_grid(kernel):
    grid = kernel.grid
    if kernel.n_probes != grid.size:
        raise UnsupportedGridError(
            f"operation needs the full {grid.size}-point probe grid, "
            f"got {kernel.n_probes} probes")
    if not np.allclose(kernel.probes, full_probe_grid(grid)):
        raise UnsupportedGridError("probes are not the grid nodes")


def _hermitize(grid, coeffs):
    """Project batched coefficient arrays onto real-valued fields."""
    vals = inverse_values(grid, coeffs).real
    return forward_coeffs(grid, vals)


def extract_kernel(ham, payoff, m0, setup, probes=None, *,
                   base=None, coeffs=None, stages=None):
    """Assemble K by one batched linearized solve over all Dirac probes."""
    grid = setup.grid
    if probes is None:
        probes = full_probe_grid(grid)
    probes = np.asarray(probes, dtype=float)
    if probes.ndim != 2 or probes.shape[1] != grid.d:
        raise InputShapeError(f"probes must have shape (P, {grid.d})")
    if base is None:
        base, _ = solve_mfg(ham, payoff, m0, setup)
    if coeffs is None:
        coeffs = freeze_coefficients(ham, base)
    data = np.stack([dirac_coeffs(grid, y) for y in probes])
    kwargs = {} if stages is None else {"stages": stages}
    v, _, _, per_elem, _ = solve_linearized_batch(
        coeffs, payoff, base, data, setup.picard, s=setup.s,
        negative=True, strict=False, **kwargs)
    failed = [j for j in range(probes.shape[0]) if per_elem[j] > setup.picard.tol]
    if failed:
        raise PartialKernelError(
            f"{len(failed)} of {probes.shape[0]} probe solves failed to converge",
            failed_probes=failed)
    columns = _hermitize(grid, v[0])
    return Kernel(setup.time_grid.t0, m0, grid, probes, columns)


def _probe_axis_grid(kernel):
    """The y-side torus grid the probes discretize."""
    grid = kernel.grid
    p = kernel.n_probes
    if grid.d == 1:
        n = p
        expected = probe_line(n)
        if not np.allclose(kernel.probes, expected):
            raise UnsupportedGridError("probes must be uniform on [0, 2pi)")
        return torus_grid(1, n)
    _require_full_grid(kernel)
    return grid


def kernel_y_derivative(kernel, order=1):
    """Spectral y-differentiation of K across the probe axis.

    Returns an array of shape (d,)*order + (n^d, P) (axis indices first).
    """
    ygrid = _probe_axis_grid(kernel)
    vals = kernel.values()  # (n^d, P)
    rows = vals.reshape((vals.shape[0],) + ygrid.shape)
    hat = forward_coeffs(ygrid, rows)
    if order == 1:
        out = np.stack([inverse_values(ygrid, 1j * ygrid.dkvec[j] * hat).real
                        for j in range(ygrid.d)])
        return out.reshape((ygrid.d, vals.shape[0], kernel.n_probes))
    if order == 2:
        d = ygrid.d
        out = np.empty((d, d, vals.shape[0], kernel.n_probes))
        for i in range(d):
            for j in range(d):
                sym = -ygrid.dkvec[i] * ygrid.dkvec[j]
                out[i, j] = inverse_values(ygrid, sym * hat).real.reshape(
                    vals.shape[0], kernel.n_probes)
        return out
    raise InputShapeError(f"unsupported derivative order {order}")


def wasserstein_gradient(kernel):
    """grad_w U(t0, x, m0)(y) = grad_y K and its y-divergence.

    Returns (grad, div): grad has shape (d, n^d, P), div (the y-Laplacian of
    K) has shape (n^d, P).  Needs probes on the full y-grid.
    """
    _require_full_grid(kernel)
    grad = kernel_y_derivative(kernel, order=1)
    hess = kernel_y_derivative(kernel, order=2)
    div = sum(hess[j, j] for j in range(grad.shape[0]))
    return grad, div


@dataclass(frozen=True)
class MasterResidual:
    values: np.ndarray       # residual on the x-grid nodes
    sup_norm: float
    parts: dict


def master_residual(ham, payoff, m0, setup, *, h_t=None, kernel=None,
                    base=None):
    """Pointwise residual of the master equation at (t0, ., m0)."""
    grid, tg = setup.grid, setup.time_grid
    if h_t is None:
        h_t = tg.dt
    steps = max(1, int(round(h_t / tg.dt)))
    if abs(steps * tg.dt - h_t) > 1e-12 * max(1.0, abs(h_t)):
        raise InputShapeError("h_t must be a multiple of dt")

    if base is None:
        base, _ = solve_mfg(ham, payoff, m0, setup)
    if kernel is None:
        kernel = extract_kernel(ham, payoff, m0, setup, base=base)

    u0_hat = base.u_coeffs[0]
    u0_vals = inverse_values(grid, u0_hat).real

    shifted, _ = solve_mfg(ham, payoff, m0, setup.shifted(steps))
    uh_vals = inverse_values(grid, shifted.u_coeffs[0]).real
    du_dt = (uh_vals - u0_vals) / (steps * tg.dt)

    lap_u = inverse_values(grid, -grid.ksq * u0_hat).real

    ugrad = np.stack([1j * grid.dkvec[j] * u0_hat for j in range(grid.d)])
    comp = compose(ham, ("h", "grad_p"), tg.t0, ugrad, base.m_coeffs[0], grid)
    h_vals = inverse_values(grid, comp["h"]).real
    dp_vals = inverse_values(grid, comp["grad_p"]).real.reshape(grid.d, -1)

    grad_k, div_k = wasserstein_gradient(kernel)
    m0_vals = m0.values().reshape(-1)
    w = m0_vals * grid.cell_volume
    nonlocal_div = div_k @ w
    nonlocal_drift = sum(grad_k[j] @ (dp_vals[j] * w) for j in range(grid.d))

    residual = (-du_dt - lap_u + h_vals
                - nonlocal_div.reshape(grid.shape)
                + nonlocal_drift.reshape(grid.shape))
    parts = {
        "du_dt": du_dt, "laplacian": lap_u, "hamiltonian": h_vals,
        "nonlocal_div": nonlocal_div.reshape(grid.shape),
        "nonlocal_drift": nonlocal_drift.reshape(grid.shape),
    }
    return MasterResidual(residual, float(np.max(np.abs(residual))), parts)


def uniqueness_consistency(ham, payoff, m0, setup):
    """Self-consistency of U along its own characteristic flow.

    Evolves the density forward with the drift built from U (re-solving the
    MFG at every node) and measures sup_t ||U(t, ., m_t) - u(t, .)||_{H^1}
    against the base solution.  For the one-step scheme the flow reproduces
    the base path up to accumulated Picard tolerance.
    """
    grid, tg = setup.grid, setup.time_grid
    base, _ = solve_mfg(ham, payoff, m0, setup)
    n = tg.n_steps
    dt = tg.dt
    decay = np.exp(-grid.ksq * dt)
    times = tg.nodes()
    clamp = ClampCounter()

    m_hat = np.array(m0.coeffs)
    defects = []
    for k in range(n):
        sub = setup if k == 0 else setup.shifted(k)
        ev = evaluate_master(ham, payoff, SpectralField(grid, m_hat), sub)
        u_hat = ev.u0.coeffs
        defects.append(float(np.max(sobolev_norm_arr(
            grid, u_hat - base.u_coeffs[k], 1.0))))
        div_hat = _drift_divergence(ham, times[k], u_hat, m_hat, grid, clamp)
        m_hat = decay * (m_hat + dt * div_hat)
    terminal = g_eval(payoff, SpectralField(grid, m_hat))
    defects.append(float(np.max(sobolev_norm_arr(
        grid, terminal.coeffs - base.u_coeffs[n], 1.0))))
    return max(defects), defects


# ---------------------------------------------------------------------------
# Kernel serialization ("MFGK"): header then row-major float64 values.
# The format carries no probe coordinates or base density; probes are
# reconstructed as the canonical uniform layout on read.


def write_kernel(kernel, stream):
    grid = kernel.grid
    stream.write(_KERNEL_MAGIC)
    stream.write(struct.pack("<BBII", _KERNEL_VERSION, grid.d,
                             grid.n_per_dim, kernel.n_probes))
    stream.write(np.ascontiguousarray(kernel.values(), dtype="<f8").tobytes())


def read_kernel(stream):
    magic = stream.read(4)
    if magic != _KERNEL_MAGIC:
        raise InputShapeError(f"bad kernel magic {magic!r}")
    version, d, n, p = struct.unpack("<BBII", stream.read(10))
    if version != _KERNEL_VERSION:
        raise InputShapeError(f"unsupported kernel version {version}")
    grid = torus_grid(d, n)
    vals = np.frombuffer(stream.read(8 * grid.size * p), dtype="<f8")
    vals = vals.reshape(grid.size, p)
    if p == grid.size:
        probes = full_probe_grid(grid)
    elif d == 1:
        probes = probe_line(p)
    else:
        raise UnsupportedGridError(
            f"cannot reconstruct probe layout for d={d}, P={p}")
    cols = forward_coeffs(grid, vals.T.reshape((p,) + grid.shape))
    return Kernel(0.0, uniform_density(grid), grid, probes, cols)


def kernel_to_bytes(kernel):
    buf = io.BytesIO()
    write_kernel(kernel, buf)
    return buf.getvalue()


def kernel_from_bytes(data):
    return read_kernel(io.BytesIO(data))
