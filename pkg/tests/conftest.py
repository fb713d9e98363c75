"""Shared fixtures: the desk-scale problem and expensive solves, built once."""

import numpy as np
import pytest

from mfglab import (
    PicardParams,
    ProblemSetup,
    TimeGrid,
    analyze,
    builtin_hamiltonian,
    builtin_payoff,
    solve_mfg,
    torus_grid,
)
from mfglab.linearized import freeze_coefficients
from mfglab.master import extract_kernel

MBAR = 1.0 / (2.0 * np.pi)


@pytest.fixture(scope="session")
def grid64():
    return torus_grid(1, 64)


@pytest.fixture(scope="session")
def m0_bump(grid64):
    x = grid64.nodes()[0]
    return analyze(grid64, MBAR * (1.0 + 0.3 * np.cos(x)))


@pytest.fixture(scope="session")
def ham_a():
    return builtin_hamiltonian("coupled-quadratic")


@pytest.fixture(scope="session")
def ham_b():
    return builtin_hamiltonian("sin-log")


@pytest.fixture(scope="session")
def ham_c():
    return builtin_hamiltonian("separable-quadratic")


@pytest.fixture(scope="session")
def payoff():
    return builtin_payoff()


@pytest.fixture(scope="session")
def setup_std(grid64):
    """Desk scale: d=1, n=64, horizon 0.1, 200 steps, tight Picard."""
    return ProblemSetup(grid64, TimeGrid(0.0, 0.1, 200),
                        PicardParams(tol=1e-10), radius=2.0)


@pytest.fixture(scope="session")
def base_a(ham_a, payoff, m0_bump, setup_std):
    pair, diag = solve_mfg(ham_a, payoff, m0_bump, setup_std)
    assert diag.converged
    return pair


@pytest.fixture(scope="session")
def coeffs_a(ham_a, base_a):
    return freeze_coefficients(ham_a, base_a)


@pytest.fixture(scope="session")
def kernel_a64(ham_a, payoff, m0_bump, setup_std, base_a, coeffs_a):
    return extract_kernel(ham_a, payoff, m0_bump, setup_std,
                          base=base_a, coeffs=coeffs_a)
