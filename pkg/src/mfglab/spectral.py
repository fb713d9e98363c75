"""Spectral toolbox on the flat torus [0, 2pi)^d.

Conventions. A field f is represented by the coefficients

    fhat(k) = (2 pi)^{-d} \int e^{-i k.x} f(x) dx,   k in {-n/2, ..., n/2 - 1}^d,

stored in numpy FFT layout, so the forward transform of nodal values is
``fftn(values) / n^d`` and synthesis is ``ifftn(coeffs) * n^d``.  With this
normalization the constant 1 has unit L2 norm and the fractional norms are the
plain truncated sums

    ||f||_{H^l}^2 = sum_k |fhat(k)|^2 (1 + |k|^2)^l.

Nonlinearities are evaluated on a 2x zero-padded grid (every pairwise product
of retained modes is then alias-free).  The unpaired Nyquist mode -n/2 is
zeroed by padding, truncation and differentiation so real fields stay real.
"""

from __future__ import annotations

import functools
import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import InputShapeError, NonlinearityDomainError

TWO_PI = 2.0 * np.pi

_FIELD_MAGIC = b"MFGM"
_FIELD_VERSION = 1


@functools.lru_cache(maxsize=None)
def torus_grid(d, n_per_dim):
    """Cached grid factory; grids are immutable so sharing is safe."""
    return TorusGrid(d, n_per_dim)


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid with ``n_per_dim`` nodes per axis on [0, 2pi)^d."""

    d: int
    n_per_dim: int

    def __post_init__(self):
        if self.d < 1:
            raise InputShapeError(f"dimension must be positive, got {self.d}")
        n = self.n_per_dim
        if n < 4 or n % 2 != 0:
            raise InputShapeError(f"n_per_dim must be even and >= 4, got {n}")
        axis = np.fft.fftfreq(n) * n  # integer wavenumbers, FFT layout
        mesh = np.meshgrid(*([axis] * self.d), indexing="ij")
        kvec = np.stack(mesh)
        dkvec = kvec.copy()
        dkvec[dkvec == -n // 2] = 0.0  # unpaired Nyquist mode carries no derivative
        x_axis = TWO_PI * np.arange(n) / n
        nodes = np.stack(np.meshgrid(*([x_axis] * self.d), indexing="ij"))
        for name, arr in (("kvec", kvec), ("dkvec", dkvec),
                          ("ksq", np.sum(kvec ** 2, axis=0)), ("_nodes", nodes)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return (self.n_per_dim,) * self.d

    @property
    def size(self):
        return self.n_per_dim ** self.d

    @property
    def spacing(self):
        return TWO_PI / self.n_per_dim

    @property
    def cell_volume(self):
        return self.spacing ** self.d

    def nodes(self):
        """Node coordinates, shape (d,) + grid shape."""
        return self._nodes

    def axes(self):
        return tuple(range(-self.d, 0))

    def refined(self, factor=2):
        return torus_grid(self.d, factor * self.n_per_dim)


def forward_coeffs(grid, values):
    """DFT of nodal values under the stated convention (batched over leading axes)."""
    return np.fft.fftn(values, axes=grid.axes()) / grid.size


def inverse_values(grid, coeffs):
    """Complex synthesis on the nodes (batched over leading axes)."""
    return np.fft.ifftn(coeffs, axes=grid.axes()) * grid.size


@dataclass(frozen=True)
class SpectralField:
    """Immutable complex Fourier coefficients of a scalar field."""

    grid: TorusGrid
    coeffs: np.ndarray

    def __post_init__(self):
        arr = np.array(self.coeffs, dtype=np.complex128, copy=True)
        if arr.shape != self.grid.shape:
            raise InputShapeError(
                f"coefficient shape {arr.shape} does not match grid {self.grid.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    def values(self):
        """Real nodal values."""
        return inverse_values(self.grid, self.coeffs).real

    def max_imag(self):
        """Sup-norm of the imaginary part of the synthesis (realness defect)."""
        return float(np.max(np.abs(inverse_values(self.grid, self.coeffs).imag)))

    def hermitian_defect(self):
        """Max deviation from fhat(-k) = conj(fhat(k)) on paired modes."""
        rev = _reverse_modes(self.grid, self.coeffs)
        return float(np.max(np.abs(self.coeffs - np.conj(rev))))

    def __add__(self, other):
        _check_same_grid(self, other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            return NotImplemented
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise InputShapeError("fields live on different grids")


def _reverse_modes(grid, coeffs):
    """coeffs evaluated at -k (FFT layout index reversal)."""
    out = coeffs
    for ax in grid.axes():
        out = np.flip(np.roll(out, -1, axis=ax), axis=ax)
    return out


def analyze(grid, values):
    """Fourier analysis of real nodal samples.

    Accepts an array shaped like the grid or flat with n_per_dim^d entries.
    """
    arr = np.asarray(values, dtype=float)
    if arr.shape != grid.shape:
        if arr.size != grid.size or arr.ndim != 1:
            raise InputShapeError(
                f"expected {grid.size} samples on {grid.shape}, got shape {arr.shape}")
        arr = arr.reshape(grid.shape)
    return SpectralField(grid, forward_coeffs(grid, arr))


def synthesize(field):
    return field.values()


def constant_field(grid, value):
    coeffs = np.zeros(grid.shape, dtype=np.complex128)
    coeffs[(0,) * grid.d] = value
    return SpectralField(grid, coeffs)


def uniform_density(grid):
    """The uniform probability density mbar = (2 pi)^{-d}."""
    return constant_field(grid, TWO_PI ** (-grid.d))


def mass(field):
    """Total integral, (2 pi)^d * fhat(0)."""
    return complex(field.coeffs[(0,) * field.grid.d]) * TWO_PI ** field.grid.d


def lambda_symbol(grid, l):
    if not np.isfinite(l):
        raise InputShapeError(f"Sobolev index must be finite, got {l}")
    return (1.0 + grid.ksq) ** (l / 2.0)


def lambda_apply(field, l):
    """Fourier multiplier with symbol (1 + |k|^2)^{l/2}."""
    return SpectralField(field.grid, field.coeffs * lambda_symbol(field.grid, l))


def sobolev_norm(field, l):
    return float(sobolev_norm_arr(field.grid, field.coeffs, l))


def sobolev_norm_arr(grid, coeffs, l):
    """H^l norm of coefficient arrays, reduced over the trailing grid axes."""
    if not np.isfinite(l):
        raise InputShapeError(f"Sobolev index must be finite, got {l}")
    w = (1.0 + grid.ksq) ** l
    return np.sqrt(np.sum(np.abs(coeffs) ** 2 * w, axis=grid.axes()))


def gradient_norm_arr(grid, coeffs, l):
    """||grad f||_{H^l} with the summed-components convention, batched."""
    w = np.sum(grid.dkvec ** 2, axis=0) * (1.0 + grid.ksq) ** l
    return np.sqrt(np.sum(np.abs(coeffs) ** 2 * w, axis=grid.axes()))


def pairing(f, g):
    """Normalized L2 pairing sum_k conj(fhat) ghat; duality pairing for the H^l scale."""
    _check_same_grid(f, g)
    return complex(np.sum(np.conj(f.coeffs) * g.coeffs))


def gradient(field):
    """Spatial gradient; returns one field per axis, Nyquist mode zeroed."""
    grid = field.grid
    return tuple(SpectralField(grid, 1j * grid.dkvec[j] * field.coeffs)
                 for j in range(grid.d))


def divergence(fields):
    grid = fields[0].grid
    coeffs = sum(1j * grid.dkvec[j] * fields[j].coeffs for j in range(grid.d))
    return SpectralField(grid, coeffs)


def laplacian(field):
    return divergence(gradient(field))


def pad_spectrum(grid, coeffs):
    """Zero-pad an n-grid coefficient array onto the 2n dealiasing grid.

    Leading batch axes pass through.  The coarse Nyquist modes are dropped.
    """
    d, n = grid.d, grid.n_per_dim
    axes = grid.axes()
    shifted = np.fft.fftshift(coeffs, axes=axes)
    for ax in axes:
        idx = [slice(None)] * shifted.ndim
        idx[ax] = 0
        shifted[tuple(idx)] = 0.0
    fine_shape = coeffs.shape[:coeffs.ndim - d] + (2 * n,) * d
    out = np.zeros(fine_shape, dtype=np.complex128)
    sl = [slice(None)] * out.ndim
    for ax in axes:
        sl[ax] = slice(n // 2, n // 2 + n)
    out[tuple(sl)] = shifted
    return np.fft.ifftshift(out, axes=axes)


def truncate_spectrum(grid, fine_coeffs):
    """Restrict a 2n-grid coefficient array back to the n-grid mode set."""
    d, n = grid.d, grid.n_per_dim
    axes = grid.axes()
    shifted = np.fft.fftshift(fine_coeffs, axes=axes)
    sl = [slice(None)] * shifted.ndim
    for ax in axes:
        sl[ax] = slice(n // 2, n // 2 + n)
    block = shifted[tuple(sl)].copy()
    for ax in axes:
        idx = [slice(None)] * block.ndim
        idx[ax] = 0
        idx = tuple(idx)
        block[idx] = 0.0  # keep the retained set conjugate-symmetric
    return np.fft.ifftshift(block, axes=axes)


def dealiased_product(grid, a_coeffs, b_coeffs):
    """Dealiased product of two coefficient arrays (complex-safe, batched)."""
    fine = grid.refined()
    av = inverse_values(fine, pad_spectrum(grid, a_coeffs))
    bv = inverse_values(fine, pad_spectrum(grid, b_coeffs))
    return truncate_spectrum(grid, forward_coeffs(fine, av * bv))


def pointwise_apply(fields, fn):
    """Apply a pointwise real function to one or more fields, dealiased.

    ``fn`` receives the synthesized nodal values on the refined grid, one
    array per field, and must return an array of the same shape.
    """
    fields = list(fields)
    grid = fields[0].grid
    for f in fields[1:]:
        _check_same_grid(fields[0], f)
    fine = grid.refined()
    vals = [inverse_values(fine, pad_spectrum(grid, f.coeffs)).real for f in fields]
    out = np.asarray(fn(*vals), dtype=float)
    if out.shape != fine.shape:
        raise InputShapeError(
            f"pointwise function returned shape {out.shape}, expected {fine.shape}")
    if not np.all(np.isfinite(out)):
        node = tuple(int(i) for i in np.argwhere(~np.isfinite(out))[0])
        raise NonlinearityDomainError(
            f"pointwise function returned a non-finite value at node {node}",
            node=node, inputs=tuple(float(v[node]) for v in vals))
    return SpectralField(grid, truncate_spectrum(grid, forward_coeffs(fine, out)))


def mollify(field, eps):
    """Friedrichs mollifier with Gaussian symbol exp(-eps^2 |k|^2)."""
    if eps < 0:
        raise InputShapeError(f"mollifier width must be nonnegative, got {eps}")
    return SpectralField(field.grid, mollifier_symbol(field.grid, eps) * field.coeffs)


def mollifier_symbol(grid, eps):
    return np.exp(-(eps ** 2) * grid.ksq)


def project_zero_mean(field):
    """Remove the mean: zero the k = 0 coefficient."""
    coeffs = np.array(field.coeffs)
    coeffs[(0,) * field.grid.d] = 0.0
    return SpectralField(field.grid, coeffs)


# ---------------------------------------------------------------------------
# Distributional data


@dataclass(frozen=True)
class DiracAt:
    """Unit point mass at y (truncated-spectrum representation)."""
    y: tuple


@dataclass(frozen=True)
class DiracGradientAt:
    """Distributional derivative of the Dirac at y along one axis."""
    y: tuple
    axis: int


@dataclass(frozen=True)
class ZeroMeanField:
    """A smooth zero-mass perturbation used as initial datum."""
    field: SpectralField


def _point(y, d):
    arr = np.atleast_1d(np.asarray(y, dtype=float))
    if arr.shape != (d,):
        raise InputShapeError(f"probe point must have {d} coordinates, got {arr.shape}")
    return arr


def dirac_coeffs(grid, y):
    y = _point(y, grid.d)
    phase = sum(grid.kvec[j] * y[j] for j in range(grid.d))
    return np.exp(-1j * phase) / TWO_PI ** grid.d


def synthesize_datum(datum, grid):
    """Exact truncated Fourier representation of a distributional datum."""
    if isinstance(datum, DiracAt):
        return SpectralField(grid, dirac_coeffs(grid, datum.y))
    if isinstance(datum, DiracGradientAt):
        if not 0 <= datum.axis < grid.d:
            raise InputShapeError(f"axis {datum.axis} out of range for d={grid.d}")
        return SpectralField(grid, 1j * grid.kvec[datum.axis] * dirac_coeffs(grid, datum.y))
    if isinstance(datum, ZeroMeanField):
        f = datum.field
        if f.grid != grid:
            raise InputShapeError("datum field lives on a different grid")
        if abs(mass(f)) > 1e-10:
            raise InputShapeError(
                f"ZeroMeanField datum must have zero mass, got {mass(f):.3e}")
        return f
    raise InputShapeError(f"unknown datum kind {type(datum).__name__}")


def random_real_field(grid, rng, kmax, amplitude=1.0, zero_mean=False):
    """Seeded band-limited real field with unit L2 norm scaled by ``amplitude``.

    Modes with any |k_j| > kmax are dropped, so kmax < n/2 guarantees zero
    Nyquist content.
    """
    samples = rng.standard_normal(grid.shape)
    coeffs = forward_coeffs(grid, samples)
    keep = np.ones(grid.shape, dtype=bool)
    for j in range(grid.d):
        keep &= np.abs(grid.kvec[j]) <= kmax
    coeffs = np.where(keep, coeffs, 0.0)
    if zero_mean:
        coeffs[(0,) * grid.d] = 0.0
    norm = np.sqrt(np.sum(np.abs(coeffs) ** 2))
    if norm > 0:
        coeffs *= amplitude / norm
    return SpectralField(grid, coeffs)


# ---------------------------------------------------------------------------
# Binary snapshot format ("MFGM")


def _shifted_ascending(grid, coeffs):
    return np.fft.fftshift(coeffs, axes=grid.axes())


def write_field(field, stream):
    """Write one field snapshot: magic, version, d, n, then coefficients.

    Coefficients are interleaved little-endian float64 (re, im) in row-major
    k order from -n/2 to n/2 - 1 per axis.
    """
    grid = field.grid
    stream.write(_FIELD_MAGIC)
    stream.write(struct.pack("<BB", _FIELD_VERSION, grid.d))
    stream.write(struct.pack("<I", grid.n_per_dim))
    data = np.ascontiguousarray(_shifted_ascending(grid, field.coeffs)).astype("<c16")
    stream.write(data.tobytes())


def read_field(stream):
    magic = stream.read(4)
    if magic != _FIELD_MAGIC:
        raise InputShapeError(f"bad field magic {magic!r}")
    version, d = struct.unpack("<BB", stream.read(2))
    if version != _FIELD_VERSION:
        raise InputShapeError(f"unsupported field snapshot version {version}")
    (n,) = struct.unpack("<I", stream.read(4))
    grid = torus_grid(d, n)
    raw = stream.read(16 * grid.size)
    shifted = np.frombuffer(raw, dtype="<c16").reshape(grid.shape)
    coeffs = np.fft.ifftshift(shifted, axes=grid.axes())
    return SpectralField(grid, coeffs)


def field_to_bytes(field):
    buf = io.BytesIO()
    write_field(field, buf)
    return buf.getvalue()


def field_from_bytes(data):
    return read_field(io.BytesIO(data))
