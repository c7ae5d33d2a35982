"""Periodic 2D grid, 3-component vector fields and spectral differential operators.

Fields are plain ``numpy`` arrays of shape ``(nx, ny, 3)`` (one real triple per
grid point, ``x`` along axis 0).  Gradients have shape ``(nx, ny, 3, 2)`` with the
last axis indexing the direction ``(x, y)``.

Fourier convention: the forward transform (``numpy.fft.rfft2``) is unnormalized
and the inverse carries the factor ``1/(nx*ny)``.  First-derivative symbols are
``i*k`` with the Nyquist wavenumber set to zero; the Laplacian symbol is the
square of the same symbols, so ``divergence(gradient(f)) == laplacian(f)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

SNAPSHOT_MAGIC = b"SLLG1"
_HEADER = struct.Struct("<5sqqddq")

DEFAULT_UNIT_SPHERE_TOL = 1e-12
DEFAULT_RHO_MIN = 1e-8


class FieldError(ValueError):
    """Malformed field: wrong shape, non-finite entries or grid mismatch."""


class ConstraintViolation(FieldError):
    """A magnetization field is not unit-norm within tolerance."""


class NearZeroVector(ArithmeticError):
    """Projection to the sphere hit a vector shorter than ``rho_min``."""


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Flat torus ``[0, lx) x [0, ly)`` sampled at ``nx * ny`` points."""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if not (_is_pow2(self.nx) and _is_pow2(self.ny)):
            raise ValueError(f"grid sizes must be powers of two, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("side lengths must be positive")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of point coordinates, ``indexing='ij'``."""
        x = np.arange(self.nx) * self.hx
        y = np.arange(self.ny) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    # --- spectral lattice (rfft layout: full axis 0, half axis 1) ---

    @cached_property
    def mode_numbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer mode numbers ``(n1, n2)`` broadcast to the rfft2 layout."""
        n1 = np.fft.fftfreq(self.nx, 1.0 / self.nx)
        n2 = np.fft.rfftfreq(self.ny, 1.0 / self.ny)
        return n1[:, None], n2[None, :]

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical wavenumbers ``(kx, ky)``, Nyquist entries included."""
        n1, n2 = self.mode_numbers
        return 2 * np.pi * n1 / self.lx, 2 * np.pi * n2 / self.ly

    @cached_property
    def derivative_symbols(self) -> tuple[np.ndarray, np.ndarray]:
        """``i*kx`` and ``i*ky`` with the Nyquist column/row zeroed."""
        n1, n2 = self.mode_numbers
        kx, ky = self.wavenumbers
        kx = np.where(np.abs(n1) == self.nx // 2, 0.0, kx)
        ky = np.where(np.abs(n2) == self.ny // 2, 0.0, ky)
        return 1j * kx, 1j * ky

    @cached_property
    def laplacian_symbol(self) -> np.ndarray:
        dx, dy = self.derivative_symbols
        return (dx**2 + dy**2).real

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Boolean 2/3-rule mask: keeps ``|n1| <= (nx-1)//3`` and ``|n2| <= (ny-1)//3``."""
        n1, n2 = self.mode_numbers
        return (np.abs(n1) <= (self.nx - 1) // 3) & (np.abs(n2) <= (self.ny - 1) // 3)

    @cached_property
    def dealias_kmax(self) -> float:
        """Largest physical wavenumber magnitude kept by the dealiasing mask."""
        kx, ky = self.wavenumbers
        k = np.sqrt(kx**2 + ky**2)
        return float(k[self.dealias_mask].max())


# --- transforms ---


def fft(f: np.ndarray) -> np.ndarray:
    return sfft.rfft2(f, axes=(0, 1))


def ifft(fh: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.irfft2(fh, s=grid.shape, axes=(0, 1))


def _expand(symbol: np.ndarray, ndim: int) -> np.ndarray:
    return symbol.reshape(symbol.shape + (1,) * (ndim - 2))


def check_field(f: np.ndarray, grid: Grid, ncomp: int | None = 3) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape[:2] != grid.shape:
        raise FieldError(f"field shape {f.shape} does not match grid {grid.shape}")
    if ncomp is not None and f.shape[2:] != (ncomp,):
        raise FieldError(f"expected {ncomp} components, got trailing shape {f.shape[2:]}")
    if not np.all(np.isfinite(f)):
        raise FieldError("field contains non-finite entries")
    return f


def check_unit(m: np.ndarray, tol: float = DEFAULT_UNIT_SPHERE_TOL) -> float:
    """Return ``max | |m| - 1 |``; raise ConstraintViolation above ``tol``."""
    dev = float(np.max(np.abs(np.linalg.norm(m, axis=-1) - 1.0)))
    if dev > tol:
        raise ConstraintViolation(f"magnetization deviates from unit norm by {dev:.3e}")
    return dev


def dealias(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Zero every Fourier mode outside the 2/3-rule band."""
    fh = fft(f)
    fh *= _expand(grid.dealias_mask, fh.ndim)
    return ifft(fh, grid)


def is_dealiased(f: np.ndarray, grid: Grid, rtol: float = 1e-12) -> bool:
    fh = fft(f)
    outside = np.abs(fh * _expand(~grid.dealias_mask, fh.ndim)).max()
    return bool(outside <= rtol * max(np.abs(fh).max(), 1e-300))


# --- differential operators ---


def gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral gradient; the new last axis indexes direction ``(x, y)``."""
    f = check_field(f, grid, ncomp=None)
    fh = fft(f)
    dx, dy = grid.derivative_symbols
    gh = np.stack([fh * _expand(dx, fh.ndim), fh * _expand(dy, fh.ndim)], axis=-1)
    return ifft(gh, grid)


def divergence(F: np.ndarray, grid: Grid) -> np.ndarray:
    """Contract the trailing direction axis of a gradient-shaped field."""
    F = check_field(F, grid, ncomp=None)
    if F.shape[-1] != 2:
        raise FieldError(f"last axis must index the 2 directions, got shape {F.shape}")
    dx, dy = grid.derivative_symbols
    Fh = fft(F)
    nd = Fh.ndim - 1
    return ifft(Fh[..., 0] * _expand(dx, nd) + Fh[..., 1] * _expand(dy, nd), grid)


def laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    f = check_field(f, grid, ncomp=None)
    fh = fft(f)
    return ifft(fh * _expand(grid.laplacian_symbol, fh.ndim), grid)


def integrate(f: np.ndarray, grid: Grid) -> float:
    """Rectangle rule ``hx*hy*sum`` (spectrally accurate on the torus)."""
    f = np.asarray(f)
    if f.shape[:2] != grid.shape:
        raise FieldError(f"field shape {f.shape} does not match grid {grid.shape}")
    return float(grid.cell_area * np.sum(f))


def l2_norm(f: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(integrate(f * f, grid)))


def project_to_sphere(m: np.ndarray, rho_min: float = DEFAULT_RHO_MIN) -> np.ndarray:
    """Pointwise ``m/|m|``; NearZeroVector if any ``|m| < rho_min``."""
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise NearZeroVector("non-finite magnetization cannot be projected")
    norm = np.linalg.norm(m, axis=-1, keepdims=True)
    if norm.min() < rho_min:
        raise NearZeroVector(f"|m| = {norm.min():.3e} below rho_min = {rho_min:.1e}")
    return m / norm


# --- snapshot files ---


def write_snapshot(path: str | Path, data: np.ndarray, grid: Grid) -> None:
    """Write ``data`` of shape ``(nx, ny, ncomp)`` in the SLLG1 format.

    Layout: magic ``SLLG1``, then little-endian int64 ``nx``, ``ny``, float64
    ``lx``, ``ly``, int64 component count, then row-major float64 payload.
    """
    data = np.ascontiguousarray(data, dtype="<f8")
    if data.ndim != 3 or data.shape[:2] != grid.shape:
        raise FieldError(f"snapshot data shape {data.shape} does not match grid")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, grid.nx, grid.ny, grid.lx, grid.ly, data.shape[2]))
        fh.write(data.tobytes(order="C"))


def snapshot_bytes(data: np.ndarray, grid: Grid) -> bytes:
    data = np.ascontiguousarray(data, dtype="<f8")
    return _HEADER.pack(SNAPSHOT_MAGIC, grid.nx, grid.ny, grid.lx, grid.ly, data.shape[2]) + data.tobytes()


def parse_snapshot(buf: bytes) -> tuple[np.ndarray, Grid]:
    if len(buf) < _HEADER.size:
        raise FieldError("truncated snapshot header")
    magic, nx, ny, lx, ly, ncomp = _HEADER.unpack_from(buf)
    if magic != SNAPSHOT_MAGIC:
        raise FieldError(f"bad snapshot magic {magic!r}")
    grid = Grid(nx, ny, lx, ly)
    expected = nx * ny * ncomp * 8
    payload = buf[_HEADER.size:_HEADER.size + expected]
    if len(payload) != expected:
        raise FieldError("truncated snapshot payload")
    data = np.frombuffer(payload, dtype="<f8").reshape(nx, ny, ncomp).astype(float)
    return data, grid


def read_snapshot(path: str | Path) -> tuple[np.ndarray, Grid]:
    return parse_snapshot(Path(path).read_bytes())
