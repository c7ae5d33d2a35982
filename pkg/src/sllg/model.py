"""Coefficient tensor and right-hand sides of the spin-accumulation / LLG system.

With ``J_e = 0``, ``D_0 = 1`` and effective field ``h = lap(m)`` the system reads

    ds/dt = div(A(m) grad s) - s - s x m,       A(m) = I - beta m (x) m
    (1 + alpha^2) dm/dt = -m x (lap m + s) - alpha m x (m x (lap m + s))

and the m-equation has the equivalent "Gilbert-heat" form used by the integrator

    (1 + alpha^2) dm/dt - alpha lap m
        = alpha |grad m|^2 m - m x (lap m + s) - alpha m x (m x s).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field_core import (
    DEFAULT_UNIT_SPHERE_TOL,
    Grid,
    check_field,
    check_unit,
    _expand,
    divergence,
    fft,
    gradient,
    ifft,
    integrate,
    laplacian,
)


@dataclass(frozen=True)
class ModelParams:
    alpha: float = 1.0
    beta: float = 0.5
    dealias: bool = True
    unit_sphere_tol: float = DEFAULT_UNIT_SPHERE_TOL

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")


@dataclass(frozen=True, eq=False)
class State:
    """The pair ``(s, m)`` on a common grid at time ``t``."""

    s: np.ndarray
    m: np.ndarray
    t: float
    grid: Grid

    def validate(self, tol: float = DEFAULT_UNIT_SPHERE_TOL) -> "State":
        check_field(self.s, self.grid)
        check_field(self.m, self.grid)
        check_unit(self.m, tol)
        return self

    def replace(self, **changes) -> "State":
        fields = dict(s=self.s, m=self.m, t=self.t, grid=self.grid)
        fields.update(changes)
        return State(**fields)


# symmetric storage order
_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class CoefficientTensor:
    """``A(m)`` per grid point, stored as 6 components (xx, yy, zz, xy, xz, yz)."""

    components: np.ndarray

    def matrix(self) -> np.ndarray:
        A = np.empty(self.components.shape[:-1] + (3, 3))
        for c, (i, j) in enumerate(_PAIRS):
            A[..., i, j] = self.components[..., c]
            A[..., j, i] = self.components[..., c]
        return A

    def quadratic_form(self, xi: np.ndarray) -> np.ndarray:
        return np.einsum("...i,...ij,...j->...", xi, self.matrix(), xi)


def assemble_A(m: np.ndarray, params: ModelParams) -> CoefficientTensor:
    """``A = I - beta m (x) m`` pointwise; ``m`` must be unit-norm."""
    m = np.asarray(m, dtype=float)
    check_unit(m, params.unit_sphere_tol)
    comps = np.empty(m.shape[:-1] + (6,))
    for c, (i, j) in enumerate(_PAIRS):
        comps[..., c] = (1.0 if i == j else 0.0) - params.beta * m[..., i] * m[..., j]
    return CoefficientTensor(comps)


def _mask(grid: Grid, params: ModelParams, ndim: int):
    return _expand(grid.dealias_mask, ndim) if params.dealias else 1.0


def _check_pair(s, m, grid):
    s = check_field(s, grid)
    m = check_field(m, grid)
    return s, m


def spin_flux(s: np.ndarray, m: np.ndarray, beta: float, grid: Grid) -> np.ndarray:
    """``A(m) grad s`` without assembling the tensor: ``grad s - beta m (m . grad s)``."""
    return _flux_from_grad(gradient(s, grid), m, beta)


def _flux_from_grad(G, m, beta):
    proj = np.einsum("xyi,xyid->xyd", m, G)
    return G - beta * m[..., :, None] * proj[..., None, :]


def spin_rhs_hat(s: np.ndarray, m: np.ndarray, params: ModelParams, grid: Grid,
                 s_hat: np.ndarray | None = None) -> np.ndarray:
    """Fourier coefficients of ``div(A(m) grad s) - s - s x m``.

    The flux and the torque are dealiased when ``params.dealias`` is set.
    """
    sh = fft(s) if s_hat is None else s_hat
    dx, dy = grid.derivative_symbols
    G = ifft(np.stack([sh * _expand(dx, 3), sh * _expand(dy, 3)], axis=-1), grid)
    Fh = fft(_flux_from_grad(G, m, params.beta))
    Th = fft(np.cross(s, m))
    div = Fh[..., 0] * _expand(dx, 3) + Fh[..., 1] * _expand(dy, 3)
    return (div - Th) * _mask(grid, params, 3) - sh


def spin_rhs(s: np.ndarray, m: np.ndarray, params: ModelParams, grid: Grid) -> np.ndarray:
    """``div(A(m) grad s) - s - s x m``."""
    s, m = _check_pair(s, m, grid)
    return ifft(spin_rhs_hat(s, m, params, grid), grid)


def grad_sq(m: np.ndarray, grid: Grid) -> np.ndarray:
    """Pointwise ``|grad m|^2`` summed over components and directions."""
    G = gradient(m, grid)
    return np.einsum("xyid,xyid->xy", G, G)


def m_rhs_LL(s: np.ndarray, m: np.ndarray, params: ModelParams, grid: Grid) -> np.ndarray:
    """Landau-Lifshitz form: ``(-m x h - alpha m x (m x h)) / (1 + alpha^2)``, ``h = lap m + s``."""
    s, m = _check_pair(s, m, grid)
    check_unit(m, params.unit_sphere_tol)
    h = laplacian(m, grid) + s
    mxh = np.cross(m, h)
    return (-mxh - params.alpha * np.cross(m, mxh)) / (1.0 + params.alpha**2)


def m_nonlinear_hat(s, m, params: ModelParams, grid: Grid, m_hat=None):
    """Fourier coefficients of the Gilbert-heat form minus ``alpha lap m``, and ``lap m``.

    Not divided by ``1 + alpha^2``.  ``|grad m|^2`` and the whole term are
    dealiased when ``params.dealias`` is set.
    """
    a = params.alpha
    mh = fft(m) if m_hat is None else m_hat
    dx, dy = grid.derivative_symbols
    lap_m = ifft(mh * _expand(grid.laplacian_symbol, 3), grid)
    G = ifft(np.stack([mh * _expand(dx, 3), mh * _expand(dy, 3)], axis=-1), grid)
    g2 = np.einsum("xyid,xyid->xy", G, G)
    if params.dealias:
        g2 = ifft(fft(g2) * grid.dealias_mask, grid)
    N = a * g2[..., None] * m - np.cross(m, lap_m + s) - a * np.cross(m, np.cross(m, s))
    return fft(N) * _mask(grid, params, 3), lap_m


def m_nonlinear(s, m, params: ModelParams, grid: Grid) -> np.ndarray:
    """Everything in the Gilbert-heat form except ``alpha lap m``, before division by ``1 + alpha^2``."""
    return ifft(m_nonlinear_hat(s, m, params, grid)[0], grid)


def m_rhs_gilbert_heat(s: np.ndarray, m: np.ndarray, params: ModelParams, grid: Grid) -> np.ndarray:
    """Gilbert-heat form: ``(alpha lap m + alpha |grad m|^2 m - m x (lap m + s) - alpha m x (m x s)) / (1 + alpha^2)``."""
    s, m = _check_pair(s, m, grid)
    check_unit(m, params.unit_sphere_tol)
    Nh, lap_m = m_nonlinear_hat(s, m, params, grid)
    return (params.alpha * lap_m + ifft(Nh, grid)) / (1.0 + params.alpha**2)


@dataclass(frozen=True)
class IdentityReport:
    # m . lap m + |grad m|^2
    dot_residual_l2: float
    dot_residual_max: float
    # m x lap m - div(m x grad m)
    cross_residual_l2: float
    cross_residual_max: float


def check_identities(m: np.ndarray, grid: Grid) -> IdentityReport:
    """Discrete residuals of ``lap m . m = -|grad m|^2`` and ``m x lap m = div(m x grad m)``."""
    m = check_field(m, grid)
    lap_m = laplacian(m, grid)
    G = gradient(m, grid)
    r1 = np.einsum("xyi,xyi->xy", m, lap_m) + np.einsum("xyid,xyid->xy", G, G)
    mxG = np.cross(m[..., None, :], np.moveaxis(G, -1, -2), axis=-1)  # (nx, ny, 2, 3)
    r2 = np.cross(m, lap_m) - divergence(np.moveaxis(mxG, -2, -1), grid)
    return IdentityReport(
        dot_residual_l2=float(np.sqrt(integrate(r1 * r1, grid))),
        dot_residual_max=float(np.abs(r1).max()),
        cross_residual_l2=float(np.sqrt(integrate(np.sum(r2 * r2, axis=-1), grid))),
        cross_residual_max=float(np.abs(r2).max()),
    )
