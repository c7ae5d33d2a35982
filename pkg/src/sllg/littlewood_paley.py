"""Dyadic (Littlewood-Paley) blocks on the discrete torus.

The cutoff ``theta`` is a smooth nonincreasing radial profile equal to 1 on
``[0, 3/4]`` and 0 on ``[4/3, inf)``, built from ``exp(-1/x)``.  Then

    chi(r) = theta(r),        phi(r) = theta(r/2) - theta(r)

so ``chi`` lives in ``{r <= 4/3}``, ``phi`` in ``{3/4 <= r <= 8/3}`` and the sum
``chi + sum_j phi(2^-j r)`` telescopes to exactly 1.  Radii are measured in
units of the base frequency ``xi0 = 2*pi / max(lx, ly)``.

Every block symbol is restricted to the 2/3-rule dealiased band, so the blocks
sum to the dealiasing projector: ``sum_j block(f, j) == f`` for dealiased ``f``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .field_core import Grid, _expand, fft, gradient, ifft, integrate
from .model import ModelParams, State, m_rhs_gilbert_heat

LOW, HIGH = 0.75, 4.0 / 3.0


def _smooth_zero(u):
    out = np.zeros_like(u, dtype=float)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def theta(r: np.ndarray) -> np.ndarray:
    """Radial cutoff: 1 on ``[0, 3/4]``, 0 on ``[4/3, inf)``, C-infinity in between."""
    r = np.asarray(r, dtype=float)
    t = (r - LOW) / (HIGH - LOW)
    a = _smooth_zero(1.0 - t)
    b = _smooth_zero(t)
    out = np.ones_like(r)
    mid = (t > 0) & (t < 1)
    out[mid] = a[mid] / (a[mid] + b[mid])
    out[t >= 1] = 0.0
    return out


def chi(r):
    return theta(r)


def phi(r):
    r = np.asarray(r, dtype=float)
    return theta(r / 2.0) - theta(r)


class PartitionError(ValueError):
    pass


@dataclass
class DyadicPartition:
    """Block symbols on the rfft2 lattice; ``symbols[j + 1]`` belongs to shell ``j``."""

    grid: Grid
    xi0: float
    radius: np.ndarray  # |xi| / xi0 on the lattice
    band: np.ndarray
    symbols: list[np.ndarray] = field(repr=False)

    @property
    def j_max(self) -> int:
        return len(self.symbols) - 2

    @property
    def shells(self) -> range:
        return range(-1, self.j_max + 1)

    def symbol(self, j: int) -> np.ndarray:
        if j < -1 or j > self.j_max:
            return np.zeros_like(self.radius)
        return self.symbols[j + 1]

    def low_symbol(self, j: int) -> np.ndarray:
        """Symbol of ``S_j = sum_{k <= j-1} Delta_k``."""
        out = np.zeros_like(self.radius)
        for k in range(-1, min(j - 1, self.j_max) + 1):
            out += self.symbols[k + 1]
        return out

    def unity_residual(self) -> float:
        total = np.sum(self.symbols, axis=0)
        return float(np.abs(total - 1.0)[self.band].max())


def build_partition(grid: Grid) -> DyadicPartition:
    """Dyadic partition covering the dealiased band of ``grid``."""
    kx, ky = grid.wavenumbers
    xi0 = 2 * np.pi / max(grid.lx, grid.ly)
    radius = np.sqrt(kx**2 + ky**2) / xi0
    band = grid.dealias_mask
    r_max = radius[band].max()
    # smallest J with theta(r / 2^(J+1)) == 1 on the whole band
    J = -1
    while LOW * 2.0 ** (J + 1) < r_max:
        J += 1
    if J < 1:
        raise PartitionError(f"grid {grid.nx}x{grid.ny} too small for 3 dyadic shells")
    bandf = band.astype(float)
    symbols = [chi(radius) * bandf]
    symbols += [phi(radius / 2.0**j) * bandf for j in range(J + 1)]
    return DyadicPartition(grid, xi0, radius, band, symbols)


def _apply(f: np.ndarray, symbol: np.ndarray, grid: Grid) -> np.ndarray:
    fh = fft(f)
    return ifft(fh * _expand(symbol, fh.ndim), grid)


def block(f: np.ndarray, j: int, partition: DyadicPartition) -> np.ndarray:
    """``Delta_j f``; ``j = -1`` is the low block ``S_0``."""
    return _apply(f, partition.symbol(j), partition.grid)


def low_pass(f: np.ndarray, j: int, partition: DyadicPartition) -> np.ndarray:
    """``S_j f``."""
    return _apply(f, partition.low_symbol(j), partition.grid)


def all_blocks(f: np.ndarray, partition: DyadicPartition) -> list[np.ndarray]:
    grid = partition.grid
    fh = fft(f)
    return [ifft(fh * _expand(sym, fh.ndim), grid) for sym in partition.symbols]


def _sq_norm(f, grid):
    return integrate(f * f, grid)


def block_norms(f: np.ndarray, partition: DyadicPartition) -> np.ndarray:
    """``||Delta_j f||_2`` for ``j = -1 .. j_max``."""
    return np.array([np.sqrt(_sq_norm(b, partition.grid)) for b in all_blocks(f, partition)])


def besov_norm(f: np.ndarray, s: float, partition: DyadicPartition) -> float:
    """``B^s_{2,inf}`` norm: max over available shells of ``2^(j s) ||Delta_j f||_2``."""
    js = np.arange(-1, partition.j_max + 1)
    return float(np.max(2.0 ** (js * s) * block_norms(f, partition)))


def bony(u: np.ndarray, v: np.ndarray, partition: DyadicPartition):
    """Paraproduct split ``u v = T_u v + T_v u + R(u, v)``.

    ``T_u v = sum_j S_{j-1} u Delta_j v`` and ``R = sum_{|j-j'| <= 1} Delta_j u Delta_j' v``.
    Exact reconstruction requires dealiased ``u`` and ``v``.
    """
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
    du = all_blocks(u, partition)
    dv = all_blocks(v, partition)
    n = len(du)

    def para(a, b):
        out = np.zeros_like(u)
        low = np.zeros_like(u)  # S_{j-1} a, i.e. blocks k <= j - 2
        for i in range(n):  # i = j + 1
            if i >= 2:
                low = low + a[i - 2]
            out += low * b[i]
        return out

    T_uv = para(du, dv)
    T_vu = para(dv, du)
    R = np.zeros_like(u)
    for i in range(n):
        for k in range(max(0, i - 1), min(n, i + 2)):
            R += du[i] * dv[k]
    return T_uv, T_vu, R


def commutator_block(f: np.ndarray, g: np.ndarray, j: int, partition: DyadicPartition) -> np.ndarray:
    """``[Delta_j, f] grad g = Delta_j(f grad g) - f Delta_j grad g`` for scalar ``f``."""
    grid = partition.grid
    G = gradient(g, grid)
    fb = f.reshape(f.shape + (1,) * (G.ndim - f.ndim))
    return block(fb * G, j, partition) - fb * block(G, j, partition)


@dataclass(frozen=True)
class UniquenessEntry:
    t: float
    W: float
    W_j: np.ndarray
    argmax_j: int
    hbar: float


def _hbar(state1: State, state2: State, params: ModelParams) -> float:
    grid = state1.grid
    quartic = 0.0
    h1 = 0.0
    for st in (state1, state2):
        Gm = gradient(st.m, grid)
        for f in (st.s, Gm):
            sq = np.sum(f * f, axis=tuple(range(2, f.ndim)))
            quartic += integrate(sq * sq, grid)
            Gf = gradient(f, grid)
            h1 += integrate(sq, grid) + integrate(np.sum(Gf * Gf, axis=tuple(range(2, Gf.ndim))), grid)
    mt = 0.0
    for st in (state1, state2):
        dm = m_rhs_gilbert_heat(st.s, st.m, params, grid)
        mt += integrate(np.sum(dm * dm, axis=-1), grid)
    return 1.0 + quartic + mt + h1


def uniqueness_functional(state1: State, state2: State, beta_exp: float,
                          partition: DyadicPartition, params: ModelParams) -> UniquenessEntry:
    """Blockwise difference functional ``W`` of two states, plus ``hbar`` on the pair."""
    if not 0 < beta_exp < 0.5:
        raise ValueError(f"beta_exp must lie in (0, 1/2), got {beta_exp}")
    grid = partition.grid
    ds = state1.s - state2.s
    dm = state1.m - state2.m
    ds_blocks = all_blocks(ds, partition)
    dgm_blocks = all_blocks(gradient(dm, grid), partition)
    low_m = _sq_norm(block(dm, -1, partition), grid)
    W_j = np.array([_sq_norm(a, grid) + _sq_norm(b, grid) + low_m
                    for a, b in zip(ds_blocks, dgm_blocks)])
    js = np.arange(-1, partition.j_max + 1)
    weighted = 2.0 ** (-2 * js * beta_exp) * W_j
    k = int(np.argmax(weighted))
    return UniquenessEntry(t=state1.t, W=float(weighted[k]), W_j=W_j, argmax_j=int(js[k]),
                           hbar=_hbar(state1, state2, params))


def dump_partition(partition: DyadicPartition, path: str | Path) -> None:
    """CSV of the symbols on the lattice (``n1, n2, radius, chi, phi_0 .. phi_J``)."""
    n1, n2 = partition.grid.mode_numbers
    n1 = np.broadcast_to(n1, partition.radius.shape)
    n2 = np.broadcast_to(n2, partition.radius.shape)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n1", "n2", "radius", "chi"] + [f"phi_{j}" for j in range(partition.j_max + 1)])
        for idx in zip(*np.nonzero(partition.band)):
            w.writerow([int(n1[idx]), int(n2[idx]), f"{partition.radius[idx]:.17g}"]
                       + [f"{sym[idx]:.17g}" for sym in partition.symbols])
