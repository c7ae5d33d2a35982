"""Experiment harness: initial data, mollification and the twin-run uniqueness audit."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .field_core import Grid, _expand, fft, ifft, integrate, project_to_sphere, read_snapshot
from .integrator import StepConfig, StepFailure, run, total_energy
from .littlewood_paley import build_partition, uniqueness_functional
from .model import ModelParams, State, grad_sq

KINDS = ("uniform", "fourier-random", "bubble", "file")


@dataclass(frozen=True)
class InitialData:
    kind: str = "fourier-random"
    nx: int = 64
    ny: int = 64
    lx: float = 1.0
    ly: float = 1.0
    seed: int = 0
    # fourier-random: perturbation size of m around `direction`, and size of s
    amplitude: float = 0.2
    s_amplitude: float = 0.5
    max_mode: int = 2
    # bubble
    scale: float = 0.125
    center: tuple = (0.5, 0.5)
    direction: tuple = (0.0, 0.0, 1.0)
    path: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")

    @property
    def grid(self) -> Grid:
        return Grid(self.nx, self.ny, self.lx, self.ly)


def random_trig_field(grid: Grid, rng: np.random.Generator, max_mode: int, ncomp: int = 3,
                      decay: float = 1.0) -> np.ndarray:
    """Random real trigonometric polynomial with modes ``|n1|, |n2| <= max_mode``.

    Mode amplitudes fall off like ``(1 + |n|^2)^(-decay)``; the result is scaled
    to unit RMS per component.
    """
    x, y = grid.coords()
    f = np.zeros(grid.shape + (ncomp,))
    for n1 in range(0, max_mode + 1):
        for n2 in range(-max_mode, max_mode + 1):
            if n1 == 0 and n2 <= 0:
                continue
            w = (1.0 + n1 * n1 + n2 * n2) ** (-decay)
            amp = rng.normal(size=ncomp) * w
            ph = rng.uniform(0, 2 * np.pi, size=ncomp)
            arg = 2 * np.pi * (n1 * x / grid.lx + n2 * y / grid.ly)
            f += amp * np.cos(arg[..., None] + ph)
    rms = np.sqrt(np.mean(f * f, axis=(0, 1)))
    return f / np.where(rms > 0, rms, 1.0)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def bandlimited_unit_field(grid: Grid, rng: np.random.Generator, max_wave: int = 2) -> np.ndarray:
    """Exactly unit-norm trigonometric-polynomial field.

    Polar and azimuthal angles are linear phases with integer wave vectors, so
    every component is a trigonometric polynomial; a random rotation mixes them.
    """
    x, y = grid.coords()
    a = rng.integers(-max_wave, max_wave + 1, size=2)
    b = rng.integers(-max_wave, max_wave + 1, size=2)
    th = 2 * np.pi * (a[0] * x / grid.lx + a[1] * y / grid.ly) + rng.uniform(0, 2 * np.pi)
    ph = 2 * np.pi * (b[0] * x / grid.lx + b[1] * y / grid.ly) + rng.uniform(0, 2 * np.pi)
    m = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)
    return m @ random_rotation(rng).T


def bubble_field(grid: Grid, scale: float, center=(0.5, 0.5)) -> np.ndarray:
    """Periodic stereographic bubble of scale ``scale`` pointing to ``(0, 0, -1)`` far away.

    Inside the cell centred at ``center`` the profile is the inverse
    stereographic bubble ``((2 l x)/(l^2 + |x|^2), (l^2 - |x|^2)/(l^2 + |x|^2))``
    with ``l = scale * eta(x)``, where ``eta = ((1 - 4X^2/lx^2)(1 - 4Y^2/ly^2))^2``
    tapers to zero with zero slope on the cell boundary.  The Dirichlet energy
    exceeds the planar value ``8 pi`` by a truncation correction that grows like
    ``(scale / lx)^2`` (about 0.9% at ``lx/32``, 3.3% at ``lx/16``, 10% at ``lx/8``).
    """
    x, y = grid.coords()
    cx, cy = center[0] * grid.lx, center[1] * grid.ly
    X = (x - cx + grid.lx / 2) % grid.lx - grid.lx / 2
    Y = (y - cy + grid.ly / 2) % grid.ly - grid.ly / 2
    eta = ((1 - 4 * X**2 / grid.lx**2) * (1 - 4 * Y**2 / grid.ly**2)) ** 2
    le = scale * eta
    r2 = X**2 + Y**2
    den = r2 + le**2
    return np.stack([2 * le * X / den, 2 * le * Y / den, (le**2 - r2) / den], axis=-1)


def make_initial(data: InitialData) -> State:
    grid = data.grid
    rng = np.random.default_rng(data.seed)
    a = np.asarray(data.direction, dtype=float)
    a = a / np.linalg.norm(a)
    if data.kind == "uniform":
        s = np.zeros(grid.shape + (3,))
        m = np.broadcast_to(a, grid.shape + (3,)).copy()
    elif data.kind == "fourier-random":
        m = project_to_sphere(a + data.amplitude * random_trig_field(grid, rng, data.max_mode))
        s = data.s_amplitude * random_trig_field(grid, rng, data.max_mode)
    elif data.kind == "bubble":
        m = bubble_field(grid, data.scale, data.center)
        s = np.zeros(grid.shape + (3,))
    else:
        if data.path is None:
            raise ValueError("kind 'file' needs a path")
        arr, fgrid = read_snapshot(data.path)
        if arr.shape[-1] != 6:
            raise ValueError(f"{data.path}: expected 6 components (s, m), got {arr.shape[-1]}")
        s, m, grid = arr[..., :3].copy(), project_to_sphere(arr[..., 3:]), fgrid
    return State(s, m, 0.0, grid)


def bubble_dirichlet_energy(grid: Grid, scale: float) -> tuple[float, float]:
    """Discrete Dirichlet energy of the periodic bubble and its relative excess over ``8 pi``."""
    E = integrate(grad_sq(bubble_field(grid, scale), grid), grid)
    return E, E / (8 * np.pi) - 1.0


# --- mollification ---


def _bump(r: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r)
    inside = r < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def mollifier_kernel(grid: Grid, eps: float) -> np.ndarray:
    """Periodized ``eps^-2 rho(x/eps)`` sampled on the grid, normalized to unit discrete mass."""
    x = np.arange(grid.nx) * grid.hx
    y = np.arange(grid.ny) * grid.hy
    x = np.where(x >= grid.lx / 2, x - grid.lx, x)
    y = np.where(y >= grid.ly / 2, y - grid.ly, y)
    X, Y = np.meshgrid(x, y, indexing="ij")
    K = np.zeros(grid.shape)
    px = int(math.ceil(eps / grid.lx))
    py = int(math.ceil(eps / grid.ly))
    for i in range(-px, px + 1):
        for j in range(-py, py + 1):
            K += _bump(np.hypot(X + i * grid.lx, Y + j * grid.ly) / eps)
    return K / (K.sum() * grid.cell_area)


def mollify(f: np.ndarray, eps: float, grid: Grid) -> np.ndarray:
    """Periodic convolution with the unit-mass bump ``rho`` at scale ``eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if eps < max(grid.hx, grid.hy):
        warnings.warn(f"mollifier eps={eps:g} is below the grid spacing; kernel under-resolved",
                      RuntimeWarning, stacklevel=2)
    Kh = fft(mollifier_kernel(grid, eps)) * grid.cell_area
    fh = fft(f)
    return ifft(fh * _expand(Kh, fh.ndim), grid)


# --- twin runs ---


@dataclass(frozen=True)
class TwinRunConfig:
    base: InitialData = field(default_factory=InitialData)
    delta: float = 1e-3
    perturb: str = "both"  # s | m | both
    beta_exp: float = 0.25
    cadence: int = 1
    horizon: float = 0.01
    seed: int = 1
    mollify_eps: float = 0.1
    threads: int = 1

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.perturb not in ("s", "m", "both"):
            raise ValueError("perturb must be 's', 'm' or 'both'")


@dataclass
class UniquenessReport:
    t: np.ndarray
    W: np.ndarray
    argmax_j: np.ndarray
    hbar: np.ndarray
    int_hbar: np.ndarray
    c_hat: float  # smallest c with W(t) <= W(0) exp(c int_0^t hbar) on fitted points
    c_lsq: float  # log-space least-squares slope through the origin
    status: str = "COMPLETED"
    message: str = ""

    @property
    def budget(self) -> np.ndarray:
        if not np.isfinite(self.c_hat) or self.W.size == 0:
            return np.full_like(self.W, np.nan)
        return self.W[0] * np.exp(self.c_hat * self.int_hbar)

    def rows(self) -> list[dict]:
        b = self.budget
        return [dict(t=self.t[i], W=self.W[i], argmax_j=int(self.argmax_j[i]), hbar=self.hbar[i],
                     int_hbar=self.int_hbar[i], budget=b[i]) for i in range(len(self.t))]


REPORT_COLUMNS = ("t", "W", "argmax_j", "hbar", "int_hbar", "budget")


def perturbed_pair(cfg: TwinRunConfig) -> tuple[State, State]:
    base = make_initial(cfg.base)
    if cfg.delta == 0:
        return base, base.replace()
    grid = base.grid
    rng = np.random.default_rng(cfg.seed)
    noise = mollify(rng.normal(size=grid.shape + (6,)), cfg.mollify_eps, grid)
    noise /= np.sqrt(np.mean(noise**2))
    s2, m2 = base.s, base.m
    if cfg.perturb in ("s", "both"):
        s2 = base.s + cfg.delta * noise[..., :3]
    if cfg.perturb in ("m", "both"):
        m2 = project_to_sphere(base.m + cfg.delta * noise[..., 3:])
    return base, State(s2, m2, 0.0, grid)


def fit_gronwall(t, W, int_hbar, E0: float) -> tuple[float, float]:
    """Gronwall constants from observations with ``W > 10 eps E0`` (and ``t > 0``)."""
    t, W, H = map(np.asarray, (t, W, int_hbar))
    if W.size == 0 or W[0] <= 10 * np.finfo(float).eps * max(E0, 1e-300):
        return 0.0, 0.0
    ok = (t > t[0]) & (H > 0) & (W > 10 * np.finfo(float).eps * max(E0, 1e-300))
    if not np.any(ok):
        return 0.0, 0.0
    y = np.log(W[ok] / W[0])
    x = H[ok]
    return float(np.max(y / x)), float(np.dot(x, y) / np.dot(x, x))


class _Recorder:
    def __init__(self):
        self.states: list[State] = []

    def __call__(self, state):
        self.states.append(state)


def twin_run(cfg: TwinRunConfig, params: ModelParams, step_cfg: StepConfig) -> UniquenessReport:
    """Evolve a base state and its perturbation with identical settings and track ``W``.

    Steps are fixed (``step_cfg.dt``) so that both runs see the same time levels.
    """
    st1, st2 = perturbed_pair(cfg)
    scfg = replace(step_cfg, adaptive=False)
    partition = build_partition(st1.grid)
    recs = (_Recorder(), _Recorder())

    def go(args):
        st, rec = args
        return run(st, cfg.horizon, scfg, params, observers=[rec], cadence=cfg.cadence)

    status, msg = "COMPLETED", ""
    try:
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=2) as ex:
                results = list(ex.map(go, zip((st1, st2), recs)))
        else:
            results = [go(a) for a in zip((st1, st2), recs)]
        for r in results:
            if r.status != "COMPLETED":
                status, msg = r.status, r.message
    except StepFailure as exc:
        status, msg = "ERROR", str(exc)

    n = min(len(recs[0].states), len(recs[1].states))
    entries = [uniqueness_functional(a, b, cfg.beta_exp, partition, params)
               for a, b in zip(recs[0].states[:n], recs[1].states[:n])]
    t = np.array([e.t for e in entries])
    W = np.array([e.W for e in entries])
    hbar = np.array([e.hbar for e in entries])
    H = np.zeros_like(hbar)
    if n > 1:
        H[1:] = np.cumsum(0.5 * (hbar[1:] + hbar[:-1]) * np.diff(t))
    E0 = total_energy(st1, params)
    c_hat, c_lsq = fit_gronwall(t, W, H, E0)
    return UniquenessReport(t, W, np.array([e.argmax_j for e in entries]), hbar, H,
                            c_hat, c_lsq, status, msg)
