"""Time stepping with projection back to the sphere.

``imex`` is the two-stage, second-order, L-stable IMEX Runge-Kutta scheme
ARS(2,2,2).  The implicit part is diagonal in Fourier space:

    m:  alpha/(1+alpha^2) lap m
    s:  (1 - beta/2) lap s

and everything else (including ``div((A(m) - (1-beta/2) I) grad s)``) is
explicit.  ``explicit-rk4`` is the classical fourth-order Runge-Kutta method on
the full right-hand side.  After every stage and step ``m`` is renormalized.
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .field_core import (
    DEFAULT_RHO_MIN,
    NearZeroVector,
    _expand,
    fft,
    gradient,
    ifft,
    integrate,
    parse_snapshot,
    project_to_sphere,
    snapshot_bytes,
)
from .model import ModelParams, State, m_nonlinear_hat, m_rhs_gilbert_heat, spin_rhs, spin_rhs_hat

log = logging.getLogger(__name__)

SCHEMES = ("imex", "explicit-rk4")

_GAMMA = 1.0 - 1.0 / math.sqrt(2.0)
_DELTA = 1.0 - 1.0 / (2.0 * _GAMMA)


class StepFailure(RuntimeError):
    """No step could be accepted with ``dt >= min_dt`` before any progress was made."""

    def __init__(self, msg: str, state: State):
        super().__init__(msg)
        self.state = state


class BlowupSuspected(RuntimeError):
    """Step size collapsed below ``min_dt`` after the run had made progress."""

    def __init__(self, msg: str, state: State):
        super().__init__(msg)
        self.state = state


@dataclass(frozen=True)
class StepConfig:
    dt: float = 1e-4
    scheme: str = "imex"
    cfl_safety: float = 0.5
    max_dt: float = 1e-2
    min_dt: float = 1e-9
    adaptive: bool = True
    # relative energy increase per step that triggers a rejection
    energy_tol: float = 1e-8
    freeze_m: bool = False
    rho_min: float = DEFAULT_RHO_MIN

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if not 0 < self.min_dt <= self.max_dt:
            raise ValueError("need 0 < min_dt <= max_dt")


def _s_split(beta: float) -> float:
    return 1.0 - beta / 2.0


def _explicit_parts(s, m, sh, mh, params: ModelParams, grid, freeze_m: bool):
    """Fourier coefficients of the explicit tendencies (s, m) of the IMEX splitting."""
    c = _s_split(params.beta)
    L = _expand(grid.laplacian_symbol, 3)
    Ns = spin_rhs_hat(s, m, params, grid, s_hat=sh) - c * L * sh
    if freeze_m:
        Nm = np.zeros_like(mh)
    else:
        Nm = m_nonlinear_hat(s, m, params, grid, m_hat=mh)[0] / (1.0 + params.alpha**2)
    return Ns, Nm


def _imex_step(state: State, dt: float, params: ModelParams, cfg: StepConfig) -> State:
    """One ARS(2,2,2) step; the implicit solves are diagonal in Fourier space."""
    grid = state.grid
    s0, m0 = state.s, state.m
    cs = _s_split(params.beta)
    cm = 0.0 if cfg.freeze_m else params.alpha / (1.0 + params.alpha**2)
    g, d = _GAMMA, _DELTA
    L = _expand(grid.laplacian_symbol, 3)
    inv_s = 1.0 / (1.0 - g * dt * cs * L)
    inv_m = 1.0 / (1.0 - g * dt * cm * L)
    s0h, m0h = fft(s0), fft(m0)

    Ns1, Nm1 = _explicit_parts(s0, m0, s0h, m0h, params, grid, cfg.freeze_m)
    s2h = (s0h + dt * g * Ns1) * inv_s
    s2 = ifft(s2h, grid)
    if cfg.freeze_m:
        m2, m2h = m0, m0h
    else:
        m2 = project_to_sphere(ifft((m0h + dt * g * Nm1) * inv_m, grid), cfg.rho_min)
        m2h = fft(m2)

    Ns2, Nm2 = _explicit_parts(s2, m2, s2h, m2h, params, grid, cfg.freeze_m)
    s3 = ifft((s0h + dt * ((1 - g) * cs * L * s2h + d * Ns1 + (1 - d) * Ns2)) * inv_s, grid)
    if cfg.freeze_m:
        m3 = m0
    else:
        m3h = (m0h + dt * ((1 - g) * cm * L * m2h + d * Nm1 + (1 - d) * Nm2)) * inv_m
        m3 = project_to_sphere(ifft(m3h, grid), cfg.rho_min)
    return State(s3, m3, state.t + dt, grid)


def _full_rhs(s, m, params, grid, freeze_m):
    ds = spin_rhs(s, m, params, grid)
    dm = np.zeros_like(m) if freeze_m else m_rhs_gilbert_heat(s, m, params, grid)
    return ds, dm


def _rk4_step(state: State, dt: float, params: ModelParams, cfg: StepConfig) -> State:
    grid = state.grid
    s, m = state.s, state.m
    # stage values are not projected: the classical tableau keeps its order
    tol = dict(unit_sphere_tol=np.inf)
    p = ModelParams(params.alpha, params.beta, params.dealias, **tol)
    k1 = _full_rhs(s, m, p, grid, cfg.freeze_m)
    k2 = _full_rhs(s + 0.5 * dt * k1[0], m + 0.5 * dt * k1[1], p, grid, cfg.freeze_m)
    k3 = _full_rhs(s + 0.5 * dt * k2[0], m + 0.5 * dt * k2[1], p, grid, cfg.freeze_m)
    k4 = _full_rhs(s + dt * k3[0], m + dt * k3[1], p, grid, cfg.freeze_m)
    s_new = s + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    m_new = m + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    if not cfg.freeze_m:
        m_new = project_to_sphere(m_new, cfg.rho_min)
    return State(s_new, m_new, state.t + dt, grid)


def step(state: State, cfg: StepConfig, params: ModelParams, dt: float | None = None) -> State:
    """Advance one step of size ``dt`` (default ``cfg.dt``); may raise NearZeroVector."""
    dt = cfg.dt if dt is None else dt
    if cfg.scheme == "imex":
        new = _imex_step(state, dt, params, cfg)
    else:
        new = _rk4_step(state, dt, params, cfg)
    if not (np.all(np.isfinite(new.s)) and np.all(np.isfinite(new.m))):
        raise NearZeroVector("non-finite values after step")
    return new


def _ars_amplification(zi: complex, ze: complex) -> float:
    """|R| of ARS(2,2,2) on ``y' = (zi + ze) y`` with ``zi`` implicit and ``ze`` explicit, dt = 1."""
    g, d = _GAMMA, _DELTA
    y2 = (1 + g * ze) / (1 - g * zi)
    return abs((1 + (1 - g) * zi * y2 + d * ze + (1 - d) * ze * y2) / (1 - g * zi))


@functools.lru_cache(maxsize=64)
def imex_diffusive_limit(alpha: float, beta: float, freeze_m: bool = False) -> float:
    """Largest ``dt * k^2`` for which the linearized IMEX splitting is stable.

    Two Fourier-mode models: the s-part with implicit ``(1 - beta/2)`` and explicit
    ``-beta/2`` diffusion, and the m-part linearized at a uniform state, with
    implicit damping ``alpha/(1+alpha^2)`` and the explicit precession ``i/(1+alpha^2)``.
    """
    c = _s_split(beta)
    models = [(-c, -beta / 2)]
    if not freeze_m:
        models.append((-alpha / (1 + alpha**2), 1j / (1 + alpha**2)))
    limit = math.inf
    for a, e in models:
        h = np.geomspace(1e-3, 1e4, 4001)
        amp = np.array([_ars_amplification(a * x, e * x) for x in h])
        bad = amp > 1 + 1e-12
        if bad.any():
            limit = min(limit, float(h[np.argmax(bad)]))
    return limit


def suggest_dt(state: State, cfg: StepConfig, params: ModelParams) -> float:
    """Stability-motivated step size for the explicit terms.

    The explicit rate is ``k * (1+alpha) ||grad m||_inf / (1+alpha^2) +
    k * (1+beta) ||s||_inf`` with ``k`` the top dealiased wavenumber, floored
    by the linear stability limit of the splitting at ``k`` (``~k^2``).  The
    suggestion shrinks at least linearly under grid refinement and never
    increases when either sup-norm grows.  A uniform state gets ``max_dt``.
    """
    grid = state.grid
    k = grid.dealias_kmax
    G = gradient(state.m, grid)
    gm = float(np.sqrt(np.max(np.sum(G * G, axis=(-2, -1)))))
    sn = float(np.sqrt(np.max(np.sum(state.s**2, axis=-1))))
    a, b = params.alpha, params.beta
    if gm == 0 and sn == 0:
        # fixed point: every explicit term vanishes
        return cfg.max_dt
    rate = k * (1 + a) * gm / (1 + a * a) + k * (1 + b) * sn
    if cfg.scheme == "explicit-rk4":
        # the stiff diffusion is explicit too
        rate = max(rate, 0.35 * k * k)
    else:
        rate = max(rate, k * k / imex_diffusive_limit(a, b, cfg.freeze_m))
    return min(cfg.max_dt, cfg.cfl_safety / rate)


def total_energy(state: State, params: ModelParams) -> float:
    grid = state.grid
    G = gradient(state.m, grid)
    return integrate(np.sum(state.s**2, axis=-1), grid) + params.alpha * integrate(
        np.sum(G * G, axis=(-2, -1)), grid)


@dataclass
class RunResult:
    state: State
    status: str  # COMPLETED | BLOWUP_SUSPECTED | INTERRUPTED
    steps: int
    rejected: int
    dt: float
    message: str = ""
    dts: list = field(default_factory=list)


Observer = Callable[[State], None]


def run(state: State, t_end: float, cfg: StepConfig, params: ModelParams,
        observers: Sequence[Observer] = (), cadence: int = 1, *,
        max_steps: int | None = None, step_counter: int = 0, dt_hint: float | None = None,
        time_tol: float = 1e-14, observe_initial: bool | None = None) -> RunResult:
    """Step from ``state.t`` to ``t_end``, calling observers every ``cadence`` steps.

    Observers see the initial state (unless resuming, i.e. ``step_counter > 0``;
    ``observe_initial`` overrides) and the final state as well.  A failure
    after progress ends the run with status ``BLOWUP_SUSPECTED`` and the last
    healthy state; a failure before any accepted step raises StepFailure.
    """
    E0 = total_energy(state, params)
    e_tol = cfg.energy_tol * E0 if E0 > 0 else cfg.energy_tol * 1e-300
    steps, rejected = step_counter, 0
    accepted_here = 0
    dts = []
    dt = dt_hint if dt_hint is not None else cfg.dt
    if observe_initial is None:
        observe_initial = step_counter == 0
    if observe_initial:
        for ob in observers:
            ob(state)
    E_prev = E0

    while t_end - state.t > time_tol * max(1.0, abs(t_end)):
        if max_steps is not None and steps >= max_steps:
            return RunResult(state, "INTERRUPTED", steps, rejected, dt, "", dts)
        dt = suggest_dt(state, cfg, params) if cfg.adaptive else cfg.dt
        dt = min(dt, t_end - state.t)
        while True:
            try:
                new = step(state, cfg, params, dt)
                E_new = total_energy(new, params)
                if E_new > E_prev + e_tol:
                    raise NearZeroVector(f"energy increased by {E_new - E_prev:.3e}")
                break
            except NearZeroVector as exc:
                rejected += 1
                dt *= 0.5
                log.debug("step rejected at t=%g: %s; dt -> %g", state.t, exc, dt)
                if dt < cfg.min_dt:
                    msg = f"dt fell below min_dt={cfg.min_dt:g} at t={state.t:.17g}: {exc}"
                    if accepted_here == 0 and step_counter == 0:
                        raise StepFailure("no step accepted; " + msg, state) from exc
                    for ob in observers:
                        ob(state)
                    return RunResult(state, "BLOWUP_SUSPECTED", steps, rejected, dt, msg, dts)
        # snap to t_end to avoid a sliver step
        if abs(new.t - t_end) <= time_tol * max(1.0, abs(t_end)):
            new = new.replace(t=t_end)
        state, E_prev = new, E_new
        steps += 1
        accepted_here += 1
        dts.append(dt)
        if steps % cadence == 0:
            for ob in observers:
                ob(state)
    if steps % cadence != 0:
        for ob in observers:
            ob(state)
    return RunResult(state, "COMPLETED", steps, rejected, dt, "", dts)


# --- checkpoints ---

CHECKPOINT_MAGIC = b"SLLGCKPT"


def config_hash(*objs) -> str:
    payload = json.dumps([asdict(o) if hasattr(o, "__dataclass_fields__") else o for o in objs],
                         sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def write_checkpoint(path: str | Path, state: State, dt: float, step_counter: int, cfg_hash: str,
                     extra: dict | None = None) -> None:
    """Checkpoint: magic, JSON header (t, dt, step, config hash), SLLG1 snapshot of ``[s, m]``."""
    head = {"t": repr(float(state.t)), "dt": repr(float(dt)), "step": int(step_counter),
            "config_hash": cfg_hash}
    head.update(extra or {})
    header = json.dumps(head).encode()
    data = np.concatenate([state.s, state.m], axis=-1)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<q", len(header)) + header)
        fh.write(snapshot_bytes(data, state.grid))


def read_checkpoint(path: str | Path) -> tuple[State, dict]:
    buf = Path(path).read_bytes()
    if not buf.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    (n,) = struct.unpack_from("<q", buf, off)
    header = json.loads(buf[off + 8: off + 8 + n])
    data, grid = parse_snapshot(buf[off + 8 + n:])
    header["t"] = float(header["t"])
    header["dt"] = float(header["dt"])
    return State(data[..., :3].copy(), data[..., 3:].copy(), header["t"], grid), header
