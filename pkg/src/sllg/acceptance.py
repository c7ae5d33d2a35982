"""Acceptance suite: the twelve quantitative checks, shared by ``sllg selftest`` and the test-suite.

Every check returns a :class:`CriterionResult` carrying the measured numbers,
so failures are reported with the value that missed the tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diagnostics import (
    BlowupConfig,
    BlowupMonitor,
    Verdict,
    coupled_energy_check,
    energy,
    local_energy,
    s_energy_law_residual,
)
from .field_core import Grid, dealias, gradient, l2_norm
from .integrator import StepConfig, run, total_energy
from .lab import (
    InitialData,
    TwinRunConfig,
    bandlimited_unit_field,
    bubble_dirichlet_energy,
    make_initial,
    mollify,
    random_trig_field,
    twin_run,
)
from .littlewood_paley import all_blocks, bony, build_partition
from .model import ModelParams, State, assemble_A, m_rhs_gilbert_heat, m_rhs_LL


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f} s)"


def _unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def ellipticity(n: int = 10**6, betas=(0.25, 0.5, 0.9), seed: int = 0):
    rng = np.random.default_rng(seed)
    worst_q, worst_eig = 0.0, 0.0
    for beta in betas:
        m = _unit(rng, n)
        xi = rng.normal(size=(n, 3))
        A = assemble_A(m, ModelParams(beta=beta))
        q = A.quadratic_form(xi)
        x2 = np.sum(xi * xi, axis=-1)
        # violations of (1-beta)|xi|^2 <= q <= |xi|^2, relative to |xi|^2
        lo = ((1 - beta) * x2 - q) / x2
        hi = (q - x2) / x2
        worst_q = max(worst_q, float(np.max(lo)), float(np.max(hi)))
        eig = np.linalg.eigh(A.matrix())[0]
        worst_eig = max(worst_eig, float(np.abs(eig - np.array([1 - beta, 1.0, 1.0])).max()))
    ok = worst_q <= 1e-12 and worst_eig <= 1e-12
    return ok, f"bound violation {worst_q:.2e}, eigenvalue error {worst_eig:.2e} (tol 1e-12)"


def _test_fields(count=20, n=64, seed=0):
    grid = Grid(n, n)
    rng = np.random.default_rng(seed)
    for _ in range(count):
        m = bandlimited_unit_field(grid, rng)
        s = random_trig_field(grid, rng, 2)
        yield grid, s, m


def form_equivalence(count: int = 20):
    worst = 0.0
    params = ModelParams()
    for grid, s, m in _test_fields(count):
        d = m_rhs_LL(s, m, params, grid) - m_rhs_gilbert_heat(s, m, params, grid)
        worst = max(worst, float(np.abs(d).max()))
    return worst <= 1e-10, f"max |LL - Gilbert-heat| = {worst:.2e} over {count} fields (tol 1e-10)"


def constraint_preservation(n: int = 64, steps: int = 1000):
    st = make_initial(InitialData(kind="bubble", nx=n, ny=n))
    params = ModelParams()
    dev = [0.0]

    def ob(state):
        dev[0] = max(dev[0], float(np.abs(np.linalg.norm(state.m, axis=-1) - 1).max()))

    res = run(st, 1.0, StepConfig(adaptive=True), params, observers=[ob], max_steps=steps)
    ok = res.steps == steps and res.rejected == 0 and dev[0] <= 1e-12
    return ok, (f"{res.steps} steps, {res.rejected} rejected, max||m|-1| = {dev[0]:.2e} "
                f"(tol 1e-12), t = {res.state.t:.4g}")


def s_energy_law(dts=(4e-4, 2e-4, 1e-4), t_end: float = 0.02, seed: int = 3):
    params = ModelParams()
    st = make_initial(InitialData(seed=seed))
    res = []
    for dt in dts:
        reps = []
        run(st, t_end, StepConfig(dt=dt, adaptive=False, freeze_m=True), params,
            observers=[lambda x: reps.append(energy(x, params))])
        res.append(abs(s_energy_law_residual(reps)))
    r = np.array(res)
    orders = np.log2(r[:-1] / r[1:])
    rich = float(np.log2(abs(r[0] - r[1]) / abs(r[1] - r[2])))
    ok = bool(np.all(orders >= 1.0)) and rich >= 1.0
    return ok, (f"residuals {', '.join(f'{x:.2e}' for x in r)}; orders "
                f"{', '.join(f'{x:.2f}' for x in orders)}, Richardson {rich:.2f} (need >= 1.0)")


def coupled_dissipation(runs: int = 10, t_end: float = 0.1, n: int = 64, report_every: int = 8):
    params = ModelParams()
    worst_inc, worst_slack, rejected = -np.inf, np.inf, 0
    for seed in range(runs):
        st = make_initial(InitialData(nx=n, ny=n, seed=seed))
        E0 = total_energy(st, params)
        Es, reps = [], []
        count = [0]

        def ob(state):
            Es.append(total_energy(state, params))
            if count[0] % report_every == 0 or state.t >= t_end:
                reps.append(energy(state, params))
            count[0] += 1

        res = run(st, t_end, StepConfig(cfl_safety=0.9), params, observers=[ob])
        rejected += res.rejected
        worst_inc = max(worst_inc, float(np.max(np.diff(Es))) / E0)
        chk = coupled_energy_check(reps, params, raise_on_violation=False)
        worst_slack = min(worst_slack, chk.min_slack / E0)
    ok = worst_inc <= 1e-8 and worst_slack >= 0 and rejected == 0
    return ok, (f"max per-step increase {worst_inc:.2e} E0 (tol 1e-8), "
                f"min slack {worst_slack:.3e} E0, {rejected} rejected steps over {runs} runs")


def gilbert_orthogonality():
    params = ModelParams()
    worst = 0.0
    fields = [(g, s, m) for g, s, m in _test_fields()]
    for kind in ("bubble", "fourier-random"):
        st = make_initial(InitialData(kind=kind))
        fields.append((st.grid, st.s + 0.3, st.m))
    for grid, s, m in fields:
        d = np.sum(m * m_rhs_LL(s, m, params, grid), axis=-1)
        worst = max(worst, float(np.abs(d).max()))
    return worst <= 1e-10, f"max |m . m_rhs_LL| = {worst:.2e} over {len(fields)} fields (tol 1e-10)"


def _random_dealiased(grid, rng, ncomp=3):
    return dealias(rng.normal(size=grid.shape + (ncomp,)), grid)


def lp_exactness(sizes=(64, 128), seed: int = 0):
    rng = np.random.default_rng(seed)
    rec, bony_err, cross = 0.0, 0.0, 0.0
    for n in sizes:
        grid = Grid(n, n)
        part = build_partition(grid)
        f = _random_dealiased(grid, rng)
        rec = max(rec, l2_norm(sum(all_blocks(f, part)) - f, grid) / l2_norm(f, grid))
        syms = part.symbols
        for a in range(len(syms)):
            for b in range(a + 2, len(syms)):
                cross = max(cross, float(np.abs(syms[a] * syms[b]).max()))
        u, v = _random_dealiased(grid, rng), _random_dealiased(grid, rng)
        T1, T2, R = bony(u, v, part)
        bony_err = max(bony_err, float(np.abs(T1 + T2 + R - u * v).max() / np.abs(u * v).max()))
    ok = rec <= 1e-12 and cross == 0.0 and bony_err <= 1e-12
    return ok, (f"reconstruction {rec:.2e}, max |sym_j sym_k| (|j-k|>=2) = {cross:.1e}, "
                f"Bony {bony_err:.2e} (tol 1e-12)")


def bernstein_band(sizes=(64, 128), trials: int = 5, seed: int = 0):
    rng = np.random.default_rng(seed)
    lo, hi = np.inf, 0.0
    for n in sizes:
        grid = Grid(n, n)
        part = build_partition(grid)
        for _ in range(trials):
            f = _random_dealiased(grid, rng)
            blocks = all_blocks(f, part)
            for j in range(0, part.j_max + 1):
                b = blocks[j + 1]
                ratio = l2_norm(gradient(b, grid), grid) / l2_norm(b, grid) / (2.0**j * part.xi0)
                lo, hi = min(lo, ratio), max(hi, ratio)
    ok = lo >= 0.75 and hi <= 2.67
    return ok, f"normalized ratios in [{lo:.3f}, {hi:.3f}] (band [0.75, 2.67]), shells j >= 0"


def uniqueness_functional_check(delta: float = 1e-3, horizon: float = 0.02, dt: float = 1e-4):
    params = ModelParams()
    obs = 2e-3

    def go(d, step):
        cfg = TwinRunConfig(delta=d, horizon=horizon, cadence=int(round(obs / step)))
        return twin_run(cfg, params, StepConfig(dt=step))

    zero = go(0.0, dt)
    full, half, fine = go(delta, dt), go(delta / 2, dt), go(delta, dt / 2)
    ratio = full.W.max() / half.W.max()
    c_rel = abs(fine.c_hat - full.c_hat) / abs(full.c_hat) if full.c_hat != 0 else np.inf
    zero_max = float(np.abs(zero.W).max())
    ok = zero_max == 0.0 and abs(ratio / 4 - 1) <= 0.04 and c_rel <= 0.2
    ok = ok and all(r.status == "COMPLETED" for r in (zero, full, half, fine))
    return ok, (f"delta=0: max W = {zero_max:.1e}; sup W ratio {ratio:.4f} (4 +- 4%); "
                f"c_hat {full.c_hat:.4g} vs {fine.c_hat:.4g} at dt/2 ({100 * c_rel:.2f}%, tol 20%)")


def gaussian_spike(grid: Grid, mass: float, sigma: float, center=(0.5, 0.5)) -> np.ndarray:
    """``m = (sin th, 0, cos th)``, ``th = a exp(-r^2 / 2 sigma^2)`` with ``int |grad m|^2 = mass``.

    Then ``|grad m|^2 = |grad th|^2`` and ``int_{B_rho} |grad th|^2 = pi a^2 (1 - (1 + q) e^-q)``,
    ``q = rho^2 / sigma^2``, so the whole-plane integral is ``pi a^2``.
    """
    x, y = grid.coords()
    X = (x - center[0] * grid.lx + grid.lx / 2) % grid.lx - grid.lx / 2
    Y = (y - center[1] * grid.ly + grid.ly / 2) % grid.ly - grid.ly / 2
    a = np.sqrt(mass / np.pi)
    th = a * np.exp(-(X**2 + Y**2) / (2 * sigma**2))
    return np.stack([np.sin(th), np.zeros_like(th), np.cos(th)], axis=-1)


def spike_ball_energy(mass: float, sigma: float, rho: float) -> float:
    q = rho**2 / sigma**2
    return mass * (1 - (1 + q) * np.exp(-q))


def blowup_calibration(n: int = 128, repeats: int = 3):
    cfg = BlowupConfig()
    grid = Grid(n, n)
    sigma = cfg.R0 / 8
    out, err = {}, 0.0
    for label, mass in (("2 eps0", 2 * cfg.epsilon0), ("eps0/2", cfg.epsilon0 / 2)):
        m = gaussian_spike(grid, mass, sigma)
        st = State(np.zeros_like(m), m, 0.0, grid)
        verdicts = {BlowupMonitor(cfg).observe(st) for _ in range(repeats)}
        out[label] = verdicts
        dens = np.sum(gradient(m, grid) ** 2, axis=(-2, -1))
        centre = np.array([[n // 2, n // 2]])
        measured = local_energy(dens, grid, [cfg.R0 / 2], centre).max()
        err = max(err, abs(measured / spike_ball_energy(mass, sigma, cfg.R0 / 2) - 1))
    ok = (out["2 eps0"] == {Verdict.CONCENTRATING} and out["eps0/2"] == {Verdict.CLEAR}
          and err <= 1e-3)
    shown = {k: sorted(v.value for v in vs) for k, vs in out.items()}
    return ok, f"verdicts {shown} over {repeats} repeats; closed-form ball energy error {err:.1e}"


def mollifier_check(n: int = 128, seed: int = 0):
    grid = Grid(n, n)
    f = random_trig_field(grid, np.random.default_rng(seed), 3)
    eps = np.array([1 / 8, 1 / 16, 1 / 32])
    errs, mean_err = [], 0.0
    for e in eps:
        J = mollify(f, e, grid)
        mean_err = max(mean_err, float(np.abs(J.mean(axis=(0, 1)) - f.mean(axis=(0, 1))).max()))
        errs.append(l2_norm(J - f, grid))
    order = float(np.polyfit(np.log(eps), np.log(errs), 1)[0])
    ok = mean_err <= 1e-12 and order >= 1.8
    return ok, f"mean error {mean_err:.1e} (tol 1e-12), order {order:.3f} (need >= 1.8)"


def bubble_energy(n: int = 128, fractions=(8, 16, 32)):
    grid = Grid(n, n)
    parts, ok = [], True
    for k in fractions:
        _, excess = bubble_dirichlet_energy(grid, grid.lx / k)
        ok = ok and abs(excess) <= 0.01
        parts.append(f"lx/{k}: {100 * excess:+.2f}%")
    return ok, "excess over 8 pi " + ", ".join(parts) + " (tol 1%)"


CRITERIA: list[tuple[int, str, Callable]] = [
    (1, "ellipticity", ellipticity),
    (2, "form equivalence", form_equivalence),
    (3, "constraint preservation", constraint_preservation),
    (4, "discrete s-energy law", s_energy_law),
    (5, "coupled dissipation", coupled_dissipation),
    (6, "Gilbert orthogonality", gilbert_orthogonality),
    (7, "Littlewood-Paley exactness", lp_exactness),
    (8, "Bernstein band", bernstein_band),
    (9, "uniqueness functional", uniqueness_functional_check),
    (10, "blow-up detector calibration", blowup_calibration),
    (11, "mollifier", mollifier_check),
    (12, "bubble energy oracle", bubble_energy),
]


def evaluate(number: int) -> CriterionResult:
    for k, name, fn in CRITERIA:
        if k == number:
            t0 = time.perf_counter()
            ok, detail = fn()
            return CriterionResult(k, name, bool(ok), detail, time.perf_counter() - t0)
    raise KeyError(number)
