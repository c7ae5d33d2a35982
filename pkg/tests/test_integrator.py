import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import smooth_state
from sllg import integrator
from sllg.field_core import Grid, NearZeroVector
from sllg.integrator import (
    StepConfig,
    StepFailure,
    imex_diffusive_limit,
    read_checkpoint,
    run,
    step,
    suggest_dt,
    total_energy,
    write_checkpoint,
)
from sllg.lab import bandlimited_unit_field, bubble_field
from sllg.model import ModelParams, State


def uniform(grid, s0, m0):
    s = np.broadcast_to(np.asarray(s0, float), grid.shape + (3,)).copy()
    m = np.broadcast_to(np.asarray(m0, float), grid.shape + (3,)).copy()
    return State(s, m, 0.0, grid)


def test_step_config_validation():
    with pytest.raises(ValueError):
        StepConfig(dt=0.0)
    with pytest.raises(ValueError):
        StepConfig(scheme="euler")
    with pytest.raises(ValueError):
        StepConfig(cfl_safety=1.5)
    with pytest.raises(ValueError):
        StepConfig(min_dt=1.0, max_dt=0.1)


@pytest.mark.parametrize("scheme", ["imex", "explicit-rk4"])
@pytest.mark.parametrize("dt", [1e-4, 0.1, 10.0])
def test_uniform_fixed_point(scheme, dt):
    st0 = uniform(Grid(8, 8), [0, 0, 0], [0.0, 0.6, 0.8])
    new = step(st0, StepConfig(dt=dt, scheme=scheme), ModelParams())
    np.testing.assert_array_equal(new.m, st0.m)
    np.testing.assert_array_equal(new.s, st0.s)
    assert new.t == dt


@pytest.mark.parametrize("scheme", ["imex", "explicit-rk4"])
def test_uniform_spin_decay(scheme):
    # ds/dt = -s - s x m preserves the direction-free part: |s(t)| = |s0| e^-t
    grid = Grid(8, 8)
    s0 = np.array([0.3, -0.4, 1.2])
    errs = []
    for n in (20, 40):
        st_ = uniform(grid, s0, [0, 0, 1])
        cfg = StepConfig(dt=0.2 / n, scheme=scheme)
        for _ in range(n):
            st_ = step(st_, cfg, ModelParams())
        errs.append(abs(np.linalg.norm(st_.s[0, 0]) - np.linalg.norm(s0) * math.exp(-0.2)))
    assert errs[0] < 1e-3
    assert errs[1] < errs[0] / 3.5


def _final(st0, scheme, dt, n, params):
    cfg = StepConfig(dt=dt, scheme=scheme)
    st_ = st0
    for _ in range(n):
        st_ = step(st_, cfg, params)
    return np.concatenate([st_.s, st_.m], axis=-1)


def _observed_order(st0, scheme, dt, n, params):
    u = [_final(st0, scheme, dt / 2**k, n * 2**k, params) for k in range(3)]
    e1 = np.max(np.abs(u[0] - u[1]))
    e2 = np.max(np.abs(u[1] - u[2]))
    return math.log2(e1 / e2)


def test_imex_self_convergence():
    st0 = smooth_state(Grid(32, 32), seed=1)
    assert _observed_order(st0, "imex", 2.5e-4, 20, ModelParams()) >= 1.0


def test_rk4_self_convergence():
    # at 64^2 the dealiased band resolves the band-limited data, so projection
    # does not leak an O(dt) aliasing error into the comparison
    grid = Grid(64, 64)
    rng = np.random.default_rng(0)
    m = bandlimited_unit_field(grid, rng, 1)
    st0 = smooth_state(grid, seed=0).replace(m=m)
    assert _observed_order(st0, "explicit-rk4", 5e-5, 40, ModelParams()) >= 3.5


def test_projection_after_step():
    grid = Grid(32, 32)
    st_ = State(np.zeros(grid.shape + (3,)), bubble_field(grid, 0.125), 0.0, grid)
    cfg = StepConfig()
    p = ModelParams()
    for _ in range(20):
        st_ = step(st_, cfg, p, suggest_dt(st_, cfg, p))
        assert np.max(np.abs(np.linalg.norm(st_.m, axis=-1) - 1)) <= 1e-12


def test_suggest_dt_uniform_is_max_dt():
    st0 = uniform(Grid(16, 16), [0, 0, 0], [1, 0, 0])
    assert suggest_dt(st0, StepConfig(max_dt=0.05), ModelParams()) == 0.05


@pytest.mark.parametrize("scheme", ["imex", "explicit-rk4"])
def test_suggest_dt_grid_doubling(scheme):
    cfg = StepConfig(scheme=scheme, max_dt=1.0)
    p = ModelParams()
    dts = []
    for n in (32, 64, 128):
        grid = Grid(n, n)
        dts.append(suggest_dt(smooth_state(grid, seed=2), cfg, p))
    assert dts[1] <= 0.5 * dts[0] and dts[2] <= 0.5 * dts[1]


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 50.0), st.floats(1.0, 10.0))
def test_suggest_dt_monotone_in_s(a, factor):
    grid = Grid(16, 16)
    base = smooth_state(grid, seed=3, s_amp=1.0)
    cfg = StepConfig(max_dt=1.0)
    p = ModelParams()
    lo = suggest_dt(base.replace(s=a * base.s), cfg, p)
    hi = suggest_dt(base.replace(s=a * factor * base.s), cfg, p)
    assert hi <= lo


def test_suggest_dt_monotone_in_grad_m():
    grid = Grid(32, 32)
    x, y = grid.coords()
    cfg = StepConfig(max_dt=1.0, cfl_safety=1.0)
    dts = []
    for k in (1, 2, 4, 8):
        th = 2 * np.pi * k * x
        m = np.stack([np.sin(th), np.zeros_like(th), np.cos(th)], -1)
        st_ = State(np.ones_like(m), m, 0.0, grid)
        dts.append(suggest_dt(st_, cfg, ModelParams()))
    assert all(b <= a for a, b in zip(dts, dts[1:]))


def test_linear_stability_limit():
    lim = imex_diffusive_limit(1.0, 0.5)
    assert 4.0 < lim < 6.0
    assert imex_diffusive_limit(1.0, 0.5, True) > lim


def test_run_zero_horizon_is_identity():
    st0 = smooth_state(Grid(16, 16))
    seen = []
    res = run(st0, 0.0, StepConfig(), ModelParams(), observers=[seen.append])
    assert res.state is st0 and res.steps == 0 and res.status == "COMPLETED"
    assert len(seen) == 1


def test_run_cadence_and_energy():
    st0 = smooth_state(Grid(32, 32), seed=4)
    p = ModelParams()
    seen = []
    res = run(st0, 2e-3, StepConfig(), p, observers=[seen.append], cadence=3)
    assert res.status == "COMPLETED" and res.rejected == 0
    assert res.state.t == 2e-3
    assert len(seen) == 1 + res.steps // 3 + (res.steps % 3 != 0)
    E = [total_energy(s, p) for s in seen]
    assert all(b <= a * (1 + 1e-8) for a, b in zip(E, E[1:]))


def test_run_deterministic():
    st0 = smooth_state(Grid(32, 32), seed=5)
    a = run(st0, 1e-3, StepConfig(), ModelParams()).state
    b = run(st0, 1e-3, StepConfig(), ModelParams()).state
    np.testing.assert_array_equal(a.s, b.s)
    np.testing.assert_array_equal(a.m, b.m)


def test_checkpoint_resume_bit_identical(tmp_path):
    st0 = smooth_state(Grid(32, 32), seed=6)
    cfg, p = StepConfig(), ModelParams()
    full = run(st0, 2e-3, cfg, p)
    part = run(st0, 2e-3, cfg, p, max_steps=5)
    assert part.status == "INTERRUPTED" and part.steps == 5
    write_checkpoint(tmp_path / "c.ckpt", part.state, part.dt, part.steps, "abc")
    state, head = read_checkpoint(tmp_path / "c.ckpt")
    assert head["step"] == 5 and head["config_hash"] == "abc" and state.t == part.state.t
    rest = run(state, 2e-3, cfg, p, step_counter=head["step"], dt_hint=head["dt"])
    assert rest.steps == full.steps
    np.testing.assert_array_equal(rest.state.s, full.state.s)
    np.testing.assert_array_equal(rest.state.m, full.state.m)


def test_checkpoint_rejects_other_files(tmp_path):
    (tmp_path / "x").write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        read_checkpoint(tmp_path / "x")


def test_step_failure_before_progress():
    st0 = smooth_state(Grid(32, 32), seed=7, s_amp=5.0)
    cfg = StepConfig(dt=1.0, min_dt=0.6, max_dt=1.0, adaptive=False)
    with pytest.raises(StepFailure) as exc:
        run(st0, 2.0, cfg, ModelParams())
    assert exc.value.state is st0


def test_blowup_suspected_after_progress(monkeypatch):
    st0 = smooth_state(Grid(16, 16), seed=8)
    real = integrator.step
    calls = {"n": 0}

    def flaky(state, cfg, params, dt=None):
        calls["n"] += 1
        if calls["n"] > 3:
            raise NearZeroVector("synthetic collapse")
        return real(state, cfg, params, dt)

    monkeypatch.setattr(integrator, "step", flaky)
    seen = []
    res = run(st0, 1.0, StepConfig(min_dt=1e-6), ModelParams(), observers=[seen.append], cadence=100)
    assert res.status == "BLOWUP_SUSPECTED"
    assert res.steps == 3
    assert seen[-1] is res.state and "min_dt" in res.message


def test_freeze_m_leaves_m():
    st0 = smooth_state(Grid(16, 16), seed=9)
    cfg = replace(StepConfig(), freeze_m=True)
    new = step(st0, cfg, ModelParams())
    np.testing.assert_array_equal(new.m, st0.m)
