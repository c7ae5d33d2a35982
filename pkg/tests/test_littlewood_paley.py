import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import smooth_state
from sllg.field_core import Grid, dealias, gradient, l2_norm
from sllg.lab import random_trig_field
from sllg.littlewood_paley import (
    PartitionError,
    all_blocks,
    besov_norm,
    block,
    block_norms,
    bony,
    build_partition,
    chi,
    commutator_block,
    dump_partition,
    low_pass,
    phi,
    uniqueness_functional,
)
from sllg.model import ModelParams, State, m_rhs_LL


@pytest.fixture(scope="module")
def part64():
    return build_partition(Grid(64, 64))


def random_dealiased(grid, seed, ncomp=3):
    return dealias(np.random.default_rng(seed).normal(size=grid.shape + (ncomp,)), grid)


def test_partition_shells_and_unity(part64):
    assert part64.j_max >= 3
    assert part64.unity_residual() <= 1e-12


def test_profile_at_origin():
    assert chi(np.array([0.0]))[0] == 1.0
    assert all(phi(np.array([0.0]) / 2.0**j)[0] == 0.0 for j in range(8))


def test_profile_supports():
    r = np.linspace(0, 4, 4001)
    assert np.all(chi(r)[r > 4 / 3] == 0)
    p = phi(r)
    assert np.all(p[(r < 0.75) | (r > 8 / 3)] == 0)
    assert np.all(p >= 0) and np.all(chi(r) >= 0)


def test_disjoint_annuli(part64):
    for j in range(part64.j_max + 1):
        for k in range(j + 2, part64.j_max + 1):
            assert np.max(part64.symbol(j) * part64.symbol(k)) == 0.0
    # chi only meets phi_0
    for k in range(1, part64.j_max + 1):
        assert np.max(part64.symbol(-1) * part64.symbol(k)) == 0.0


def test_grid_too_small():
    with pytest.raises(PartitionError):
        build_partition(Grid(4, 4))
    assert build_partition(Grid(8, 8)).j_max >= 1


@pytest.mark.parametrize("seed", range(3))
def test_reconstruction(part64, seed):
    grid = part64.grid
    f = random_dealiased(grid, seed)
    rec = sum(all_blocks(f, part64))
    assert np.linalg.norm(rec - f) <= 1e-12 * np.linalg.norm(f)
    np.testing.assert_allclose(low_pass(f, part64.j_max + 1, part64), f, atol=1e-12)


def test_almost_orthogonality(part64):
    f = random_dealiased(part64.grid, 4)
    for j in part64.shells:
        bj = block(f, j, part64)
        for k in part64.shells:
            if abs(j - k) >= 2:
                assert np.max(np.abs(block(bj, k, part64))) < 1e-14


def test_single_mode_support(part64):
    grid = part64.grid
    x, y = grid.coords()
    f = np.cos(2 * np.pi * 5 * x)[..., None]
    norms = block_norms(f, part64)
    live = np.nonzero(norms > 1e-14)[0] - 1
    assert 1 <= len(live) <= 2 and np.ptp(live) <= 1
    for j in part64.shells:
        if min(abs(j - k) for k in live) >= 2:
            assert np.max(np.abs(block(f, j, part64))) < 1e-14


@pytest.mark.parametrize("n,s", [(3, 0.0), (5, -0.25), (12, 0.5), (17, -1.0)])
def test_besov_single_mode(part64, n, s):
    grid = part64.grid
    x, _ = grid.coords()
    f = np.sqrt(2) * np.cos(2 * np.pi * n * x)[..., None]
    assert l2_norm(f, grid) == pytest.approx(1.0, rel=1e-14)
    norms = block_norms(f, part64)
    live = np.nonzero(norms > 1e-14)[0] - 1
    w = 2.0 ** (live * s)
    b = besov_norm(f, s, part64)
    assert 0.5 * w.min() - 1e-14 <= b <= w.max() + 1e-14


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.floats(-1.0, 1.0), st.floats(-5.0, 5.0).filter(lambda x: x == 0 or abs(x) > 1e-6))
def test_besov_homogeneity(seed, s, lam):
    part = build_partition(Grid(32, 32))
    f = random_dealiased(part.grid, seed)
    assert besov_norm(lam * f, s, part) == pytest.approx(abs(lam) * besov_norm(f, s, part), rel=1e-12)


def test_besov_zero_and_bounds(part64):
    grid = part64.grid
    assert besov_norm(np.zeros(grid.shape + (3,)), -0.25, part64) == 0.0
    for seed in range(5):
        f = random_dealiased(grid, seed)
        b0 = besov_norm(f, 0.0, part64)
        nrm = l2_norm(f, grid)
        assert b0 <= nrm * (1 + 1e-12)
        assert nrm <= len(part64.symbols) * b0


def test_bernstein_bounds(part64):
    grid = part64.grid
    f = random_dealiased(grid, 7)
    for j in range(part64.j_max + 1):
        bj = block(f, j, part64)
        ratio = l2_norm(gradient(bj, grid), grid) / l2_norm(bj, grid)
        scale = 2.0**j * part64.xi0
        assert 0.75 * scale <= ratio <= 8 / 3 * scale


@pytest.mark.parametrize("seed", range(3))
def test_bony_reconstruction(part64, seed):
    grid = part64.grid
    u = random_dealiased(grid, seed)
    v = random_dealiased(grid, seed + 10)
    T1, T2, R = bony(u, v, part64)
    assert np.max(np.abs(T1 + T2 + R - u * v)) <= 1e-12 * np.max(np.abs(u * v))


def test_bony_constant_u(part64):
    grid = part64.grid
    c = np.array([0.5, -2.0, 1.5])
    u = np.broadcast_to(c, grid.shape + (3,)).copy()
    v = random_dealiased(grid, 3)
    T_uv, T_vu, R = bony(u, v, part64)
    # S_{j-1} u = c for j >= 1; only the blocks j = -1, 0 of v escape T_u v
    low = block(v, -1, part64) + block(v, 0, part64)
    np.testing.assert_allclose(T_uv, c * (v - low), atol=1e-12)
    np.testing.assert_allclose(T_uv + T_vu + R, u * v, atol=1e-12)


def test_bony_with_shape_mismatch(part64):
    with pytest.raises(ValueError):
        bony(np.zeros((64, 64, 3)), np.zeros((64, 64, 1)), part64)


def test_paraproduct_block_localization(part64):
    grid = part64.grid
    u = random_dealiased(grid, 20)
    v = random_dealiased(grid, 21)
    scale = np.max(np.abs(u)) * np.max(np.abs(v))
    for k in part64.shells:
        piece = low_pass(u, k - 1, part64) * block(v, k, part64)
        for j in part64.shells:
            if abs(j - k) >= 5:
                assert np.max(np.abs(block(piece, j, part64))) <= 1e-13 * scale


def test_commutator_trivial_cases(part64):
    grid = part64.grid
    g = random_dealiased(grid, 30)
    f_const = np.full(grid.shape, 2.5)
    for j in part64.shells:
        assert np.max(np.abs(commutator_block(f_const, g, j, part64))) < 1e-12
    f = random_trig_field(grid, np.random.default_rng(0), 3, ncomp=1)[..., 0]
    g_const = np.ones(grid.shape + (3,))
    for j in part64.shells:
        assert np.max(np.abs(commutator_block(f, g_const, j, part64))) == 0.0


def test_commutator_gain_profile(part64):
    grid = part64.grid
    rng = np.random.default_rng(1)
    f = random_trig_field(grid, rng, 2, ncomp=1)[..., 0]
    g = random_dealiased(grid, 31)
    G = gradient(g, grid)
    ratios = []
    for j in range(1, part64.j_max + 1):
        c = l2_norm(commutator_block(f, g, j, part64), grid)
        ratios.append(c / l2_norm(block(G, j, part64), grid) * 2.0**j)
    # [Delta_j, f] grad g gains one derivative: ratio * 2^j stays bounded away
    # from the top shells, where f pushes the product out of the dealiased band
    print("commutator ratio * 2^j:", ", ".join(f"{r:.3g}" for r in ratios))
    inner = ratios[:-2]
    assert max(inner) < 2 * min(inner)


def _uniform_state(grid, s, m):
    return State(np.broadcast_to(np.asarray(s, float), grid.shape + (3,)).copy(),
                 np.broadcast_to(np.asarray(m, float), grid.shape + (3,)).copy(), 0.0, grid)


def test_W_identical_states_zero(part64):
    st_ = smooth_state(part64.grid, seed=2)
    e = uniqueness_functional(st_, st_.replace(), 0.25, part64, ModelParams())
    assert e.W == 0.0 and np.all(e.W_j == 0.0)


def test_W_translation_invariant(part64):
    a = smooth_state(part64.grid, seed=3)
    b = smooth_state(part64.grid, seed=4)
    e1 = uniqueness_functional(a, b, 0.25, part64, ModelParams())

    def shift(st_):
        return st_.replace(s=np.roll(st_.s, (5, -9), (0, 1)), m=np.roll(st_.m, (5, -9), (0, 1)))

    e2 = uniqueness_functional(shift(a), shift(b), 0.25, part64, ModelParams())
    assert e2.W == pytest.approx(e1.W, rel=1e-12)
    assert e2.hbar == pytest.approx(e1.hbar, rel=1e-12)


def test_W_blind_outside_band(part64):
    grid = part64.grid
    a = smooth_state(grid, seed=5)
    noise = np.random.default_rng(0).normal(size=grid.shape + (3,))
    high = noise - dealias(noise, grid)
    e = uniqueness_functional(a, a.replace(s=a.s + high), 0.25, part64, ModelParams())
    assert e.W < 1e-25
    e = uniqueness_functional(a, a.replace(s=a.s + 1e-3 * dealias(noise, grid)), 0.25, part64, ModelParams())
    assert e.W > 1e-10


def test_W_definition(part64):
    a = smooth_state(part64.grid, seed=6)
    b = smooth_state(part64.grid, seed=7)
    e = uniqueness_functional(a, b, 0.3, part64, ModelParams())
    js = np.arange(-1, part64.j_max + 1)
    weighted = 2.0 ** (-0.6 * js) * e.W_j
    assert e.W == weighted.max() and e.argmax_j == js[np.argmax(weighted)]
    assert np.all(e.W_j >= 0)


def test_beta_exp_domain(part64):
    st_ = smooth_state(part64.grid)
    for bad in (0.0, 0.5, 0.7):
        with pytest.raises(ValueError):
            uniqueness_functional(st_, st_, bad, part64, ModelParams())


def test_hbar_uniform_closed_form():
    grid = Grid(32, 32, 2.0, 0.5)
    part = build_partition(grid)
    p = ModelParams(alpha=0.7, beta=0.5)
    c1, c2 = np.array([0.2, -0.5, 1.0]), np.array([1.5, 0.0, 0.3])
    a1, a2 = np.array([0.0, 0.0, 1.0]), np.array([0.6, 0.8, 0.0])
    s1, s2 = _uniform_state(grid, c1, a1), _uniform_state(grid, c2, a2)
    dm1 = m_rhs_LL(s1.s, s1.m, p, grid)[0, 0]
    dm2 = m_rhs_LL(s2.s, s2.m, p, grid)[0, 0]
    q = lambda v: float(np.dot(v, v))
    want = 1 + grid.area * (q(c1) ** 2 + q(c2) ** 2 + q(c1) + q(c2) + q(dm1) + q(dm2))
    e = uniqueness_functional(s1, s2, 0.25, part, p)
    assert e.hbar == pytest.approx(want, rel=1e-13)


def test_dump_partition(part64, tmp_path):
    dump_partition(part64, tmp_path / "p.csv")
    with open(tmp_path / "p.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:4] == ["n1", "n2", "radius", "chi"]
    assert len(rows[0]) == 4 + part64.j_max + 1
    assert len(rows) - 1 == int(part64.band.sum())
    sums = [sum(float(v) for v in r[3:]) for r in rows[1:]]
    assert max(abs(s - 1) for s in sums) <= 1e-12
