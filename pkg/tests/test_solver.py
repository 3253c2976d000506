import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kconv_euler.cases import smooth_periodic
from kconv_euler.eos import GasLaw
from kconv_euler.mesh import build_mesh
from kconv_euler.solver import (
    SchemeParams,
    SolverError,
    State,
    advance,
    initial_state,
    jacobian,
    residual,
    run,
)

GAS = GasLaw(1.0, 1.5)
PARAMS = SchemeParams()


def _random_state(rng, n, d=1):
    return State(rng.uniform(0.5, 2.0, n), rng.uniform(-1.0, 1.0, (n, d)))


def test_constant_state_residual_is_exactly_zero():
    mesh = build_mesh(8)
    s = State(np.full(8, 1.3), np.full((8, 1), 0.4))
    assert np.all(residual(s, s, 0.1, mesh, GAS, PARAMS) == 0.0)


def test_two_cell_hand_case():
    # h = 1, so h^alpha = h^beta = 1 whatever the exponents
    mesh = build_mesh(2)
    prev = State(np.array([1.0, 1.0]), np.zeros((2, 1)))
    cand = State(np.array([1.0, 2.0]), np.array([[0.5], [-0.25]]))
    res = residual(prev, cand, 0.5, mesh, GAS, PARAMS)
    np.testing.assert_allclose(res[:, 0], [-2.125, 4.125], rtol=0, atol=1e-14)
    np.testing.assert_allclose(res[:, 1], [4.625, -4.625], rtol=0, atol=1e-14)


@given(st.integers(2, 12), st.integers(0, 2**32 - 1), st.floats(1e-3, 1.0))
def test_flux_telescoping(n, seed, dt):
    rng = np.random.default_rng(seed)
    mesh = build_mesh(n)
    prev, cand = _random_state(rng, n), _random_state(rng, n)
    res = residual(prev, cand, dt, mesh, GAS, PARAMS)
    lhs = math.fsum(mesh.volumes * res[:, 0])
    rhs = math.fsum(mesh.volumes * (cand.rho - prev.rho) / dt)
    assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + np.abs(res).max()))
    # momentum: every face term cancels against a constant test function
    lhs_m = math.fsum(mesh.volumes * res[:, 1])
    rhs_m = math.fsum(mesh.volumes * (cand.m - prev.m)[:, 0] / dt)
    assert lhs_m == pytest.approx(rhs_m, abs=1e-12 * (1 + np.abs(res).max()))


def test_nonpositive_candidate_rejected():
    mesh = build_mesh(4)
    s = State(np.ones(4), np.zeros((4, 1)))
    bad = State(np.array([1.0, 0.0, 1.0, 1.0]), np.zeros((4, 1)))
    with pytest.raises(ValueError):
        residual(s, bad, 0.1, mesh, GAS, PARAMS)


@pytest.mark.parametrize("shape", [(6,), (3, 4)])
def test_jacobian_matches_finite_differences(shape):
    rng = np.random.default_rng(3)
    mesh = build_mesh(shape)
    d = mesh.dim
    prev, cand = _random_state(rng, mesh.n_cells, d), _random_state(rng, mesh.n_cells, d)
    dt = 0.05
    J = jacobian(cand, dt, mesh, GAS, PARAMS).toarray()
    x = cand.pack()
    fd = np.empty_like(J)
    for j in range(x.size):
        e = np.zeros_like(x)
        step = 1e-6 * max(1.0, abs(x[j]))
        e[j] = step
        rp = residual(prev, State.unpack(x + e, mesh.n_cells), dt, mesh, GAS, PARAMS).T.ravel()
        rm = residual(prev, State.unpack(x - e, mesh.n_cells), dt, mesh, GAS, PARAMS).T.ravel()
        fd[:, j] = (rp - rm) / (2 * step)
    np.testing.assert_allclose(J, fd, rtol=1e-6, atol=1e-5)


def test_advance_constant_state_is_exact_root():
    mesh = build_mesh(16)
    s = State(np.full(16, 0.7), np.full((16, 1), -0.3))
    new, report = advance(s, 0.05, mesh, GAS, PARAMS)
    assert report.iterations == 0
    np.testing.assert_array_equal(new.rho, s.rho)
    np.testing.assert_array_equal(new.u, s.u)


def test_advance_converges_on_smooth_data():
    mesh = build_mesh(64)
    s = initial_state(smooth_periodic(), mesh, PARAMS)
    dt = PARAMS.c_t * mesh.h
    new, report = advance(s, dt, mesh, GAS, PARAMS)
    assert report.iterations <= PARAMS.max_nl_iter
    assert new.rho.min() > 0.0
    res = np.abs(residual(s, new, dt, mesh, GAS, PARAMS)).max()
    assert res <= max(PARAMS.tol_nl * report.reference, 1e-9)


def test_forced_failure_raises_with_diagnostics():
    mesh = build_mesh(32)
    s = initial_state(smooth_periodic(), mesh, PARAMS)
    p = SchemeParams(tol_nl=1e-30, max_nl_iter=1, max_dt_halvings=0, picard_fallback=False)
    with pytest.raises(SolverError) as info:
        advance(s, 0.5 * mesh.h, mesh, GAS, p)
    assert "halvings" in info.value.diagnostics


def test_invalid_scheme_params():
    with pytest.raises(ValueError):
        SchemeParams(c_t=0.0)
    with pytest.raises(ValueError):
        SchemeParams(tol_nl=-1.0)


def test_short_final_time_gives_one_clipped_step():
    mesh = build_mesh(16)
    T = 0.25 * PARAMS.c_t * mesh.h
    traj, ledger = run(smooth_periodic(), mesh, GAS, PARAMS, T)
    assert len(traj.reports) == 1
    assert traj.final_time == T
    assert traj.reports[0].dt == pytest.approx(T, rel=1e-15)


def test_snapshot_at_zero_is_projection():
    mesh = build_mesh(32)
    data = smooth_periodic()
    traj, _ = run(data, mesh, GAS, PARAMS, 0.2, (0.0, 0.2))
    s0 = initial_state(data, mesh, PARAMS)
    np.testing.assert_array_equal(traj.snapshots[0].rho, s0.rho)
    np.testing.assert_array_equal(traj.snapshots[0].u, s0.u)


def test_vacuum_shift_adds_h():
    mesh = build_mesh(16)
    data = smooth_periodic(rho_bar=1.0, amp_rho=1.0, allow_vacuum=True)
    plain = initial_state(data, mesh, PARAMS)
    shifted = initial_state(data, mesh, SchemeParams(vacuum_shift=True))
    np.testing.assert_array_equal(shifted.rho, plain.rho + mesh.h)
    np.testing.assert_array_equal(shifted.u, plain.u)


def test_vacuum_cell_average_rejected_without_shift():
    mesh = build_mesh(4)
    data = smooth_periodic(rho_bar=0.0, amp_rho=0.0, allow_vacuum=True)
    with pytest.raises(ValueError):
        initial_state(data, mesh, PARAMS)
    assert initial_state(data, mesh, SchemeParams(vacuum_shift=True)).rho.min() == mesh.h


@pytest.mark.parametrize("shape", [(64,), (12, 12)])
def test_conservation_and_positivity(shape):
    mesh = build_mesh(shape)
    d = mesh.dim
    data = smooth_periodic(dim=d, amp_u=[0.2] + [0.1] * (d - 1))
    traj, ledger = run(data, mesh, GAS, PARAMS, 0.3, (0.1, 0.2, 0.3), store_all=True)
    m0 = math.fsum(mesh.volumes * traj.states[0].rho)
    p0 = traj.states[0].m.T @ mesh.volumes
    for s in traj.states:
        assert s.rho.min() > 0.0
        assert math.fsum(mesh.volumes * s.rho) == pytest.approx(m0, rel=1e-10)
        np.testing.assert_allclose(s.m.T @ mesh.volumes, p0, rtol=1e-10, atol=1e-10 * m0)
    assert ledger.is_monotone()


def test_relabel_invariance():
    mesh = build_mesh(24)
    rng = np.random.default_rng(11)
    perm = rng.permutation(mesh.n_cells)
    relabeled = mesh.relabel(perm)
    data = smooth_periodic()
    s0 = initial_state(data, mesh, PARAMS)
    a, _ = advance(s0, 0.5 * mesh.h, mesh, GAS, PARAMS)
    b, _ = advance(State(s0.rho[perm], s0.u[perm]), 0.5 * mesh.h, relabeled, GAS, PARAMS)
    inverse = np.argsort(perm)
    np.testing.assert_allclose(b.rho[inverse], a.rho, rtol=0, atol=1e-14)
    np.testing.assert_allclose(b.u[inverse], a.u, rtol=0, atol=1e-14)


def test_state_pack_roundtrip():
    rng = np.random.default_rng(0)
    s = _random_state(rng, 5, 2)
    t = State.unpack(s.pack(), 5)
    np.testing.assert_array_equal(t.rho, s.rho)
    np.testing.assert_array_equal(t.u, s.u)
    np.testing.assert_array_equal(s.phase()[:, 1:], s.m)
