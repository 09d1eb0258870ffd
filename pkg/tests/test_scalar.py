import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yamabe_partition import (
    ConvergenceError,
    DegenerateInputError,
    DomainError,
    ReducedFunction,
    SolverOptions,
    SymmetryConfig,
    build_grid,
    least_energy_on_interval,
    nehari_scale,
    shoot_reduced_ode,
    shoot_to_zero,
    weighted_crit_integral,
    weighted_h1_normsq,
)
from yamabe_partition.scalar import solve_on_mesh

from conftest import CONSTANT_ENERGY_22

# Least energy on (0, pi/2) for (m, n) = (2, 2): arc of the shooting ODE
# (DOP853, rtol 1e-11) whose first zero is pi/2.
SHOOTING_ENERGY_HALF = 35.05391882015385


def test_nehari_scale_of_constant(grid22_128):
    cfg = grid22_128.cfg
    one = ReducedFunction(grid22_128, np.ones(grid22_128.size))
    assert nehari_scale(one) == pytest.approx(cfg.constant_solution, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 20.0))
def test_nehari_scale_inverse_homogeneous(s):
    g = build_grid(SymmetryConfig(2, 3), 64)
    w = ReducedFunction.from_callable(g, lambda t: np.sin(t) + 0.5)
    assert nehari_scale(w.scaled(s)) == pytest.approx(nehari_scale(w) / s, rel=1e-10)
    lifted = w.scaled(nehari_scale(w))
    assert weighted_h1_normsq(lifted) == pytest.approx(weighted_crit_integral(lifted), rel=1e-10)


def test_nehari_scale_rejects_zero(grid22_128):
    with pytest.raises(DegenerateInputError):
        nehari_scale(ReducedFunction(grid22_128, np.zeros(grid22_128.size)))


def test_whole_interval_minimizer_is_constant(grid22_128):
    sol = least_energy_on_interval(grid22_128, 0.0, math.pi)
    assert sol.energy == pytest.approx(CONSTANT_ENERGY_22, rel=1e-10)
    np.testing.assert_allclose(sol.profile.values, grid22_128.cfg.constant_solution, rtol=1e-8)


def test_solution_properties(cache22_128):
    sol = cache22_128.solve(0.5, 2.0)
    v = sol.profile.values
    assert v[0] == 0.0 and v[-1] == 0.0 and np.all(v >= 0.0)
    assert sol.normsq == pytest.approx(sol.crit, rel=1e-10)
    assert sol.energy == pytest.approx(sol.crit / 3.0, rel=1e-12)
    assert sol.residual_sup <= 1e-4
    on = sol.on_grid(cache22_128.grid)
    assert on.grid is cache22_128.grid and on.support == (0.5, 2.0)


def test_energy_converges_to_shooting_oracle():
    cfg = SymmetryConfig(2, 2)
    E = [least_energy_on_interval(build_grid(cfg, K), 0.0, math.pi / 2).energy for K in (128, 256, 512)]
    ratio = (E[1] - E[0]) / (E[2] - E[1])
    assert ratio == pytest.approx(4.0, rel=1e-2)
    richardson = (4 * E[2] - E[1]) / 3
    assert richardson == pytest.approx(SHOOTING_ENERGY_HALF, rel=1e-7)


def test_shooting_hits_target_and_matches_interval(grid22_256, cache22_256):
    r = shoot_to_zero(grid22_256, math.pi / 2)
    assert r.hit_zero and r.stop == pytest.approx(math.pi / 2, abs=1e-9)
    # the series start spans one grid cell, so the arc depends weakly on K
    assert r.energy == pytest.approx(SHOOTING_ENERGY_HALF, rel=2e-6)
    assert r.energy == pytest.approx(cache22_256.energy(0.0, math.pi / 2), rel=1e-4)


def test_shooting_below_constant_stays_positive(grid22_128):
    # starting under the constant solution the trajectory never vanishes
    r = shoot_reduced_ode(grid22_128, 0.5 * grid22_128.cfg.constant_solution)
    assert not r.hit_zero
    assert shoot_reduced_ode(grid22_128, 0.0).energy == 0.0
    with pytest.raises(DomainError):
        shoot_reduced_ode(grid22_128, -1.0)
    with pytest.raises(DomainError):
        shoot_to_zero(grid22_128, 4.0)


def test_swap_symmetry():
    a, b = SymmetryConfig(2, 3), SymmetryConfig(3, 2)
    ga, gb = build_grid(a, 128), build_grid(b, 128)
    e1 = least_energy_on_interval(ga, 0.0, 1.1).energy
    e2 = least_energy_on_interval(gb, math.pi - 1.1, math.pi).energy
    assert e1 == pytest.approx(e2, rel=1e-9)
    e3 = least_energy_on_interval(ga, 0.4, 2.0).energy
    e4 = least_energy_on_interval(gb, math.pi - 2.0, math.pi - 0.4).energy
    assert e3 == pytest.approx(e4, rel=1e-9)


def test_domain_monotonicity(cache22_128):
    # shrinking the interval raises the least energy
    nested = [(0.6, 1.8), (0.5, 2.0), (0.3, 2.4), (0.0, 2.4)]
    energies = [cache22_128.energy(a, b) for a, b in nested]
    assert all(x > y for x, y in zip(energies, energies[1:]))


def test_convergence_error_carries_state(grid22_128):
    mesh = grid22_128.interval_mesh(0.5, 2.0)
    with pytest.raises(ConvergenceError) as info:
        solve_on_mesh(mesh, SolverOptions(max_iters=2, newton_iters=0, tol_res=1e-14))
    assert info.value.last_iterate is not None and info.value.residual > 1e-14


def test_zero_initial_guess_rejected(grid22_128):
    mesh = grid22_128.interval_mesh(0.5, 2.0)
    with pytest.raises(DegenerateInputError):
        solve_on_mesh(mesh, init=np.zeros(mesh.size))


def test_restarts_agree_and_pick_unique_minimizer(grid22_128):
    sol = least_energy_on_interval(grid22_128, 0.0, 1.2, SolverOptions(restarts=2, seed=5))
    plain = least_energy_on_interval(grid22_128, 0.0, 1.2)
    assert sol.energy == pytest.approx(plain.energy, rel=1e-9)
    assert not sol.multiplicity_flag


def test_solver_options_from_mapping():
    assert SolverOptions.from_mapping({"tol_res": 1e-3}).tol_res == 1e-3
    with pytest.raises(DomainError):
        SolverOptions.from_mapping({"bogus": 1})


@pytest.mark.parametrize("from_left", [True, False])
def test_shooting_constant_start_reproduces_constant_solution(grid22_128, from_left):
    c = grid22_128.cfg.constant_solution
    r = shoot_reduced_ode(grid22_128, c, from_left)
    assert not r.hit_zero and not r.blew_up
    np.testing.assert_allclose(r.profile.values, c, rtol=1e-9)
    assert r.energy == pytest.approx(CONSTANT_ENERGY_22, rel=1e-6)
