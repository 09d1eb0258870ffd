import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from yamabe_partition import (
    DomainError,
    GridMismatchError,
    ReducedFunction,
    ResolutionError,
    SymmetryConfig,
    build_grid,
    reduced_residual,
    sphere_area,
    weight_h,
    weighted_crit_integral,
    weighted_h1_normsq,
    weighted_overlap,
)
from yamabe_partition.discretization import (
    OrbitGrid,
    graded_map,
    read_profile_csv,
    residual_sup,
    write_profile_csv,
)


def _trapezoid_oracle(f, cfg, nodes=1_000_001):
    t = np.linspace(0.0, math.pi, nodes)
    return float(np.trapezoid(f(t) * weight_h(t, cfg), t))


@pytest.mark.parametrize("m, n", [(2, 2), (2, 3), (3, 3), (2, 4)])
def test_mass_sums_to_sphere_measure(m, n):
    cfg = SymmetryConfig(m, n)
    g = build_grid(cfg, 512)
    target = 4.0 * sphere_area(cfg.N + 1)
    assert abs(g.mass.sum() - target) / target <= 1e-12


def test_mass_agrees_with_dense_trapezoid():
    cfg = SymmetryConfig(2, 3)
    g = build_grid(cfg, 64)
    assert g.mass.sum() == pytest.approx(_trapezoid_oracle(np.ones_like, cfg), rel=1e-10)


def test_graded_map_endpoints_and_monotone():
    s = np.linspace(0.0, 1.0, 101)
    g, dg = graded_map(s, 2.0)
    assert g[0] == pytest.approx(0.0, abs=1e-15) and g[-1] == pytest.approx(1.0)
    assert np.all(np.diff(g) > 0.0) and np.all(dg >= 0.0)
    g1, _ = graded_map(s, 1.0)
    np.testing.assert_allclose(g1, s, atol=1e-15)


def test_graded_grid_clusters_near_ends():
    g = build_grid(SymmetryConfig(2, 4), 128)
    assert g.grading == 2.0
    h = g.cell_lengths
    assert h[0] < h[len(h) // 2] and h[-1] < h[len(h) // 2]


def test_quadratic_forms_converge_second_order():
    cfg = SymmetryConfig(2, 2)
    w = lambda t: np.cos(t) + 0.3 * np.sin(2 * t)
    dw = lambda t: -np.sin(t) + 0.6 * np.cos(2 * t)
    exact_n, _ = integrate.quad(lambda t: (dw(t) ** 2 + cfg.a_N / 4 * w(t) ** 2) * weight_h(t, cfg),
                                0.0, math.pi, epsabs=0, epsrel=1e-13)
    exact_p, _ = integrate.quad(lambda t: 0.25 * abs(w(t)) ** 6 * weight_h(t, cfg),
                                0.0, math.pi, epsabs=0, epsrel=1e-13, limit=200)
    errs_n, errs_p = [], []
    for K in (64, 128, 256):
        f = ReducedFunction.from_callable(build_grid(cfg, K), w)
        errs_n.append(abs(weighted_h1_normsq(f) - exact_n))
        errs_p.append(abs(weighted_crit_integral(f) - exact_p))
    for errs in (errs_n, errs_p):
        rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
        assert min(rates) > 1.8
    assert errs_n[-1] / exact_n < 1e-4


def test_apply_h1_is_half_gradient_of_normsq(grid22_128):
    rng = np.random.default_rng(3)
    v = rng.standard_normal(grid22_128.size)
    assert v @ grid22_128.apply_h1(v) == pytest.approx(grid22_128.normsq(v), rel=1e-12)
    d = rng.standard_normal(grid22_128.size)
    e = 1e-6
    fd = (grid22_128.normsq(v + e * d) - grid22_128.normsq(v - e * d)) / (2 * e)
    assert fd == pytest.approx(2.0 * d @ grid22_128.apply_h1(v), rel=1e-7)


def test_h1_solve_inverts_on_free_nodes(grid22_128):
    mesh = grid22_128.interval_mesh(0.5, 2.0)
    rng = np.random.default_rng(4)
    x = rng.standard_normal(mesh.size)
    x[~mesh.free] = 0.0
    rhs = mesh.apply_h1(x)
    np.testing.assert_allclose(mesh.h1_solve(rhs), x, atol=1e-10)


def test_constant_solution_is_exact_discrete_solution():
    cfg = SymmetryConfig(2, 2)
    g = build_grid(cfg, 256)
    w = ReducedFunction.from_callable(g, lambda t: cfg.constant_solution)
    assert abs(weighted_h1_normsq(w) - weighted_crit_integral(w)) <= 1e-12
    assert np.max(np.abs(reduced_residual(w).values)) <= 1e-12
    energy = weighted_crit_integral(w) / cfg.N
    assert energy == pytest.approx(math.pi ** 2 * math.sqrt(3) / 4, rel=1e-12)


def test_residual_of_smooth_nonsolution_converges_to_strong_form():
    cfg = SymmetryConfig(2, 3)
    w = lambda t: 1.0 + 0.2 * np.cos(t)
    t0 = 1.3
    # -w'' - (h'/h) w' + a/4 w - 1/4 w^{p-1}
    hp = -0.5 * math.tan(t0 / 2) + 1.0 / math.tan(t0 / 2)
    exact = 0.2 * math.cos(t0) - hp * (-0.2 * math.sin(t0)) + cfg.a_N / 4 * w(t0) - 0.25 * w(t0) ** (cfg.p_crit - 1)
    errs = []
    for K in (128, 256, 512):
        g = build_grid(cfg, K)
        r = reduced_residual(ReducedFunction.from_callable(g, w)).values
        errs.append(abs(np.interp(t0, g.nodes, r) - exact))
    assert errs[-1] < 1e-3 and errs[-1] < errs[0]


def test_overlap_of_disjoint_supports_is_zero(grid22_128):
    t = grid22_128.nodes
    a = ReducedFunction(grid22_128, np.where(t < 1.0, np.sin(t), 0.0))
    b = ReducedFunction(grid22_128, np.where(t > 2.0, np.sin(t), 0.0))
    assert weighted_overlap(a, b, 3.0, 3.0) == 0.0
    assert weighted_overlap(a, a, 3.0, 3.0) == pytest.approx(weighted_crit_integral(a), rel=1e-12)


def test_grid_validation():
    cfg = SymmetryConfig(2, 2)
    with pytest.raises(ResolutionError):
        OrbitGrid(cfg, 16)
    with pytest.raises(ResolutionError):
        OrbitGrid(cfg, 64, grading=0.5)
    g = build_grid(cfg, 64)
    with pytest.raises(ResolutionError):
        g.interval_mesh(1.0, 1.05)
    with pytest.raises(DomainError):
        g.interval_mesh(2.0, 1.0)
    with pytest.raises(GridMismatchError):
        ReducedFunction(g, np.zeros(3))
    with pytest.raises(DomainError):
        ReducedFunction(g, np.full(g.size, np.nan))
    other = build_grid(cfg, 64)
    with pytest.raises(GridMismatchError):
        weighted_overlap(ReducedFunction(g, np.ones(g.size)), ReducedFunction(other, np.ones(g.size)), 3, 3)


def test_interval_mesh_boundary_conditions(grid22_128):
    assert grid22_128.interval_mesh(0.0, 1.0).dirichlet == (False, True)
    assert grid22_128.interval_mesh(1.0, math.pi).dirichlet == (True, False)
    assert grid22_128.interval_mesh(1.0, 2.0).dirichlet == (True, True)
    m = grid22_128.interval_mesh(1.0, 2.0, cells=300)
    assert m.size == 301 and m.a == 1.0 and m.b == 2.0


def test_resample_accuracy(grid22_128):
    fine = build_grid(grid22_128.cfg, 512)
    f = ReducedFunction.from_callable(grid22_128, np.cos)
    np.testing.assert_allclose(f.resample(fine).values, np.cos(fine.nodes), atol=1e-7)


def test_residual_sup_excludes_margins(grid22_128):
    w = ReducedFunction.from_callable(grid22_128, lambda t: 1.0 + t)
    full = np.nanmax(np.abs(reduced_residual(w).values))
    assert residual_sup(w, margin_cells=3) <= full


def test_csv_round_trip(tmp_path):
    t = np.linspace(0, math.pi, 11)
    w = np.exp(t) / 3.0
    write_profile_csv(tmp_path / "w.csv", t, w)
    assert (tmp_path / "w.csv").read_text().splitlines()[0] == "t,w"
    t2, w2 = read_profile_csv(tmp_path / "w.csv")
    np.testing.assert_array_equal(t, t2)
    np.testing.assert_array_equal(w, w2)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(0.1, 10.0))
def test_norm_and_power_scaling(coeffs, s):
    g = build_grid(SymmetryConfig(2, 2), 64)
    t = g.nodes
    v = sum(c * np.cos(k * t) for k, c in enumerate(coeffs))
    f = ReducedFunction(g, v)
    assert weighted_h1_normsq(f.scaled(s)) == pytest.approx(s * s * weighted_h1_normsq(f), rel=1e-10, abs=1e-300)
    assert weighted_crit_integral(f.scaled(s)) == pytest.approx(s ** 6 * weighted_crit_integral(f), rel=1e-10, abs=1e-300)
    assert weighted_h1_normsq(f) >= 0.0
