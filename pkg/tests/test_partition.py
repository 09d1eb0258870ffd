import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yamabe_partition import (
    ConvergenceError,
    DomainError,
    IntervalCache,
    IntervalPartition,
    ResolutionError,
    SolverOptions,
    SymmetryConfig,
    assemble_nodal,
    build_grid,
    optimize_partition,
    partition_energy,
    verify_comparison,
    verify_monotone_in_M,
    verify_subadditivity,
)
from yamabe_partition.partition import (
    PartitionOptions,
    count_sign_changes,
    interval_energies,
    min_gap,
    nodal_energy_from_profile,
    stationarity,
)

# Minimizer of a 201-point scan plus parabola fit of c(0, a) + c(a, pi) for
# (m, n) = (2, 3) at K = 128.
CUT_23_K128 = 1.34514


@pytest.fixture(scope="module")
def opt22(grid22_128, cache22_128):
    return {M: optimize_partition(grid22_128, M, cache=cache22_128) for M in (2, 3, 4)}


def _scan_minimum(cache, lo, hi, points=201):
    xs = np.linspace(lo, hi, points)
    E = np.array([cache.energy(0.0, x) + cache.energy(x, math.pi) for x in xs])
    k = int(np.argmin(E))
    c = np.polyfit(xs[k - 3:k + 4], E[k - 3:k + 4], 2)
    return -c[1] / (2 * c[0]), float(np.polyval(c, -c[1] / (2 * c[0])))


def test_m2_symmetric_cut(opt22, cache22_128):
    r = opt22[2]
    assert r.partition.cuts[0] == pytest.approx(math.pi / 2, abs=0.01)
    assert r.energy == pytest.approx(2 * cache22_128.energy(0.0, math.pi / 2), rel=1e-4)
    x, e = _scan_minimum(cache22_128, 1.2, 1.9)
    assert r.energy == pytest.approx(e, abs=1e-4)


def test_m2_asymmetric_weight_matches_scan_oracle():
    grid = build_grid(SymmetryConfig(2, 3), 128)
    cache = IntervalCache(grid)
    r = optimize_partition(grid, 2, cache=cache)
    x, e = _scan_minimum(cache, 1.1, 1.6)
    assert x == pytest.approx(CUT_23_K128, abs=1e-4)
    assert r.partition.cuts[0] == pytest.approx(x, abs=1e-4)
    assert abs(r.partition.cuts[0] - math.pi / 2) > 0.1
    assert r.energy == pytest.approx(e, abs=1e-4)


def test_m3_cuts_symmetric(opt22):
    a1, a2 = opt22[3].partition.cuts
    assert a2 == pytest.approx(math.pi - a1, abs=0.02)
    b1, b2, b3 = opt22[4].partition.cuts
    assert b2 == pytest.approx(math.pi / 2, abs=0.02)
    assert b3 == pytest.approx(math.pi - b1, abs=0.02)


def test_cut_reflection_symmetry(grid22_128, cache22_128):
    p = IntervalPartition(grid22_128.cfg, (1.1,))
    assert partition_energy(p, grid22_128, cache22_128) == pytest.approx(
        partition_energy(p.mirrored(), grid22_128, cache22_128), rel=1e-4)


def test_stationarity_at_optimum(opt22, grid22_128, cache22_128):
    for M, r in opt22.items():
        slopes = stationarity(r, grid22_128, 1e-3, cache22_128)
        assert max(abs(d) for d in slopes) <= 1e-3, (M, slopes)


def test_perturbed_cut_not_stationary(opt22, grid22_128, cache22_128):
    r = opt22[2]
    moved = type(r)(IntervalPartition(grid22_128.cfg, (r.partition.cuts[0] + 0.1,)), 0.0, (), 0)
    assert abs(stationarity(moved, grid22_128, 1e-3, cache22_128)[0]) > 1.0


def test_monotone_in_M(grid22_128, cache22_128):
    rep = verify_monotone_in_M(grid22_128, 4, cache=cache22_128)
    assert rep.passed and all(m > 1e-3 for m in rep.margins)
    assert rep.energies[0] > rep.whole_sphere
    with pytest.raises(DomainError):
        verify_monotone_in_M(grid22_128, 2, cache=cache22_128)


def test_split_raises_energy(grid22_128, cache22_128):
    base = IntervalPartition(grid22_128.cfg, (1.0, 2.2))
    split = IntervalPartition(grid22_128.cfg, (1.0, 1.6, 2.2))
    assert partition_energy(split, grid22_128, cache22_128) > partition_energy(base, grid22_128, cache22_128)


def test_nodal_assembly(opt22, grid22_128, cache22_128):
    for M, r in opt22.items():
        sol = assemble_nodal(r.partition, grid22_128, cache22_128)
        assert sol.sign_changes == M - 1
        assert sol.total_energy == pytest.approx(r.energy, rel=1e-12)
        assert sol.residual_away_from_cuts() <= 1e-3
        assert max(sol.derivative_jumps()) <= 1e-3
        # signed profile integrates back to the piece energies up to O(K^-2)
        assert nodal_energy_from_profile(sol) == pytest.approx(sol.total_energy, rel=1e-2)


def test_energy_accounting_converges_second_order():
    cfg = SymmetryConfig(2, 2)
    p = IntervalPartition(cfg, (0.6366, 2.5050))
    errs = []
    for K in (128, 256, 512):
        sol = assemble_nodal(p, build_grid(cfg, K))
        errs.append(abs(nodal_energy_from_profile(sol) / sol.total_energy - 1.0))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)
    assert errs[2] < 2e-4


def test_cut_residual_refines_only_at_optimum():
    cfg = SymmetryConfig(2, 2)
    near_opt, near_bad, jumps_bad = [], [], []
    for K in (128, 256):
        grid = build_grid(cfg, K)
        cache = IntervalCache(grid)
        good = assemble_nodal(IntervalPartition(cfg, (math.pi / 2,)), grid, cache)
        bad = assemble_nodal(IntervalPartition(cfg, (math.pi / 2 + 0.1,)), grid, cache)
        near_opt.append(good.grid_residual_near_cuts())
        near_bad.append(bad.grid_residual_near_cuts())
        jumps_bad.append(bad.derivative_jumps()[0])
    assert near_opt[1] < near_opt[0] and near_opt[1] < 1e-3
    assert near_bad[1] > near_bad[0] > 1.0
    assert min(jumps_bad) > 0.1 and jumps_bad[1] == pytest.approx(jumps_bad[0], rel=0.05)


def test_subadditivity_examples(grid22_128, cache22_128):
    rep = verify_subadditivity(grid22_128, 0.5, 1.5, 2.5, cache22_128)
    assert rep.passed and rep.margin > 0.0
    thin = verify_subadditivity(grid22_128, 0.5, 0.5 + min_gap(grid22_128), 2.5, cache22_128)
    assert thin.passed and thin.rhs < cache22_128.energy(0.5, 0.5 + min_gap(grid22_128))
    sym_l = cache22_128.energy(0.7, math.pi / 2)
    sym_r = cache22_128.energy(math.pi / 2, math.pi - 0.7)
    assert sym_l == pytest.approx(sym_r, rel=1e-4)
    with pytest.raises(DomainError):
        verify_subadditivity(grid22_128, 1.0, 0.5, 2.0, cache22_128)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.0, math.pi), min_size=3, max_size=3, unique=True))
def test_subadditivity_property(points):
    grid = _GRID64
    a, b, c = sorted(points)
    gap = min_gap(grid)
    if b - a < gap or c - b < gap:
        return
    assert verify_subadditivity(grid, a, b, c, _CACHE64).passed


_GRID64 = build_grid(SymmetryConfig(2, 2), 64)
_CACHE64 = IntervalCache(_GRID64)


def test_comparison_report():
    assert verify_comparison(70.0, 70.0).passed
    assert verify_comparison(53.8, 70.1).passed
    assert not verify_comparison(71.0, 70.0).passed
    rep = verify_comparison(69.3, 70.0)
    assert rep.gap == pytest.approx(0.7) and rep.relative_gap == pytest.approx(0.01)


def test_partition_validation(grid22_128):
    cfg = grid22_128.cfg
    for cuts in [(), (0.0,), (2.0, 1.0), (1.0, math.pi)]:
        with pytest.raises(DomainError):
            IntervalPartition(cfg, cuts)
    with pytest.raises(ResolutionError):
        IntervalPartition(cfg, (1.0, 1.02)).check_resolved(grid22_128)
    with pytest.raises(DomainError):
        optimize_partition(grid22_128, 1)


def test_interval_errors_name_the_piece(grid22_128):
    with pytest.raises(ResolutionError, match=r"interval \(1, 1.05\)"):
        interval_energies(IntervalPartition(grid22_128.cfg, (1.0, 1.05)), grid22_128)
    strict = IntervalCache(grid22_128, SolverOptions(max_iters=1, newton_iters=0, tol_res=1e-15))
    with pytest.raises(ConvergenceError, match="interval 0"):
        interval_energies(IntervalPartition(grid22_128.cfg, (1.0,)), grid22_128, strict)


def test_too_many_pieces_for_grid():
    grid = build_grid(SymmetryConfig(2, 2), 32)
    with pytest.raises(ResolutionError):
        optimize_partition(grid, 6, PartitionOptions(scan_points=9))


def test_partition_json(opt22):
    d = opt22[3].to_dict()
    assert set(d) >= {"m", "n", "N", "M", "cuts", "interval_energies", "total", "boundary_radii"}
    assert d["M"] == 3 and len(d["boundary_radii"]) == 2
    r1, r2 = d["boundary_radii"][0]
    assert r1 == pytest.approx(math.cos(d["cuts"][0] / 2)) and r2 == pytest.approx(math.sin(d["cuts"][0] / 2))
    assert sum(d["interval_energies"]) == pytest.approx(d["total"], rel=1e-12)


def test_cache_reuses_solutions(grid22_128):
    cache = IntervalCache(grid22_128)
    s1 = cache.solve(0.3, 1.4)
    assert cache.solve(0.3 + 1e-14, 1.4) is s1
    assert len(cache) == 1
    assert IntervalCache.key(0.0, math.pi + 1e-13)[1] == math.pi


def test_count_sign_changes():
    assert count_sign_changes([1, 2, 0, -1, -2, 0, 3]) == 2
    assert count_sign_changes([1, 1e-20, -1e-20, 1]) == 0
