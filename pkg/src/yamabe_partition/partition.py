"""Optimal partitions of the orbit interval into M consecutive pieces.

A partition is a tuple of cuts ``0 < a_1 < ... < a_{M-1} < pi``; its energy
is the sum of the interval least energies.  The optimal cuts glue the
alternating-sign interval minimizers into a nodal solution on the whole
sphere.
"""
from __future__ import annotations

import itertools
import logging
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import make_interp_spline

from .discretization import (
    OrbitGrid,
    continuous_residual,
    ReducedFunction,
    margin_mask,
    reduced_residual,
    weighted_crit_integral,
)
from .errors import ConvergenceError, DegeneracyError, DomainError, ResolutionError
from .geometry import SymmetryConfig, boundary_radii
from .scalar import ScalarSolution, SolverOptions, least_energy_on_interval, solve_on_mesh

log = logging.getLogger(__name__)

MIN_GAP_CELLS = 4
INTERIOR_NODES = 8


@dataclass(frozen=True)
class IntervalPartition:
    cfg: SymmetryConfig
    cuts: tuple[float, ...]

    def __post_init__(self):
        cuts = tuple(float(a) for a in self.cuts)
        object.__setattr__(self, "cuts", cuts)
        if not cuts:
            raise DomainError("a partition needs at least one cut (M >= 2)")
        if any(not (0.0 < a < math.pi) for a in cuts):
            raise DomainError(f"cuts must lie in (0, pi): {cuts}")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise DomainError(f"cuts must be strictly increasing: {cuts}")

    @property
    def M(self) -> int:
        return len(self.cuts) + 1

    @property
    def edges(self) -> tuple[float, ...]:
        return (0.0, *self.cuts, math.pi)

    @property
    def intervals(self) -> list[tuple[float, float]]:
        e = self.edges
        return list(zip(e[:-1], e[1:]))

    def check_resolved(self, grid: OrbitGrid) -> None:
        """Every piece spans at least ``MIN_GAP_CELLS`` local cells."""
        for a, b in self.intervals:
            inside = np.count_nonzero((grid.nodes > a) & (grid.nodes < b))
            if inside < MIN_GAP_CELLS:
                raise ResolutionError(
                    f"interval ({a:.6g}, {b:.6g}) spans fewer than {MIN_GAP_CELLS} grid cells")

    def mirrored(self) -> "IntervalPartition":
        """Image under t -> pi - t, which swaps the roles of m and n."""
        return IntervalPartition(self.cfg.swapped(), tuple(math.pi - a for a in reversed(self.cuts)))

    def to_dict(self, interval_energies=None, total=None) -> dict:
        return {
            "m": self.cfg.m,
            "n": self.cfg.n,
            "N": self.cfg.N,
            "M": self.M,
            "cuts": list(self.cuts),
            "interval_energies": None if interval_energies is None else [float(e) for e in interval_energies],
            "total": None if total is None else float(total),
            "boundary_radii": [list(boundary_radii(a)) for a in self.cuts],
        }


class IntervalCache:
    """Interval solutions keyed by endpoints rounded to 1e-12.

    Reads and inserts are guarded by a lock; concurrent writers store the
    same deterministic value, so the last one simply wins.
    """

    def __init__(self, grid: OrbitGrid, opts: SolverOptions | None = None):
        self.grid = grid
        self.opts = opts or SolverOptions()
        self._store: dict[tuple[float, float], ScalarSolution] = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(a: float, b: float) -> tuple[float, float]:
        def snap(x):
            x = round(float(x), 12)
            return math.pi if x == round(math.pi, 12) else x
        return snap(a), snap(b)

    def __len__(self):
        return len(self._store)

    def solve(self, a: float, b: float, refine: int = 1) -> ScalarSolution:
        """Interval solution on the standard mesh, or ``refine`` times finer."""
        k = (*self.key(a, b), int(refine))
        with self._lock:
            hit = self._store.get(k)
        if hit is not None:
            return hit
        if refine == 1:
            sol = least_energy_on_interval(self.grid, k[0], k[1], self.opts)
        else:
            mesh = self.grid.interval_mesh(k[0], k[1], cells=refine * self.grid.K)
            sol = solve_on_mesh(mesh, self.opts)
        with self._lock:
            self._store[k] = sol
        return sol

    def energy(self, a: float, b: float) -> float:
        return self.solve(a, b).energy


def partition_energy(p: IntervalPartition, grid: OrbitGrid, cache: IntervalCache | None = None) -> float:
    """Sum of the least energies of the pieces."""
    return float(sum(interval_energies(p, grid, cache)))


def interval_energies(p: IntervalPartition, grid: OrbitGrid, cache: IntervalCache | None = None) -> list[float]:
    cache = IntervalCache(grid) if cache is None else cache
    p.check_resolved(grid)
    out = []
    for i, (a, b) in enumerate(p.intervals):
        try:
            out.append(cache.energy(a, b))
        except (ConvergenceError, ResolutionError) as exc:
            raise type(exc)(f"interval {i} ({a:.6g}, {b:.6g}): {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# cut optimization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartitionOptions:
    scan_points: int = 33
    max_scan: int = 100_000
    refine_passes: int = 2
    sweeps: int = 3
    max_sweeps: int = 200
    cut_tol: float = 1e-7
    golden_tol: float = 1e-8
    tol_energy: float = 1e-9


@dataclass(frozen=True, eq=False)
class PartitionResult:
    partition: IntervalPartition
    energy: float
    interval_energies: tuple[float, ...]
    evaluations: int
    alternatives: tuple[IntervalPartition, ...] = field(default=())

    def to_dict(self) -> dict:
        d = self.partition.to_dict(self.interval_energies, self.energy)
        if self.alternatives:
            d["alternative_cuts"] = [list(p.cuts) for p in self.alternatives]
        return d


def min_gap(grid: OrbitGrid) -> float:
    """Smallest cut spacing that leaves enough grid nodes inside a piece."""
    return (INTERIOR_NODES + 1) * grid.max_spacing


class _Objective:
    def __init__(self, grid: OrbitGrid, M: int, cache: IntervalCache):
        self.grid = grid
        self.M = M
        self.cache = cache
        self.gap = min_gap(grid)
        self.calls = 0

    def feasible(self, cuts) -> bool:
        e = (0.0, *cuts, math.pi)
        return all(b - a >= self.gap for a, b in zip(e[:-1], e[1:]))

    def __call__(self, cuts) -> float:
        if not self.feasible(cuts):
            return math.inf
        self.calls += 1
        e = (0.0, *cuts, math.pi)
        return float(sum(self.cache.energy(a, b) for a, b in zip(e[:-1], e[1:])))


def _scan(obj: _Objective, axes: list[np.ndarray]):
    """Evaluate every increasing tuple from the product of ``axes``."""
    results = []
    for cuts in itertools.product(*axes):
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            continue
        val = obj(cuts)
        if math.isfinite(val):
            results.append((val, tuple(float(c) for c in cuts)))
    return results


def _golden(f, lo: float, hi: float, tol: float, x0: float | None = None):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x, fx = (c, fc) if fc <= fd else (d, fd)
    if x0 is not None:
        f0 = f(x0)
        if f0 < fx:
            return x0, f0
    return x, fx


def optimize_partition(grid: OrbitGrid, M: int, opts: PartitionOptions | None = None,
                       cache: IntervalCache | None = None) -> PartitionResult:
    """Minimize the partition energy over increasing cut tuples.

    A coarse scan over a uniform lattice of cut tuples is followed by scans
    on successively finer lattices around the best tuple and by
    golden-section sweeps over each cut.
    """
    if int(M) != M or M < 2:
        raise DomainError(f"M >= 2 required, got {M}")
    opts = opts or PartitionOptions()
    cache = IntervalCache(grid) if cache is None else cache
    obj = _Objective(grid, M, cache)
    dim = M - 1
    per_axis = max(3, min(opts.scan_points, int(math.floor(opts.max_scan ** (1.0 / dim) + 1e-9))))
    spacing = math.pi / (per_axis + 1)
    axis = spacing * np.arange(1, per_axis + 1)
    scan = _scan(obj, [axis] * dim)
    if not scan:
        raise ResolutionError(f"grid too coarse to hold {M} pieces")
    scan.sort()
    best_val, best = scan[0]
    alternatives = _distinct_near_minima(scan, best_val, spacing, opts.tol_energy)

    for _ in range(opts.refine_passes):
        local = 9
        offsets = spacing * np.linspace(-1.0, 1.0, local)
        spacing = spacing * 2.0 / (local - 1)
        res = _scan(obj, [c + offsets for c in best])
        res.append((best_val, best))
        best_val, best = min(res)

    cuts = list(best)
    bracket = spacing
    sweeps = 0
    while sweeps < opts.max_sweeps:
        sweeps += 1
        moved = 0.0
        for i in range(dim):
            lo = max(cuts[i] - 2.0 * bracket, (cuts[i - 1] if i > 0 else 0.0) + obj.gap)
            hi = min(cuts[i] + 2.0 * bracket, (cuts[i + 1] if i < dim - 1 else math.pi) - obj.gap)

            def f(x, i=i):
                trial = list(cuts)
                trial[i] = x
                return obj(trial)

            x, _ = _golden(f, lo, hi, opts.golden_tol, x0=cuts[i])
            moved = max(moved, abs(x - cuts[i]))
            cuts[i] = x
        bracket = max(0.5 * bracket, 4.0 * moved, 10.0 * opts.golden_tol)
        if sweeps >= opts.sweeps and moved <= opts.cut_tol:
            break
    log.debug("cut polish: %d sweeps", sweeps)

    best = tuple(cuts)
    best_val = obj(best)
    e = (0.0, *best, math.pi)
    if min(b - a for a, b in zip(e[:-1], e[1:])) <= obj.gap * (1.0 + 1e-9):
        raise DegeneracyError(f"optimal cuts {best} touch the edge of the admissible set; refine the grid")
    partition = IntervalPartition(grid.cfg, best)
    alts = tuple(IntervalPartition(grid.cfg, c) for c in alternatives if not np.allclose(c, best, atol=4 * spacing))
    if alts:
        log.info("near-degenerate partition minima: %s", [a.cuts for a in alts])
    return PartitionResult(partition, best_val, tuple(interval_energies(partition, grid, cache)),
                           obj.calls, alts)


def _distinct_near_minima(scan, best_val, spacing, tol):
    """Scan tuples within ``tol`` (relative) of the best and separated from it."""
    best = np.array(scan[0][1])
    out = []
    for val, cuts in scan[1:]:
        if val > best_val + tol * abs(best_val):
            break
        if np.max(np.abs(np.array(cuts) - best)) > 1.5 * spacing:
            out.append(cuts)
    return sorted(out)


def stationarity(result: PartitionResult, grid: OrbitGrid, step: float = 1e-3,
                 cache: IntervalCache | None = None, extrapolate: bool = True) -> list[float]:
    """Difference quotients of the partition energy in each cut.

    With ``extrapolate`` the central differences at ``step`` and ``step/2``
    are combined as (4 D(step/2) - D(step)) / 3, removing the O(step^2)
    bias of the plain central difference.
    """
    cache = IntervalCache(grid) if cache is None else cache
    obj = _Objective(grid, result.partition.M, cache)
    cuts = list(result.partition.cuts)

    def central(i, h):
        up, dn = list(cuts), list(cuts)
        up[i] += h
        dn[i] -= h
        return (obj(up) - obj(dn)) / (2.0 * h)

    out = []
    for i in range(len(cuts)):
        d = central(i, step)
        if extrapolate:
            d = (4.0 * central(i, 0.5 * step) - d) / 3.0
        out.append(d)
    return out


# ---------------------------------------------------------------------------
# nodal solutions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NodalSolution:
    """Alternating-sign gluing of the interval minimizers.

    ``pieces`` are the interval solutions on the standard meshes and carry
    the energies.  ``splines`` are quintic interpolants of the Richardson
    combination (4 w_{2L} - w_L) / 3 of each piece with its solution on the
    twice finer mesh; they approximate the continuum profile to fourth
    order and are what ``signed_profile`` samples.
    """

    partition: IntervalPartition
    pieces: tuple[ScalarSolution, ...]
    splines: tuple
    signed_profile: ReducedFunction
    total_energy: float

    @property
    def sign_changes(self) -> int:
        return count_sign_changes(self.signed_profile.values)

    def residual_away_from_cuts(self, margin_cells: int = 3) -> float:
        """Sup of the equation residual at grid nodes off the cut layers."""
        grid = self.signed_profile.grid
        t = grid.nodes
        keep = margin_mask(grid, self.partition.cuts, margin_cells) & (t > 0.0) & (t < math.pi)
        worst = 0.0
        for (a, b), sp in zip(self.partition.intervals, self.splines):
            sel = keep & (t > a) & (t < b)
            if np.any(sel):
                r = continuous_residual(self.partition.cfg, sp, t[sel])
                worst = max(worst, float(np.max(np.abs(r))))
        return worst

    def derivative_jumps(self) -> list[float]:
        """|w'(a-) - w'(a+)| of the signed profile at each cut."""
        out = []
        for i, a in enumerate(self.partition.cuts):
            left = float(self.splines[i].derivative(1)(a))
            right = float(self.splines[i + 1].derivative(1)(a))
            # the signs alternate, so the one-sided slopes of |w| should cancel
            out.append(abs(left + right))
        return out

    def grid_residual_near_cuts(self, margin_cells: int = 3) -> float:
        """Discrete residual of the glued profile within the cut layers."""
        grid = self.signed_profile.grid
        r = np.abs(reduced_residual(self.signed_profile, (0.0, math.pi)).values)
        near = ~margin_mask(grid, self.partition.cuts, margin_cells)
        return float(np.max(r[near])) if np.any(near) else 0.0

    def summary(self) -> dict:
        return {
            "cuts": list(self.partition.cuts),
            "total_energy": self.total_energy,
            "sign_changes": self.sign_changes,
            "residual_sup": self.residual_away_from_cuts(),
            "derivative_jumps": self.derivative_jumps(),
            "residual_near_cuts": self.grid_residual_near_cuts(),
        }


def count_sign_changes(values, rel_floor: float = 1e-12) -> int:
    v = np.asarray(values, dtype=float)
    v = v[np.abs(v) > rel_floor * np.max(np.abs(v))]
    return int(np.count_nonzero(np.sign(v[1:]) != np.sign(v[:-1])))


def _extrapolated_spline(coarse: ScalarSolution, fine: ScalarSolution):
    wc = coarse.profile.values
    wf = fine.profile.values[::2]
    return make_interp_spline(coarse.profile.grid.nodes, (4.0 * wf - wc) / 3.0, k=5)


def assemble_nodal(p: IntervalPartition, grid: OrbitGrid, cache: IntervalCache | None = None) -> NodalSolution:
    """Glue the interval minimizers with alternating signs onto ``grid``."""
    cache = IntervalCache(grid) if cache is None else cache
    p.check_resolved(grid)
    pieces = tuple(cache.solve(a, b) for a, b in p.intervals)
    fine = tuple(cache.solve(a, b, refine=2) for a, b in p.intervals)
    splines = tuple(_extrapolated_spline(c, f) for c, f in zip(pieces, fine))
    t = grid.nodes
    signed = np.zeros(grid.size)
    for i, ((a, b), sp) in enumerate(zip(p.intervals, splines)):
        inside = (t > a) & (t < b) if a > 0.0 else (t >= a) & (t < b)
        if b == math.pi:
            inside |= t == math.pi
        signed[inside] += (-1.0) ** i * np.maximum(sp(t[inside]), 0.0)
    profile = ReducedFunction(grid, signed)
    return NodalSolution(p, pieces, splines, profile, float(sum(s.energy for s in pieces)))


def nodal_energy_from_profile(sol: NodalSolution) -> float:
    """(1/N) * crit integral of |signed profile| on the assembly grid."""
    return weighted_crit_integral(sol.signed_profile) / sol.partition.cfg.N


# ---------------------------------------------------------------------------
# inequality checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubadditivityReport:
    a: float
    b: float
    c: float
    lhs: float
    rhs: float
    margin: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_subadditivity(grid: OrbitGrid, a: float, b: float, c: float,
                         cache: IntervalCache | None = None, tol_energy: float = 1e-9) -> SubadditivityReport:
    """Check energy(a, c) < min(energy(a, b), energy(b, c))."""
    if not (0.0 <= a < b < c <= math.pi):
        raise DomainError(f"need 0 <= a < b < c <= pi, got {(a, b, c)}")
    cache = IntervalCache(grid) if cache is None else cache
    lhs = cache.energy(a, c)
    rhs = min(cache.energy(a, b), cache.energy(b, c))
    margin = rhs - lhs
    return SubadditivityReport(a, b, c, lhs, rhs, margin, bool(margin > tol_energy * abs(rhs)))


@dataclass(frozen=True)
class ComparisonReport:
    system_c: float
    partition_value: float
    gap: float
    relative_gap: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_comparison(system_c: float, partition_value: float, tol_energy: float = 1e-6) -> ComparisonReport:
    """System level is at most the partition level (relative tolerance)."""
    gap = partition_value - system_c
    rel = gap / abs(partition_value)
    return ComparisonReport(float(system_c), float(partition_value), float(gap), float(rel),
                            bool(system_c <= partition_value + tol_energy * abs(partition_value)))


@dataclass(frozen=True)
class MonotoneReport:
    energies: tuple[float, ...]
    margins: tuple[float, ...]
    whole_sphere: float
    passed: bool

    def to_dict(self) -> dict:
        return {"energies": list(self.energies), "margins": list(self.margins),
                "whole_sphere": self.whole_sphere, "passed": self.passed}


def verify_monotone_in_M(grid: OrbitGrid, M_max: int, opts: PartitionOptions | None = None,
                         cache: IntervalCache | None = None, margin: float = 1e-3) -> MonotoneReport:
    """Optimal partition levels for M = 2..M_max must increase strictly."""
    if M_max < 3:
        raise DomainError("M_max >= 3 required")
    cache = IntervalCache(grid) if cache is None else cache
    values = tuple(optimize_partition(grid, M, opts, cache).energy for M in range(2, M_max + 1))
    whole = cache.energy(0.0, math.pi)
    margins = tuple(b - a for a, b in zip(values, values[1:]))
    ok = all(d > margin for d in margins) and values[0] > whole
    return MonotoneReport(values, margins, whole, bool(ok))
