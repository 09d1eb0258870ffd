"""Least-energy positive solutions of the reduced equation on orbit intervals.

On an interval ``(a, b)`` the least energy is

    c(a, b) = min over the Nehari set of (1/N) * 1/4 int |w|^{2*} h dt,

with ``w = 0`` at interior cut points and no condition at 0 or pi.  It is
computed by descent on the Rayleigh quotient in the H^1_h metric followed by
a Newton polish of the discrete Euler-Lagrange system.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp

from .discretization import (
    Mesh,
    OrbitGrid,
    ReducedFunction,
    reduced_residual,
    weighted_crit_integral,
    weighted_h1_normsq,
)
from .errors import ConvergenceError, DegenerateInputError, DomainError
from .geometry import weight_h, weight_log_derivative

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 20000
    tol_energy: float = 1e-9
    tol_res: float = 1e-4
    tol_grad: float = 1e-8
    newton_iters: int = 30
    restarts: int = 0
    seed: int = 0

    @classmethod
    def from_mapping(cls, mapping) -> "SolverOptions":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(mapping) - known
        if unknown:
            raise DomainError(f"unknown solver options: {sorted(unknown)}")
        return cls(**dict(mapping))


@dataclass(frozen=True, eq=False)
class ScalarSolution:
    interval: tuple[float, float]
    profile: ReducedFunction
    energy: float
    residual_sup: float
    iterations: int
    multiplicity_flag: bool = field(default=False)

    @property
    def normsq(self) -> float:
        return weighted_h1_normsq(self.profile)

    @property
    def crit(self) -> float:
        return weighted_crit_integral(self.profile)

    def on_grid(self, grid: Mesh) -> ReducedFunction:
        """The profile transferred to ``grid`` (zero outside the interval)."""
        if self.profile.grid is grid:
            return self.profile
        return self.profile.resample(grid)


def nehari_scale(w: ReducedFunction) -> float:
    """Unique t > 0 with ||t w||^2 = |t w|_{2*}^{2*}."""
    n2 = weighted_h1_normsq(w)
    cp = weighted_crit_integral(w)
    if n2 <= 0.0 or cp <= 0.0:
        raise DegenerateInputError("the zero function has no Nehari multiple")
    return (n2 / cp) ** (1.0 / (w.grid.cfg.p_crit - 2.0))


def _scale_to_nehari(mesh: Mesh, v: np.ndarray) -> np.ndarray:
    n2 = mesh.normsq(v)
    cp = mesh.power_integral(v, mesh.cfg.p_crit)
    if not (n2 > 0.0 and cp > 0.0):
        raise DegenerateInputError("iterate collapsed to zero")
    return v * (n2 / cp) ** (1.0 / (mesh.cfg.p_crit - 2.0))


def _rayleigh(mesh: Mesh, v: np.ndarray) -> float:
    p = mesh.cfg.p_crit
    return mesh.normsq(v) / mesh.power_integral(v, p) ** (2.0 / p)


def initial_bump(mesh: Mesh) -> np.ndarray:
    a, b = mesh.a, mesh.b
    t = mesh.nodes
    if mesh.dirichlet == (False, False):
        return np.ones_like(t)
    if not mesh.dirichlet[0]:
        # half bump with its crest at the free end
        return np.cos(0.5 * math.pi * (t - a) / (b - a))
    if not mesh.dirichlet[1]:
        return np.sin(0.5 * math.pi * (t - a) / (b - a))
    return np.sin(math.pi * (t - a) / (b - a))


def _descend(mesh: Mesh, v: np.ndarray, opts: SolverOptions):
    """Barzilai-Borwein descent of the Rayleigh quotient in the H^1_h metric.

    Iterates stay on the Nehari set and nonnegative.  Returns the iterate
    and the number of steps taken.
    """
    p = mesh.cfg.p_crit
    v = _scale_to_nehari(mesh, np.abs(v))
    q = _rayleigh(mesh, v)
    history = [q]
    prev_v = prev_d = None
    tau = 1.0
    it = 0
    for it in range(1, opts.max_iters + 1):
        f = 0.25 * mesh.mass * v ** (p - 1.0)
        d = v - mesh.h1_solve(f)
        dn = mesh.normsq(d)
        vn = mesh.normsq(v)
        if dn <= (opts.tol_grad ** 2) * vn:
            break
        if prev_v is not None:
            s = v - prev_v
            y = d - prev_d
            sy = float(s @ mesh.apply_h1(y))
            ss = mesh.normsq(s)
            tau = ss / sy if sy > 0.0 else 1.0
            tau = min(max(tau, 1e-3), 1e3)
        ref = max(history[-5:])
        while True:
            trial = np.abs(v - tau * d)
            try:
                trial = _scale_to_nehari(mesh, trial)
                qt = _rayleigh(mesh, trial)
            except DegenerateInputError:
                qt = math.inf
            if qt <= ref - 1e-4 * tau * dn / vn * q or tau < 1e-8:
                break
            tau *= 0.5
        prev_v, prev_d = v, d
        v, q_old, q = trial, q, qt
        history.append(q)
        if abs(q_old - q) <= opts.tol_energy * 1e-1 * q and it > 5:
            break
    return v, it


def _newton_polish(mesh: Mesh, v: np.ndarray, opts: SolverOptions):
    """Newton iteration on the discrete equation starting near a solution."""
    p = mesh.cfg.p_crit
    best = v
    best_res = _defect_norm(mesh, v)
    for _ in range(opts.newton_iters):
        F = mesh.equation_defect(best)
        shift = 0.25 * (p - 1.0) * mesh.mass * np.abs(best) ** (p - 2.0)
        try:
            step = mesh.jacobian_solve(shift, F)
        except (np.linalg.LinAlgError, ValueError):
            break
        trial = best - step
        res = _defect_norm(mesh, trial)
        if not np.isfinite(res) or res >= best_res or np.min(trial[mesh.free]) < -1e-8 * np.max(trial):
            break
        best, best_res = trial, res
        if best_res < 1e-13:
            break
    return np.abs(best)


def _defect_norm(mesh: Mesh, v: np.ndarray) -> float:
    F = mesh.equation_defect(v)
    ok = (mesh.mass > 0.0) & mesh.free
    return float(np.max(np.abs(F[ok] / mesh.mass[ok]))) if np.any(ok) else 0.0


def solve_on_mesh(mesh: Mesh, opts: SolverOptions | None = None, init=None) -> ScalarSolution:
    """Least-energy positive solution on an arbitrary (interval) mesh."""
    opts = opts or SolverOptions()
    v0 = initial_bump(mesh) if init is None else np.asarray(init, dtype=float)
    v0 = np.where(mesh.free, v0, 0.0)
    if not np.any(v0[mesh.free] != 0.0):
        raise DegenerateInputError("initial guess vanishes on the free nodes")
    v, iters = _descend(mesh, v0, opts)
    v = _newton_polish(mesh, v, opts)
    v = np.where(mesh.free, v, 0.0)
    v = _scale_to_nehari(mesh, v)
    support = (mesh.a, mesh.b)
    profile = ReducedFunction(mesh, v, support)
    res = reduced_residual(profile, support).values
    res_sup = float(np.max(np.abs(res)))
    energy = weighted_crit_integral(profile) / mesh.cfg.N
    sol = ScalarSolution(support, profile, energy, res_sup, iters)
    if res_sup > opts.tol_res:
        raise ConvergenceError(
            f"interval ({mesh.a:.6g}, {mesh.b:.6g}): residual {res_sup:.3e} "
            f"above tolerance {opts.tol_res:.1e}",
            last_iterate=sol, residual=res_sup)
    return sol


def least_energy_on_interval(grid: OrbitGrid, a: float, b: float,
                             opts: SolverOptions | None = None, init=None) -> ScalarSolution:
    """Least energy and positive minimizer on the orbit interval ``(a, b)``.

    ``init`` may be nodal values on the interval mesh (same size as the
    grid's reference mesh) used as starting guess.
    """
    opts = opts or SolverOptions()
    mesh = grid.interval_mesh(a, b)
    sol = solve_on_mesh(mesh, opts, init)
    if opts.restarts > 0:
        sol = _restart_check(mesh, sol, opts)
    return sol


def _restart_check(mesh: Mesh, sol: ScalarSolution, opts: SolverOptions) -> ScalarSolution:
    rng = np.random.default_rng(opts.seed)
    candidates = [sol]
    base = initial_bump(mesh)
    for _ in range(opts.restarts):
        noise = rng.uniform(0.5, 1.5, size=mesh.size)
        candidates.append(solve_on_mesh(mesh, replace(opts, restarts=0), base * noise))
    tol = opts.tol_energy * max(1.0, sol.energy)
    best = min(c.energy for c in candidates)
    near = [c for c in candidates if c.energy <= best + tol]
    distinct = any(
        np.max(np.abs(c.profile.values - near[0].profile.values)) > 1e-6 * np.max(near[0].profile.values)
        for c in near[1:])
    chosen = min(near, key=lambda c: tuple(c.profile.values))
    return replace(chosen, multiplicity_flag=distinct)


# ---------------------------------------------------------------------------
# shooting oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ShootingResult:
    """Trajectory of the reduced ODE sampled on a grid.

    ``stop`` is the angle where integration ended: the first zero of ``w``,
    a blow-up point, or the far endpoint.  Values past ``stop`` are zero.
    ``energy`` is (1/N) * 1/4 int |w|^{2*} h over the traversed range.
    """

    profile: ReducedFunction
    w0: float
    from_left: bool
    stop: float
    hit_zero: bool
    blew_up: bool
    energy: float


def _series_coefficient(cfg, w0: float, from_left: bool) -> float:
    # w = w0 + c s^2 near the endpoint; the regular-singular term is (d-1)/s
    F = 0.25 * cfg.a_N * w0 - 0.25 * abs(w0) ** (cfg.p_crit - 2.0) * w0
    dim = cfg.n if from_left else cfg.m
    return F / (2.0 * dim)


def shoot_reduced_ode(grid: Mesh, w0: float, from_left: bool = True,
                      blowup: float = 1e6, rtol: float = 1e-11, atol: float = 1e-13) -> ShootingResult:
    """Integrate -w'' - (h'/h) w' + a_N/4 w = 1/4 |w|^{2*-2} w from an endpoint.

    The start is w(endpoint) = w0, w'(endpoint) = 0, continued by the
    series w0 + c s^2 across the first grid cell.
    """
    cfg = grid.cfg
    p = cfg.p_crit
    t_nodes = grid.nodes
    if w0 < 0.0:
        raise DomainError("shooting height must be nonnegative")
    if w0 == 0.0:
        zero = ReducedFunction(grid, np.zeros_like(t_nodes))
        return ShootingResult(zero, 0.0, from_left, math.pi if from_left else 0.0,
                              False, False, 0.0)

    c2 = _series_coefficient(cfg, w0, from_left)
    s0 = float(min(t_nodes[1] - t_nodes[0], t_nodes[-1] - t_nodes[-2]))
    sign = 1.0 if from_left else -1.0
    t0 = s0 if from_left else math.pi - s0
    t_end = math.pi if from_left else 0.0
    y0 = [w0 + c2 * s0 * s0, sign * 2.0 * c2 * s0, 0.0]
    # energy accumulated over the series cell (w ~ w0 there)
    start_cell = 0.25 * abs(w0) ** p * _weight_integral(cfg, 0.0 if from_left else math.pi - s0, s0)

    def rhs(t, y):
        w, dw, _ = y
        g = weight_log_derivative(t, cfg)
        ddw = -g * dw + 0.25 * cfg.a_N * w - 0.25 * abs(w) ** (p - 2.0) * w
        return [dw, ddw, sign * 0.25 * abs(w) ** p * weight_h(min(max(t, 0.0), math.pi), cfg)]

    def hit_zero(t, y):
        return y[0]
    hit_zero.terminal = True
    hit_zero.direction = -1

    def explode(t, y):
        return abs(y[0]) - blowup
    explode.terminal = True

    # stop one cell short of the far singular endpoint and close the last
    # cell with the value reached there
    t_stop = t_end - sign * s0
    sol = solve_ivp(rhs, (t0, t_stop), y0, method="DOP853", rtol=rtol, atol=atol,
                    events=(hit_zero, explode), dense_output=True)
    stop = float(sol.t[-1])
    zero_hit = sol.status == 1 and len(sol.t_events[0]) > 0
    blew = sol.status == 1 and len(sol.t_events[1]) > 0
    vals = np.zeros_like(t_nodes)
    if from_left:
        reach = t_nodes <= stop
        inner = reach & (t_nodes >= t0)
        series = t_nodes < t0
    else:
        reach = t_nodes >= stop
        inner = reach & (t_nodes <= t0)
        series = t_nodes > t0
    vals[inner] = sol.sol(t_nodes[inner])[0]
    sdist = t_nodes[series] if from_left else math.pi - t_nodes[series]
    vals[series] = w0 + c2 * sdist ** 2
    end_cell = 0.0
    if not zero_hit and not blew:
        w_end = float(sol.y[0, -1])
        beyond = t_nodes > stop if from_left else t_nodes < stop
        vals[beyond] = w_end
        reach |= beyond
        end_cell = 0.25 * abs(w_end) ** p * _weight_integral(cfg, math.pi - s0 if from_left else 0.0, s0)
    vals = np.where(reach, vals, 0.0)
    vals = np.where(np.isfinite(vals), vals, 0.0)
    energy = (start_cell + float(sol.y[2, -1]) + end_cell) / cfg.N
    profile = ReducedFunction(grid, vals)
    return ShootingResult(profile, float(w0), from_left, stop, bool(zero_hit), bool(blew), energy)


def _weight_integral(cfg, a: float, length: float) -> float:
    x = np.linspace(a, a + length, 9)
    return float(np.trapezoid(weight_h(x, cfg), x))


def shoot_to_zero(grid: Mesh, target: float, bracket: tuple[float, float] | None = None,
                  tol: float = 1e-12, max_iter: int = 200) -> ShootingResult:
    """Bisect the starting height so that the trajectory from t = 0 first
    vanishes at ``target``.

    Larger heights hit zero earlier, so the first-zero angle is decreasing
    in ``w0`` on the bracket.
    """
    if not (0.0 < target < math.pi):
        raise DomainError("target zero must lie in (0, pi)")
    cfg = grid.cfg

    def first_zero(w0):
        r = shoot_reduced_ode(grid, w0, True)
        return r.stop if r.hit_zero else math.pi

    if bracket is None:
        lo = cfg.constant_solution * 1.0001
        hi = lo * 2.0
        while first_zero(hi) > target:
            lo, hi = hi, hi * 2.0
            if hi > 1e6:
                raise ConvergenceError("no shooting height reaches the target zero")
    else:
        lo, hi = bracket
    if not (first_zero(lo) > target >= first_zero(hi)):
        raise ConvergenceError(f"bracket {lo, hi} does not enclose the target zero {target}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if first_zero(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    return shoot_reduced_ode(grid, hi, True)
