"""Competitive M-component system and its phase-separation limit.

For coupling ``lambda_ij < 0`` the functional is

    J(v) = 1/2 sum ||v_i||^2 - 1/2* sum crit_i - 1/2 sum_{i != j} lambda_ij o_ij,
    o_ij = 1/4 int |v_j|^alpha_ij |v_i|^beta_ij h dt,

minimized over the product Nehari set.  As lambda -> -infinity the
minimizers segregate and their supports give an optimal partition.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_banded

from .discretization import OrbitGrid, ReducedFunction
from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateInputError,
    GridMismatchError,
    ProjectionError,
    SegregationError,
)
from .partition import IntervalPartition

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    """Coupling strengths and exponents, all ``M x M``.

    Diagonal entries of ``alpha`` and ``beta`` are ignored.
    """

    lam: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        alpha = np.array(self.alpha, dtype=float)
        beta = np.array(self.beta, dtype=float)
        M = lam.shape[0]
        if lam.ndim != 2 or lam.shape != (M, M) or alpha.shape != (M, M) or beta.shape != (M, M):
            raise ConfigError("lambda, alpha and beta must be square matrices of one size")
        if M < 1:
            raise ConfigError("at least one component is required")
        off = ~np.eye(M, dtype=bool)
        if np.any(np.diag(lam) != 0.0):
            raise ConfigError("lambda must have zero diagonal")
        if not np.allclose(lam, lam.T, rtol=0.0, atol=0.0):
            raise ConfigError("lambda must be symmetric")
        if np.any(lam[off] >= 0.0):
            raise ConfigError("off-diagonal lambda entries must be negative")
        if np.any(alpha[off] <= 1.0) or np.any(beta[off] <= 1.0):
            raise ConfigError("coupling exponents must exceed 1")
        if not np.array_equal(alpha[off], beta.T[off]):
            raise ConfigError("alpha_ij = beta_ji is required")
        sums = alpha + beta
        if M > 1 and np.ptp(sums[off]) > 1e-12:
            raise ConfigError("alpha_ij + beta_ij must be the same for all pairs")
        for arr in (lam, alpha, beta):
            arr.flags.writeable = False
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def M(self) -> int:
        return self.lam.shape[0]

    @classmethod
    def uniform(cls, M: int, lam: float, p: float, alpha: float | None = None) -> "CouplingMatrix":
        """Same ``lam`` for every pair; exponents default to p/2 each."""
        alpha = p / 2.0 if alpha is None else float(alpha)
        lam_m = np.full((M, M), float(lam))
        np.fill_diagonal(lam_m, 0.0)
        a = np.full((M, M), alpha)
        b = np.full((M, M), p - alpha)
        # alpha_ij = beta_ji: the upper triangle carries alpha, the lower its mirror
        lower = np.tril_indices(M, -1)
        a[lower], b[lower] = p - alpha, alpha
        return cls(lam_m, a, b)

    def with_lambda(self, lam: float) -> "CouplingMatrix":
        lam_m = np.full((self.M, self.M), float(lam))
        np.fill_diagonal(lam_m, 0.0)
        return CouplingMatrix(lam_m, self.alpha, self.beta)

    def check_critical(self, p: float) -> None:
        off = ~np.eye(self.M, dtype=bool)
        if self.M > 1 and np.max(np.abs((self.alpha + self.beta)[off] - p)) > 1e-12:
            raise ConfigError(f"alpha_ij + beta_ij must equal the critical exponent {p:g}")


@dataclass(frozen=True, eq=False)
class SystemState:
    grid: OrbitGrid
    values: np.ndarray
    coupling: CouplingMatrix

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != self.grid.size:
            raise GridMismatchError("state values must have shape (M, grid size)")
        if v.shape[0] != self.coupling.M:
            raise ConfigError("number of components differs from the coupling size")
        if not np.all(np.isfinite(v)):
            raise DegenerateInputError("state values must be finite")
        self.coupling.check_critical(self.grid.cfg.p_crit)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_components(cls, components, coupling: CouplingMatrix) -> "SystemState":
        grid = components[0].grid
        for c in components[1:]:
            grid.check_same(c.grid)
        return cls(grid, np.stack([c.values for c in components]), coupling)

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def components(self) -> list[ReducedFunction]:
        return [ReducedFunction(self.grid, row) for row in self.values]

    def replace_values(self, values) -> "SystemState":
        return SystemState(self.grid, values, self.coupling)

    def with_coupling(self, coupling: CouplingMatrix) -> "SystemState":
        return SystemState(self.grid, self.values, coupling)


@dataclass(frozen=True, eq=False)
class EnergyReport:
    per_component_normsq: np.ndarray
    per_component_crit: np.ndarray
    overlaps: np.ndarray
    total_J: float
    c_value: float
    lam: float | None = None
    iterations: int = 0
    converged: bool = False
    nehari_residual: float = 0.0

    @property
    def max_overlap(self) -> float:
        o = self.overlaps.copy()
        np.fill_diagonal(o, 0.0)
        return float(o.max()) if o.size else 0.0

    @property
    def separated(self) -> bool:
        """Overlaps negligible against the critical integrals."""
        return self.max_overlap <= 1e-6 * float(np.max(self.per_component_crit))

    def to_json(self) -> dict:
        return {
            "lambda": self.lam,
            "c_value": float(self.c_value),
            "per_component_normsq": [float(x) for x in self.per_component_normsq],
            "overlaps": [[float(x) for x in row] for row in self.overlaps],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }


# ---------------------------------------------------------------------------
# energy, gradient, Nehari projection
# ---------------------------------------------------------------------------

def _overlap_matrix(grid, V, cp: CouplingMatrix) -> np.ndarray:
    M = V.shape[0]
    A = np.abs(V)
    o = np.zeros((M, M))
    for i in range(M):
        for j in range(M):
            if i != j:
                o[i, j] = 0.25 * (A[j] ** cp.alpha[i, j] * A[i] ** cp.beta[i, j]) @ grid.mass
    return o


def _parts(grid, V, cp):
    p = grid.cfg.p_crit
    normsq = np.array([grid.normsq(v) for v in V])
    crit = np.array([grid.power_integral(v, p) for v in V])
    return normsq, crit, _overlap_matrix(grid, V, cp)


def system_energy(state: SystemState) -> EnergyReport:
    """Energy and its ingredients for ``state``."""
    grid, cp = state.grid, state.coupling
    p = grid.cfg.p_crit
    normsq, crit, o = _parts(grid, state.values, cp)
    total = 0.5 * normsq.sum() - crit.sum() / p - 0.5 * float(np.sum(cp.lam * o))
    c_value = normsq.sum() / grid.cfg.N
    return EnergyReport(normsq, crit, o, float(total), float(c_value),
                        nehari_residual=float(np.max(np.abs(_nehari_defect(normsq, crit, o, cp)), initial=0.0)))


def _nehari_defect(normsq, crit, o, cp):
    """Relative defect of n_i = c_i + sum_j lambda_ij beta_ij o_ij."""
    coupling = np.sum(cp.lam * cp.beta * o, axis=1)
    scale = np.maximum(normsq, 1e-300)
    return (normsq - crit - coupling) / scale


def _gradient_array(grid, V, cp) -> np.ndarray:
    p = grid.cfg.p_crit
    G = np.empty_like(V)
    A = np.abs(V)
    for i in range(V.shape[0]):
        g = grid.apply_h1(V[i]) - 0.25 * grid.mass * A[i] ** (p - 2.0) * V[i]
        for j in range(V.shape[0]):
            if j != i:
                # o_ij and o_ji both depend on v_i; together they give beta_ij
                b = cp.beta[i, j]
                g -= (0.25 * cp.lam[i, j] * b) * grid.mass * A[j] ** cp.alpha[i, j] * _signed_power(V[i], b - 1.0)
        G[i] = g
    return G


def _signed_power(v, q):
    """sign(v) |v|^q, which is |v|^{q-1} v without dividing by zero."""
    return np.sign(v) * np.abs(v) ** q


def system_gradient(state: SystemState) -> list[ReducedFunction]:
    """Nodal gradient of the discrete functional, one function per component.

    Entry ``k`` of component ``i`` is the partial derivative of the discrete
    energy with respect to the nodal value ``v_i[k]``.
    """
    G = _gradient_array(state.grid, np.asarray(state.values), state.coupling)
    return [ReducedFunction(state.grid, g) for g in G]


def _solve_scales(normsq, crit, o, cp, p, damping=0.5, max_iter=200, tol=1e-13):
    """Positive s with s_i^{p-2} crit_i - sum_j |lam_ij| beta_ij s_j^alpha s_i^{beta-2} o_ij = normsq_i.

    Damped fixed point in log scale from the decoupled scales, then Newton.
    """
    if np.any(normsq <= 0.0) or np.any(crit <= 0.0):
        raise ProjectionError("a component vanishes; no Nehari multiple exists")
    with np.errstate(over="ignore", invalid="ignore"):
        return _scale_iteration(normsq, crit, o, cp, p, damping, max_iter, tol)


def _scale_iteration(normsq, crit, o, cp, p, damping, max_iter, tol):
    M = normsq.size
    K = -cp.lam * cp.beta * o  # nonnegative coupling weights
    x = np.log(normsq / crit) / (p - 2.0)

    def residual(x):
        s = np.exp(x)
        out = np.empty(M)
        for i in range(M):
            cpl = sum(K[i, j] * s[j] ** cp.alpha[i, j] * s[i] ** (cp.beta[i, j] - 2.0)
                      for j in range(M) if j != i)
            out[i] = (s[i] ** (p - 2.0) * crit[i] - cpl) / normsq[i] - 1.0
        return out

    for _ in range(max_iter):
        s = np.exp(x)
        target = np.empty(M)
        for i in range(M):
            cpl = sum(K[i, j] * s[j] ** cp.alpha[i, j] * s[i] ** (cp.beta[i, j] - 2.0)
                      for j in range(M) if j != i)
            target[i] = (normsq[i] + cpl) / crit[i]
        if np.any(~np.isfinite(target)) or np.any(target <= 0.0):
            break
        x_new = np.log(target) / (p - 2.0)
        x = (1.0 - damping) * x + damping * x_new
        if np.max(np.abs(residual(x))) < tol:
            return np.exp(x)
        if np.max(np.abs(x)) > 200.0:
            break

    # Newton in log scale with a finite-difference Jacobian (M is small)
    x = np.log(normsq / crit) / (p - 2.0) if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 200 else x
    r = residual(x)
    for _ in range(100):
        if np.max(np.abs(r)) < tol:
            return np.exp(x)
        J = np.empty((M, M))
        eps = 1e-7
        for k in range(M):
            dx = np.zeros(M)
            dx[k] = eps
            J[:, k] = (residual(x + dx) - residual(x - dx)) / (2.0 * eps)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-6:
            r_new = residual(x + t * step)
            if np.all(np.isfinite(r_new)) and np.max(np.abs(r_new)) < np.max(np.abs(r)):
                break
            t *= 0.5
        else:
            break
        x = x + t * step
        r = r_new
    if np.max(np.abs(r)) < 1e-10:
        return np.exp(x)
    raise ProjectionError(f"Nehari scales did not converge (defect {np.max(np.abs(r)):.2e})")


def project_to_system_nehari(state: SystemState) -> SystemState:
    """Rescale each component so that every Nehari identity holds."""
    grid, cp = state.grid, state.coupling
    V = np.asarray(state.values)
    normsq, crit, o = _parts(grid, V, cp)
    s = _solve_scales(normsq, crit, o, cp, grid.cfg.p_crit)
    return state.replace_values(V * s[:, None])


def nehari_scales(state: SystemState) -> np.ndarray:
    """The scales s_i used by :func:`project_to_system_nehari`."""
    normsq, crit, o = _parts(state.grid, np.asarray(state.values), state.coupling)
    return _solve_scales(normsq, crit, o, state.coupling, state.grid.cfg.p_crit)


# ---------------------------------------------------------------------------
# minimization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemOptions:
    max_iters: int = 20000
    tol_energy: float = 1e-9
    tol_grad: float = 1e-7
    max_restarts: int = 2
    d_floor: float = 0.0
    seed: int = 0


def disjoint_bumps(grid: OrbitGrid, coupling: CouplingMatrix) -> SystemState:
    """Sine bumps on the M equal subintervals of (0, pi), on the Nehari set."""
    M = coupling.M
    t = grid.nodes
    V = np.zeros((M, grid.size))
    for i in range(M):
        a, b = i * math.pi / M, (i + 1) * math.pi / M
        inside = (t >= a) & (t <= b)
        V[i, inside] = np.sin(math.pi * (t[inside] - a) / (b - a))
        if i == 0:
            V[i, t < 0.5 * (a + b)] = 1.0  # no boundary at t = 0
        if i == M - 1:
            V[i, t > 0.5 * (a + b)] = 1.0
    if M == 1:
        V[0] = 1.0
    return project_to_system_nehari(SystemState(grid, V, coupling))


def winner_take_all(state: SystemState) -> SystemState:
    """Keep each component only where it dominates the others."""
    V = np.abs(np.asarray(state.values))
    scaled = V / np.maximum(V.max(axis=1, keepdims=True), 1e-300)
    winner = np.argmax(scaled, axis=0)
    W = np.where(np.arange(state.M)[:, None] == winner[None, :], V, 0.0)
    return state.replace_values(W)


class _Preconditioner:
    """Tridiagonal H^1_h metric plus the local coupling stiffness."""

    def __init__(self, grid: OrbitGrid):
        self.grid = grid
        upper = grid._h1_banded_upper()
        self.sup = upper[0].copy()
        self.diag = upper[1].copy()

    def solve(self, V, G, cp):
        grid = self.grid
        M = V.shape[0]
        A = np.abs(V)
        out = np.empty_like(G)
        for i in range(M):
            extra = np.zeros(grid.size)
            for j in range(M):
                if j == i:
                    continue
                b = cp.beta[i, j]
                floor = 1e-3 * max(float(A[i].max()), 1e-300)
                extra += (-cp.lam[i, j] * b * 0.25) * grid.mass * A[j] ** cp.alpha[i, j] \
                    * np.maximum(A[i], floor) ** (b - 2.0)
            ab = np.zeros((3, grid.size))
            ab[0, 1:] = self.sup[1:]
            ab[1] = self.diag + extra
            ab[2, :-1] = self.sup[1:]
            out[i] = solve_banded((1, 1), ab, G[i])
        return out

    def inner(self, X, Y, V, cp):
        """<X, P Y> summed over components."""
        grid = self.grid
        total = 0.0
        A = np.abs(V)
        for i in range(X.shape[0]):
            py = grid.apply_h1(Y[i])
            for j in range(X.shape[0]):
                if j == i:
                    continue
                b = cp.beta[i, j]
                floor = 1e-3 * max(float(A[i].max()), 1e-300)
                py = py + (-cp.lam[i, j] * b * 0.25) * grid.mass * A[j] ** cp.alpha[i, j] \
                    * np.maximum(A[i], floor) ** (b - 2.0) * Y[i]
            total += float(X[i] @ py)
        return total


def minimize_system(grid: OrbitGrid, coupling: CouplingMatrix, init: SystemState | None = None,
                    opts: SystemOptions | None = None) -> tuple[SystemState, EnergyReport]:
    """Least-energy point of the functional on the product Nehari set.

    Preconditioned gradient steps with a Barzilai-Borwein step length, the
    absolute-value retraction and a Nehari projection after every step.
    """
    opts = opts or SystemOptions()
    state = disjoint_bumps(grid, coupling) if init is None else init.with_coupling(coupling)
    if state.grid is not grid:
        raise GridMismatchError("initial state lives on a different grid")
    restarts = 0
    while True:
        try:
            return _minimize(grid, coupling, state, opts)
        except _Collapse as exc:
            restarts += 1
            if restarts > opts.max_restarts:
                raise ConvergenceError(f"component collapse persisted after {opts.max_restarts} restarts: {exc}",
                                       last_iterate=exc.state) from None
            log.info("component collapse (%s); restarting from separated supports", exc)
            state = winner_take_all(exc.state) if restarts == 1 else disjoint_bumps(grid, coupling)


class _Collapse(Exception):
    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


def _minimize(grid, cp, state, opts):
    N = grid.cfg.N
    try:
        state = project_to_system_nehari(state.replace_values(np.abs(state.values)))
    except ProjectionError:
        state = project_to_system_nehari(winner_take_all(state))
    V = np.array(state.values)
    pre = _Preconditioner(grid)
    normsq = np.array([grid.normsq(v) for v in V])
    c = normsq.sum() / N
    history = [c]
    prev = None
    tau = 1.0
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        G = _gradient_array(grid, V, cp)
        D = pre.solve(V, G, cp)
        gd = float(np.sum(G * D))
        if gd <= (opts.tol_grad ** 2) * normsq.sum():
            converged = True
            break
        if prev is not None:
            s = V - prev[0]
            y = G - prev[1]
            sy = float(np.sum(s * y))
            sps = pre.inner(s, s, V, cp)
            tau = sps / sy if sy > 0.0 else 1.0
            tau = min(max(tau, 1e-4), 1e2)
        ref = max(history[-8:])
        while True:
            trial = np.abs(V - tau * D)
            try:
                t_state = project_to_system_nehari(state.replace_values(trial))
                t_norm = np.array([grid.normsq(v) for v in t_state.values])
                ct = t_norm.sum() / N
            except ProjectionError:
                ct = math.inf
            if ct <= ref - 1e-4 * tau * gd / N or tau < 1e-10:
                break
            tau *= 0.5
        if not math.isfinite(ct):
            raise ConvergenceError("line search failed: projection impossible for every step",
                                   last_iterate=state)
        prev = (V, G)
        state, V, normsq = t_state, np.array(t_state.values), t_norm
        history.append(ct)
        if opts.d_floor > 0.0 and normsq.min() < opts.d_floor:
            raise _Collapse(f"component norm {normsq.min():.3e} below floor {opts.d_floor:.3e}", state)
        if it > 10 and abs(history[-2] - ct) <= opts.tol_energy * ct \
                and abs(history[-11] - ct) <= 10 * opts.tol_energy * ct:
            converged = True
            break
    rep = system_energy(state)
    rep = replace(rep, lam=_uniform_lambda(cp), iterations=it, converged=converged)
    return state, rep


def _uniform_lambda(cp: CouplingMatrix):
    off = cp.lam[~np.eye(cp.M, dtype=bool)]
    if off.size and np.all(off == off[0]):
        return float(off[0])
    return None


# ---------------------------------------------------------------------------
# continuation in lambda
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ContinuationResult:
    stages: tuple[tuple[SystemState, EnergyReport], ...]
    failed_stage: int | None = None
    error: str | None = None
    d_floor: float = 0.0

    @property
    def final(self) -> tuple[SystemState, EnergyReport]:
        return self.stages[-1]

    @property
    def reports(self) -> list[EnergyReport]:
        return [r for _, r in self.stages]


def check_schedule(schedule) -> tuple[float, ...]:
    sched = tuple(float(x) for x in schedule)
    if not sched:
        raise ConfigError("lambda schedule is empty")
    if any(x >= 0.0 for x in sched):
        raise ConfigError("lambda schedule entries must be negative")
    if any(b >= a for a, b in zip(sched, sched[1:])):
        raise ConfigError("lambda schedule must be strictly decreasing")
    return sched


def lambda_continuation(grid: OrbitGrid, schedule, M: int, alpha: float | None = None,
                        opts: SystemOptions | None = None, init: SystemState | None = None,
                        coupling: CouplingMatrix | None = None) -> ContinuationResult:
    """Solve for each lambda in ``schedule``, warm-starting from the last stage.

    The norm floor is fixed after the first stage at half the smallest
    component norm.  A stage that fails stops the run; the stages solved so
    far are returned together with the failing index.
    """
    sched = check_schedule(schedule)
    opts = opts or SystemOptions()
    p = grid.cfg.p_crit
    base = coupling if coupling is not None else CouplingMatrix.uniform(M, sched[0], p, alpha)
    stages = []
    state = init
    d_floor = opts.d_floor
    for k, lam in enumerate(sched):
        cp = base.with_lambda(lam)
        try:
            if state is not None:
                try:
                    state = project_to_system_nehari(state.with_coupling(cp))
                except ProjectionError:
                    state = project_to_system_nehari(winner_take_all(state).with_coupling(cp))
            state, rep = minimize_system(grid, cp, state, replace(opts, d_floor=d_floor))
        except (ConvergenceError, ProjectionError) as exc:
            log.warning("continuation stopped at stage %d (lambda=%g): %s", k, lam, exc)
            return ContinuationResult(tuple(stages), k, str(exc), d_floor)
        if k == 0:
            d_floor = 0.5 * float(rep.per_component_normsq.min())
        stages.append((state, rep))
    return ContinuationResult(tuple(stages), None, None, d_floor)


# ---------------------------------------------------------------------------
# supports
# ---------------------------------------------------------------------------

def extract_supports(state: SystemState, threshold: float = 0.05) -> IntervalPartition:
    """Cut points between the super-threshold sets of the components.

    Each component's set ``{v_i >= threshold * max v_i}`` must be one run
    of consecutive nodes.  Runs are ordered along (0, pi) and each cut is
    the midpoint between the right edge of one run and the left edge of the
    next.  Runs may overlap in a thin interface layer at finite coupling.
    """
    if not (0.0 < threshold <= 1.0):
        raise ConfigError("threshold must lie in (0, 1]")
    t = state.grid.nodes
    runs = []
    for i, v in enumerate(np.abs(state.values)):
        vmax = v.max()
        if vmax <= 0.0:
            raise SegregationError(f"component {i} vanishes")
        idx = np.flatnonzero(v >= threshold * vmax)
        if np.any(np.diff(idx) != 1):
            raise SegregationError(f"component {i} has a disconnected support")
        runs.append((idx[0] + idx[-1], idx[0], idx[-1], i))
    runs.sort()
    for (_, lo1, hi1, i1), (_, lo2, hi2, i2) in zip(runs, runs[1:]):
        if lo2 < lo1 or hi2 < hi1:
            raise SegregationError(f"supports of components {i1} and {i2} are nested")
    cuts = [0.5 * (t[r1[2]] + t[r2[1]]) for r1, r2 in zip(runs, runs[1:])]
    if any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise SegregationError(f"support edges do not give increasing cuts: {cuts}")
    return IntervalPartition(state.grid.cfg, tuple(cuts))


def component_order(state: SystemState, threshold: float = 0.05) -> list[int]:
    """Component indices sorted by the centre of their supports."""
    keys = []
    for i, v in enumerate(np.abs(state.values)):
        idx = np.flatnonzero(v >= threshold * v.max())
        keys.append((idx[0] + idx[-1], i))
    return [i for _, i in sorted(keys)]
