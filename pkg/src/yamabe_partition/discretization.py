"""Meshes on the orbit interval, weighted integrals and the reduced residual.

A grid function ``w`` stands for the invariant function ``u = w o q`` on the
sphere.  With ``h`` the orbit weight,

    ||u||^2          = int (w'^2 + a_N/4 w^2) h dt
    int |u|^p dV     = 1/4 int |w|^p h dt

The gradient part is the P1 (piecewise linear) energy with the exact cell
integral of ``h``.  Zeroth-order terms are lumped: node ``j`` carries the
integral of ``h`` over its dual cell (from the midpoint of the cell on its
left to the midpoint of the cell on its right).  This is the finite-volume
form of the operator, and it keeps the discretization error a smooth
function of position all the way to the degenerate endpoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import make_interp_spline
from scipy.linalg import cho_solve_banded, cholesky_banded, solve_banded

from .errors import ConfigError, DomainError, GridMismatchError, ResolutionError
from .geometry import SymmetryConfig, weight_h, weight_log_derivative

MIN_CELLS = 32
# 3-point Gauss-Legendre on [0, 1]
_GL_X = 0.5 + 0.5 * np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GL_W = np.array([5.0, 8.0, 5.0]) / 18.0


def graded_map(s, grading: float):
    """Symmetric map of [0, 1] onto itself clustering points at both ends.

    ``g(s) = s^g / (s^g + (1-s)^g)``; grading 1 is the identity.
    Returns ``(g(s), g'(s))``.
    """
    s = np.asarray(s, dtype=float)
    if grading == 1.0:
        return s.copy(), np.ones_like(s)
    a = s ** grading
    b = (1.0 - s) ** grading
    d = a + b
    g = a / d
    dg = grading * s ** (grading - 1.0) * (1.0 - s) ** (grading - 1.0) / d ** 2
    return g, dg


class Mesh:
    """Nodes on ``[a, b]`` with quadrature, weight values and the P1 stiffness.

    ``mass[j]`` is the integral of ``h`` over the dual cell of node ``j`` and
    is the quadrature weight for ``int f h dt``; ``quad_weights`` holds the
    unweighted dual-cell lengths.  ``dirichlet = (left, right)`` marks
    endpoints where grid functions are pinned to zero.  Instances are
    treated as immutable.
    """

    def __init__(self, cfg: SymmetryConfig, nodes, dirichlet=(False, False)):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3 or np.any(np.diff(nodes) <= 0.0):
            raise ResolutionError("mesh nodes must be strictly increasing, at least 3")
        self.cfg = cfg
        self.nodes = nodes
        self.h_values = np.asarray(weight_h(nodes, cfg), dtype=float)
        self.dirichlet = (bool(dirichlet[0]), bool(dirichlet[1]))
        lengths = np.diff(nodes)
        half = 0.5 * lengths
        left = half * (np.asarray(weight_h(nodes[:-1, None] + half[:, None] * _GL_X, cfg)) @ _GL_W)
        right = half * (np.asarray(weight_h(nodes[:-1, None] + half[:, None] * (1.0 + _GL_X), cfg)) @ _GL_W)
        # unweighted dual-cell lengths and the dual-cell integrals of h
        self.quad_weights = np.zeros(nodes.size)
        self.quad_weights[:-1] += half
        self.quad_weights[1:] += half
        self.mass = np.zeros(nodes.size)
        self.mass[:-1] += left
        self.mass[1:] += right
        cell_int = left + right
        self.cell_lengths = lengths
        self.cell_weight = cell_int
        self.stiff_coef = cell_int / (lengths * lengths)
        free = np.ones(nodes.size, dtype=bool)
        if self.dirichlet[0]:
            free[0] = False
        if self.dirichlet[1]:
            free[-1] = False
        self.free = free
        for arr in (self.nodes, self.quad_weights, self.h_values, self.mass,
                    self.cell_weight, self.stiff_coef, self.free):
            arr.flags.writeable = False
        self._chol = None

    # -- basic geometry -------------------------------------------------
    @property
    def a(self) -> float:
        return float(self.nodes[0])

    @property
    def b(self) -> float:
        return float(self.nodes[-1])

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def max_spacing(self) -> float:
        return float(self.cell_lengths.max())

    def __repr__(self):
        return (f"{type(self).__name__}(m={self.cfg.m}, n={self.cfg.n}, "
                f"[{self.a:.6g}, {self.b:.6g}], nodes={self.size})")

    # -- quadratic and power integrals ----------------------------------
    def stiffness_energy(self, v):
        """int w'^2 h dt for the P1 interpolant of nodal values ``v``.

        ``v`` may be a 1-D array or a stack of them along axis 0.
        """
        d = np.diff(v, axis=-1)
        return (d * d) @ self.stiff_coef

    def l2_energy(self, v):
        return (v * v) @ self.mass

    def normsq(self, v):
        return self.stiffness_energy(v) + 0.25 * self.cfg.a_N * self.l2_energy(v)

    def power_integral(self, v, p):
        return 0.25 * (np.abs(v) ** p) @ self.mass

    def overlap(self, vi, vj, alpha, beta):
        return 0.25 * ((np.abs(vj) ** alpha) * (np.abs(vi) ** beta)) @ self.mass

    def apply_stiffness(self, v):
        """(A v) where v^T A v is ``stiffness_energy(v)``."""
        flux = self.stiff_coef * np.diff(v, axis=-1)
        out = np.zeros_like(v, dtype=float)
        out[..., :-1] -= flux
        out[..., 1:] += flux
        return out

    def apply_h1(self, v):
        """Half the Euclidean gradient of ``normsq``."""
        return self.apply_stiffness(v) + 0.25 * self.cfg.a_N * self.mass * v

    # -- the H^1_h metric on free nodes ---------------------------------
    def _h1_banded_upper(self):
        c = self.stiff_coef
        diag = 0.25 * self.cfg.a_N * self.mass.copy()
        diag[:-1] += c
        diag[1:] += c
        upper = np.zeros_like(diag)
        upper[1:] = -c
        idx = np.flatnonzero(self.free)
        diag = diag[idx]
        upper = upper[idx]
        upper[0] = 0.0
        return np.vstack([upper, diag])

    def h1_solve(self, rhs):
        """Solve (A + a_N/4 M) x = rhs on free nodes; pinned nodes get 0."""
        if self._chol is None:
            self._chol = cholesky_banded(self._h1_banded_upper(), lower=False)
        rhs = np.asarray(rhs, dtype=float)
        out = np.zeros_like(rhs)
        if rhs.ndim == 1:
            out[self.free] = cho_solve_banded((self._chol, False), rhs[self.free])
        else:
            sol = cho_solve_banded((self._chol, False), rhs[:, self.free].T)
            out[:, self.free] = sol.T
        return out

    def jacobian_solve(self, diag_shift, rhs):
        """Solve (A + a_N/4 M - diag(diag_shift)) x = rhs on free nodes."""
        ab_upper = self._h1_banded_upper()
        idx = np.flatnonzero(self.free)
        ab = np.zeros((3, idx.size))
        ab[0, 1:] = ab_upper[0, 1:]
        ab[1] = ab_upper[1] - diag_shift[idx]
        ab[2, :-1] = ab_upper[0, 1:]
        out = np.zeros_like(rhs, dtype=float)
        out[idx] = solve_banded((1, 1), ab, rhs[idx])
        return out

    # -- residual of the reduced equation -------------------------------
    def equation_defect(self, v):
        """Nodal defect F(v) = (A + a_N/4 M) v - 1/4 M |v|^{p-2} v."""
        p = self.cfg.p_crit
        return self.apply_h1(v) - 0.25 * self.mass * np.abs(v) ** (p - 2.0) * v

    def strong_residual(self, v):
        """Defect divided by the lumped mass, NaN where the mass vanishes."""
        F = self.equation_defect(v)
        out = np.full(self.size, np.nan)
        ok = self.mass > 0.0
        out[ok] = F[ok] / self.mass[ok]
        return out

    def check_same(self, other: "Mesh"):
        if other is not self:
            raise GridMismatchError("grid functions live on different meshes")


class OrbitGrid(Mesh):
    """The whole orbit interval ``[0, pi]`` with ``K`` cells."""

    def __init__(self, cfg: SymmetryConfig, K: int, grading: float = 1.0):
        if int(K) != K or K < MIN_CELLS:
            raise ResolutionError(f"K >= {MIN_CELLS} required, got {K}")
        if grading < 1.0:
            raise ResolutionError(f"grading must be >= 1, got {grading}")
        K = int(K)
        s = np.arange(K + 1) / K
        g, _ = graded_map(s, grading)
        g[0], g[-1] = 0.0, 1.0
        nodes = math.pi * g
        super().__init__(cfg, nodes, (False, False))
        self.K = K
        self.grading = float(grading)

    def interval_mesh(self, a: float, b: float, cells: int | None = None) -> Mesh:
        """Mesh of ``[a, b]`` mapped from the reference grid.

        The reference spacing is graded like this grid, so the mesh depends
        smoothly on ``(a, b)``.  Interior cut points carry Dirichlet nodes,
        the sphere endpoints 0 and pi do not.
        """
        if not (0.0 <= a < b <= math.pi):
            raise DomainError(f"interval ({a}, {b}) is not inside [0, pi]")
        inside = np.count_nonzero((self.nodes > a) & (self.nodes < b))
        if inside < 8:
            raise ResolutionError(
                f"interval ({a:.6g}, {b:.6g}) holds {inside} grid nodes, need 8")
        L = self.K if cells is None else int(cells)
        free_left = a == 0.0
        free_right = b == math.pi
        s = np.arange(L + 1) / L
        g, _ = graded_map(s, self.grading)
        g[0], g[-1] = 0.0, 1.0
        nodes = a + (b - a) * g
        nodes[0], nodes[-1] = a, b
        return Mesh(self.cfg, nodes, (not free_left, not free_right))


def build_grid(cfg: SymmetryConfig, K: int = 512, grading: float | None = None) -> OrbitGrid:
    """Orbit grid with the default grading rule when ``grading`` is None."""
    if grading is None:
        grading = default_grading(cfg)
    return OrbitGrid(cfg, K, grading)


def default_grading(cfg: SymmetryConfig) -> float:
    return 2.0 if max(cfg.m, cfg.n) >= 4 else 1.0


@dataclass(frozen=True, eq=False)
class ReducedFunction:
    """Nodal values of an orbit profile ``w`` on a mesh.

    ``support`` optionally tags the function as vanishing outside ``[a, b]``.
    """

    grid: Mesh
    values: np.ndarray
    support: tuple[float, float] | None = field(default=None)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.nodes.shape:
            raise GridMismatchError(
                f"{v.shape[0] if v.ndim else 0} values for a mesh of {self.grid.size} nodes")
        if not np.all(np.isfinite(v)):
            raise DomainError("grid function values must be finite")
        if self.support is not None:
            a, b = self.support
            outside = (self.grid.nodes < a) | (self.grid.nodes > b)
            if np.any(v[outside] != 0.0):
                raise DomainError(f"values outside the tagged support [{a}, {b}]")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def nodes(self):
        return self.grid.nodes

    @classmethod
    def from_callable(cls, grid: Mesh, fn, support=None):
        t = grid.nodes
        vals = np.asarray(fn(t), dtype=float) * np.ones_like(t)
        if support is not None:
            a, b = support
            vals = np.where((t < a) | (t > b), 0.0, vals)
        return cls(grid, vals, support)

    def scaled(self, s: float) -> "ReducedFunction":
        return ReducedFunction(self.grid, s * self.values, self.support)

    def resample(self, target: Mesh) -> "ReducedFunction":
        """Cubic-spline transfer onto ``target``, zero outside this mesh."""
        t = target.nodes
        spline = make_interp_spline(self.grid.nodes, self.values, k=3)
        inside = (t >= self.grid.a) & (t <= self.grid.b)
        vals = np.zeros_like(t)
        vals[inside] = spline(t[inside])
        support = self.support
        if support is None and (self.grid.a > 0.0 or self.grid.b < math.pi):
            support = (self.grid.a, self.grid.b)
        return ReducedFunction(target, vals, support)

    def to_csv(self, path) -> None:
        write_profile_csv(path, self.grid.nodes, self.values)


def write_profile_csv(path, t, w) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t,w\n")
        for ti, wi in zip(t, w):
            fh.write(f"{ti:.17g},{wi:.17g}\n")


def read_profile_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


def weighted_h1_normsq(w: ReducedFunction) -> float:
    """int (w'^2 + a_N/4 w^2) h dt, equal to the sphere norm of w o q."""
    return float(w.grid.normsq(w.values))


def weighted_crit_integral(w: ReducedFunction, p: float | None = None) -> float:
    """1/4 int |w|^p h dt; with the critical exponent this is int |u|^{2*} dV."""
    if p is None:
        p = w.grid.cfg.p_crit
    if p < 1.0:
        raise DomainError(f"exponent p >= 1 required, got {p}")
    return float(w.grid.power_integral(w.values, p))


def check_exponents(cfg: SymmetryConfig, alpha: float, beta: float) -> None:
    if not (alpha > 1.0 and beta > 1.0):
        raise ConfigError(f"coupling exponents must exceed 1, got ({alpha}, {beta})")
    if abs(alpha + beta - cfg.p_crit) > 1e-12 * cfg.p_crit:
        raise ConfigError(
            f"alpha + beta must equal the critical exponent {cfg.p_crit}, got {alpha + beta}")


def weighted_overlap(wi: ReducedFunction, wj: ReducedFunction, alpha: float, beta: float) -> float:
    """1/4 int |wj|^alpha |wi|^beta h dt (lumped, so zero for node-disjoint supports)."""
    wi.grid.check_same(wj.grid)
    check_exponents(wi.grid.cfg, alpha, beta)
    return float(wi.grid.overlap(wi.values, wj.values, alpha, beta))


def reduced_residual(w: ReducedFunction, interval: tuple[float, float] | None = None) -> ReducedFunction:
    """Pointwise residual of -w'' - (h'/h) w' + a_N/4 w - 1/4 |w|^{p-2} w.

    Evaluated with the discrete operator at nodes strictly inside
    ``interval``; all other entries are zero.
    """
    grid = w.grid
    if interval is None:
        interval = w.support if w.support is not None else (grid.a, grid.b)
    a, b = interval
    if not (0.0 <= a < b <= math.pi):
        raise DomainError(f"interval ({a}, {b}) is not inside [0, pi]")
    r = grid.strong_residual(w.values)
    t = grid.nodes
    mask = (t > a) & (t < b) & np.isfinite(r)
    out = np.where(mask, r, 0.0)
    return ReducedFunction(grid, out)


def residual_sup(w: ReducedFunction, interval=None, margin_cells: int = 3,
                 cuts=()) -> float:
    """Sup of |reduced_residual| over nodes at least ``margin_cells`` from
    the interval ends and from every cut in ``cuts``."""
    grid = w.grid
    if interval is None:
        interval = w.support if w.support is not None else (grid.a, grid.b)
    r = reduced_residual(w, interval).values
    keep = margin_mask(grid, [interval[0], interval[1], *cuts], margin_cells)
    return float(np.max(np.abs(r[keep]))) if np.any(keep) else 0.0


def margin_mask(grid: Mesh, points, margin_cells: int) -> np.ndarray:
    """Nodes at distance >= ``margin_cells`` local cell widths from every point."""
    t = grid.nodes
    keep = np.ones(t.size, dtype=bool)
    for x in points:
        j = int(np.clip(np.searchsorted(t, x) - 1, 0, t.size - 2))
        width = grid.cell_lengths[j]
        keep &= np.abs(t - x) >= margin_cells * width * (1.0 - 1e-9)
    return keep


def continuous_residual(cfg: SymmetryConfig, spline, t) -> np.ndarray:
    """Residual of the reduced equation for a C^2 spline, at angles in (0, pi)."""
    t = np.asarray(t, dtype=float)
    w = spline(t)
    d1 = spline.derivative(1)(t)
    d2 = spline.derivative(2)(t)
    p = cfg.p_crit
    return (-d2 - weight_log_derivative(t, cfg) * d1 + 0.25 * cfg.a_N * w
            - 0.25 * np.abs(w) ** (p - 2.0) * w)
