"""Symmetry data, the orbit map and the orbit-space weight.

Points of the sphere are written ``z = (z1, z2)`` with ``z1`` in R^m and
``z2`` in R^n.  Functions invariant under O(m) x O(n) depend only on the
orbit angle ``t = arccos(|z1|^2 - |z2|^2)`` in ``[0, pi]``; integrals over
the sphere become integrals over ``[0, pi]`` against the weight ``h``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError, DomainError

_ENDPOINT_CLAMP = 1e-14


def _gamma_half_integer(d: int) -> float:
    """Gamma(d/2) for a positive integer d, by the half-integer recurrence."""
    if d % 2 == 0:
        return float(math.factorial(d // 2 - 1))
    # Gamma(k + 1/2) = (2k)! / (4^k k!) * sqrt(pi)
    k = (d - 1) // 2
    return math.factorial(2 * k) / (4 ** k * math.factorial(k)) * math.sqrt(math.pi)


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1} in R^d."""
    if int(d) != d or d < 1:
        raise DomainError(f"sphere_area needs an integer d >= 1, got {d!r}")
    d = int(d)
    return 2.0 * math.pi ** (d / 2.0) / _gamma_half_integer(d)


@dataclass(frozen=True)
class SymmetryConfig:
    """The pair (m, n) selecting the group O(m) x O(n) acting on S^N."""

    m: int
    n: int

    def __post_init__(self):
        problems = []
        if int(self.m) != self.m or self.m < 2:
            problems.append(f"m >= 2 required (got m={self.m})")
        if int(self.n) != self.n or self.n < 2:
            problems.append(f"n >= 2 required (got n={self.n})")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def N(self) -> int:
        return self.m + self.n - 1

    @property
    def a_N_exact(self) -> Fraction:
        return Fraction(self.N * (self.N - 2), 4)

    @property
    def p_crit_exact(self) -> Fraction:
        return Fraction(2 * self.N, self.N - 2)

    @property
    def a_N(self) -> float:
        return float(self.a_N_exact)

    @property
    def p_crit(self) -> float:
        return float(self.p_crit_exact)

    @property
    def weight_const(self) -> float:
        return 2.0 * sphere_area(self.m) * sphere_area(self.n)

    @property
    def constant_solution(self) -> float:
        """Value c > 0 of the constant solution, c^(p-2) = a_N."""
        return self.a_N ** (1.0 / (self.p_crit - 2.0))

    def swapped(self) -> "SymmetryConfig":
        return SymmetryConfig(self.n, self.m)

    def as_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "N": self.N,
            "a_N": self.a_N,
            "p_crit": self.p_crit,
            "weight_const": self.weight_const,
        }


def _check_angles(t, lo_open=False, hi_open=False, what="t"):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise DomainError(f"{what} must be finite")
    lo_bad = t <= 0.0 if lo_open else t < -_ENDPOINT_CLAMP
    hi_bad = t >= math.pi if hi_open else t > math.pi + _ENDPOINT_CLAMP
    if np.any(lo_bad | hi_bad):
        raise DomainError(f"{what} outside the orbit interval: {t}")
    return t


def weight_h(t, cfg: SymmetryConfig):
    """Orbit-space density h(t) = C cos^{m-1}(t/2) sin^{n-1}(t/2).

    Accepts scalars or arrays.  Inputs within 1e-14 of 0 or pi are clamped
    onto the endpoint.
    """
    t = _check_angles(t)
    t = np.clip(t, 0.0, math.pi)
    t = np.where(np.abs(t) < _ENDPOINT_CLAMP, 0.0, t)
    t = np.where(np.abs(t - math.pi) < _ENDPOINT_CLAMP, math.pi, t)
    c = np.cos(t / 2.0)
    s = np.sin(t / 2.0)
    # cos(pi/2) is 6e-17, not 0; pin the endpoint zeros exactly
    c = np.where(t == math.pi, 0.0, c)
    out = cfg.weight_const * c ** (cfg.m - 1) * s ** (cfg.n - 1)
    return float(out) if out.ndim == 0 else out


def weight_log_derivative(t, cfg: SymmetryConfig):
    """h'(t)/h(t) on the open interval (0, pi)."""
    t = np.asarray(t, dtype=float)
    return -0.5 * (cfg.m - 1) * np.tan(t / 2.0) + 0.5 * (cfg.n - 1) / np.tan(t / 2.0)


def orbit_map(z1_norm_sq):
    """Orbit angle arccos(|z1|^2 - |z2|^2) of a point with |z1|^2 given."""
    x = np.asarray(z1_norm_sq, dtype=float)
    if not np.all(np.isfinite(x)) or np.any((x < 0.0) | (x > 1.0)):
        raise DomainError(f"|z1|^2 must lie in [0, 1], got {z1_norm_sq}")
    out = np.arccos(np.clip(2.0 * x - 1.0, -1.0, 1.0))
    return float(out) if out.ndim == 0 else out


def boundary_radii(a: float) -> tuple[float, float]:
    """Radii (|z1|, |z2|) of the product torus sitting over the orbit angle a."""
    if not (0.0 < a < math.pi):
        raise DomainError(
            f"orbit angle {a} is degenerate: the fibre over 0 or pi is a single sphere"
        )
    return math.cos(a / 2.0), math.sin(a / 2.0)


def conformal_factor(x_norm, cfg: SymmetryConfig):
    """Stereographic conformal factor (2 / (1 + |x|^2))^{(N-2)/2}."""
    x = np.asarray(x_norm, dtype=float)
    if np.any(x < 0.0) or not np.all(np.isfinite(x)):
        raise DomainError("|x| must be a finite nonnegative number")
    out = (2.0 / (1.0 + x * x)) ** ((cfg.N - 2) / 2.0)
    return float(out) if out.ndim == 0 else out
