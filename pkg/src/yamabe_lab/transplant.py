"""Inclusion map: truncated, rescaled ground states placed on the manifold and
projected onto the Nehari manifold."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import simpson

from .concentration import robust_center
from .exceptions import RadiusTooLarge
from .ground_state import GroundStateProfile, RadialGrid, sphere_area, solve_ground_state
from .manifold import DiscreteManifold
from .nehari import NehariPoint, ProblemParams, make_point, project

DEFAULT_R_FACTOR = 0.4
DEFAULT_ETA = 0.9


@lru_cache(maxsize=16)
def cached_ground_state(n: int, q: float, r_max: float = 40.0, step: float = 1e-3) -> GroundStateProfile:
    """Ground state keyed by ``(n, q, grid)``."""
    return solve_ground_state(n, q, RadialGrid(r_max=r_max, step=step))


def ground_state_for(params: ProblemParams) -> GroundStateProfile:
    return cached_ground_state(params.n, float(params.p))


def default_radius(M: DiscreteManifold) -> float:
    return DEFAULT_R_FACTOR * M.r0


def cutoff(rho, r: float):
    """``φ_r``: 1 on ``[0, r]``, linear with slope ``-1/r`` on ``[r, 2r]``, 0 beyond."""
    return np.clip(2.0 - np.asarray(rho, dtype=float) / r, 0.0, 1.0)


@dataclass(frozen=True)
class TruncatedProfile:
    """``ρ ↦ φ_r(ρ) U(ρ/ε)`` tabulated on ``[0, 2r]``."""

    base: GroundStateProfile
    epsilon: float
    r: float
    nodes: np.ndarray
    values: np.ndarray

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=float)
        return cutoff(rho, self.r) * self.base(rho / self.epsilon)

    def norm2_sq(self) -> float:
        """Radial quadrature of ``∫ T²`` over ``ℝⁿ``."""
        n = self.base.n
        return sphere_area(n) * float(simpson(self.values**2 * self.nodes ** (n - 1), x=self.nodes))


def truncate_profile(U: GroundStateProfile, epsilon: float, r: float) -> TruncatedProfile:
    if not epsilon > 0 or not r > 0:
        raise ValueError("epsilon and r must be positive")
    nodes = U.nodes * epsilon
    nodes = np.append(nodes[nodes < 2 * r], 2 * r)
    T = TruncatedProfile(U, float(epsilon), float(r), nodes, np.empty(0))
    object.__setattr__(T, "values", T(nodes))
    return T


def place_bump(M: DiscreteManifold, x: int, T: TruncatedProfile) -> np.ndarray:
    """Field ``y ↦ T(d(x, y))``, supported in ``B(x, 2r)``."""
    if not 2 * T.r < M.r0:
        raise RadiusTooLarge(f"2r = {2 * T.r:.6g} must be below r0 = {M.r0:.6g}")
    d = M.distances_from(int(x))
    out = T(d)
    out[d >= 2 * T.r] = 0.0
    return out


def inclusion_map(M: DiscreteManifold, params: ProblemParams, x: int, r: float | None = None) -> NehariPoint:
    """Projected bump ``λ(U^x) U^x`` centered at vertex ``x``."""
    r = default_radius(M) if r is None else r
    T = truncate_profile(ground_state_for(params), params.epsilon, r)
    return make_point(project(place_bump(M, x, T), params), params, start=f"bump:{int(x)}")


def roundtrip(M: DiscreteManifold, params: ProblemParams, x: int, r: float | None = None,
              eta: float = DEFAULT_ETA) -> float:
    """Distance from ``x`` to the robust center of ``(i(x)⁺)^p``."""
    r = default_radius(M) if r is None else r
    u = inclusion_map(M, params, x, r).field
    c = robust_center(M, np.maximum(u, 0.0) ** params.p, r, eta)
    return M.distance(int(x), c)
