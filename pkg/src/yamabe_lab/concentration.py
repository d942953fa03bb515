"""Concentration functions, η-cutoffs, discrete Riemannian centers of mass and
annular splittings of fields on the Nehari manifold."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import BadDelta, EmptyPositivePart, NotConcentrated, NotLocalized, ZeroMass
from .manifold import DiscreteManifold
from .nehari import ProblemParams, energy, lambda_scale, plus_power_integral, quadratic_part

LOCALIZED_THRESHOLD = 0.99
_TIE_RTOL = 1e-12
_CHUNK = 256


def _first_max(values) -> int:
    """Lowest index attaining the maximum up to round-off."""
    vmax = float(np.max(values))
    return int(np.flatnonzero(values >= vmax - _TIE_RTOL * max(1.0, abs(vmax)))[0])


def _first_min(values) -> int:
    vmin = float(np.min(values))
    return int(np.flatnonzero(values <= vmin + _TIE_RTOL * max(1.0, abs(vmin)))[0])


def _total_mass(M: DiscreteManifold, w) -> float:
    total = float(M.mass @ np.abs(w))
    if not total > 0:
        raise ZeroMass("field has zero L¹ mass")
    return total


def concentration_function(M: DiscreteManifold, w, r: float) -> np.ndarray:
    """``C_{w,r}(x) = ∫_{B(x,r)} |w| / ‖w‖₁`` at every vertex."""
    w = np.abs(np.asarray(w, dtype=float))
    total = _total_mass(M, w)
    if r >= M.diameter:
        return np.ones(M.n_vertices)
    return np.clip(M.ball_sums(w, r) / total, 0.0, 1.0)


def concentration_coefficient(M: DiscreteManifold, w, r: float) -> tuple[float, int]:
    """Maximum of the concentration function and the lowest vertex attaining it."""
    C = concentration_function(M, w, r)
    k = _first_max(C)
    return float(C[k]), k


def phi_eta(t, eta: float):
    """Piecewise-linear ramp: 0 below ``1 - η``, 1 above ``η``."""
    _check_eta(eta)
    return np.clip((np.asarray(t, dtype=float) - (1.0 - eta)) / (2.0 * eta - 1.0), 0.0, 1.0)


def _check_eta(eta):
    if not 0.5 < eta < 1.0:
        raise ValueError(f"eta must lie in (1/2, 1), got {eta}")


def eta_cutoff_field(M: DiscreteManifold, w, r: float, eta: float) -> np.ndarray:
    """``φ_η(C_{w,r}(x)) · w(x)``."""
    w = np.asarray(w, dtype=float)
    return phi_eta(concentration_function(M, w, r), eta) * w


def karcher_objective(M: DiscreteManifold, w) -> np.ndarray:
    """``P(x_i) = Σ_j mass_j d(x_i, x_j)² w_j``, summing only over the support of ``w``."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("karcher objective needs a nonnegative weight")
    _total_mass(M, w)
    supp = np.flatnonzero(w)
    mw = M.mass[supp] * w[supp]
    P = np.zeros(M.n_vertices)
    for k in range(0, len(supp), _CHUNK):
        D = M.distance_rows(supp[k:k + _CHUNK])
        P += mw[k:k + _CHUNK] @ (D * D)
    return P


def center_of_mass(M: DiscreteManifold, w, *, check: bool = True) -> int:
    """Vertex minimizing the Karcher objective, lowest index on ties.

    Raises NotLocalized unless at least ``LOCALIZED_THRESHOLD`` of the mass of ``w``
    sits in a single ball of radius ``r0 / 2``.
    """
    if check:
        c, _ = concentration_coefficient(M, w, M.r0 / 2)
        if c < LOCALIZED_THRESHOLD:
            raise NotLocalized(f"only {c:.3f} of the mass lies in a ball of radius r0/2")
    return _first_min(karcher_objective(M, w))


def robust_center(M: DiscreteManifold, w, r: float, eta: float) -> int:
    """Center of mass of the η-cutoff field; defined when ``C_r(w) > η``."""
    _check_eta(eta)
    if not 0 < r < M.r0 / 2:
        raise ValueError(f"r must lie in (0, r0/2) = (0, {M.r0 / 2:.6g}), got {r}")
    C = concentration_function(M, w, r)
    if not C.max() > eta:
        raise NotConcentrated(f"C_r(w) = {C.max():.4f} does not exceed eta = {eta}")
    cut = phi_eta(C, eta) * np.asarray(w, dtype=float)
    # the cutoff field lives in a 2r-ball with 2r < r0, which is what uniqueness needs
    return center_of_mass(M, cut, check=False)


@dataclass
class ConcentrationReport:
    r: float
    values: np.ndarray
    max: float
    argmax: int
    center: int | None = None
    eta: float | None = None

    def as_dict(self) -> dict:
        d = asdict(self)
        d["values"] = self.values.tolist()
        return d


def concentration_report(M: DiscreteManifold, w, r: float, eta: float | None = None) -> ConcentrationReport:
    C = concentration_function(M, w, r)
    k = _first_max(C)
    center = None
    if eta is not None and C[k] > eta and r < M.r0 / 2:
        center = robust_center(M, w, r, eta)
    return ConcentrationReport(r=float(r), values=C, max=float(C[k]), argmax=k, center=center, eta=eta)


def psi_closed_form_p4(delta: float) -> float:
    """Exact infimum for ``p = 4``: ``(√(δ/2) + √(1 - δ/2))²``."""
    _check_delta(delta)
    return (math.sqrt(delta / 2) + math.sqrt(1 - delta / 2)) ** 2


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise BadDelta(f"delta must lie in (0, 1), got {delta}")


def psi(delta: float, p: float, s_grid: int = 200, x_grid: int = 200, r: float = 1.0) -> float:
    """Grid estimate of ``inf (x₁/y₁)^α + (x₂/y₂)^α`` with ``α = 2/(p-2)``.

    The feasible set ``x₁ + x₂ = y₁ + y₂ = s ∈ [r, 2r]``, ``x_i ≥ δr`` is reduced to
    the free variables ``(s, x₁, y₁)``. A grid minimum bounds the infimum from above.
    """
    _check_delta(delta)
    if not p > 2:
        raise ValueError(f"p must exceed 2, got {p}")
    alpha = 2.0 / (p - 2.0)
    best = math.inf
    for s in np.linspace(r, 2 * r, s_grid):
        if s < 2 * delta * r:
            continue
        x1 = np.linspace(delta * r, s - delta * r, x_grid)[:, None]
        y1 = np.linspace(0.0, s, x_grid + 2)[1:-1][None, :]
        val = (x1 / y1) ** alpha + ((s - x1) / (s - y1)) ** alpha
        best = min(best, float(val.min()))
    return best


@dataclass
class SplitDiagnostics:
    """Pieces of a recombined split: ``a_i`` power integrals, ``b_i`` quadratic parts, both times ``ε^-n``."""

    x: int
    r: float
    l: int
    i: int
    a1: float
    a2: float
    b1: float
    b2: float
    lam: float
    energy: float
    share_power: float
    share_grad: float
    disjoint: bool

    def split_energy_bound(self, m_hat: float, p: float) -> float:
        """``m̂ ((a₁/b₁)^(2/(p-2)) + (a₂/b₂)^(2/(p-2)))``."""
        alpha = 2.0 / (p - 2.0)
        return m_hat * ((self.a1 / self.b1) ** alpha + (self.a2 / self.b2) ** alpha)

    def as_dict(self) -> dict:
        return asdict(self)


def _ramp_down(t, lo, hi):
    return np.clip((hi - t) / (hi - lo), 0.0, 1.0)


def annular_split(u, x: int, r: float, l: int, params: ProblemParams) -> SplitDiagnostics:
    """Split ``u`` across the annulus around ``x`` carrying the smallest share of mass and energy.

    The ball ``B(x, r)`` is cut into ``l/2`` annuli of width ``2r/l``. For the chosen
    annulus ``j`` (transition index ``i = 2j - 1``) the inner piece is ``φ_{i,l} u`` and the
    outer piece ``σ_{i,l} u``. Outer vertices adjacent to the inner support are zeroed so
    the pieces stay disjoint at the level of mesh edges.
    """
    M = params.manifold
    u = np.asarray(getattr(u, "field", u), dtype=float)
    if not 0 < r < M.r0:
        raise ValueError(f"r must lie in (0, r0), got {r}")
    if l < 4 or l % 2:
        raise ValueError(f"l must be an even integer >= 4, got {l}")
    d = M.distances_from(x)
    dens_p = M.mass * np.maximum(u, 0.0) ** params.p
    dens_g = M.dirichlet_density(u)
    tot_p, tot_g = dens_p.sum(), dens_g.sum()

    best = None
    for j in range(1, l // 2 + 1):
        inside = (d >= (2 * j - 2) * r / l) & (d < 2 * j * r / l)
        sp = dens_p[inside].sum() / tot_p if tot_p > 0 else 0.0
        sg = dens_g[inside].sum() / tot_g if tot_g > 0 else 0.0
        if best is None or max(sp, sg) < max(best[1], best[2]):
            best = (j, sp, sg)
    j, sp, sg = best
    i = 2 * j - 1

    u1 = _ramp_down(d, (i - 1) * r / l, i * r / l) * u
    u2 = (1.0 - _ramp_down(d, i * r / l, (i + 1) * r / l)) * u
    touched = (M.adjacency @ (u1 != 0).astype(float)) > 0
    u2[touched | (u1 != 0)] = 0.0
    disjoint = not np.any((M.adjacency @ (u1 != 0).astype(float) > 0) & (u2 != 0))

    if plus_power_integral(u1, params) <= 0 or plus_power_integral(u2, params) <= 0:
        raise EmptyPositivePart("one of the split pieces has no positive part")
    lam = lambda_scale(u1 + u2, params)
    scale = params.epsilon ** (-params.n)
    ubar = lam * (u1 + u2)
    return SplitDiagnostics(
        x=int(x), r=float(r), l=int(l), i=int(i),
        a1=scale * plus_power_integral(lam * u1, params), a2=scale * plus_power_integral(lam * u2, params),
        b1=scale * quadratic_part(lam * u1, params), b2=scale * quadratic_part(lam * u2, params),
        lam=float(lam), energy=energy(ubar, params),
        share_power=float(sp), share_grad=float(sg), disjoint=bool(disjoint),
    )


def max_eps_ball_mass(u, params: ProblemParams) -> tuple[int, float]:
    """Vertex and value of ``max_x ε^-n ∫_{B(x,ε)} (u⁺)^p``."""
    M = params.manifold
    u = np.asarray(getattr(u, "field", u), dtype=float)
    w = np.maximum(u, 0.0) ** params.p
    vals = params.epsilon ** (-params.n) * M.ball_sums(w, params.epsilon)
    k = _first_max(vals)
    return k, float(vals[k])
