"""Radial ground state of ``-ΔU + U = U^(q-1)`` on R^n and its exact constants.

The profile is computed by shooting on ``U(0)`` with a fixed-step RK4
integrator, bisected to machine precision. Past the radius where the two
bracketing trajectories separate, the profile is continued by the decaying
solution of the linearized equation (a modified Bessel function), which is
exact up to the neglected ``U^(q-1)`` term.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import integrate, special

from .exceptions import ExponentMismatch, NonSubcritical, ShootingFailed, YamabeLabError

logger = logging.getLogger(__name__)

TAIL_CUTOFF = 1e-8
_TRUST_GAP = 1e-8


def critical_exponent(k: float) -> float:
    """Sobolev exponent ``2k/(k-2)``; infinite for ``k <= 2``."""
    return math.inf if k <= 2 else 2.0 * k / (k - 2.0)


def yamabe_constant(k: float) -> float:
    """The constant ``a_k = 4(k-1)/(k-2)`` of the conformal Laplacian."""
    return 4.0 * (k - 1.0) / (k - 2.0)


def sphere_area(n: int) -> float:
    """Surface area of the unit (n-1)-sphere in R^n (2 for n = 1)."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass(frozen=True)
class RadialGrid:
    """Uniform grid on ``[0, r_max]`` with an even number of intervals."""

    r_max: float = 40.0
    step: float = 1e-3
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.step > 0 and self.r_max > self.step):
            raise ValueError(f"need 0 < step < r_max, got step={self.step}, r_max={self.r_max}")
        n_int = int(round(self.r_max / self.step))
        n_int += n_int % 2
        nodes = np.linspace(0.0, self.r_max, n_int + 1)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def h(self) -> float:
        return self.r_max / (len(self.nodes) - 1)


@dataclass(frozen=True)
class GroundStateProfile:
    """Positive radial profile sampled on ``nodes`` (possibly rescaled by ``scale``)."""

    n: int
    q: float
    nodes: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    u0: float
    decay_rate: float
    norm2_sq: float
    grad2_sq: float
    normq_q: float
    scale: float = 1.0
    trusted_radius: float = math.nan

    def __call__(self, rho):
        """Linear interpolation of the profile; zero beyond the table."""
        return np.interp(rho, self.nodes, self.values, right=0.0)

    @property
    def energy(self) -> float:
        """``E_s(U) = s^-n ∫ s²/2 |∇U|² + U²/2 - U^q/q`` at the stored scale ``s``."""
        s = self.scale
        return s ** (-self.n) * (
            0.5 * s * s * self.grad2_sq + 0.5 * self.norm2_sq - self.normq_q / self.q
        )


@numba.njit(cache=True)
def _shoot(u0, n, q, h, nsteps):
    # status: +1 crossed zero (u0 too large), -1 turned upward or never decayed
    U = np.zeros(nsteps + 1)
    D = np.zeros(nsteps + 1)
    U[0] = u0
    # regular series at the origin, U = u0 + A r^2 + B r^4 + C r^6, seeds the
    # first nodes where the (n-1)/r coefficient is too stiff for RK4
    f1 = 1.0 - (q - 1.0) * u0 ** (q - 2.0)
    f2 = -(q - 1.0) * (q - 2.0) * u0 ** (q - 3.0)
    A = (u0 - u0 ** (q - 1.0)) / (2.0 * n)
    B = f1 * A / (4.0 * (n + 2.0))
    C = (f1 * B + 0.5 * f2 * A * A) / (6.0 * (n + 4.0))
    k0 = max(1, int(0.005 / h))
    for k in range(1, k0 + 1):
        r = k * h
        U[k] = u0 + A * r * r + B * r**4 + C * r**6
        D[k] = 2.0 * A * r + 4.0 * B * r**3 + 6.0 * C * r**5
    for k in range(k0, nsteps):
        r = k * h
        u = U[k]
        d = D[k]
        a1 = d
        b1 = -(n - 1) / r * d + u - abs(u) ** (q - 2.0) * u
        r2 = r + 0.5 * h
        u2 = u + 0.5 * h * a1
        d2 = d + 0.5 * h * b1
        a2 = d2
        b2 = -(n - 1) / r2 * d2 + u2 - abs(u2) ** (q - 2.0) * u2
        u3 = u + 0.5 * h * a2
        d3 = d + 0.5 * h * b2
        a3 = d3
        b3 = -(n - 1) / r2 * d3 + u3 - abs(u3) ** (q - 2.0) * u3
        r4 = r + h
        u4 = u + h * a3
        d4 = d + h * b3
        a4 = d4
        b4 = -(n - 1) / r4 * d4 + u4 - abs(u4) ** (q - 2.0) * u4
        U[k + 1] = u + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        D[k + 1] = d + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        if U[k + 1] < 0.0:
            return 1, k + 1, U, D
        if D[k + 1] > 0.0:
            return -1, k + 1, U, D
    return -1, nsteps, U, D


def _check_exponent(n: int, q: float) -> None:
    if n < 1 or int(n) != n:
        raise NonSubcritical(f"dimension must be a positive integer, got {n}")
    if not (q > 2.0 and q < critical_exponent(n)):
        raise NonSubcritical(f"q={q} outside (2, {critical_exponent(n)}) for n={n}")


def _radial_integral(nodes, integrand, n):
    return sphere_area(n) * integrate.simpson(integrand * nodes ** (n - 1), x=nodes)


def profile_norms(U: GroundStateProfile) -> tuple[float, float, float]:
    """``(‖U‖₂², ‖∇U‖₂², ‖U‖_q^q)`` by composite Simpson in polar coordinates.

    Nodes where the profile has decayed below ``TAIL_CUTOFF * U(0)`` contribute
    exactly zero.
    """
    live = U.values >= TAIL_CUTOFF * U.u0
    v = np.where(live, U.values, 0.0)
    d = np.where(live, U.derivs, 0.0)
    return (
        _radial_integral(U.nodes, v * v, U.n),
        _radial_integral(U.nodes, d * d, U.n),
        _radial_integral(U.nodes, v**U.q, U.n),
    )


def _bessel_tail(n, r, rc):
    # decaying solution r^-ν K_ν(r) of the linearized equation, ν = n/2 - 1;
    # d/dr [r^-ν K_ν] = -r^-ν K_{ν+1} and ν + 1 = n/2
    nu = n / 2.0 - 1.0
    base = special.kve(abs(nu), rc)
    damp = (r / rc) ** (-nu) * np.exp(-(r - rc)) / base
    return damp * special.kve(abs(nu), r), -damp * special.kve(n / 2.0, r)


def _laplacian_fd(U):
    # Δ of a radial profile from the tabulated derivative: U'' by 4th-order
    # central differences of U' (odd-reflected at r = 0), plus (n-1)/r U'
    h = U.nodes[1] - U.nodes[0]
    d = U.derivs
    dp = np.concatenate([-d[2:0:-1], d, d[-1:], d[-1:]])
    second = (-dp[5:] + 8.0 * dp[4:-1] - 8.0 * dp[2:-3] + dp[1:-4]) / (12.0 * h)
    return second[:-1] + (U.n - 1) / U.nodes[1:-1] * d[1:-1]


def ode_residual(U: GroundStateProfile) -> np.ndarray:
    """Residual of ``-U'' - (n-1)/r U' + U - U^(q-1)`` at interior nodes."""
    v = U.values[1:-1]
    return -_laplacian_fd(U) + v - v ** (U.q - 1.0)


def solve_ground_state(
    n: int, q: float, grid: RadialGrid | None = None, tol: float = 1e-6
) -> GroundStateProfile:
    """Shoot for the positive decaying radial solution.

    Parameters
    ----------
    n : int
        Spatial dimension.
    q : float
        Nonlinearity exponent, ``2 < q < 2n/(n-2)``.
    grid : RadialGrid, optional
        Defaults to ``r_max=40``, ``step=1e-3``.
    tol : float
        Bound on the finite-difference ODE residual over the shooting region.

    Raises
    ------
    NonSubcritical
        If ``q`` is outside the admissible range.
    ShootingFailed
        If the initial bracket does not straddle the ground state, or the
        converged profile does not meet ``tol``.
    """
    _check_exponent(n, q)
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = grid or RadialGrid()
    h, nsteps = grid.h, len(grid.nodes) - 1
    lo, hi = 1.0, 10.0 * q ** (1.0 / (q - 2.0))

    s_lo = _shoot(lo, n, q, h, nsteps)[0]
    s_hi = _shoot(hi, n, q, h, nsteps)[0]
    if s_lo != -1 or s_hi != 1:
        raise ShootingFailed(f"bracket [{lo}, {hi}] does not straddle the ground state")
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _shoot(mid, n, q, h, nsteps)[0] == 1:
            hi = mid
        else:
            lo = mid

    _, k_lo, U_lo, D_lo = _shoot(lo, n, q, h, nsteps)
    _, k_hi, U_hi, D_hi = _shoot(hi, n, q, h, nsteps)
    k_end = min(k_lo, k_hi)
    gap = np.abs(U_hi[: k_end + 1] - U_lo[: k_end + 1]) / np.abs(U_lo[: k_end + 1])
    bad = np.nonzero(gap > _TRUST_GAP)[0]
    kc = (bad[0] if bad.size else k_end) - 1
    if kc < 10:
        raise ShootingFailed("bisection did not resolve the profile")
    u0 = 0.5 * (lo + hi)
    nodes = np.asarray(grid.nodes)
    values = np.empty_like(nodes)
    derivs = np.empty_like(nodes)
    values[: kc + 1] = 0.5 * (U_lo[: kc + 1] + U_hi[: kc + 1])
    derivs[: kc + 1] = 0.5 * (D_lo[: kc + 1] + D_hi[: kc + 1])
    rc = nodes[kc]
    ratio, dratio = _bessel_tail(n, nodes[kc + 1 :], rc)
    values[kc + 1 :] = values[kc] * ratio
    derivs[kc + 1 :] = values[kc] * dratio
    if values[kc] ** (q - 2.0) > 1e-3:
        logger.warning("tail matched where U^(q-2)=%.2e; tail is approximate", values[kc] ** (q - 2.0))

    window = (nodes > max(rc - 4.0, 0.5 * rc)) & (nodes <= rc)
    y = np.log(values[window] * nodes[window] ** ((n - 1) / 2.0))
    decay_rate = -float(np.polyfit(nodes[window], y, 1)[0])

    for arr in (values, derivs):
        arr.setflags(write=False)
    prof = GroundStateProfile(
        n=n, q=q, nodes=nodes, values=values, derivs=derivs, u0=u0,
        decay_rate=decay_rate, norm2_sq=0.0, grad2_sq=0.0, normq_q=0.0,
        trusted_radius=float(rc),
    )
    n2, g2, nq = profile_norms(prof)
    prof = _replace_norms(prof, n2, g2, nq)

    _verify_profile(prof, kc, tol)
    logger.debug("ground state n=%d q=%g: u0=%.15g, trusted to r=%.2f", n, q, u0, rc)
    return prof


def _replace_norms(prof, n2, g2, nq):
    return GroundStateProfile(
        n=prof.n, q=prof.q, nodes=prof.nodes, values=prof.values, derivs=prof.derivs,
        u0=prof.u0, decay_rate=prof.decay_rate, norm2_sq=float(n2), grad2_sq=float(g2),
        normq_q=float(nq), scale=prof.scale, trusted_radius=prof.trusted_radius,
    )


def _verify_profile(prof, kc, tol):
    v = prof.values
    if not (np.all(v > 0) and np.all(np.diff(v) < 0)):
        raise ShootingFailed("profile is not positive and strictly decreasing")
    if v[-1] >= TAIL_CUTOFF * prof.u0:
        raise ShootingFailed("grid too short: tail has not decayed; increase r_max")
    # stencils reaching the tail junction are excluded
    res = np.abs(ode_residual(prof)[: kc - 3])
    worst = float(res.max()) if res.size else 0.0
    if worst >= tol:
        raise ShootingFailed(f"ODE residual {worst:.3e} exceeds tol={tol:.1e}; refine step")


def rescale(U: GroundStateProfile, eps: float) -> GroundStateProfile:
    """Return ``U_ε(r) = U(r/ε)`` on the stretched grid, norms recomputed by quadrature."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    nodes = U.nodes * eps
    derivs = U.derivs / eps
    nodes.setflags(write=False)
    derivs.setflags(write=False)
    prof = GroundStateProfile(
        n=U.n, q=U.q, nodes=nodes, values=U.values, derivs=derivs, u0=U.u0,
        decay_rate=U.decay_rate / eps, norm2_sq=0.0, grad2_sq=0.0, normq_q=0.0,
        scale=U.scale * eps, trusted_radius=U.trusted_radius * eps,
    )
    return _replace_norms(prof, *profile_norms(prof))


def min_energy(U: GroundStateProfile) -> float:
    """``m(E) = (q-2)/(2q) ‖U‖_q^q``, rescaled back to unit scale."""
    return (U.q - 2.0) / (2.0 * U.q) * U.normq_q * U.scale ** (-U.n)


def _check_gn_exponent(n, m, q):
    k = m + n
    if m < 1 or k <= 2:
        raise ExponentMismatch(f"need m >= 1 and m + n > 2, got m={m}, n={n}")
    p = critical_exponent(k)
    if not math.isclose(q, p, rel_tol=1e-12):
        raise ExponentMismatch(f"profile exponent q={q} differs from p_(m+n)={p}")
    return p


def gn_quotient(n: int, m: int, norm2_sq: float, grad2_sq: float, normp_p: float, p: float) -> float:
    """``L(f) = ‖∇f‖₂^(2n/k) ‖f‖₂^(2m/k) / ‖f‖_p²`` with ``k = m + n``."""
    k = m + n
    return grad2_sq ** (n / k) * norm2_sq ** (m / k) / normp_p ** (2.0 / p)


def gn_constant(n: int, m: int, U: GroundStateProfile) -> float:
    """Best Gagliardo–Nirenberg constant ``σ_{m,n} = 1/L(U)``."""
    if U.n != n:
        raise ExponentMismatch(f"profile dimension {U.n} != n={n}")
    p = _check_gn_exponent(n, m, U.q)
    return 1.0 / gn_quotient(n, m, U.norm2_sq, U.grad2_sq, U.normq_q, p)


def sigma_from_norm(n: int, m: int, U: GroundStateProfile) -> float:
    """Solve ``‖U‖_p^(p-2) = (m+n) / (σ n^(n/k) m^(m/k))`` for σ."""
    p = _check_gn_exponent(n, m, U.q)
    k = m + n
    # ‖U‖_p^(p-2) is scale dependent; evaluate at unit scale
    nq = U.normq_q * U.scale ** (-n)
    return k / (nq ** ((p - 2.0) / p) * n ** (n / k) * m ** (m / k))


def min_energy_from_sigma(n: int, m: int, sigma: float) -> float:
    """Closed form ``m(E) = (p-2)/(2p) sqrt(k^k / (σ^k n^n m^m))``."""
    k = m + n
    p = critical_exponent(k)
    return (p - 2.0) / (2.0 * p) * math.sqrt(k**k / (sigma**k * n**n * m**m))


def euler_lagrange_residual(U: GroundStateProfile, m: int) -> float:
    """Max-norm residual of the Euler–Lagrange equation of ``L`` at ``U``, relative to ``U(0)``."""
    n = U.n
    p = _check_gn_exponent(n, m, U.q)
    lap = _laplacian_fd(U)
    v = U.values[1:-1]
    res = (
        -n * lap
        + m * U.grad2_sq / U.norm2_sq * v
        - (m + n) * U.grad2_sq / U.normq_q * v ** (p - 1.0)
    )
    return float(np.abs(res).max() / U.u0)


def pohozaev_residuals(U: GroundStateProfile, m: int) -> tuple[float, float]:
    """Relative residuals of ``n‖U‖₂² = m‖∇U‖₂²`` and ``n‖U‖_p^p = (m+n)‖∇U‖₂²``."""
    n = U.n
    _check_gn_exponent(n, m, U.q)
    res1 = abs(n * U.norm2_sq - m * U.grad2_sq) / (n * U.norm2_sq)
    res2 = abs(n * U.normq_q - (m + n) * U.grad2_sq) / (n * U.normq_q)
    return float(res1), float(res2)


def yamabe_limit_forms(n: int, m: int, V: float, U: GroundStateProfile) -> tuple[float, float]:
    """Both closed forms of the limit Yamabe constant: via ``σ_{m,n}`` and via ``m(E)``."""
    if not V > 0:
        raise ValueError("fiber volume V must be positive")
    sigma = gn_constant(n, m, U)
    k = m + n
    a = yamabe_constant(k)
    via_sigma = a * k * V ** (2.0 / k) / (sigma * n ** (n / k) * m ** (m / k))
    via_energy = a * V ** (2.0 / k) * (k * min_energy(U)) ** (2.0 / k)
    return via_sigma, via_energy


def yamabe_limit(n: int, m: int, V: float, U: GroundStateProfile, rtol: float = 1e-6) -> float:
    via_sigma, via_energy = yamabe_limit_forms(n, m, V, U)
    if abs(via_sigma - via_energy) > rtol * abs(via_sigma):
        raise YamabeLabError(
            f"limit Yamabe forms disagree: {via_sigma!r} vs {via_energy!r}"
        )
    return via_sigma


@dataclass(frozen=True)
class GNReport:
    n: int
    m: int
    sigma: float
    mE: float
    pohozaev_res1: float
    pohozaev_res2: float
    y_limit: float | None = None
    sigma_from_norm: float = math.nan
    mE_closed_form: float = math.nan
    euler_lagrange_res: float = math.nan

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def gn_report(U: GroundStateProfile, m: int, V: float | None = None) -> GNReport:
    n = U.n
    sigma = gn_constant(n, m, U)
    r1, r2 = pohozaev_residuals(U, m)
    return GNReport(
        n=n, m=m, sigma=sigma, mE=min_energy(U), pohozaev_res1=r1, pohozaev_res2=r2,
        y_limit=None if V is None else yamabe_limit(n, m, V, U),
        sigma_from_norm=sigma_from_norm(n, m, U),
        mE_closed_form=min_energy_from_sigma(n, m, sigma),
        euler_lagrange_res=euler_lagrange_residual(U, m),
    )
