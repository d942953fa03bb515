"""Discrete energy ``J_ε``, the Nehari constraint and its explicit projection.

Fields are plain float arrays, one value per vertex of the manifold held by
:class:`ProblemParams`. With lumped mass every integral is a weighted vertex
sum, so the positive part and the power nonlinearity are applied pointwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from dataclasses import field as dc_field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .exceptions import NonSubcritical, NoPositivePart, NotOnNehari, SolverFailure
from .ground_state import critical_exponent, yamabe_constant
from .manifold import DiscreteManifold

CG_RTOL = 1e-10
CG_MAXITER = 20000


@dataclass(frozen=True)
class ProblemParams:
    """Data defining ``J_ε`` and ``N_ε`` on a manifold of dimension ``n`` with fiber dimension ``m``.

    ``p`` and ``a`` default to ``p_{m+n}`` and ``a_{m+n}``; passing ``p`` explicitly
    is only meant for experiments and is still required to be subcritical.
    """

    manifold: DiscreteManifold = dc_field(repr=False)
    m: int
    epsilon: float
    p: float | None = None

    def __post_init__(self):
        n, m = self.manifold.dim, self.m
        if m < 1 or m + n <= 2:
            raise ValueError(f"need m >= 1 and m + n > 2, got m={m}, n={n}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        p = critical_exponent(m + n) if self.p is None else float(self.p)
        object.__setattr__(self, "p", p)
        if not (2.0 < p < critical_exponent(n)):
            raise NonSubcritical(f"p={p} is not in (2, {critical_exponent(n)}) for n={n}")
        if np.any(self.potential <= 0):
            raise ValueError(
                f"potential s_g ε²/a + 1 is not positive at epsilon={self.epsilon}; decrease epsilon"
            )

    @property
    def n(self) -> int:
        return self.manifold.dim

    @property
    def a(self) -> float:
        return yamabe_constant(self.m + self.n)

    @cached_property
    def potential(self) -> np.ndarray:
        pot = self.manifold.curvature / self.a * self.epsilon**2 + 1.0
        pot.setflags(write=False)
        return pot

    @cached_property
    def operator(self) -> sparse.csr_matrix:
        """``B = ε² K + diag(mass · potential)``, the Gram matrix of the H¹_ε inner product."""
        M = self.manifold
        return (self.epsilon**2 * M.stiffness + sparse.diags(M.mass * self.potential)).tocsr()

    def with_epsilon(self, epsilon: float) -> "ProblemParams":
        default = self.p == critical_exponent(self.m + self.n)
        return ProblemParams(self.manifold, self.m, epsilon, None if default else self.p)

    def describe(self) -> dict:
        return {"n": self.n, "m": self.m, "p": self.p, "a": self.a, "epsilon": self.epsilon}


@dataclass
class NehariPoint:
    """A field on the Nehari manifold with cached diagnostics."""

    field: np.ndarray
    energy: float
    defect: float
    residual: float
    eq_residual: float
    converged: bool = True
    iterations: int = 0
    start: str = ""
    energy_history: list = dc_field(default_factory=list, repr=False)
    center: int | None = None
    concentration: float | None = None

    @property
    def peak(self) -> int:
        return int(np.argmax(self.field))


def quadratic_part(u, params: ProblemParams) -> float:
    """``ε² uᵀKu + Σ mass · potential · u²``."""
    u = np.asarray(u, dtype=float)
    M = params.manifold
    return float(
        params.epsilon**2 * (u @ (M.stiffness @ u)) + np.sum(M.mass * params.potential * u * u)
    )


def plus_power_integral(u, params: ProblemParams) -> float:
    """``Σ mass · (u⁺)^p``."""
    up = np.maximum(np.asarray(u, dtype=float), 0.0)
    return float(params.manifold.mass @ up**params.p)


def lambda_scale(u, params: ProblemParams) -> float:
    """Unique ``λ > 0`` with ``λu`` on the Nehari manifold."""
    P = plus_power_integral(u, params)
    if not P > 0:
        raise NoPositivePart("field has no positive part; it cannot be projected")
    return (quadratic_part(u, params) / P) ** (1.0 / (params.p - 2.0))


def project(u, params: ProblemParams) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return lambda_scale(u, params) * u


def nehari_defect(u, params: ProblemParams) -> float:
    """Signed constraint residual ``quadratic_part - plus_power_integral``."""
    return quadratic_part(u, params) - plus_power_integral(u, params)


def relative_defect(u, params: ProblemParams) -> float:
    q = quadratic_part(u, params)
    return abs(q - plus_power_integral(u, params)) / q if q > 0 else math.inf


def energy(u, params: ProblemParams) -> float:
    """``J_ε(u) = ε^-n (½ quadratic_part - plus_power_integral / p)``."""
    return params.epsilon ** (-params.n) * (
        0.5 * quadratic_part(u, params) - plus_power_integral(u, params) / params.p
    )


def _power_difference(a, b, p):
    """``a^p - b^p`` for ``a, b ≥ 0`` without cancellation when ``a ≈ b``."""
    out = a**p
    pos = b > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(pos, (a - b) / np.where(pos, b, 1.0), 0.0)
        near = pos & (rel > -1.0)
        out[near] = b[near] ** p * np.expm1(p * np.log1p(rel[near]))
    out[pos & ~near] = -(b[pos & ~near] ** p)
    return out


def energy_difference(a, b, params: ProblemParams) -> float:
    """``J_ε(a) - J_ε(b)`` evaluated from differences, accurate when ``a ≈ b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dq = float((a - b) @ (params.operator @ (a + b)))
    dp = float(params.manifold.mass @ _power_difference(np.maximum(a, 0.0), np.maximum(b, 0.0), params.p))
    return params.epsilon ** (-params.n) * (0.5 * dq - dp / params.p)


def equation_residual(u, params: ProblemParams) -> np.ndarray:
    """Vertexwise residual ``ε²(mass⁻¹Ku)_i + potential_i u_i - (u_i⁺)^(p-1)``."""
    u = np.asarray(u, dtype=float)
    M = params.manifold
    return (
        params.epsilon**2 * (M.stiffness @ u) / M.mass
        + params.potential * u
        - np.maximum(u, 0.0) ** (params.p - 1.0)
    )


def scaled_equation_residual(u, params: ProblemParams) -> float:
    """``max |equation_residual| / max(1, max |u|^(p-1))``."""
    u = np.asarray(u, dtype=float)
    scale = max(1.0, float(np.max(np.abs(u))) ** (params.p - 1.0))
    return float(np.max(np.abs(equation_residual(u, params)))) / scale


def gradient(u, params: ProblemParams) -> np.ndarray:
    """Representative of ``DJ_ε(u)`` in the lumped ``L²(dv)`` inner product."""
    return params.epsilon ** (-params.n) * equation_residual(u, params)


def precondition(g, params: ProblemParams) -> np.ndarray:
    """Solve ``(ε²K + diag(mass·potential)) z = diag(mass) g`` by Jacobi-preconditioned CG.

    ``z`` is the gradient in the H¹_ε inner product: ``zᵀ B v = gᵀ diag(mass) v``.
    """
    g = np.asarray(g, dtype=float)
    rhs = params.manifold.mass * g
    if not np.any(rhs):
        return np.zeros_like(g)
    B = params.operator
    jacobi = sparse.diags(1.0 / B.diagonal())
    z, info = spla.cg(B, rhs, rtol=CG_RTOL, atol=0.0, maxiter=CG_MAXITER, M=jacobi)
    if info != 0:
        raise SolverFailure(f"CG did not converge (info={info})")
    return z


def h1_inner(z1, z2, params: ProblemParams) -> float:
    return float(np.asarray(z1) @ (params.operator @ np.asarray(z2)))


def dv_inner(g1, g2, params: ProblemParams) -> float:
    return float(np.sum(params.manifold.mass * np.asarray(g1) * np.asarray(g2)))


def yamabe_quotient(u, params: ProblemParams, V: float) -> float:
    """Restricted Yamabe quotient of ``u`` viewed on ``M × (N, ε²h)`` with ``Vol(N, h) = V``.

    With ``s_h`` normalized to ``a``, the numerator equals ``a ε⁻² quadratic_part``.
    """
    P = plus_power_integral(u, params)
    if not P > 0:
        raise NoPositivePart("yamabe quotient needs a nonzero positive part")
    p, eps = params.p, params.epsilon
    vol = eps**params.m * V
    return vol ** (1.0 - 2.0 / p) * params.a * quadratic_part(u, params) / eps**2 / P ** (2.0 / p)


def yamabe_from_energy(m_eps: float, params: ProblemParams, V: float) -> float:
    """``a V^(2/k) (k m_ε)^(2/k)`` with ``k = m + n``."""
    k = params.m + params.n
    return params.a * V ** (2.0 / k) * (k * m_eps) ** (2.0 / k)


def quadratic_lower_bound(
    u, params: ProblemParams, m_eps: float, slack: float = 1e-6, defect_tol: float = 1e-8
) -> bool:
    """Check ``quadratic_part(u) ≥ 2p/(p-2) ε^n m_ε`` for ``u`` on the Nehari manifold."""
    if relative_defect(u, params) > defect_tol:
        raise NotOnNehari(f"relative Nehari defect {relative_defect(u, params):.2e} > {defect_tol:.0e}")
    p = params.p
    bound = 2.0 * p / (p - 2.0) * params.epsilon**params.n * m_eps
    return quadratic_part(u, params) >= bound * (1.0 - slack)


def make_point(u, params: ProblemParams, **kw) -> NehariPoint:
    """Wrap a field on ``N_ε`` with its energy, defect and residuals."""
    u = np.asarray(u, dtype=float)
    g = gradient(u, params)
    d = params.epsilon**params.n * precondition(g, params)
    q = quadratic_part(u, params)
    res = math.sqrt(max(h1_inner(d, d, params), 0.0) / q) if q > 0 else math.inf
    return NehariPoint(
        field=u, energy=energy(u, params), defect=nehari_defect(u, params),
        residual=res, eq_residual=scaled_equation_residual(u, params), **kw,
    )
