"""Projected preconditioned descent on the Nehari manifold, multistart search,
deduplication of critical points and the ``m_ε`` estimate."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .concentration import concentration_coefficient, robust_center
from .exceptions import NoPositivePart, NotConcentrated, YamabeLabError
from .manifold import DiscreteManifold
from .nehari import (
    NehariPoint,
    ProblemParams,
    energy,
    energy_difference,
    gradient,
    h1_inner,
    make_point,
    precondition,
    project,
    quadratic_part,
    relative_defect,
    scaled_equation_residual,
)
from .transplant import DEFAULT_ETA, default_radius, inclusion_map

log = logging.getLogger(__name__)

MIN_STEP = 1e-12


@dataclass(frozen=True)
class DescentOptions:
    max_iters: int = 2000
    step0: float = 1.0
    armijo_c: float = 1e-4
    shrink: float = 0.5
    residual_tol: float = 1e-8
    defect_tol: float = 1e-8

    def __post_init__(self):
        if not 0 < self.armijo_c < 1:
            raise ValueError(f"armijo_c must lie in (0, 1), got {self.armijo_c}")
        if not 0 < self.shrink < 1:
            raise ValueError(f"shrink must lie in (0, 1), got {self.shrink}")
        if not (self.residual_tol > 0 and self.defect_tol > 0 and self.step0 > 0):
            raise ValueError("tolerances and step0 must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")


@dataclass(frozen=True)
class DedupOptions:
    rel_tol_l2: float = 1e-3
    energy_tol: float = 1e-6


def _direction(u, params):
    """Descent direction ``ε^n B⁻¹ M ∇J`` (unit step is the natural fixed-point step),
    its relative H¹_ε norm and the dv pairing with the gradient."""
    g = gradient(u, params)
    d = params.epsilon**params.n * precondition(g, params)
    dd = max(h1_inner(d, d, params), 0.0)
    slope = float(np.sum(params.manifold.mass * g * d))
    return d, math.sqrt(dd / quadratic_part(u, params)), slope


def descend(u0, params: ProblemParams, opts: DescentOptions = DescentOptions(), start: str = "") -> NehariPoint:
    """Minimize ``J_ε ∘ project`` from ``u0`` with Armijo backtracking.

    Energies in the history are accumulated from stable differences so that the
    Armijo test stays meaningful below the round-off level of ``J_ε`` itself.
    Stops when both the relative preconditioned gradient norm and the scaled vertexwise
    residual are below ``residual_tol``. Hitting ``max_iters`` or a vanishing step
    returns the last accepted iterate flagged ``converged=False``.
    """
    u = project(np.asarray(u0, dtype=float), params)
    J = energy(u, params)
    history = [J]
    converged = False
    it = 0
    while True:
        d, res, slope = _direction(u, params)
        eq = scaled_equation_residual(u, params)
        if res < opts.residual_tol and eq < opts.residual_tol:
            converged = True
            break
        if it >= opts.max_iters:
            log.info("descent hit max_iters=%d (residual %.2e)", opts.max_iters, res)
            break
        tau = opts.step0
        accepted = False
        while tau >= MIN_STEP:
            try:
                trial = project(u - tau * d, params)
            except NoPositivePart:
                tau *= opts.shrink
                continue
            dJ = energy_difference(trial, u, params)
            if dJ <= -opts.armijo_c * tau * slope:
                accepted = True
                break
            tau *= opts.shrink
        if not accepted:
            log.info("line search stalled at iteration %d (residual %.2e)", it, res)
            break
        u, J = trial, J + dJ
        history.append(J)
        it += 1
    if relative_defect(u, params) > opts.defect_tol:
        u = project(u, params)
    pt = make_point(u, params, converged=converged, iterations=it, start=start)
    pt.energy_history = history
    return pt


@dataclass
class SolutionSet:
    """Deduplicated critical points sorted by energy."""

    points: list[NehariPoint]
    distances: np.ndarray
    failures: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, k):
        return self.points[k]

    @property
    def energies(self) -> np.ndarray:
        return np.array([p.energy for p in self.points])


def relative_l2_distance(u, v, mass) -> float:
    nu = math.sqrt(float(mass @ (u * u)))
    nv = math.sqrt(float(mass @ (v * v)))
    diff = u - v
    return math.sqrt(float(mass @ (diff * diff))) / max(nu, nv, 1e-300)


def _canonical_key(pt: NehariPoint):
    return (pt.energy, pt.peak, pt.field.tobytes())


def _distance_matrix(points, mass):
    k = len(points)
    D = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            D[i, j] = D[j, i] = relative_l2_distance(points[i].field, points[j].field, mass)
    return D


def dedup(points, mass, rel_tol_l2: float = 1e-3, energy_tol: float = 1e-6) -> SolutionSet:
    """Merge points closer than ``rel_tol_l2`` in relative L² with matching energies.

    Points are processed in ascending ``(energy, peak vertex)`` order so the lower-energy
    representative survives and the result does not depend on input order.
    """
    kept: list[NehariPoint] = []
    for pt in sorted(points, key=_canonical_key):
        dup = any(
            relative_l2_distance(pt.field, q.field, mass) < rel_tol_l2
            and abs(pt.energy - q.energy) < energy_tol * (1 + abs(q.energy))
            for q in kept
        )
        if not dup:
            kept.append(pt)
    return SolutionSet(kept, _distance_matrix(kept, mass))


def constant_start(params: ProblemParams) -> np.ndarray:
    return np.ones(params.manifold.n_vertices)


def annotate(sol: SolutionSet, params: ProblemParams, r: float | None = None, eta: float = DEFAULT_ETA) -> None:
    """Attach the robust center and the concentration coefficient to every member."""
    M = params.manifold
    r = default_radius(M) if r is None else r
    for pt in sol:
        w = np.maximum(pt.field, 0.0) ** params.p
        pt.concentration = concentration_coefficient(M, w, r)[0]
        try:
            pt.center = robust_center(M, w, r, eta)
        except NotConcentrated:
            pt.center = None


def multistart(
    M: DiscreteManifold,
    params: ProblemParams,
    starts,
    include_constant: bool = True,
    opts: DescentOptions = DescentOptions(),
    dedup_opts: DedupOptions = DedupOptions(),
    r: float | None = None,
    eta: float = DEFAULT_ETA,
    workers: int = 1,
) -> SolutionSet:
    """Descend from the inclusion map at each start vertex (and the constant field).

    Non-converged runs and start failures are recorded in ``failures`` and excluded
    from the set.
    """
    if params.manifold is not M:
        raise ValueError("params were built for a different manifold")
    starts = [int(x) for x in starts]
    if not starts and not include_constant:
        raise ValueError("need at least one start")
    r = default_radius(M) if r is None else r

    def run(job):
        if job is None:
            return descend(constant_start(params), params, opts, start="constant")
        u0 = inclusion_map(M, params, job, r).field
        return descend(u0, params, opts, start=f"bump:{job}")

    jobs = starts + ([None] if include_constant else [])
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_guarded(run), jobs))
    else:
        outcomes = [_guarded(run)(j) for j in jobs]

    good, failures = [], []
    for job, out in zip(jobs, outcomes):
        name = "constant" if job is None else f"bump:{job}"
        if isinstance(out, Exception):
            failures.append({"start": name, "error": f"{type(out).__name__}: {out}"})
        elif not out.converged:
            failures.append({"start": name, "error": "not converged", "residual": out.residual,
                             "iterations": out.iterations})
        else:
            good.append(out)
    sol = dedup(good, M.mass, dedup_opts.rel_tol_l2, dedup_opts.energy_tol)
    sol.failures = failures
    annotate(sol, params, r, eta)
    return sol


def _guarded(fn):
    def wrapped(job):
        try:
            return fn(job)
        except YamabeLabError as exc:
            return exc
    return wrapped


def default_start_count(epsilon: float) -> int:
    return int(np.clip(math.ceil(8.0 / epsilon), 8, 32))


def default_starts(M: DiscreteManifold, epsilon: float) -> np.ndarray:
    return M.sample_vertices(default_start_count(epsilon))


def estimate_m_eps(M: DiscreteManifold, params: ProblemParams, opts: DescentOptions = DescentOptions(),
                   workers: int = 1, **kw) -> tuple[float, NehariPoint, SolutionSet]:
    """Lowest converged energy of a multistart run over the default start set."""
    sol = multistart(M, params, default_starts(M, params.epsilon), True, opts, workers=workers, **kw)
    if not len(sol):
        raise YamabeLabError("no start converged; cannot estimate m_eps")
    best = sol[0]
    return best.energy, best, sol


def filter_sublevel(sol: SolutionSet, d: float) -> SolutionSet:
    """Members with energy strictly below ``d``."""
    keep = [k for k, p in enumerate(sol.points) if p.energy < d]
    return SolutionSet([sol.points[k] for k in keep], sol.distances[np.ix_(keep, keep)], list(sol.failures))


@dataclass
class CategoryReport:
    found: int
    required: int
    passed: bool
    energy_gap: float | None

    def as_dict(self) -> dict:
        return {"found": self.found, "required": self.required, "pass": self.passed,
                "energy_gap": self.energy_gap}


def count_vs_category(sol: SolutionSet, cat: int) -> CategoryReport:
    """Compare the number of distinct solutions with ``Cat(M) + 1``.

    ``energy_gap`` is the difference between the lowest energy beyond the ``cat``
    lowest solutions and the highest of those ``cat``.
    """
    if cat < 1:
        raise ValueError("cat must be at least 1")
    E = sol.energies
    gap = float(E[cat] - E[cat - 1]) if len(E) > cat else None
    return CategoryReport(found=len(sol), required=cat + 1, passed=len(sol) >= cat + 1, energy_gap=gap)


def with_options(opts: DescentOptions, **kw) -> DescentOptions:
    return replace(opts, **kw)
