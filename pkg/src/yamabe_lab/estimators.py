"""Estimator-style wrappers (``fit`` / ``transform`` / ``predict``) over the functional API.

Samples are fields: a 2-D array of shape ``(n_fields, n_vertices)``. The manifold is
a constructor parameter, so ``get_params`` and ``clone`` behave as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .concentration import robust_center
from .ground_state import RadialGrid, critical_exponent, gn_report, solve_ground_state
from .nehari import ProblemParams, energy, project
from .solver import DedupOptions, DescentOptions, default_starts, multistart
from .transplant import DEFAULT_ETA, default_radius


def _check_fields(X, M):
    X = check_array(X, dtype=float, ensure_2d=False)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != M.n_vertices:
        raise ValueError(f"fields have {X.shape[1]} values, manifold has {M.n_vertices} vertices")
    return X


class GroundStateSolver(BaseEstimator):
    """Solve for the radial ground state; ``m`` (fiber dimension) fixes ``q = p_{m+n}``."""

    def __init__(self, n=1, m=3, q=None, V=1.0, r_max=40.0, step=1e-3):
        self.n = n
        self.m = m
        self.q = q
        self.V = V
        self.r_max = r_max
        self.step = step

    def fit(self, X=None, y=None):
        q = critical_exponent(self.m + self.n) if self.q is None else self.q
        self.profile_ = solve_ground_state(self.n, q, RadialGrid(self.r_max, self.step))
        self.u0_ = self.profile_.u0
        self.report_ = gn_report(self.profile_, self.m, self.V)
        self.m_E_ = self.report_.mE
        self.sigma_ = self.report_.sigma
        return self

    def predict(self, rho):
        """Profile values at radii ``rho``."""
        check_is_fitted(self, "profile_")
        return self.profile_(np.asarray(rho, dtype=float))


class NehariProjector(TransformerMixin, BaseEstimator):
    """Project each field onto the Nehari manifold."""

    def __init__(self, manifold=None, m=3, epsilon=0.1):
        self.manifold = manifold
        self.m = m
        self.epsilon = epsilon

    def fit(self, X=None, y=None):
        self.params_ = ProblemParams(self.manifold, self.m, self.epsilon)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = _check_fields(X, self.manifold)
        return np.vstack([project(u, self.params_) for u in X])

    def score_samples(self, X):
        """Energy ``J_ε`` of each projected field."""
        return np.array([energy(u, self.params_) for u in self.transform(X)])


class NehariMultistart(BaseEstimator):
    """Multistart search for critical points of ``J_ε`` on the Nehari manifold."""

    def __init__(self, manifold=None, m=3, epsilon=0.05, n_starts=None, include_constant=True,
                 max_iters=2000, residual_tol=1e-8, rel_tol_l2=1e-3, energy_tol=1e-6,
                 r=None, eta=DEFAULT_ETA, workers=1):
        self.manifold = manifold
        self.m = m
        self.epsilon = epsilon
        self.n_starts = n_starts
        self.include_constant = include_constant
        self.max_iters = max_iters
        self.residual_tol = residual_tol
        self.rel_tol_l2 = rel_tol_l2
        self.energy_tol = energy_tol
        self.r = r
        self.eta = eta
        self.workers = workers

    def fit(self, X=None, y=None):
        """``X`` may hold explicit start vertices; otherwise the default start set is used."""
        M = self.manifold
        self.params_ = ProblemParams(M, self.m, self.epsilon)
        if X is not None:
            starts = np.asarray(X, dtype=int).ravel()
        elif self.n_starts is None:
            starts = default_starts(M, self.epsilon)
        else:
            starts = M.sample_vertices(self.n_starts)
        opts = DescentOptions(max_iters=self.max_iters, residual_tol=self.residual_tol)
        self.solutions_ = multistart(M, self.params_, starts, self.include_constant, opts,
                                     DedupOptions(self.rel_tol_l2, self.energy_tol),
                                     r=self.r, eta=self.eta, workers=self.workers)
        self.energies_ = self.solutions_.energies
        self.m_eps_ = float(self.energies_[0]) if len(self.energies_) else float("nan")
        self.centers_ = [p.center for p in self.solutions_]
        return self


class RobustCenterOfMass(BaseEstimator):
    """Vertex-valued ``(r, η)`` center of mass of nonnegative weights."""

    def __init__(self, manifold=None, r=None, eta=DEFAULT_ETA):
        self.manifold = manifold
        self.r = r
        self.eta = eta

    def fit(self, X=None, y=None):
        self.r_ = default_radius(self.manifold) if self.r is None else self.r
        return self

    def predict(self, X):
        check_is_fitted(self, "r_")
        X = _check_fields(X, self.manifold)
        return np.array([robust_center(self.manifold, w, self.r_, self.eta) for w in X])
