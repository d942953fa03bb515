import math

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from yamabe_lab.concentration import (
    annular_split,
    center_of_mass,
    concentration_coefficient,
    concentration_function,
    concentration_report,
    eta_cutoff_field,
    karcher_objective,
    max_eps_ball_mass,
    phi_eta,
    psi,
    psi_closed_form_p4,
    robust_center,
)
from yamabe_lab.exceptions import BadDelta, NotConcentrated, NotLocalized, ZeroMass
from yamabe_lab.manifold import build_circle, build_flat_torus
from yamabe_lab.nehari import energy
from yamabe_lab.solver import descend
from yamabe_lab.transplant import default_radius, inclusion_map

SMALL = build_circle(2 * math.pi, 256)
HYP = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])


def _gauss(M, x, width):
    d = M.distances_from(x)
    return np.exp(-(d / width) ** 2)


def test_uniform_weight_half_circle():
    N = SMALL.n_vertices
    C = concentration_function(SMALL, np.ones(N), math.pi / 2)
    assert np.allclose(C, 0.5, atol=1.0 / N + 1e-12)


def test_radius_beyond_diameter_gives_ones(rng):
    w = rng.random(SMALL.n_vertices)
    assert np.array_equal(concentration_function(SMALL, w, SMALL.diameter), np.ones(SMALL.n_vertices))


def test_monotone_in_radius(rng):
    w = rng.random(SMALL.n_vertices) * _gauss(SMALL, 10, 0.5)
    prev = np.zeros(SMALL.n_vertices)
    for r in np.linspace(0.05, 3.0, 12):
        C = concentration_function(SMALL, w, r)
        assert np.all(C >= prev - 1e-14) and np.all(C <= 1.0)
        prev = C


def test_zero_mass():
    with pytest.raises(ZeroMass):
        concentration_function(SMALL, np.zeros(SMALL.n_vertices), 0.5)


def test_antipodal_pair_not_concentrated():
    w = _gauss(SMALL, 0, 0.1) + _gauss(SMALL, 128, 0.1)
    c, _ = concentration_coefficient(SMALL, w, 0.5)
    assert c == pytest.approx(0.5, abs=1e-6)
    with pytest.raises(NotConcentrated):
        robust_center(SMALL, w, 0.5, 0.9)
    with pytest.raises(NotLocalized):
        center_of_mass(SMALL, w)


def test_phi_eta_values():
    eta = 0.8
    assert phi_eta(0.1, eta) == 0.0
    assert phi_eta(0.2, eta) == pytest.approx(0.0, abs=1e-15)
    assert phi_eta(0.8, eta) == 1.0
    assert phi_eta(0.5, eta) == pytest.approx(0.5)
    t = np.linspace(0, 1, 101)
    assert np.all(np.diff(phi_eta(t, eta)) >= 0)
    with pytest.raises(ValueError):
        phi_eta(0.5, 0.5)


def test_karcher_point_mass():
    w = np.zeros(SMALL.n_vertices)
    w[37] = 1.0
    P = karcher_objective(SMALL, w)
    assert np.allclose(P, SMALL.mass[37] * SMALL.distances_from(37) ** 2)
    assert center_of_mass(SMALL, w) == 37


def test_karcher_uniform_is_constant():
    P = karcher_objective(SMALL, np.ones(SMALL.n_vertices))
    assert np.ptp(P) <= 1e-12 * P.max()
    with pytest.raises(NotLocalized):
        center_of_mass(SMALL, np.ones(SMALL.n_vertices))
    assert center_of_mass(SMALL, np.ones(SMALL.n_vertices), check=False) == 0


def test_torus_centroid():
    T = build_flat_torus(2 * math.pi, 2 * math.pi, 32, 32)
    w = np.zeros(T.n_vertices)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            w[T.grid_index(10 + di, 20 + dj)] = 1.0
    assert center_of_mass(T, w) == T.grid_index(10, 20)
    assert robust_center(T, w, 0.5, 0.9) == T.grid_index(10, 20)


def test_center_moves_with_bump():
    cs = [robust_center(SMALL, _gauss(SMALL, x, 0.2), 0.5, 0.9) for x in range(40, 50)]
    assert cs == list(range(40, 50))


@HYP
@given(x=st.integers(0, 255), width=st.floats(0.05, 0.4), noise=st.floats(0.0, 0.05),
       seed=st.integers(0, 2**16), r=st.floats(0.3, 1.2), eta=st.floats(0.55, 0.95))
def test_cutoff_support_and_center_membership(x, width, noise, seed, r, eta):
    w = _gauss(SMALL, x, width) + noise * np.random.default_rng(seed).random(SMALL.n_vertices)
    C = concentration_function(SMALL, w, r)
    assume(C.max() > eta and r < SMALL.r0 / 2)
    supp = np.flatnonzero(eta_cutoff_field(SMALL, w, r, eta))
    c = robust_center(SMALL, w, r, eta)
    for y in np.flatnonzero(C > eta):
        assert np.all(SMALL.distances_from(y)[supp] < 2 * r)
        assert SMALL.distance(c, int(y)) < 2 * r


def test_robust_center_rejects_large_radius():
    with pytest.raises(ValueError):
        robust_center(SMALL, _gauss(SMALL, 0, 0.1), SMALL.r0 / 2, 0.9)


def test_report_fields():
    rep = concentration_report(SMALL, _gauss(SMALL, 5, 0.1), 0.5, 0.9)
    assert rep.argmax == 5 and rep.center == 5 and rep.max > 0.9
    assert len(rep.as_dict()["values"]) == SMALL.n_vertices


def test_psi_closed_form_values():
    assert psi_closed_form_p4(0.1) == pytest.approx(1.435889894, rel=1e-8)
    assert psi_closed_form_p4(0.5) == pytest.approx(1.866025404, rel=1e-8)


@pytest.mark.parametrize("delta", [0.1, 0.3, 0.5, 0.9])
def test_psi_grid_matches_closed_form(delta):
    val = psi(delta, 4.0)
    exact = psi_closed_form_p4(delta)
    assert val >= exact - 1e-12
    assert val == pytest.approx(exact, rel=1e-3)


def test_psi_properties():
    vals = [psi(d, 3.0, 60, 60) for d in (0.1, 0.3, 0.5, 0.7)]
    assert all(v > 1.0 for v in vals)
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    assert psi(0.3, 3.0, 60, 60, r=7.0) == pytest.approx(vals[1], rel=1e-12)
    # symmetric point x_i = y_i = s/2 gives exactly 2, an upper bound for the infimum
    assert psi(0.99, 4.0) <= 2.0
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(BadDelta):
            psi(bad, 4.0)


@pytest.fixture(scope="module")
def bump(circle_params):
    M = circle_params.manifold
    return descend(inclusion_map(M, circle_params, 700).field, circle_params)


def test_annular_split(bump, circle_params):
    M = circle_params.manifold
    r = default_radius(M)
    sd = annular_split(bump, bump.peak, r, 8, circle_params)
    assert sd.disjoint
    assert sd.a1 + sd.a2 == pytest.approx(sd.b1 + sd.b2, rel=1e-10)
    assert sd.energy >= sd.split_energy_bound(0.99 * 4 / 3, circle_params.p)
    # the cut annulus carries almost nothing, so the recombined point costs little extra energy
    assert sd.energy <= bump.energy * (1 + 1e-6)
    assert sd.energy == pytest.approx(energy(bump.field, circle_params), rel=1e-6)
    with pytest.raises(ValueError):
        annular_split(bump, bump.peak, r, 7, circle_params)


def test_max_eps_ball_mass(bump, circle_params):
    M = circle_params.manifold
    eps = circle_params.epsilon
    k, v = max_eps_ball_mass(np.ones(M.n_vertices), circle_params)
    assert v == pytest.approx(2.0, abs=2 * M.spacing / eps)
    kb, vb = max_eps_ball_mass(bump, circle_params)
    assert vb > 0.5 * 4 * 4 / 3
    assert M.distance(kb, bump.peak) <= M.spacing
    total = eps ** -1 * float(M.mass @ np.maximum(bump.field, 0) ** circle_params.p)
    assert vb <= total
