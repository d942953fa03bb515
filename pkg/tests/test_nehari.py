import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from yamabe_lab.exceptions import NonSubcritical, NoPositivePart, NotOnNehari
from yamabe_lab.manifold import build_circle, build_sphere
from yamabe_lab.nehari import (
    ProblemParams,
    dv_inner,
    energy,
    energy_difference,
    equation_residual,
    gradient,
    h1_inner,
    lambda_scale,
    quadratic_lower_bound,
    make_point,
    nehari_defect,
    plus_power_integral,
    precondition,
    project,
    quadratic_part,
    relative_defect,
    scaled_equation_residual,
    yamabe_from_energy,
    yamabe_quotient,
)

CIRCLE = build_circle(2 * math.pi, 64)
PARAMS = ProblemParams(CIRCLE, 3, 0.3)

fields = arrays(np.float64, 64, elements=st.floats(-2.0, 3.0)).filter(lambda u: np.max(u) > 0.05)
scales = st.floats(0.05, 20.0)


def test_params_derived(circle_params):
    assert circle_params.p == 4.0 and circle_params.a == 6.0 and circle_params.n == 1
    assert np.all(circle_params.potential == 1.0)


def test_params_reject_supercritical():
    S = build_sphere(2)
    with pytest.raises(NonSubcritical):
        ProblemParams(S, 2, 0.1, p=2.0)
    with pytest.raises(NonSubcritical):
        ProblemParams(S, 2, 0.1, p=1.5)
    with pytest.raises(ValueError):
        ProblemParams(S, 2, 0.0)


def test_sphere_potential():
    S = build_sphere(2)
    P = ProblemParams(S, 2, 0.1)
    assert np.allclose(P.potential, 2.0 / P.a * 0.01 + 1.0)


def test_hand_values():
    u = np.ones(64)
    assert quadratic_part(np.zeros(64), PARAMS) == 0.0
    assert quadratic_part(u, PARAMS) == pytest.approx(2 * math.pi, rel=1e-14)
    assert plus_power_integral(u, PARAMS) == pytest.approx(2 * math.pi, rel=1e-14)
    assert plus_power_integral(-u, PARAMS) == 0.0
    P01 = ProblemParams(CIRCLE, 3, 0.1)
    assert energy(u, P01) == pytest.approx(5 * math.pi, rel=1e-14)
    assert energy(np.zeros(64), P01) == 0.0
    assert lambda_scale(2 * u, PARAMS) == pytest.approx(0.5, rel=1e-14)
    assert np.allclose(project(2 * u, PARAMS), 1.0, rtol=1e-14)
    assert np.max(np.abs(gradient(u, PARAMS))) < 1e-12


def test_mixed_sign_power():
    u = np.where(np.arange(64) % 2, 1.0, -5.0)
    assert plus_power_integral(u, PARAMS) == pytest.approx(32 * CIRCLE.mass[0])


def test_no_positive_part():
    with pytest.raises(NoPositivePart):
        lambda_scale(-np.ones(64), PARAMS)
    with pytest.raises(NoPositivePart):
        yamabe_quotient(np.zeros(64), PARAMS, 1.0)


@settings(max_examples=60, deadline=None)
@given(u=fields, c=scales)
def test_lambda_homogeneity(u, c):
    assert lambda_scale(c * u, PARAMS) * c / lambda_scale(u, PARAMS) == pytest.approx(1.0, abs=1e-12)
    assert quadratic_part(c * u, PARAMS) == pytest.approx(c * c * quadratic_part(u, PARAMS), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(u=fields, c=scales)
def test_projection_idempotent_and_scale_invariant(u, c):
    v = project(u, PARAMS)
    scale = np.max(np.abs(v))
    assert np.max(np.abs(project(v, PARAMS) - v)) <= 1e-12 * scale
    assert np.max(np.abs(project(c * u, PARAMS) - v)) <= 1e-12 * scale
    assert lambda_scale(v, PARAMS) == pytest.approx(1.0, abs=1e-12)
    assert relative_defect(v, PARAMS) < 1e-12


@settings(max_examples=60, deadline=None)
@given(u=fields)
def test_on_nehari_energy_identity(u):
    v = project(u, PARAMS)
    ident = PARAMS.epsilon ** -1 * (0.5 - 1 / PARAMS.p) * plus_power_integral(v, PARAMS)
    assert abs(energy(v, PARAMS) - ident) <= 1e-10 * abs(energy(v, PARAMS))


def test_gradient_central_differences(rng):
    h = 1e-5
    for _ in range(100):
        u = 1.0 + 0.5 * rng.normal(size=64)
        v = rng.normal(size=64)
        exact = dv_inner(gradient(u, PARAMS), v, PARAMS)
        fd = (energy(u + h * v, PARAMS) - energy(u - h * v, PARAMS)) / (2 * h)
        assert abs(exact - fd) / abs(exact) < 1e-6


def test_gradient_central_differences_second_order(rng):
    u = 1.0 + 0.5 * rng.normal(size=64)
    v = rng.normal(size=64)
    exact = dv_inner(gradient(u, PARAMS), v, PARAMS)
    errs = [abs((energy(u + h * v, PARAMS) - energy(u - h * v, PARAMS)) / (2 * h) - exact) for h in (1e-2, 5e-3)]
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.1)


@settings(max_examples=40, deadline=None)
@given(a=fields, t=st.floats(-1e-6, 1e-6))
def test_energy_difference_matches(a, t):
    b = a * (1 + t) + t
    assert energy_difference(a, b, PARAMS) == pytest.approx(energy(a, PARAMS) - energy(b, PARAMS), abs=1e-9)


def test_energy_difference_accuracy():
    u = project(1 + 0.3 * np.cos(np.arange(64) * 2 * math.pi / 64), PARAMS)
    du = 1e-9 * np.sin(np.arange(64))
    exact = dv_inner(gradient(u, PARAMS), du, PARAMS)
    assert energy_difference(u + du, u, PARAMS) == pytest.approx(exact, rel=1e-6)


def test_precondition(rng):
    assert np.all(precondition(np.zeros(64), PARAMS) == 0)
    assert np.allclose(precondition(np.full(64, 3.0), PARAMS), 3.0 / PARAMS.potential, rtol=1e-9)
    for _ in range(10):
        g1, g2 = rng.normal(size=(2, 64))
        lhs = h1_inner(precondition(g1, PARAMS), g2, PARAMS)
        rhs = dv_inner(g1, g2, PARAMS)
        assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-12)


def test_yamabe_quotient_scale_invariance(rng):
    u = 1.0 + 0.5 * rng.random(64)
    assert yamabe_quotient(2 * u, PARAMS, 1.0) == pytest.approx(yamabe_quotient(u, PARAMS, 1.0), rel=1e-10)


def test_yamabe_quotient_matches_energy_form(rng):
    v = project(1.0 + 0.5 * rng.random(64), PARAMS)
    J = energy(v, PARAMS)
    assert yamabe_quotient(v, PARAMS, 2.0) == pytest.approx(yamabe_from_energy(J, PARAMS, 2.0), rel=1e-10)


def test_quadratic_lower_bound(rng):
    v = project(1.0 + 0.5 * rng.random(64), PARAMS)
    J = energy(v, PARAMS)
    assert quadratic_lower_bound(v, PARAMS, J)
    assert not quadratic_lower_bound(v, PARAMS, 1.1 * J)
    with pytest.raises(NotOnNehari):
        quadratic_lower_bound(1.5 * v, PARAMS, J)


def test_residual_consistency():
    u = np.ones(64)
    assert np.max(np.abs(equation_residual(u, PARAMS))) < 1e-12
    assert scaled_equation_residual(u, PARAMS) < 1e-12
    pt = make_point(u, PARAMS)
    assert pt.residual < 1e-12 and pt.defect == pytest.approx(0, abs=1e-12)
    assert nehari_defect(2 * u, PARAMS) < 0
