import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yamabe_lab.exceptions import BadFormat, BadSize, NotClosed
from yamabe_lab.manifold import (
    ball,
    build_circle,
    build_flat_torus,
    build_sphere,
    icosphere,
    integrate,
    load_mesh,
    write_off,
)


def _manifolds(circle, torus, sphere):
    return [circle, torus, sphere]


def test_kernel_and_symmetry(circle, torus, sphere):
    for M in _manifolds(circle, torus, sphere):
        K = M.stiffness
        assert np.max(np.abs(K @ np.ones(M.n_vertices))) < 1e-10
        assert abs(K - K.T).max() < 1e-12
        assert np.all(M.mass > 0)
        assert M.volume == pytest.approx(M.mass.sum())
        assert M.r0 > 0


def test_circle_basics(circle):
    assert circle.volume == pytest.approx(2 * math.pi, rel=1e-14)
    assert np.all(circle.curvature == 0)
    assert circle.distance(0, 1024) == pytest.approx(math.pi, rel=1e-14)
    assert circle.r0 == pytest.approx(math.pi / 2)


def test_circle_eigenvalues():
    L, N = 2 * math.pi, 64
    M = build_circle(L, N)
    ev = np.sort(np.linalg.eigvalsh((M.stiffness.toarray() / M.mass[:, None])))
    k = np.arange(N)
    expected = np.sort((2 * N / L) ** 2 * np.sin(np.pi * k / N) ** 2)
    assert np.allclose(ev, expected, atol=1e-9)


def test_circle_dirichlet_energy_rate():
    errs = []
    for N in (64, 128, 256):
        M = build_circle(2 * math.pi, N)
        x = np.arange(N) * 2 * math.pi / N
        f = np.sin(x)
        errs.append(abs(f @ (M.stiffness @ f) - math.pi))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.05)


def test_integrate_sin_squared():
    M = build_circle(2 * math.pi, 200)
    x = np.arange(200) * 2 * math.pi / 200
    assert integrate(M, np.sin(x) ** 2) == pytest.approx(math.pi, abs=1e-10)
    assert integrate(M, np.ones(200)) == pytest.approx(M.volume)


def test_integrate_linear(rng, torus):
    f, g = rng.normal(size=(2, torus.n_vertices))
    a, b = 2.5, -0.75
    lhs = integrate(torus, a * f + b * g)
    rhs = a * integrate(torus, f) + b * integrate(torus, g)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_torus_basics(torus):
    assert torus.volume == pytest.approx(4 * math.pi**2)
    i0, i1 = torus.grid_index(0, 0), torus.grid_index(16, 0)
    assert torus.distance(i0, i1) == pytest.approx(math.pi)
    assert torus.r0 == pytest.approx(math.pi / 2)


def test_sphere_volume_convergence():
    errs = [abs(build_sphere(level).volume - 4 * math.pi) for level in (2, 3, 4)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] / (4 * math.pi) < 0.01


def test_sphere_basics(sphere):
    assert sphere.distance(0, 1) == pytest.approx(math.pi, rel=1e-12)
    assert np.all(sphere.curvature == 2.0)
    assert sphere.r0 == pytest.approx(0.9 * math.pi / 2)


def test_bad_sizes():
    with pytest.raises(BadSize):
        build_circle(2 * math.pi, 8)
    with pytest.raises(BadSize):
        build_circle(-1.0, 32)
    with pytest.raises(BadSize):
        build_flat_torus(1, 1, 8, 32)
    with pytest.raises(BadSize):
        build_sphere(1)


@pytest.mark.parametrize("which", ["circle", "torus", "sphere"])
def test_metric_axioms(which, circle, torus, sphere, rng):
    M = {"circle": circle, "torus": torus, "sphere": sphere}[which]
    idx = rng.integers(0, M.n_vertices, size=(1000, 3))
    rows = np.unique(idx[:, 0])
    D = dict(zip(rows, M.distance_rows(rows)))
    for x, y, z in idx:
        dxy, dxz = D[x][y], D[x][z]
        assert M.distance(y, x) == pytest.approx(dxy, abs=1e-12)
        assert dxz <= dxy + M.distance(y, z) + 1e-12


def test_ball_membership(circle):
    assert len(ball(circle, 5, 0.0).members) == 0
    b = ball(circle, 0, math.pi)
    assert len(b.members) == circle.n_vertices - 1 and 1024 not in b.members
    assert len(ball(circle, 0, circle.diameter + 1).members) == circle.n_vertices
    assert 7 in ball(circle, 7, 1e-3).members


@settings(max_examples=25, deadline=None)
@given(x=st.integers(0, 1023), r=st.floats(0.01, 4.0))
def test_grid_ball_sums_match_direct(x, r):
    M = build_flat_torus(2 * math.pi, 2 * math.pi, 32, 32)
    w = np.cos(np.arange(M.n_vertices) * 0.37) + 1.5
    direct = M.mass[M.distances_from(x) < r] @ w[M.distances_from(x) < r]
    assert M.ball_sums(w, r)[x] == pytest.approx(direct, rel=1e-10, abs=1e-12)


def test_off_roundtrip(tmp_path):
    V, F = icosphere(3)
    path = tmp_path / "ico3.off"
    write_off(path, V, F)
    M = load_mesh(path, r0=1.0, cat=2)
    assert M.volume == pytest.approx(build_sphere(3).volume, abs=1e-8)
    assert M.euler_characteristic == 2
    assert M.angle_defect.sum() == pytest.approx(2 * math.pi * 2, rel=1e-10)
    assert np.mean(M.curvature) == pytest.approx(2.0, rel=0.05)


def test_mesh_distance_accuracy(tmp_path):
    V, F = icosphere(3)
    path = tmp_path / "ico3.off"
    write_off(path, V, F)
    M = load_mesh(path, r0=1.0)
    S = build_sphere(3)
    rows = np.arange(0, M.n_vertices, 17)
    Dm, Ds = M.distance_rows(rows), S.distance_rows(rows)
    sel = Ds > 0.3
    assert np.max(np.abs(Dm[sel] - Ds[sel]) / Ds[sel]) < 0.06


def test_mesh_distance_cache_transparent(tmp_path):
    V, F = icosphere(2)
    path = tmp_path / "ico2.off"
    write_off(path, V, F)
    M = load_mesh(path, r0=1.0)
    first = M.distances_from(3).copy()
    assert np.array_equal(first, M.distances_from(3))
    assert np.array_equal(first, load_mesh(path, r0=1.0).distance_rows([3])[0])


def test_open_mesh_rejected(tmp_path):
    V, F = icosphere(2)
    path = tmp_path / "open.off"
    write_off(path, V, F[1:])
    with pytest.raises(NotClosed):
        load_mesh(path, r0=1.0)


def test_malformed_off(tmp_path):
    path = tmp_path / "bad.off"
    path.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n")
    with pytest.raises(BadFormat):
        load_mesh(path, r0=1.0)
    path.write_text("PLY\n")
    with pytest.raises(BadFormat):
        load_mesh(path, r0=1.0)


def test_sample_vertices_deterministic(circle, torus, sphere):
    for M in (circle, torus, sphere):
        a, b = M.sample_vertices(16), M.sample_vertices(16)
        assert np.array_equal(a, b) and len(np.unique(a)) == 16


def test_dirichlet_density_sums(torus, rng):
    u = rng.normal(size=torus.n_vertices)
    assert torus.dirichlet_density(u).sum() == pytest.approx(u @ (torus.stiffness @ u), rel=1e-12)
