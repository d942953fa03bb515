"""Discrete closed Riemannian manifolds with lumped mass and a Laplace–Beltrami stiffness matrix.

Built-in families (circle, flat torus, round sphere) use analytic geodesic
distances. Meshes loaded from OFF files use shortest paths on the edge graph
augmented with unfolded diagonals across adjacent triangles.
"""

from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .exceptions import BadFormat, BadSize, NotClosed

_CHUNK = 512


@dataclass(frozen=True)
class VertexBall:
    center: int
    radius: float
    members: np.ndarray


class DiscreteManifold:
    """Vertex set with lumped volume weights and a stiffness matrix.

    Subclasses supply the geodesic distance through ``distance_rows``. Instances
    are treated as immutable once built.

    Attributes
    ----------
    dim : int
        Intrinsic dimension ``n``.
    mass : ndarray
        Lumped volume weight per vertex.
    stiffness : scipy.sparse.csr_matrix
        Symmetric positive semidefinite matrix with constants in its kernel;
        ``u @ stiffness @ u`` approximates ``∫ |∇u|² dv``.
    curvature : ndarray
        Scalar curvature per vertex.
    r0 : float
        Convexity radius used by the center-of-mass construction.
    cat : int or None
        Lusternik–Schnirelmann category, when known.
    """

    kind = "abstract"

    def __init__(self, dim, mass, stiffness, curvature, r0, *, cat=None, coords=None, params=None):
        self.dim = int(dim)
        self.mass = np.asarray(mass, dtype=float)
        self.stiffness = sparse.csr_matrix(stiffness)
        self.curvature = np.asarray(curvature, dtype=float)
        self.r0 = float(r0)
        self.cat = cat
        self.coords = None if coords is None else np.asarray(coords, dtype=float)
        self.params = dict(params or {})
        for arr in (self.mass, self.curvature, self.coords):
            if arr is not None:
                arr.setflags(write=False)
        self._adjacency = None
        self._hash = None

    @property
    def n_vertices(self) -> int:
        return self.mass.shape[0]

    @property
    def volume(self) -> float:
        return float(self.mass.sum())

    @property
    def spacing(self) -> float:
        """Characteristic mesh spacing (largest edge length along the grid or mean edge length)."""
        raise NotImplementedError

    def distance_rows(self, rows) -> np.ndarray:
        """Geodesic distances from each vertex in ``rows`` to every vertex, shape ``(len(rows), N)``."""
        raise NotImplementedError

    def distances_from(self, x: int) -> np.ndarray:
        return self.distance_rows([x])[0]

    def distance(self, x: int, y: int) -> float:
        return float(self.distances_from(x)[y])

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    def ball_sums(self, w, r: float) -> np.ndarray:
        """``∫_{B(x, r)} w dv`` for every vertex ``x`` (strict inequality ``d < r``)."""
        mw = self.mass * np.asarray(w, dtype=float)
        out = np.empty(self.n_vertices)
        for start in range(0, self.n_vertices, _CHUNK):
            rows = np.arange(start, min(start + _CHUNK, self.n_vertices))
            out[rows] = (self.distance_rows(rows) < r) @ mw
        return out

    def sample_vertices(self, k: int) -> np.ndarray:
        """Deterministic, roughly equispaced sample of ``k`` vertices (farthest-point)."""
        k = min(int(k), self.n_vertices)
        chosen = [0]
        dmin = self.distances_from(0).copy()
        while len(chosen) < k:
            nxt = int(np.argmax(dmin))
            chosen.append(nxt)
            dmin = np.minimum(dmin, self.distances_from(nxt))
        return np.array(chosen)

    @property
    def adjacency(self) -> sparse.csr_matrix:
        """Boolean vertex adjacency from the off-diagonal pattern of the stiffness matrix."""
        if self._adjacency is None:
            a = self.stiffness.copy().tocsr()
            a.setdiag(0)
            a.eliminate_zeros()
            self._adjacency = (a != 0).astype(np.int8).tocsr()
        return self._adjacency

    def dirichlet_density(self, u) -> np.ndarray:
        """Per-vertex share of ``uᵀKu``: ``½ Σ_j (-K_ij)(u_i - u_j)²``; sums to ``uᵀKu``."""
        u = np.asarray(u, dtype=float)
        coo = self.stiffness.tocoo()
        off = coo.row != coo.col
        i, j, k = coo.row[off], coo.col[off], coo.data[off]
        return 0.5 * np.bincount(i, weights=-k * (u[i] - u[j]) ** 2, minlength=self.n_vertices)

    @property
    def hash(self) -> str:
        if self._hash is None:
            h = hashlib.sha256()
            h.update(self.kind.encode())
            h.update(repr(sorted(self.params.items())).encode())
            h.update(self.mass.tobytes())
            h.update(self.stiffness.data.tobytes())
            self._hash = h.hexdigest()[:16]
        return self._hash

    def describe(self) -> dict:
        return {
            "type": self.kind, **self.params, "dim": self.dim, "vertices": self.n_vertices,
            "volume": self.volume, "r0": self.r0, "cat": self.cat, "hash": self.hash,
        }

    def __repr__(self):
        extra = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{type(self).__name__}({extra}, vertices={self.n_vertices})"


def ball(M: DiscreteManifold, x: int, r: float) -> VertexBall:
    """Vertices at geodesic distance strictly less than ``r`` from ``x``."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    members = np.nonzero(M.distances_from(x) < r)[0]
    return VertexBall(center=int(x), radius=float(r), members=members)


def integrate(M: DiscreteManifold, f) -> float:
    """Lumped quadrature ``Σ mass_i f_i``."""
    return float(M.mass @ np.asarray(f, dtype=float))


def _periodic_second_difference(N: int) -> sparse.csr_matrix:
    main = 2.0 * np.ones(N)
    off = -np.ones(N - 1)
    D = sparse.diags([main, off, off], [0, 1, -1], format="lil")
    D[0, N - 1] = -1.0
    D[N - 1, 0] = -1.0
    return D.tocsr()


def _wrap(k, N):
    k = np.abs(k) % N
    return np.minimum(k, N - k)


class _GridManifold(DiscreteManifold):
    # periodic grids: ball sums are periodic convolutions with the ball indicator

    shape: tuple

    def _offset_distances(self) -> np.ndarray:
        raise NotImplementedError

    def ball_sums(self, w, r):
        mw = (self.mass * np.asarray(w, dtype=float)).reshape(self.shape)
        kernel = (self._offset_distances() < r).astype(float)
        axes = tuple(range(len(self.shape)))
        conv = np.fft.irfftn(np.fft.rfftn(mw) * np.fft.rfftn(kernel), s=self.shape, axes=axes)
        # indicator convolution: kernel[o] weights mw[x - o]; the ball is symmetric
        return conv.reshape(-1)


class CircleManifold(_GridManifold):
    kind = "circle"

    def __init__(self, L, N, *, cat=2):
        h = L / N
        K = _periodic_second_difference(N) / h
        theta = np.arange(N) * h
        super().__init__(
            1, np.full(N, h), K, np.zeros(N), L / 4.0, cat=cat,
            coords=theta[:, None], params={"L": float(L), "N": int(N)},
        )
        self.L, self.N, self.h = float(L), int(N), h
        self.shape = (int(N),)

    @property
    def spacing(self):
        return self.h

    @property
    def diameter(self):
        return self.h * (self.N // 2)

    def distance_rows(self, rows):
        rows = np.atleast_1d(np.asarray(rows))
        idx = np.arange(self.N)
        return _wrap(idx[None, :] - rows[:, None], self.N) * self.h

    def _offset_distances(self):
        return _wrap(np.arange(self.N), self.N) * self.h

    def sample_vertices(self, k):
        k = min(int(k), self.N)
        return np.unique((np.arange(k) * self.N) // k)


class TorusManifold(_GridManifold):
    kind = "torus"

    def __init__(self, L1, L2, N1, N2, *, cat=3):
        h1, h2 = L1 / N1, L2 / N2
        D1 = _periodic_second_difference(N1)
        D2 = _periodic_second_difference(N2)
        K = (h2 / h1) * sparse.kron(D1, sparse.identity(N2)) + (h1 / h2) * sparse.kron(
            sparse.identity(N1), D2
        )
        i, j = np.meshgrid(np.arange(N1), np.arange(N2), indexing="ij")
        coords = np.column_stack([i.ravel() * h1, j.ravel() * h2])
        super().__init__(
            2, np.full(N1 * N2, h1 * h2), K.tocsr(), np.zeros(N1 * N2),
            min(L1, L2) / 4.0, cat=cat, coords=coords,
            params={"L1": float(L1), "L2": float(L2), "N1": int(N1), "N2": int(N2)},
        )
        self.L1, self.L2, self.N1, self.N2, self.h1, self.h2 = L1, L2, N1, N2, h1, h2
        self.shape = (int(N1), int(N2))

    @property
    def spacing(self):
        return max(self.h1, self.h2)

    @property
    def diameter(self):
        return math.hypot(self.h1 * (self.N1 // 2), self.h2 * (self.N2 // 2))

    def grid_index(self, i, j):
        return (i % self.N1) * self.N2 + (j % self.N2)

    def distance_rows(self, rows):
        rows = np.atleast_1d(np.asarray(rows))
        ri, rj = np.divmod(rows, self.N2)
        ci, cj = np.divmod(np.arange(self.N1 * self.N2), self.N2)
        dx = _wrap(ci[None, :] - ri[:, None], self.N1) * self.h1
        dy = _wrap(cj[None, :] - rj[:, None], self.N2) * self.h2
        return np.hypot(dx, dy)

    def _offset_distances(self):
        dx = _wrap(np.arange(self.N1), self.N1) * self.h1
        dy = _wrap(np.arange(self.N2), self.N2) * self.h2
        return np.hypot(dx[:, None], dy[None, :])

    def sample_vertices(self, k):
        k = int(k)
        a = max(d for d in range(1, int(math.isqrt(k)) + 1) if k % d == 0)
        b = k // a
        if self.L1 < self.L2:
            a, b = b, a
        ii = (np.arange(a) * self.N1) // a
        jj = (np.arange(b) * self.N2) // b
        return np.array([self.grid_index(i, j) for i in ii for j in jj])


def _cotan_stiffness_and_mass(V, F):
    """Cotangent stiffness, barycentric lumped mass and interior angles per face corner."""
    nv = len(V)
    angles = np.empty(F.shape)
    rows, cols, vals = [], [], []
    for c in range(3):
        i, j, k = F[:, c], F[:, (c + 1) % 3], F[:, (c + 2) % 3]
        e1 = V[j] - V[i]
        e2 = V[k] - V[i]
        cosang = np.einsum("ij,ij->i", e1, e2)
        sinang = np.linalg.norm(np.cross(e1, e2), axis=1)
        angles[:, c] = np.arctan2(sinang, cosang)
        cot = cosang / sinang
        # the angle at vertex i weights the opposite edge (j, k)
        w = 0.5 * cot
        rows += [j, k, j, k]
        cols += [k, j, j, k]
        vals += [-w, -w, w, w]
    K = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nv, nv)
    )
    area = 0.5 * np.linalg.norm(np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]]), axis=1)
    mass = np.bincount(F.ravel(), weights=np.repeat(area / 3.0, 3), minlength=nv)
    return K, mass, angles


def icosphere(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere: icosahedron with vertices at both poles, subdivided ``level`` times.

    Vertex 0 is the north pole ``(0, 0, 1)``, vertex 1 the south pole.
    """
    z = 1.0 / math.sqrt(5.0)
    rho = 2.0 / math.sqrt(5.0)
    verts = [(0.0, 0.0, 1.0), (0.0, 0.0, -1.0)]
    for k in range(5):
        a = 2 * math.pi * k / 5
        verts.append((rho * math.cos(a), rho * math.sin(a), z))
    for k in range(5):
        a = 2 * math.pi * (k + 0.5) / 5
        verts.append((rho * math.cos(a), rho * math.sin(a), -z))
    faces = []
    for k in range(5):
        u0, u1 = 2 + k, 2 + (k + 1) % 5
        l0, l1 = 7 + k, 7 + (k + 1) % 5
        faces += [(0, u0, u1), (u0, l0, u1), (u1, l0, l1), (1, l1, l0)]
    V = np.array(verts)
    F = np.array(faces)
    for _ in range(level):
        cache = {}
        V_list = list(V)

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = V_list[a] + V_list[b]
                V_list.append(m / np.linalg.norm(m))
                cache[key] = len(V_list) - 1
            return cache[key]

        newF = []
        for a, b, c in F:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            newF += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        V = np.array(V_list)
        F = np.array(newF)
    return V, F


class SphereManifold(DiscreteManifold):
    kind = "sphere"

    def __init__(self, level, *, r0_factor=0.9, cat=2):
        V, F = icosphere(level)
        K, mass, _ = _cotan_stiffness_and_mass(V, F)
        super().__init__(
            2, mass, K, np.full(len(V), 2.0), r0_factor * math.pi / 2.0, cat=cat,
            coords=V, params={"subdivisions": int(level), "r0_factor": float(r0_factor)},
        )
        self.faces = F
        self._spacing = float(np.mean(np.linalg.norm(V[F[:, 0]] - V[F[:, 1]], axis=1)))

    @property
    def spacing(self):
        return self._spacing

    @property
    def diameter(self):
        return math.pi

    def distance_rows(self, rows):
        rows = np.atleast_1d(np.asarray(rows))
        X = self.coords
        chord = np.linalg.norm(X[rows][:, None, :] - X[None, :, :], axis=2)
        return 2.0 * np.arcsin(np.minimum(0.5 * chord, 1.0))


class MeshManifold(DiscreteManifold):
    """Closed oriented triangle mesh; distances by shortest paths, cached per source."""

    kind = "mesh"

    def __init__(self, V, F, r0, *, cat=None, path=None):
        V = np.asarray(V, dtype=float)
        F = np.asarray(F, dtype=np.int64)
        _check_closed(F, len(V))
        K, mass, angles = _cotan_stiffness_and_mass(V, F)
        angle_sum = np.bincount(F.ravel(), weights=angles.ravel(), minlength=len(V))
        self.angle_defect = 2.0 * math.pi - angle_sum
        gauss = self.angle_defect / mass
        super().__init__(
            2, mass, K, 2.0 * gauss, r0, cat=cat, coords=V,
            params={"path": str(path) if path else None},
        )
        self.faces = F
        self.euler_characteristic = len(V) - _edge_count(F) + len(F)
        self._graph = _distance_graph(V, F)
        el = np.linalg.norm(V[F[:, 0]] - V[F[:, 1]], axis=1)
        self._spacing = float(el.mean())
        self._rows: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def spacing(self):
        return self._spacing

    @property
    def diameter(self):
        return float(self.distances_from(int(np.argmax(self.distances_from(0)))).max())

    def distance_rows(self, rows):
        rows = [int(r) for r in np.atleast_1d(rows)]
        with self._lock:
            missing = sorted({r for r in rows if r not in self._rows})
        if missing:
            D = csgraph.dijkstra(self._graph, directed=False, indices=missing)
            with self._lock:
                for r, d in zip(missing, D):
                    d.setflags(write=False)
                    self._rows.setdefault(r, d)
        with self._lock:
            return np.stack([self._rows[r] for r in rows])


def _edge_count(F):
    e = np.sort(np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]]), axis=1)
    return len(np.unique(e, axis=0))


def _check_closed(F, nv):
    directed = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
    und = np.sort(directed, axis=1)
    _, counts = np.unique(und, axis=0, return_counts=True)
    if np.any(counts == 1):
        raise NotClosed(f"{int(np.sum(counts == 1))} boundary edges found")
    if np.any(counts > 2):
        raise BadFormat("non-manifold edge shared by more than two faces")
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    if np.any(dcounts > 1):
        raise BadFormat("faces are not consistently oriented")
    if F.min() < 0 or F.max() >= nv:
        raise BadFormat("face index out of range")


def _distance_graph(V, F):
    """Edge graph plus the unfolded diagonal across each interior edge.

    For an edge ``(a, b)`` with opposite corners ``c`` and ``d`` the two
    triangles are unfolded into the plane; when the segment ``cd`` crosses
    ``ab`` its planar length is an intrinsic path and is added as an edge.
    """
    nv = len(V)
    rows, cols, w = [], [], []
    corner = {}
    for a, b, c in F:
        for x, y, z in ((a, b, c), (b, c, a), (c, a, b)):
            corner[(x, y)] = z
    for (a, b), c in corner.items():
        lab = np.linalg.norm(V[b] - V[a])
        rows.append(a)
        cols.append(b)
        w.append(lab)
        if a > b:
            continue
        d = corner.get((b, a))
        if d is None:
            continue
        # planar unfolding: a at origin, b on the x axis, c above, d below
        ac, bc = np.linalg.norm(V[c] - V[a]), np.linalg.norm(V[c] - V[b])
        ad, bd = np.linalg.norm(V[d] - V[a]), np.linalg.norm(V[d] - V[b])
        cx = (ac**2 - bc**2 + lab**2) / (2 * lab)
        cy = math.sqrt(max(ac**2 - cx**2, 0.0))
        dx = (ad**2 - bd**2 + lab**2) / (2 * lab)
        dy = -math.sqrt(max(ad**2 - dx**2, 0.0))
        t = cy / (cy - dy)
        cross = cx + t * (dx - cx)
        if 0.0 < cross < lab:
            rows.append(c)
            cols.append(d)
            w.append(math.hypot(cx - dx, cy - dy))
    return _sym_min(rows, cols, w, nv)


def _sym_min(rows, cols, w, nv):
    # symmetric sparse graph keeping the shortest of duplicate entries
    r = np.concatenate([rows, cols])
    c = np.concatenate([cols, rows])
    ww = np.concatenate([w, w])
    order = np.lexsort((ww, c, r))
    r, c, ww = r[order], c[order], ww[order]
    keep = np.ones(len(r), bool)
    keep[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
    return sparse.csr_matrix((ww[keep], (r[keep], c[keep])), shape=(nv, nv))


def build_circle(L: float, N: int, cat: int = 2) -> CircleManifold:
    if not (L > 0 and N >= 16):
        raise BadSize(f"circle needs L > 0 and N >= 16, got L={L}, N={N}")
    return CircleManifold(L, N, cat=cat)


def build_flat_torus(L1: float, L2: float, N1: int, N2: int, cat: int = 3) -> TorusManifold:
    if not (L1 > 0 and L2 > 0 and N1 >= 16 and N2 >= 16):
        raise BadSize(f"torus needs positive sides and grid sizes >= 16, got {N1}x{N2}")
    return TorusManifold(L1, L2, N1, N2, cat=cat)


def build_sphere(subdivisions: int, r0_factor: float = 0.9, cat: int = 2) -> SphereManifold:
    if subdivisions < 2:
        raise BadSize(f"sphere needs subdivisions >= 2, got {subdivisions}")
    return SphereManifold(subdivisions, r0_factor=r0_factor, cat=cat)


def read_off(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse an ASCII OFF file containing only triangles."""
    try:
        with open(path) as fh:
            tokens = []
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    tokens.append(line.split())
    except UnicodeDecodeError as exc:
        raise BadFormat(f"{path}: not an ASCII OFF file") from exc
    if not tokens or not tokens[0][0].endswith("OFF"):
        raise BadFormat(f"{path}: missing OFF header")
    head = tokens[0][1:] if len(tokens[0]) > 1 else tokens[1]
    body = tokens[1:] if len(tokens[0]) > 1 else tokens[2:]
    try:
        nv, nf = int(head[0]), int(head[1])
        V = np.array([[float(t) for t in row[:3]] for row in body[:nv]])
        faces = body[nv : nv + nf]
        if any(int(row[0]) != 3 or len(row) < 4 for row in faces):
            raise BadFormat(f"{path}: only triangular faces are supported")
        F = np.array([[int(t) for t in row[1:4]] for row in faces], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise BadFormat(f"{path}: {exc}") from exc
    if V.shape != (nv, 3) or F.shape != (nf, 3):
        raise BadFormat(f"{path}: truncated file")
    return V, F


def write_off(path, V, F) -> None:
    with open(path, "w") as fh:
        fh.write(f"OFF\n{len(V)} {len(F)} 0\n")
        for v in V:
            fh.write(" ".join(repr(float(c)) for c in v) + "\n")
        for f in F:
            fh.write("3 " + " ".join(str(int(i)) for i in f) + "\n")


def load_mesh(path, r0: float, cat: int | None = None) -> MeshManifold:
    """Load a closed orientable triangle mesh; ``r0`` must be supplied by the caller."""
    if r0 is None or not r0 > 0:
        raise ValueError("loaded meshes need a positive convexity radius r0")
    V, F = read_off(path)
    return MeshManifold(V, F, r0, cat=cat, path=path)
