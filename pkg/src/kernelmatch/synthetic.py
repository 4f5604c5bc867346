"""Synthetic test shapes with known ground-truth correspondences."""

import numpy as np

from .assignment import UNMATCHED
from .mesh import TriMesh

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0

_ICOSAHEDRON_VERTICES = np.array(
    [
        (-1, GOLDEN, 0), (1, GOLDEN, 0), (-1, -GOLDEN, 0), (1, -GOLDEN, 0),
        (0, -1, GOLDEN), (0, 1, GOLDEN), (0, -1, -GOLDEN), (0, 1, -GOLDEN),
        (GOLDEN, 0, -1), (GOLDEN, 0, 1), (-GOLDEN, 0, -1), (-GOLDEN, 0, 1),
    ],
    dtype=np.float64,
)

_ICOSAHEDRON_FACES = np.array(
    [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ],
    dtype=np.int64,
)


def icosphere_by_subdivision(level, radius=1.0):
    """Icosahedron subdivided `level` times, projected to a sphere.

    Vertex count is 10 * 4**level + 2.
    """
    v = _ICOSAHEDRON_VERTICES / np.linalg.norm(_ICOSAHEDRON_VERTICES[0])
    f = _ICOSAHEDRON_FACES.copy()
    for _ in range(level):
        v, f = _subdivide(v, f)
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return TriMesh(v * radius, f)


def icosphere(n_vertices, radius=1.0):
    """Icosphere with exactly n_vertices (must be 10 * 4**level + 2)."""
    level, count = 0, 12
    while count < n_vertices:
        level += 1
        count = 10 * 4**level + 2
    if count != n_vertices:
        raise ValueError(
            f"icosphere vertex count must be 10*4^s+2 (12, 42, 162, 642, ...), "
            f"got {n_vertices}"
        )
    return icosphere_by_subdivision(level, radius=radius)


def _subdivide(v, f):
    verts = list(v)
    midpoint = {}

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in midpoint:
            midpoint[key] = len(verts)
            verts.append(0.5 * (verts[a] + verts[b]))
        return midpoint[key]

    faces = []
    for a, b, c in f:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
    return np.array(verts), np.array(faces, dtype=np.int64)


def cycle_band(n, radius=1.0, bump_amplitude=0.15, bumps=5, width=0.2):
    """Closed bumpy ribbon around a circle with 2n vertices.

    Vertices 0..n-1 are the canonical cycle nodes (z = 0); vertices
    n..2n-1 form a parallel ring at z = width. The radial bumps break
    rotational symmetry so the identity is the unique self-isometry.
    """
    if n < 3:
        raise ValueError("cycle needs at least 3 nodes")
    theta = 2.0 * np.pi * np.arange(n) / n
    r = radius * (1.0 + bump_amplitude * np.cos(bumps * theta))
    ring = np.stack([r * np.cos(theta), r * np.sin(theta), np.zeros(n)], axis=1)
    upper = ring.copy()
    upper[:, 2] = width
    v = np.vstack([ring, upper])
    tris = []
    for i in range(n):
        j = (i + 1) % n
        tris.append((i, j, n + i))
        tris.append((j, n + j, n + i))
    return TriMesh(v, np.array(tris, dtype=np.int64))


def hemisphere_pair(n_sphere):
    """A sphere and its upper half, with the ground-truth partial map.

    Returns
    -------
    (sphere, hemisphere, gt) : gt[i] is the hemisphere index of sphere
        vertex i, or UNMATCHED for vertices on the removed half.
    """
    sphere = icosphere(n_sphere)
    keep_tri = (sphere.vertices[sphere.triangles, 2] >= -1e-9).all(axis=1)
    tris = sphere.triangles[keep_tri]
    used = np.unique(tris)
    remap = np.full(sphere.n_vertices, UNMATCHED, dtype=np.int64)
    remap[used] = np.arange(used.size)
    hemi = TriMesh(sphere.vertices[used], remap[tris])
    return sphere, hemi, remap


def permute_mesh(mesh, permutation):
    """Relabel vertices: new index of old vertex i is permutation[i].

    Returns (permuted_mesh, gt) where gt maps original (source) indices
    to permuted (target) indices.
    """
    perm = np.asarray(permutation, dtype=np.int64)
    n = mesh.n_vertices
    if perm.size != n or np.unique(perm).size != n:
        raise ValueError("permutation must be a bijection on vertex indices")
    v = np.empty_like(mesh.vertices)
    v[perm] = mesh.vertices
    return TriMesh(v, perm[mesh.triangles]), perm.copy()


def random_permutation(n, seed):
    return np.random.default_rng(seed).permutation(n).astype(np.int64)


def corrupt_map(target_of, rho, seed):
    """Shuffle a fraction rho of the map's entries among themselves.

    The result stays injective; rho = 0 returns an identical copy.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must be in [0, 1]")
    t = np.asarray(target_of, dtype=np.int64).copy()
    rng = np.random.default_rng(seed)
    n_bad = int(round(rho * t.size))
    if n_bad >= 2:
        chosen = rng.choice(t.size, size=n_bad, replace=False)
        t[chosen] = t[chosen[rng.permutation(n_bad)]]
    return t


def swap_map(n, i, j):
    """Identity map with entries i and j exchanged."""
    t = np.arange(n, dtype=np.int64)
    t[i], t[j] = j, i
    return t
