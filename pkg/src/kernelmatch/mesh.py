"""Triangle meshes: loading, validation, sampling and graph geodesics."""

import warnings

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, dijkstra


class MeshError(ValueError):
    """Raised when a mesh file fails to parse or validate."""


class TriMesh:
    """An immutable triangle mesh with lumped vertex areas.

    Parameters
    ----------
    vertices : (n, 3) array_like
        Vertex positions in model units.
    triangles : (m, 3) array_like
        Vertex-index triples (0-based).

    Raises
    ------
    MeshError
        On out-of-range indices, triangles with repeated indices,
        non-positive vertex areas, or a disconnected edge graph.

    Notes
    -----
    Non-manifold edges (shared by more than two triangles) are tolerated
    with a warning; disconnected meshes are rejected because geodesic
    queries require a connected edge graph.
    """

    def __init__(self, vertices, triangles):
        v = np.ascontiguousarray(vertices, dtype=np.float64)
        t = np.ascontiguousarray(triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (n, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must be (m, 3), got {t.shape}")
        n = v.shape[0]
        if t.size:
            if t.min() < 0 or t.max() >= n:
                bad = int(np.argmax((t < 0) | (t >= n)).item() // 3)
                raise MeshError(
                    f"triangle {bad}: vertex index out of range [0, {n})"
                )
            repeated = (
                (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
            )
            if repeated.any():
                bad = int(np.argmax(repeated))
                raise MeshError(f"triangle {bad}: repeated vertex index (degenerate)")

        self.vertices = v
        self.triangles = t
        self.triangle_areas = _triangle_areas(v, t)
        self.vertex_areas = _lumped_vertex_areas(n, t, self.triangle_areas)
        if (self.vertex_areas <= 0.0).any():
            bad = int(np.argmax(self.vertex_areas <= 0.0))
            raise MeshError(f"vertex {bad}: non-positive lumped area")

        self.edge_graph = _edge_graph(v, t)
        n_comp, _ = connected_components(self.edge_graph, directed=False)
        if n_comp != 1:
            raise MeshError(f"edge graph has {n_comp} connected components")

        edge_count = _edge_multiplicity(n, t)
        n_nonmanifold = int((edge_count.data > 2).sum())
        if n_nonmanifold:
            warnings.warn(
                f"mesh has {n_nonmanifold} non-manifold edge slots (kept as-is)",
                stacklevel=2,
            )

        for arr in (self.vertices, self.triangles, self.triangle_areas, self.vertex_areas):
            arr.flags.writeable = False

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def total_area(self):
        return float(self.triangle_areas.sum())

    def normalized(self):
        """Return a copy rescaled to unit total surface area."""
        scale = 1.0 / np.sqrt(self.total_area)
        return TriMesh(self.vertices * scale, self.triangles)


def _triangle_areas(v, t):
    e1 = v[t[:, 1]] - v[t[:, 0]]
    e2 = v[t[:, 2]] - v[t[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def _lumped_vertex_areas(n, t, tri_areas):
    # one third of each incident triangle's area
    areas = np.zeros(n)
    for c in range(3):
        np.add.at(areas, t[:, c], tri_areas / 3.0)
    return areas


def _edge_multiplicity(n, t):
    i = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
    j = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    return sparse.coo_matrix((np.ones(lo.size), (lo, hi)), shape=(n, n)).tocsr()


def _edge_graph(v, t):
    """Symmetric sparse graph with Euclidean edge lengths as weights."""
    n = v.shape[0]
    i = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
    j = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    edges = np.unique(np.stack([lo, hi], axis=1), axis=0)
    w = np.linalg.norm(v[edges[:, 0]] - v[edges[:, 1]], axis=1)
    g = sparse.coo_matrix(
        (np.concatenate([w, w]),
         (np.concatenate([edges[:, 0], edges[:, 1]]),
          np.concatenate([edges[:, 1], edges[:, 0]]))),
        shape=(n, n),
    )
    return g.tocsr()


class SampleSet:
    """Ordered farthest-point samples on a mesh.

    The index order is the greedy selection order, so the first m entries
    of a (m+1)-sample set equal the m-sample set for the same seed.
    """

    def __init__(self, mesh, indices):
        idx = np.asarray(indices, dtype=np.int64)
        if len(np.unique(idx)) != idx.size:
            raise ValueError("sample indices must be distinct")
        self.mesh = mesh
        self.indices = idx
        self.indices.flags.writeable = False

    def __len__(self):
        return self.indices.size


def euclidean_fps(mesh, count, seed_vertex=0):
    """Greedy max-min (farthest point) sampling under Euclidean distance.

    Parameters
    ----------
    mesh : TriMesh
    count : int
        Number of samples, 1 <= count <= n_vertices.
    seed_vertex : int
        Index of the first sample.

    Returns
    -------
    SampleSet
    """
    n = mesh.n_vertices
    if not 1 <= count <= n:
        raise ValueError(f"count must be in [1, {n}], got {count}")
    if not 0 <= seed_vertex < n:
        raise ValueError(f"seed_vertex out of range: {seed_vertex}")
    idx = _fps_indices(mesh.vertices, np.array([seed_vertex], dtype=np.int64), count - 1)
    return SampleSet(mesh, idx)


def euclidean_fps_extend(mesh, existing, count):
    """Continue farthest-point sampling from an existing sample set.

    Returns the `count` new indices only (greedy order), excluding
    `existing`. Deterministic: ties resolve to the lowest vertex index.
    """
    existing = np.asarray(existing, dtype=np.int64)
    n = mesh.n_vertices
    count = min(count, n - existing.size)
    if count <= 0:
        return np.empty(0, dtype=np.int64)
    full = _fps_indices(mesh.vertices, existing, count)
    return full[existing.size:]


def _fps_indices(points, seeds, extra):
    n = points.shape[0]
    chosen = list(seeds)
    d = np.full(n, np.inf)
    for s in seeds:
        d = np.minimum(d, np.linalg.norm(points - points[s], axis=1))
    for _ in range(extra):
        nxt = int(np.argmax(d))  # ties: lowest index wins
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(points - points[nxt], axis=1))
    return np.array(chosen, dtype=np.int64)


def graph_geodesics(mesh, sources):
    """Dijkstra distances on the edge graph with Euclidean edge lengths.

    Parameters
    ----------
    mesh : TriMesh
    sources : int or array of int

    Returns
    -------
    (n,) array for a scalar source, else (len(sources), n).
    """
    scalar = np.isscalar(sources)
    idx = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    d = dijkstra(mesh.edge_graph, directed=False, indices=idx)
    return d[0] if scalar else d


def geodesic_diameter(mesh, sample_count=None):
    """Maximum graph-geodesic distance from an FPS source subset.

    Exact when sample_count equals the vertex count; otherwise a lower
    bound that is monotone non-decreasing in sample_count.
    """
    n = mesh.n_vertices
    if sample_count is None:
        sample_count = min(n, 512)
    if not 1 <= sample_count <= n:
        raise ValueError(f"sample_count must be in [1, {n}]")
    sources = euclidean_fps(mesh, sample_count).indices
    d = graph_geodesics(mesh, sources)
    return float(d.max())


def load_mesh(path, format=None):
    """Load an ASCII OFF or ASCII PLY triangle mesh.

    Parameters
    ----------
    path : str or Path
    format : {'off', 'ply-ascii', None}
        None infers from the file extension.

    Returns
    -------
    TriMesh
    """
    path = str(path)
    if format is None:
        format = "ply-ascii" if path.lower().endswith(".ply") else "off"
    with open(path, "r") as fh:
        text = fh.read()
    if format == "off":
        v, t = _parse_off(text)
    elif format == "ply-ascii":
        v, t = _parse_ply_ascii(text)
    else:
        raise MeshError(f"unknown format {format!r}")
    try:
        return TriMesh(v, t)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from exc


def _data_lines(text):
    """Yield (line_number, stripped_line) skipping blanks and # comments."""
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield ln, line


def _parse_off(text):
    lines = _data_lines(text)
    try:
        ln, header = next(lines)
    except StopIteration:
        raise MeshError("empty OFF file") from None
    tokens = header.split()
    if tokens[0] != "OFF":
        raise MeshError(f"line {ln}: expected OFF header, got {tokens[0]!r}")
    if len(tokens) > 1:
        counts = tokens[1:]
    else:
        try:
            ln, counts_line = next(lines)
        except StopIteration:
            raise MeshError("OFF file missing counts line") from None
        counts = counts_line.split()
    if len(counts) < 2:
        raise MeshError(f"line {ln}: counts line needs nV nF")
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except ValueError:
        raise MeshError(f"line {ln}: malformed counts {counts!r}") from None

    verts = np.empty((nv, 3))
    for k in range(nv):
        try:
            ln, line = next(lines)
        except StopIteration:
            raise MeshError(f"unexpected end of file: expected {nv} vertices, got {k}") from None
        parts = line.split()
        if len(parts) < 3:
            raise MeshError(f"line {ln}: vertex needs 3 coordinates")
        try:
            verts[k] = [float(parts[0]), float(parts[1]), float(parts[2])]
        except ValueError:
            raise MeshError(f"line {ln}: malformed vertex {line!r}") from None

    tris = np.empty((nf, 3), dtype=np.int64)
    for k in range(nf):
        try:
            ln, line = next(lines)
        except StopIteration:
            raise MeshError(f"unexpected end of file: expected {nf} faces, got {k}") from None
        parts = line.split()
        try:
            arity = int(parts[0])
        except (ValueError, IndexError):
            raise MeshError(f"line {ln}: malformed face {line!r}") from None
        if arity != 3 or len(parts) < 4:
            raise MeshError(f"line {ln}: only triangle faces supported, got arity {arity}")
        try:
            tris[k] = [int(parts[1]), int(parts[2]), int(parts[3])]
        except ValueError:
            raise MeshError(f"line {ln}: malformed face indices {line!r}") from None
        if tris[k].min() < 0 or tris[k].max() >= nv:
            raise MeshError(f"line {ln}: face index out of range [0, {nv})")
    return verts, tris


def _parse_ply_ascii(text):
    lines = list(_data_lines(text))
    pos = 0
    if pos >= len(lines) or lines[pos][1] != "ply":
        raise MeshError("not a PLY file (missing 'ply' magic)")
    pos += 1

    elements = []  # (name, count, properties)
    fmt_seen = False
    while pos < len(lines):
        ln, line = lines[pos]
        pos += 1
        parts = line.split()
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise MeshError(f"line {ln}: only ascii PLY supported, got {parts[1]}")
            fmt_seen = True
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshError(f"line {ln}: property before any element")
            elements[-1][2].append(parts[-1])
        elif parts[0] == "end_header":
            break
        elif parts[0] == "comment":
            continue
        else:
            raise MeshError(f"line {ln}: unexpected header line {line!r}")
    else:
        raise MeshError("PLY header missing end_header")
    if not fmt_seen:
        raise MeshError("PLY header missing format line")

    verts = tris = None
    for name, count, props in elements:
        if name == "vertex":
            try:
                ix, iy, iz = props.index("x"), props.index("y"), props.index("z")
            except ValueError:
                raise MeshError("PLY vertex element lacks x/y/z properties") from None
            verts = np.empty((count, 3))
            for k in range(count):
                if pos >= len(lines):
                    raise MeshError(f"unexpected end of file in vertex element ({k}/{count})")
                ln, line = lines[pos]
                pos += 1
                parts = line.split()
                try:
                    verts[k] = [float(parts[ix]), float(parts[iy]), float(parts[iz])]
                except (ValueError, IndexError):
                    raise MeshError(f"line {ln}: malformed vertex {line!r}") from None
        elif name == "face":
            tris = np.empty((count, 3), dtype=np.int64)
            for k in range(count):
                if pos >= len(lines):
                    raise MeshError(f"unexpected end of file in face element ({k}/{count})")
                ln, line = lines[pos]
                pos += 1
                parts = line.split()
                if int(parts[0]) != 3:
                    raise MeshError(f"line {ln}: only triangle faces supported")
                tris[k] = [int(parts[1]), int(parts[2]), int(parts[3])]
        else:
            pos += count  # skip unknown elements
    if verts is None or tris is None:
        raise MeshError("PLY file lacks vertex or face element")
    return verts, tris


def save_off(mesh, path):
    """Write a TriMesh as ASCII OFF, deterministically formatted."""
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} 0\n")
        for x, y, z in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
