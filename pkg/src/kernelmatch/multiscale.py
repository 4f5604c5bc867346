"""Coarse-to-fine matching: seed bijection, Voronoi cells, per-cell solves.

A coarse seed correspondence is refined level by level: new farthest-point
samples join the Voronoi cell of their nearest seed (graph-geodesic), cells
are transferred to the target shape through the current map, and each cell
is matched independently as a rectangular sub-problem with globally shared
anchor pairs. Unmatched coarse seeds seed a forbidden region that absorbs
nearby samples, which propagates partiality.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import dijkstra

from . import matching
from .assignment import UNMATCHED, Assignment
from .descriptors import landmark_descriptors
from .mesh import euclidean_fps, euclidean_fps_extend

log = logging.getLogger(__name__)

FORBIDDEN_CELL = -1
UNASSIGNED_CELL = -2


@dataclass
class MultiscaleConfig:
    """Coarse-to-fine driver parameters.

    n0 seeds form the initial dense problem; each level samples
    branch-times as many new points as the previous one, and no per-cell
    problem may exceed max_problem vertices. anchor_count coarse matches
    are pinned into every cell sub-problem.
    """

    n0: int = 1500
    max_problem: int = 1500
    branch: int = 3
    anchor_count: int = 1000

    def __post_init__(self):
        if self.max_problem < 2:
            raise ValueError("max_problem must be at least 2")
        if self.branch < 2:
            raise ValueError("branch must be at least 2")
        if self.n0 < 1:
            raise ValueError("n0 must be positive")
        if self.anchor_count > self.n0:
            raise ValueError("anchor_count cannot exceed n0")


@dataclass
class CellDecomposition:
    """Per-vertex cell labels at one refinement level.

    labels hold a cell id >= 0, FORBIDDEN_CELL for the forbidden region,
    or UNASSIGNED_CELL for vertices not participating at this level.
    nearest_seed records, for newly sampled vertices, the seed that
    claimed them (global vertex id; -1 elsewhere).
    """

    labels_x: np.ndarray
    labels_y: np.ndarray
    seeds_x: np.ndarray
    seeds_y: np.ndarray
    forbidden_x: np.ndarray
    forbidden_y: np.ndarray
    nearest_seed_x: np.ndarray
    nearest_seed_y: np.ndarray
    n_cells: int = 0

    def cell_members_x(self, cell):
        return np.nonzero(self.labels_x == cell)[0]

    def cell_members_y(self, cell):
        return np.nonzero(self.labels_y == cell)[0]


def requested_cell_count(n_new, ms):
    """Number of Voronoi cells requested for a level adding n_new points."""
    return max(1, int(np.ceil(n_new / (ms.branch * ms.max_problem))))


def propagate_forbidden(decomp):
    """Mark newly labeled vertices forbidden if their nearest seed is.

    Forbidden seeds own a dedicated cell; any vertex assigned to it is
    excluded from sub-problems and spreads the flag to later levels.
    """
    forb_x = decomp.forbidden_x.copy()
    forb_y = decomp.forbidden_y.copy()
    labels_x = decomp.labels_x.copy()
    labels_y = decomp.labels_y.copy()
    for labels, forb, nearest in (
        (labels_x, forb_x, decomp.nearest_seed_x),
        (labels_y, forb_y, decomp.nearest_seed_y),
    ):
        has_seed = nearest >= 0
        inherit = np.zeros_like(forb)
        inherit[has_seed] = forb[nearest[has_seed]]
        forb |= inherit
        labels[forb & (labels != UNASSIGNED_CELL)] = FORBIDDEN_CELL
    return CellDecomposition(
        labels_x, labels_y, decomp.seeds_x, decomp.seeds_y,
        forb_x, forb_y, decomp.nearest_seed_x, decomp.nearest_seed_y,
        decomp.n_cells,
    )


def _nearest_source(mesh, sources):
    """Geodesically nearest source vertex for every mesh vertex."""
    _, _, owners = dijkstra(
        mesh.edge_graph, directed=False, indices=np.asarray(sources),
        min_only=True, return_predecessors=True,
    )
    return owners


def _fps_among(points, candidates, count):
    """Greedy max-min subset of candidate vertex ids by position."""
    candidates = np.asarray(candidates, dtype=np.int64)
    count = min(count, candidates.size)
    pos = points[candidates]
    chosen = [0]
    d = np.linalg.norm(pos - pos[0], axis=1)
    while len(chosen) < count:
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(pos - pos[nxt], axis=1))
    return candidates[np.array(chosen, dtype=np.int64)]


class MultiscaleMatcher:
    """Stateful driver wiring coarse matching and per-cell refinement."""

    def __init__(self, mesh_x, mesh_y, fx, fy, config, ms,
                 basis_x=None, basis_y=None, level_dump_dir=None):
        self.mesh_x, self.mesh_y = mesh_x, mesh_y
        self.fx, self.fy = fx, fy
        self.config = config
        self.ms = ms
        self.level_dump_dir = level_dump_dir
        if config.kernel_kind == "heat":
            self.basis_x = basis_x or matching.prepare_basis(mesh_x, config.num_eigs)
            self.basis_y = basis_y or matching.prepare_basis(mesh_y, config.num_eigs)
        else:
            self.basis_x, self.basis_y = basis_x, basis_y
        # area-proportional seed counts keep partial inputs balanced
        area_x, area_y = mesh_x.total_area, mesh_y.total_area
        big = max(area_x, area_y)
        self.n0_x = min(mesh_x.n_vertices, max(1, int(round(ms.n0 * area_x / big))))
        self.n0_y = min(mesh_y.n_vertices, max(1, int(round(ms.n0 * area_y / big))))
        if ms.n0 > min(mesh_x.n_vertices, mesh_y.n_vertices) and area_x == area_y:
            raise ValueError(
                f"n0={ms.n0} exceeds the vertex count of an input mesh"
            )

        self.sampled_x = None  # FPS order, grows per level
        self.sampled_y = None
        self.target_of = np.full(mesh_x.n_vertices, UNMATCHED, dtype=np.int64)
        self.forbidden_x = np.zeros(mesh_x.n_vertices, dtype=bool)
        self.forbidden_y = np.zeros(mesh_y.n_vertices, dtype=bool)
        self.anchor_pairs = None
        self.level = 0

    # -- stage 1: dense matching on the seed subsets ---------------------
    def coarse_match(self):
        """Solve the seed-level problem; returns the global partial map."""
        self.sampled_x = euclidean_fps(self.mesh_x, self.n0_x).indices.copy()
        self.sampled_y = euclidean_fps(self.mesh_y, self.n0_y).indices.copy()
        rows_x = np.sort(self.sampled_x)
        rows_y = np.sort(self.sampled_y)
        state = matching.run(
            self.mesh_x, self.mesh_y, self.fx, self.fy, self.config,
            basis_x=self.basis_x, basis_y=self.basis_y,
            rows_x=rows_x, rows_y=rows_y,
        )
        local = state.assignment
        self.target_of[:] = UNMATCHED
        src_local, tgt_local = local.pairs()
        self.target_of[rows_x[src_local]] = rows_y[tgt_local]

        unmatched_x = rows_x[local.target_of == UNMATCHED]
        covered = np.zeros(self.mesh_y.n_vertices, dtype=bool)
        covered[rows_y[tgt_local]] = True
        unmatched_y = rows_y[~covered[rows_y]]
        self.forbidden_x[unmatched_x] = True
        self.forbidden_y[unmatched_y] = True
        if unmatched_x.size or unmatched_y.size:
            log.info(
                "coarse match left %d/%d source and %d/%d target seeds "
                "unmatched (forbidden region)",
                unmatched_x.size, rows_x.size, unmatched_y.size, rows_y.size,
            )

        matched_x = rows_x[local.target_of != UNMATCHED]
        n_anchor = min(self.ms.anchor_count, matched_x.size)
        anchor_x = _fps_among(self.mesh_x.vertices, matched_x, n_anchor)
        self.anchor_pairs = (anchor_x, self.target_of[anchor_x])
        self.prev_new_x = self.n0_x
        self.prev_new_y = self.n0_y
        return self._global_assignment()

    def _global_assignment(self):
        return Assignment(self.target_of.copy(), self.mesh_y.n_vertices)

    # -- stage 2: one refinement level ------------------------------------
    def decompose(self, new_x, new_y):
        """Voronoi cells over current seeds, transferred through the map."""
        matched_seed_x = self.sampled_x[
            (self.target_of[self.sampled_x] != UNMATCHED)
            & ~self.forbidden_x[self.sampled_x]
        ]
        if matched_seed_x.size == 0:
            raise RuntimeError("no matched seeds to refine from")
        n_cells = requested_cell_count(max(new_x.size, new_y.size, 1), self.ms)

        while True:
            decomp = self._decompose_with(n_cells, matched_seed_x, new_x, new_y)
            decomp = propagate_forbidden(decomp)
            sizes = []
            for c in range(decomp.n_cells):
                sizes.append(max(decomp.cell_members_x(c).size,
                                 decomp.cell_members_y(c).size))
            if not sizes or max(sizes) <= self.ms.max_problem:
                return decomp
            if n_cells >= matched_seed_x.size:
                raise RuntimeError(
                    f"cannot split below max_problem={self.ms.max_problem}: "
                    f"cell of size {max(sizes)} with all {n_cells} seeds as centers"
                )
            n_cells = min(2 * n_cells, matched_seed_x.size)

    def _decompose_with(self, n_cells, matched_seed_x, new_x, new_y):
        mesh_x, mesh_y = self.mesh_x, self.mesh_y
        labels_x = np.full(mesh_x.n_vertices, UNASSIGNED_CELL, dtype=np.int64)
        labels_y = np.full(mesh_y.n_vertices, UNASSIGNED_CELL, dtype=np.int64)
        nearest_x = np.full(mesh_x.n_vertices, -1, dtype=np.int64)
        nearest_y = np.full(mesh_y.n_vertices, -1, dtype=np.int64)

        centers = _fps_among(mesh_x.vertices, matched_seed_x, n_cells)
        owner_center = _nearest_source(mesh_x, centers)
        center_cell = np.full(mesh_x.n_vertices, -1, dtype=np.int64)
        center_cell[centers] = np.arange(centers.size)
        # seeds on X take the cell of their nearest center
        labels_x[matched_seed_x] = center_cell[owner_center[matched_seed_x]]
        # transfer to Y through the current map
        matched_tgt = self.target_of[matched_seed_x]
        labels_y[matched_tgt] = labels_x[matched_seed_x]

        forb_seed_x = np.nonzero(self.forbidden_x)[0]
        forb_seed_y = np.nonzero(self.forbidden_y)[0]
        labels_x[forb_seed_x] = FORBIDDEN_CELL
        labels_y[forb_seed_y] = FORBIDDEN_CELL

        # new points join their geodesically nearest seed's cell
        if new_x.size:
            cand = np.concatenate([matched_seed_x, forb_seed_x]) if forb_seed_x.size else matched_seed_x
            owner = _nearest_source(mesh_x, cand)
            nearest_x[new_x] = owner[new_x]
            labels_x[new_x] = labels_x[owner[new_x]]
        matched_seed_y = matched_tgt
        if new_y.size:
            cand = np.concatenate([matched_seed_y, forb_seed_y]) if forb_seed_y.size else matched_seed_y
            owner = _nearest_source(mesh_y, cand)
            nearest_y[new_y] = owner[new_y]
            labels_y[new_y] = labels_y[owner[new_y]]

        return CellDecomposition(
            labels_x, labels_y,
            seeds_x=matched_seed_x, seeds_y=matched_seed_y,
            forbidden_x=self.forbidden_x.copy(), forbidden_y=self.forbidden_y.copy(),
            nearest_seed_x=nearest_x, nearest_seed_y=nearest_y,
            n_cells=int(centers.size),
        )

    def refine_level(self, decomp):
        """Solve every cell as a rectangular sub-problem; merge matches."""
        anchor_x, anchor_y = self.anchor_pairs
        schedule = matching.resolve_time_schedule(self.config, self.basis_x, self.basis_y)
        t_anchor = schedule[-1]
        if self.config.kernel_kind == "heat":
            anchor_fx = landmark_descriptors(self.basis_x, anchor_x, t_anchor).values
            anchor_fy = landmark_descriptors(self.basis_y, anchor_y, t_anchor).values
        else:
            anchor_fx = anchor_fy = None

        new_target = np.full_like(self.target_of, UNMATCHED)
        for c in range(decomp.n_cells):
            sx = decomp.cell_members_x(c)
            sy = decomp.cell_members_y(c)
            if sx.size == 0:
                continue
            if sy.size == 0:
                log.warning("cell %d has no target vertices; %d sources stay "
                            "unmatched this level", c, sx.size)
                continue
            local_init = self._restrict_assignment(sx, sy)
            state = matching.run(
                self.mesh_x, self.mesh_y, self.fx, self.fy, self.config,
                init=local_init, basis_x=self.basis_x, basis_y=self.basis_y,
                rows_x=sx, rows_y=sy,
                anchor_fx=anchor_fx, anchor_fy=anchor_fy,
            )
            src_local, tgt_local = state.assignment.pairs()
            new_target[sx[src_local]] = sy[tgt_local]

        self.target_of = new_target
        return self._global_assignment()

    def _restrict_assignment(self, sx, sy):
        pos_y = np.full(self.mesh_y.n_vertices, -1, dtype=np.int64)
        pos_y[sy] = np.arange(sy.size)
        local = np.full(sx.size, UNMATCHED, dtype=np.int64)
        tgt = self.target_of[sx]
        ok = tgt != UNMATCHED
        local[ok] = pos_y[tgt[ok]]
        local[local == -1] = UNMATCHED
        return Assignment(local, sy.size)

    # -- full driver -------------------------------------------------------
    def run(self):
        result = self.coarse_match()
        n_x, n_y = self.mesh_x.n_vertices, self.mesh_y.n_vertices
        while self.sampled_x.size < n_x or self.sampled_y.size < n_y:
            self.level += 1
            want_x = self.ms.branch * self.prev_new_x
            want_y = self.ms.branch * self.prev_new_y
            new_x = euclidean_fps_extend(self.mesh_x, self.sampled_x, want_x)
            new_y = euclidean_fps_extend(self.mesh_y, self.sampled_y, want_y)
            decomp = self.decompose(new_x, new_y)
            self.sampled_x = np.concatenate([self.sampled_x, new_x])
            self.sampled_y = np.concatenate([self.sampled_y, new_y])
            result = self.refine_level(decomp)
            self._dump_level(decomp)
            self.prev_new_x = max(new_x.size, 1)
            self.prev_new_y = max(new_y.size, 1)
        return result

    def _dump_level(self, decomp):
        if self.level_dump_dir is None:
            return
        from .io import write_level_dump

        write_level_dump(self.level_dump_dir, self.level, decomp, self.target_of)


def coarse_match(mesh_x, mesh_y, fx, fy, config, ms, **kwargs):
    """Seed-level matching only; see MultiscaleMatcher.coarse_match."""
    matcher = MultiscaleMatcher(mesh_x, mesh_y, fx, fy, config, ms, **kwargs)
    return matcher.coarse_match()


def run_multiscale(mesh_x, mesh_y, fx, fy, config, ms, **kwargs):
    """Full coarse-to-fine matching; returns the final (partial) Assignment."""
    matcher = MultiscaleMatcher(mesh_x, mesh_y, fx, fy, config, ms, **kwargs)
    return matcher.run()
