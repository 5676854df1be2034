"""Uniform periodic triangulations of the unit torus."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PeriodicMesh:
    """Uniform triangulation of [0,1)^2 with periodic vertex identification.

    Vertex ``(i, j)`` sits at ``(i/n, j/n)`` and has index ``j*n + i``.  Square
    ``(i, j)`` is split along its lower-left to upper-right diagonal into a
    lower triangle (cell ``2*(j*n+i)``) and an upper triangle (the next index).
    Cells are stored counter-clockwise; ``cell_coords`` holds the unwrapped
    corner coordinates so that cells crossing the seam keep positive area.
    """

    n: int
    level: int
    vertices: np.ndarray
    cells: np.ndarray
    cell_coords: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def num_dofs(self) -> int:
        return self.n * self.n

    @property
    def num_cells(self) -> int:
        return 2 * self.n * self.n

    def cell_areas(self) -> np.ndarray:
        p = self.cell_coords
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edges(self) -> np.ndarray:
        """Unique periodic edges as sorted vertex pairs."""
        c = self.cells
        e = np.concatenate([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)


@dataclass(frozen=True, eq=False)
class NestingMap:
    """Relation between a coarse mesh and its uniform refinement.

    ``vertex_map[i]`` is the fine DOF coincident with coarse DOF ``i``;
    ``cell_children[k]`` lists the four fine cells covering coarse cell ``k``;
    ``prolongation`` maps coarse P1 coefficients to exact fine coefficients.
    """

    coarse: PeriodicMesh
    fine: PeriodicMesh
    vertex_map: np.ndarray
    cell_children: np.ndarray
    prolongation: sp.csr_matrix

    def prolong(self, values: np.ndarray) -> np.ndarray:
        return self.prolongation @ values


def _vertex_index(i, j, n):
    return (j % n) * n + (i % n)


def build_periodic_mesh(n: int, level: int | None = None) -> PeriodicMesh:
    if int(n) != n or n < 2:
        raise MeshError(f"periodic mesh needs n >= 2 subdivisions, got {n!r}")
    n = int(n)
    if level is None:
        level = int(np.log2(n)) if (n & (n - 1)) == 0 else 0

    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    vertices = np.column_stack([ii / n, jj / n])

    a = _vertex_index(ii, jj, n)
    b = _vertex_index(ii + 1, jj, n)
    c = _vertex_index(ii + 1, jj + 1, n)
    d = _vertex_index(ii, jj + 1, n)
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = np.column_stack([a, b, c])
    cells[1::2] = np.column_stack([a, c, d])

    x0 = ii / n
    y0 = jj / n
    x1 = (ii + 1) / n
    y1 = (jj + 1) / n
    coords = np.empty((2 * n * n, 3, 2))
    coords[0::2] = np.stack(
        [np.column_stack([x0, y0]), np.column_stack([x1, y0]), np.column_stack([x1, y1])],
        axis=1,
    )
    coords[1::2] = np.stack(
        [np.column_stack([x0, y0]), np.column_stack([x1, y1]), np.column_stack([x0, y1])],
        axis=1,
    )
    for arr in (vertices, cells, coords):
        arr.setflags(write=False)
    return PeriodicMesh(n=n, level=level, vertices=vertices, cells=cells, cell_coords=coords)


def refine_uniform(mesh: PeriodicMesh) -> tuple[PeriodicMesh, NestingMap]:
    n = mesh.n
    fine = build_periodic_mesh(2 * n, level=mesh.level + 1)
    m = 2 * n

    ci, cj = np.arange(n * n) % n, np.arange(n * n) // n
    vertex_map = _vertex_index(2 * ci, 2 * cj, m)

    # Children of the coarse lower triangle of square (i, j): the lower triangles
    # of fine squares (2i,2j), (2i+1,2j), (2i+1,2j+1) and the upper triangle of
    # (2i+1,2j).  The coarse upper triangle mirrors this.
    def sq(i, j):
        return 2 * _vertex_index(i, j, m)

    lower = np.column_stack(
        [sq(2 * ci, 2 * cj), sq(2 * ci + 1, 2 * cj), sq(2 * ci + 1, 2 * cj + 1), sq(2 * ci + 1, 2 * cj) + 1]
    )
    upper = np.column_stack(
        [
            sq(2 * ci, 2 * cj) + 1,
            sq(2 * ci, 2 * cj + 1) + 1,
            sq(2 * ci + 1, 2 * cj + 1) + 1,
            sq(2 * ci, 2 * cj + 1),
        ]
    )
    children = np.empty((2 * n * n, 4), dtype=np.int64)
    children[0::2] = lower
    children[1::2] = upper

    # Fine vertex values of a coarse P1 function: copies at coarse vertices,
    # edge averages at the three kinds of edge midpoints.
    fi, fj = np.arange(m * m) % m, np.arange(m * m) // m
    rows, cols, vals = [], [], []
    for di in (0, 1):
        for dj in (0, 1):
            sel = (fi % 2 == di) & (fj % 2 == dj)
            r = np.flatnonzero(sel)
            i0 = fi[sel] // 2
            j0 = fj[sel] // 2
            if di == 0 and dj == 0:
                parents = [(i0, j0)]
            elif di == 1 and dj == 0:
                parents = [(i0, j0), (i0 + 1, j0)]
            elif di == 0 and dj == 1:
                parents = [(i0, j0), (i0, j0 + 1)]
            else:
                parents = [(i0, j0), (i0 + 1, j0 + 1)]
            for pi, pj in parents:
                rows.append(r)
                cols.append(_vertex_index(pi, pj, n))
                vals.append(np.full(r.size, 1.0 / len(parents)))
    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m * m, n * n),
    )
    nesting = NestingMap(
        coarse=mesh, fine=fine, vertex_map=vertex_map, cell_children=children, prolongation=P
    )
    return fine, nesting


def nesting_between(coarse: PeriodicMesh, fine: PeriodicMesh) -> NestingMap:
    """Compose uniform refinements from ``coarse`` up to ``fine``."""
    if fine.n % coarse.n or (fine.n // coarse.n) & (fine.n // coarse.n - 1):
        raise MeshError(f"mesh n={fine.n} is not a dyadic refinement of n={coarse.n}")
    P = sp.identity(coarse.num_dofs, format="csr")
    vmap = np.arange(coarse.num_dofs)
    children = np.arange(coarse.num_cells)[:, None]
    cur = coarse
    while cur.n < fine.n:
        nxt, nest = refine_uniform(cur)
        P = nest.prolongation @ P
        vmap = nest.vertex_map[vmap]
        children = nest.cell_children[children].reshape(coarse.num_cells, -1)
        cur = nxt
    return NestingMap(
        coarse=coarse, fine=fine, vertex_map=vmap, cell_children=children, prolongation=P.tocsr()
    )


def _rect_dissection(i0, i1, j0, j1, n, out):
    wi, wj = i1 - i0, j1 - j0
    if wi <= 0 or wj <= 0:
        return
    if wi * wj <= 16 or min(wi, wj) < 3:
        for j in range(j0, j1):
            out.extend(_vertex_index(np.arange(i0, i1), j, n).tolist())
        return
    if wi >= wj:
        c = (i0 + i1) // 2
        _rect_dissection(i0, c, j0, j1, n, out)
        _rect_dissection(c + 1, i1, j0, j1, n, out)
        out.extend(_vertex_index(c, np.arange(j0, j1), n).tolist())
    else:
        c = (j0 + j1) // 2
        _rect_dissection(i0, i1, j0, c, n, out)
        _rect_dissection(i0, i1, c + 1, j1, n, out)
        out.extend(_vertex_index(np.arange(i0, i1), c, n).tolist())


def nested_dissection_order(mesh: PeriodicMesh) -> np.ndarray:
    """Geometric nested-dissection ordering of the periodic vertices.

    Columns 0 and n/2 cut the torus into two strips, rows 0 and n/2 cut each
    strip into rectangles, which are then bisected recursively.  Every edge
    spans at most one grid step, so grid lines are valid separators.
    """
    n = mesh.n
    h = n // 2
    out: list[int] = []
    for a, b in ((1, h), (h + 1, n)):
        _rect_dissection(a, b, 1, h, n, out)
        _rect_dissection(a, b, h + 1, n, n, out)
        out.extend(_vertex_index(np.arange(a, b), 0, n).tolist())
        out.extend(_vertex_index(np.arange(a, b), h, n).tolist())
    out.extend(_vertex_index(0, np.arange(n), n).tolist())
    out.extend(_vertex_index(h, np.arange(n), n).tolist())
    order = np.array(list(dict.fromkeys(out)), dtype=np.int64)
    assert order.size == mesh.num_dofs
    return order
