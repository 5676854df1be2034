"""Legacy ASCII VTK snapshots of periodic P1 fields."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import PeriodicMesh

VTK_TRIANGLE = 5


def unwrap(mesh: PeriodicMesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Duplicate seam vertices so every cell uses its own unwrapped corners.

    Returns ``(points, cells, source)`` where ``source[i]`` is the periodic
    DOF that display point ``i`` copies.  Points cover the closed grid
    ``(n+1) x (n+1)``.
    """
    n = mesh.n
    jj, ii = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    points = np.column_stack([ii / n, jj / n, np.zeros(ii.size)])
    source = (jj % n) * n + (ii % n)
    # cell_coords are exact multiples of 1/n; map back to closed-grid indices.
    ij = np.rint(mesh.cell_coords * n).astype(np.int64)
    cells = ij[..., 1] * (n + 1) + ij[..., 0]
    return points, cells, source


def _fmt(values) -> str:
    return "\n".join(" ".join(repr(float(v)) for v in np.atleast_1d(row)) for row in values)


def write_snapshot(path: str | Path, mesh: PeriodicMesh, scalars: dict[str, np.ndarray],
                   vectors: dict[str, np.ndarray] | None = None, title: str = "chnst") -> Path:
    points, cells, source = unwrap(mesh)
    path = Path(path)
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(points)} double",
        _fmt(points),
        f"CELLS {len(cells)} {4 * len(cells)}",
        "\n".join(f"3 {a} {b} {c}" for a, b, c in cells),
        f"CELL_TYPES {len(cells)}",
        "\n".join(str(VTK_TRIANGLE) for _ in range(len(cells))),
        f"POINT_DATA {len(points)}",
    ]
    for name, vals in scalars.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _fmt(np.asarray(vals)[source])]
    for name, vals in (vectors or {}).items():
        v = np.asarray(vals)  # (2, N)
        v3 = np.column_stack([v[0][source], v[1][source], np.zeros(len(source))])
        lines += [f"VECTORS {name} double", _fmt(v3)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
