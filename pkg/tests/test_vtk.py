import numpy as np

from chnst.mesh import build_periodic_mesh
from chnst.vtk import unwrap, write_snapshot


def test_unwrap_geometry():
    n = 4
    m = build_periodic_mesh(n)
    pts, cells, src = unwrap(m)
    assert pts.shape == ((n + 1) ** 2, 3) and cells.shape == (2 * n * n, 3)
    np.testing.assert_allclose(pts[cells][..., :2], m.cell_coords, atol=1e-15)
    # Every display point copies the periodic vertex at the same wrapped position.
    np.testing.assert_allclose(m.vertices[src], np.mod(pts[:, :2], 1.0), atol=1e-15)


def _read_vtk(path):
    lines = path.read_text().splitlines()
    out, i = {}, 0
    while i < len(lines):
        head = lines[i].split()
        if head and head[0] == "POINTS":
            k = int(head[1])
            out["points"] = np.array([list(map(float, l.split())) for l in lines[i + 1:i + 1 + k]])
            i += k
        elif head and head[0] == "CELLS":
            k = int(head[1])
            out["cells"] = np.array([list(map(int, l.split())) for l in lines[i + 1:i + 1 + k]])
            i += k
        elif head and head[0] == "CELL_TYPES":
            k = int(head[1])
            out["types"] = [int(l) for l in lines[i + 1:i + 1 + k]]
            i += k
        elif head and head[0] == "SCALARS":
            k = len(out["points"])
            out[head[1]] = np.array([float(l) for l in lines[i + 2:i + 2 + k]])
            i += k + 1
        elif head and head[0] == "VECTORS":
            k = len(out["points"])
            out[head[1]] = np.array([list(map(float, l.split())) for l in lines[i + 1:i + 1 + k]])
            i += k
        i += 1
    return out


def test_snapshot_round_trip(tmp_path):
    m = build_periodic_mesh(3)
    rng = np.random.default_rng(0)
    phi = rng.standard_normal(9)
    u = rng.standard_normal((2, 9))
    path = write_snapshot(tmp_path / "s.vtk", m, {"phi": phi, "theta": phi + 1}, {"u": u})
    text = path.read_text()
    assert text.startswith("# vtk DataFile Version 3.0\n")
    assert "DATASET UNSTRUCTURED_GRID" in text
    d = _read_vtk(path)
    _, cells, src = unwrap(m)
    assert d["types"] == [5] * 18
    assert np.all(d["cells"][:, 0] == 3)
    np.testing.assert_array_equal(d["cells"][:, 1:], cells)
    np.testing.assert_array_equal(d["phi"], phi[src])
    np.testing.assert_array_equal(d["u"][:, :2], u.T[src])
    assert np.all(d["u"][:, 2] == 0.0)
    # Seam copies carry identical values.
    assert d["phi"][3] == d["phi"][0]
