import math

import numpy as np
import pytest

from embedmedia.capacitance import (
    SurfaceMesh,
    capacitance_mesh,
    collapsed_gauss_rule,
    double_surface_integral,
    icosphere,
    read_mesh,
    triangle_potential,
)
from embedmedia.errors import MeshError


@pytest.fixture(scope="module")
def sphere2():
    return icosphere(2)


def test_icosphere_topology():
    for n in range(4):
        m = icosphere(n)
        assert len(m.triangles) == 20 * 4**n
        assert m.euler_characteristic() == 2
        assert m.is_closed()
        np.testing.assert_allclose(np.linalg.norm(m.vertices, axis=1), 1.0)


def test_collapsed_rule_integrates_polynomials():
    bary, w = collapsed_gauss_rule(6)
    assert w.sum() == pytest.approx(1.0, rel=1e-14)
    # s^2 t integrates to 1/60 over the reference triangle of area 1/2
    s, t = bary[:, 1], bary[:, 2]
    assert np.dot(w, s**2 * t) == pytest.approx(1 / 30, rel=1e-12)


def test_triangle_potential_matches_brute_force():
    corners = np.array([[0.0, 0, 0], [1, 0, 0], [0.3, 0.8, 0]])
    area = 0.5 * np.linalg.norm(np.cross(corners[1] - corners[0], corners[2] - corners[0]))
    bary, w = collapsed_gauss_rule(40)
    for x in ([0.2, 0.3, 0.5], [2.0, -1.0, 0.1], [0.4, 0.2, 0.0]):
        x = np.asarray(x)
        if x[2] == 0.0:
            # in-plane point: split at x and put x on the collapsed corner of each piece
            total = 0.0
            for i in range(3):
                sub = np.array([corners[i], x, corners[(i + 1) % 3]])
                a = 0.5 * np.linalg.norm(np.cross(sub[1] - sub[0], sub[2] - sub[0]))
                pts = bary @ sub
                total += a * np.dot(w, 1 / np.linalg.norm(pts - x, axis=1))
            ref = total
        else:
            pts = bary @ corners
            ref = area * np.dot(w, 1 / np.linalg.norm(pts - x, axis=1))
        got = float(triangle_potential(x[None], corners[None])[0])
        assert got == pytest.approx(ref, rel=1e-8)


def test_capacitance_near_4pi(sphere2):
    c = capacitance_mesh(sphere2)
    assert c == pytest.approx(4 * math.pi, rel=0.05)


def test_capacitance_scales_linearly(sphere2):
    c1 = capacitance_mesh(sphere2)
    c2 = capacitance_mesh(sphere2.scaled(2.0))
    assert c2 / c1 == pytest.approx(2.0, rel=1e-12)


def test_capacitance_converges():
    errs = [abs(capacitance_mesh(icosphere(n)) / (4 * math.pi) - 1) for n in (1, 2, 3)]
    assert errs[2] < errs[1] < errs[0]


def test_summation_is_chunk_independent(sphere2):
    a = double_surface_integral(sphere2, chunk=256)
    b = double_surface_integral(sphere2, chunk=37)
    assert a == pytest.approx(b, rel=1e-12)


def test_zero_area_triangle_rejected():
    m = icosphere(1)
    tris = m.triangles.copy()
    tris[0] = [tris[0][0], tris[0][0], tris[0][1]]
    with pytest.raises(MeshError):
        capacitance_mesh(SurfaceMesh(m.vertices, tris))


def test_open_mesh_rejected():
    m = icosphere(1)
    with pytest.raises(MeshError):
        capacitance_mesh(SurfaceMesh(m.vertices, m.triangles[1:]))


def _write_off(path, mesh):
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.triangles)} 0"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(i) for i in t) for t in mesh.triangles]
    path.write_text("\n".join(lines) + "\n")


def _write_stl(path, mesh):
    lines = ["solid s"]
    for tri in mesh.corners:
        lines += ["facet normal 0 0 0", "outer loop"]
        lines += ["vertex " + " ".join(repr(float(c)) for c in v) for v in tri]
        lines += ["endloop", "endfacet"]
    lines.append("endsolid s")
    path.write_text("\n".join(lines) + "\n")


def test_mesh_file_round_trip(tmp_path):
    mesh = icosphere(1, radius=0.5)
    _write_off(tmp_path / "s.off", mesh)
    _write_stl(tmp_path / "s.stl", mesh)
    ref = capacitance_mesh(mesh)
    for name in ("s.off", "s.stl"):
        m = read_mesh(tmp_path / name)
        assert len(m.triangles) == 80
        assert m.euler_characteristic() == 2
        assert capacitance_mesh(m) == pytest.approx(ref, rel=1e-12)


def test_unknown_mesh_format(tmp_path):
    (tmp_path / "x.obj").write_text("")
    with pytest.raises(MeshError):
        read_mesh(tmp_path / "x.obj")
