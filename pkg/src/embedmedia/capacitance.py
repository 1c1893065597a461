"""Electrostatic capacitance of closed triangulated surfaces.

The capacitance is approximated by the variational estimate

    C = 4 pi |S|^2 / J,    J = int_S int_S ds dt / |s - t|,

which is exact for a sphere (uniform charge is the equilibrium density),
giving C = 4 pi a.  J is accumulated over triangle pairs: nearby pairs use
the closed-form potential of a uniformly charged triangle for the inner
integral and a collapsed Gauss rule for the outer one; distant pairs use
symmetric point rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MeshError

# 7-point degree-5 rule on the reference triangle, barycentric coordinates.
_A = (6.0 - math.sqrt(15.0)) / 21.0
_B = (6.0 + math.sqrt(15.0)) / 21.0
_WA = (155.0 - math.sqrt(15.0)) / 1200.0
_WB = (155.0 + math.sqrt(15.0)) / 1200.0
RULE7_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_A, _A, 1 - 2 * _A],
        [_A, 1 - 2 * _A, _A],
        [1 - 2 * _A, _A, _A],
        [_B, _B, 1 - 2 * _B],
        [_B, 1 - 2 * _B, _B],
        [1 - 2 * _B, _B, _B],
    ]
)
RULE7_W = np.array([9 / 40, _WA, _WA, _WA, _WB, _WB, _WB])

RULE3_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
RULE3_W = np.full(3, 1 / 3)

NEAR_FACTOR = 2.5
MID_FACTOR = 6.0


def collapsed_gauss_rule(order: int):
    """Product Gauss rule on the reference triangle via the Duffy collapse.

    Returns barycentric points (order**2, 3) and weights summing to 1.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    x = (x + 1) / 2
    w = w / 2
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    s = u.ravel()
    t = (v * (1 - u)).ravel()
    weights = 2.0 * (wu * wv * (1 - u)).ravel()
    bary = np.column_stack([1 - s - t, s, t])
    return bary, weights


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        t = np.asarray(self.triangles, dtype=int)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must be an (n, 3) array")
        if t.ndim != 2 or t.shape[1] != 3 or len(t) == 0:
            raise MeshError("triangles must be a non-empty (m, 3) index array")
        if t.min() < 0 or t.max() >= len(v):
            raise MeshError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def corners(self) -> np.ndarray:
        """(m, 3, 3): triangle -> corner -> xyz."""
        return self.vertices[self.triangles]

    @property
    def areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    @property
    def area(self) -> float:
        return math.fsum(self.areas)

    def edges(self) -> np.ndarray:
        e = np.sort(np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                                    self.triangles[:, [2, 0]]]), axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self) -> int:
        used = np.unique(self.triangles)
        return len(used) - len(self.edges()) + len(self.triangles)

    def is_closed(self) -> bool:
        e = np.sort(np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                                    self.triangles[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def validate(self, area_tol=1e-14) -> None:
        areas = self.areas
        scale = max(np.ptp(self.vertices, axis=0).max(), 1e-300) ** 2
        bad = np.flatnonzero(areas <= area_tol * scale)
        if len(bad):
            raise MeshError(f"degenerate (zero-area) triangles: {bad[:10].tolist()}")
        if not self.is_closed():
            raise MeshError("mesh is not closed: some edge is not shared by exactly two triangles")

    def scaled(self, factor: float) -> "SurfaceMesh":
        return SurfaceMesh(self.vertices * factor, self.triangles)


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> SurfaceMesh:
    """Subdivided icosahedron with 20 * 4**subdivisions triangles."""
    phi = (1 + math.sqrt(5)) / 2
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.asarray(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return SurfaceMesh(np.array(verts) * radius, np.array(faces))


def read_off(path) -> SurfaceMesh:
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or tokens[0].upper() != "OFF":
        raise MeshError(f"{path}: missing OFF header")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4
        verts = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
        pos += 3 * nv
        tris = []
        for _ in range(nf):
            cnt = int(tokens[pos])
            idx = [int(t) for t in tokens[pos + 1:pos + 1 + cnt]]
            pos += 1 + cnt
            tris.extend((idx[0], idx[i], idx[i + 1]) for i in range(1, cnt - 1))
    except (IndexError, ValueError) as exc:
        raise MeshError(f"{path}: malformed OFF file ({exc})") from exc
    return SurfaceMesh(verts, np.array(tris))


def read_stl_ascii(path, merge_tol=1e-9) -> SurfaceMesh:
    pts = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if parts and parts[0] == "vertex":
            pts.append([float(x) for x in parts[1:4]])
    if not pts or len(pts) % 3:
        raise MeshError(f"{path}: not an ASCII STL with whole facets")
    pts = np.array(pts)
    keys = np.round(pts / merge_tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    return SurfaceMesh(pts[first], inverse.reshape(-1, 3))


def read_mesh(path) -> SurfaceMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".off":
        return read_off(path)
    if suffix == ".stl":
        return read_stl_ascii(path)
    raise MeshError(f"unsupported mesh format {suffix!r} (expected .off or ASCII .stl)")


def triangle_potential(points, corners) -> np.ndarray:
    """int_T dS' / |r - r'| for a uniformly charged flat triangle (closed form).

    ``points`` (..., 3) and ``corners`` (..., 3, 3) broadcast together.
    """
    r = np.asarray(points, dtype=float)
    v = np.asarray(corners, dtype=float)
    v0, v1, v2 = v[..., 0, :], v[..., 1, :], v[..., 2, :]
    nrm = np.cross(v1 - v0, v2 - v0)
    nrm = nrm / np.linalg.norm(nrm, axis=-1, keepdims=True)
    d = np.einsum("...i,...i->...", r - v0, nrm)
    ad = np.abs(d)
    total = np.zeros(np.broadcast_shapes(r.shape[:-1], v.shape[:-2]))
    for a, b in ((v0, v1), (v1, v2), (v2, v0)):
        edge = b - a
        ell = edge / np.linalg.norm(edge, axis=-1, keepdims=True)
        m = np.cross(ell, nrm)
        p0 = np.einsum("...i,...i->...", a - r, m)
        lp = np.einsum("...i,...i->...", b - r, ell)
        lm = np.einsum("...i,...i->...", a - r, ell)
        rp = np.linalg.norm(r - b, axis=-1)
        rm = np.linalg.norm(r - a, axis=-1)
        r0sq = p0**2 + d**2
        # pick the branch of the log ratio that avoids cancellation
        fwd = lp + lm >= 0
        with np.errstate(divide="ignore", invalid="ignore"):
            log_fwd = np.log((rp + lp) / (rm + lm))
            log_bwd = np.log((rm - lm) / (rp - lp))
        log_term = np.where(fwd, log_fwd, log_bwd)
        log_term = np.where(np.abs(p0) > 0, log_term, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            at = np.arctan(p0 * lp / (r0sq + ad * rp)) - np.arctan(p0 * lm / (r0sq + ad * rm))
        at = np.where(r0sq > 0, at, 0.0)
        total = total + np.nan_to_num(p0 * log_term) - ad * at
    return total


def _rule_points(corners, bary):
    return np.einsum("qc,tcx->tqx", bary, corners)


def double_surface_integral(mesh: SurfaceMesh, near_order: int = 8, chunk: int = 256) -> float:
    """J = int_S int_S ds dt / |s - t| over all ordered triangle pairs."""
    corners = mesh.corners
    areas = mesh.areas
    n = len(corners)
    cent = corners.mean(axis=1)
    diam = np.max(np.linalg.norm(corners - corners[:, [1, 2, 0]], axis=2), axis=1)
    hmax = float(diam.max())

    near_bary, near_w = collapsed_gauss_rule(near_order)
    p3 = _rule_points(corners, RULE3_BARY)
    p7 = _rule_points(corners, RULE7_BARY)
    pn = _rule_points(corners, near_bary)
    w3 = RULE3_W[None, :] * areas[:, None]
    w7 = RULE7_W[None, :] * areas[:, None]

    partials = []
    for i0 in range(0, n, chunk):
        i1 = min(n, i0 + chunk)
        dist = np.linalg.norm(cent[i0:i1, None, :] - cent[None, :, :], axis=2)
        near = dist < NEAR_FACTOR * hmax
        mid = (~near) & (dist < MID_FACTOR * hmax)
        far = ~(near | mid)

        ii, jj = np.nonzero(far)
        if len(ii):
            for s in range(0, len(ii), 200000):
                a, b = ii[s:s + 200000] + i0, jj[s:s + 200000]
                r = np.linalg.norm(p3[a][:, :, None, :] - p3[b][:, None, :, :], axis=3)
                partials.append(np.einsum("pi,pj,pij->", w3[a], w3[b], 1.0 / r))

        ii, jj = np.nonzero(mid)
        if len(ii):
            for s in range(0, len(ii), 40000):
                a, b = ii[s:s + 40000] + i0, jj[s:s + 40000]
                r = np.linalg.norm(p7[a][:, :, None, :] - p7[b][:, None, :, :], axis=3)
                partials.append(np.einsum("pi,pj,pij->", w7[a], w7[b], 1.0 / r))

        ii, jj = np.nonzero(near)
        if len(ii):
            for s in range(0, len(ii), 20000):
                a, b = ii[s:s + 20000] + i0, jj[s:s + 20000]
                pot = triangle_potential(pn[a], corners[b][:, None, :, :])
                partials.append(float(np.einsum("q,pq,p->", near_w, pot, areas[a])))
    return math.fsum(float(x) for x in partials)


def capacitance_mesh(mesh: SurfaceMesh, near_order: int = 8) -> float:
    """Capacitance 4 pi |S|^2 / J of a closed triangulated conductor."""
    mesh.validate()
    area = mesh.area
    return 4.0 * math.pi * area**2 / double_surface_integral(mesh, near_order=near_order)
