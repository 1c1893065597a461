"""Volume integral equation for the limiting medium.

The total field satisfies

    U(x) + int_D g(x, y) q(y) U(y) dy = e^{ik alpha.x}

with the free-space kernel g and the full potential q = q0 + p.  It is
discretised by collocation at cell centers with midpoint weights off the
diagonal and the exact cell integral of g on the diagonal.  Unknowns are
restricted to the support of q; the field elsewhere follows explicitly.

The scattering amplitude is

    A(beta) = -(1 / 4 pi) int_D e^{-ik beta.y} q(y) U(y) dy,

or, split against a background u0 with potential q0,
A = A0 + A1 with A1 = -(1 / 4 pi) int_D u0(y, -beta) p(y) U(y) dy.
"""

from __future__ import annotations

import csv
import logging
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, gmres

from ._kernels import table_matvec
from .errors import ConfigError, ResolutionError, SolverError
from .greens import free_space_g, plane_wave
from .linalg import SolveInfo, lu_with_condition, relative_residual
from .medium import BoxDomain, ComplexGridField, MediumSpec

logger = logging.getLogger(__name__)

DIRECT_MAX = 24**3
RESIDUAL_TOL = 1e-8
GMRES_RTOL = 1e-10
_ASSEMBLY_BLOCK = 256
_EVAL_CHUNK = 512


def _inner_radial(beta: np.ndarray, terms: int = 40) -> np.ndarray:
    """int_0^1 t e^{i beta t} dt, summed as sum_n (i beta)^n / (n! (n + 2))."""
    out = np.zeros(beta.shape, dtype=complex)
    term = np.ones(beta.shape, dtype=complex)
    for n in range(terms):
        out += term / (n + 2)
        term = term * (1j * beta) / (n + 1)
    return out


@lru_cache(maxsize=64)
def _cell_self_integral(sizes: tuple, k: float, order: int) -> complex:
    x, w = np.polynomial.legendre.leggauss(order)
    total = 0j
    for axis in range(3):
        c = sizes[axis] / 2
        hu, hv = (sizes[i] / 2 for i in range(3) if i != axis)
        u, v = np.meshgrid(hu * x, hv * x, indexing="ij")
        ww = np.outer(w, w) * hu * hv
        rho = np.sqrt(c * c + u * u + v * v)
        face = np.sum(ww * c / (4 * np.pi * rho) * _inner_radial(k * rho))
        total += 2 * face  # opposite faces are congruent
    return complex(total)


def cell_self_integral(sizes, k: float, order: int = 32) -> complex:
    """int over a box cell of e^{ik|y|} / (4 pi |y|), singularity at the cell center.

    The cell is split into six pyramids with apex at the center; the radial
    integral is done by series and the face integrals by Gauss-Legendre.
    """
    sizes = tuple(float(s) for s in np.broadcast_to(np.asarray(sizes, dtype=float), (3,)))
    return _cell_self_integral(sizes, float(k), int(order))


def self_cell_weight(cell_size: float, k: float) -> complex:
    if not k * cell_size < 1:
        raise ResolutionError(
            f"grid too coarse for the wavelength: k*cell_size = {k * cell_size:.3g} >= 1"
        )
    return cell_self_integral((cell_size,) * 3, k)


@dataclass(frozen=True, eq=False)
class LSGrid:
    domain: BoxDomain
    k: float
    cell_centers: np.ndarray
    cell_volume: float
    self_cell_integral: complex

    @classmethod
    def from_domain(cls, domain: BoxDomain, k: float) -> "LSGrid":
        h = domain.cell_size
        if not k * h.max() < 1:
            raise ResolutionError(
                f"grid too coarse for the wavelength: k*cell_size = {k * h.max():.3g} >= 1"
            )
        return cls(domain, float(k), domain.cell_centers(), domain.cell_volume,
                   cell_self_integral(tuple(h), k))

    @property
    def indices(self) -> np.ndarray:
        return np.indices(self.domain.grid_shape).reshape(3, -1).T.astype(np.int64)

    def kernel_table(self) -> np.ndarray:
        """dV * g on every index offset; the zero offset holds the cell integral."""
        shape = np.asarray(self.domain.grid_shape)
        offs = [np.arange(-(n - 1), n) * h for n, h in zip(shape, self.domain.cell_size)]
        X, Y, Z = np.meshgrid(*offs, indexing="ij")
        r = np.sqrt(X * X + Y * Y + Z * Z)
        r[tuple(shape - 1)] = 1.0
        table = np.exp(1j * self.k * r) / (4 * np.pi * r) * self.cell_volume
        table[tuple(shape - 1)] = self.self_cell_integral
        return table

    def point_kernel(self, points) -> np.ndarray:
        """(npts, ncells) matrix of dV * g(x, y_j), cell-averaged when x lies in cell j."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.linalg.norm(pts[:, None, :] - self.cell_centers[None, :, :], axis=2)
        inside = self.domain.contains(pts, strict=False)
        own = self.domain.flat_index(pts)
        rows = np.flatnonzero(inside)
        r[rows, own[rows]] = 1.0
        K = np.exp(1j * self.k * r) / (4 * np.pi * r) * self.cell_volume
        K[rows, own[rows]] = self.self_cell_integral
        return K


class LSOperator:
    """The collocation operator I + W diag(q), restricted to supp q."""

    def __init__(self, grid: LSGrid, q: np.ndarray, method: str = "auto"):
        self.grid = grid
        self.q = np.asarray(q, dtype=complex).reshape(-1)
        if self.q.size != grid.domain.num_cells:
            raise ConfigError("potential and grid sizes differ")
        self.active = np.flatnonzero(self.q != 0)
        self.inactive = np.flatnonzero(self.q == 0)
        if method == "auto":
            method = "direct" if len(self.active) <= DIRECT_MAX else "iterative"
        if method not in ("direct", "iterative"):
            raise ConfigError(f"unknown solver method {method!r}")
        self.method = method
        self._ijk = grid.indices
        self._table = grid.kernel_table()
        self._offset = np.asarray(grid.domain.grid_shape, dtype=np.int64) - 1
        self._factor = None
        self._rcond = float("nan")
        self._lock = threading.Lock()
        self._green_cache: dict = {}

    @property
    def size(self) -> int:
        return len(self.active)

    def apply_w(self, targets: np.ndarray, sources: np.ndarray, w: np.ndarray) -> np.ndarray:
        out = np.empty(len(targets), dtype=complex)
        return table_matvec(self._table, self._ijk[targets], self._ijk[sources], self._offset,
                            np.ascontiguousarray(w, dtype=complex), out)

    def matvec(self, u_active: np.ndarray) -> np.ndarray:
        a = self.active
        return u_active + self.apply_w(a, a, self.q[a] * u_active)

    def assemble(self) -> tuple[np.ndarray, float]:
        """Dense Fortran-ordered matrix on the active cells and its 1-norm."""
        a = self.active
        n = len(a)
        A = np.empty((n, n), dtype=complex, order="F")
        ijk = self._ijk[a] + self._offset
        anorm = 0.0
        for j0 in range(0, n, _ASSEMBLY_BLOCK):
            j1 = min(n, j0 + _ASSEMBLY_BLOCK)
            src = self._ijk[a[j0:j1]]
            d = ijk[:, None, :] - src[None, :, :]
            block = self._table[d[..., 0], d[..., 1], d[..., 2]] * self.q[a[j0:j1]][None, :]
            block[np.arange(j0, j1), np.arange(j1 - j0)] += 1.0
            A[:, j0:j1] = block
            anorm = max(anorm, float(np.abs(block).sum(axis=0).max()))
        return A, anorm

    def factorize(self):
        with self._lock:
            if self._factor is None:
                A, anorm = self.assemble()
                self._factor, self._rcond = lu_with_condition(A, anorm, overwrite=True)
        return self._factor

    def _solve_active(self, rhs_a: np.ndarray, keep: bool) -> tuple[np.ndarray, SolveInfo]:
        n = len(rhs_a)
        info = SolveInfo(method=self.method, size=n)
        if self.method == "direct":
            if keep or self._factor is not None:
                factor = self.factorize()
                x = sla.lu_solve(factor, rhs_a, check_finite=False)
                info.rcond = self._rcond
            else:
                A, anorm = self.assemble()
                factor, info.rcond = lu_with_condition(A, anorm, overwrite=True)
                x = sla.lu_solve(factor, rhs_a, check_finite=False)
                del A, factor
        else:
            op = LinearOperator((n, n), matvec=self.matvec, dtype=complex)
            count = [0]

            def cb(_):
                count[0] += 1

            x, flag = gmres(op, rhs_a, rtol=GMRES_RTOL, atol=0.0, restart=60, maxiter=40,
                            callback=cb, callback_type="pr_norm")
            info.iterations = count[0]
            if flag != 0:
                raise SolverError(f"GMRES did not converge (flag {flag}, {count[0]} iterations)")
        info.residual = relative_residual(self.matvec, x, rhs_a)
        if not info.residual <= RESIDUAL_TOL:
            raise SolverError(
                f"linear solve residual {info.residual:.2e} exceeds {RESIDUAL_TOL:.0e} "
                f"(method {self.method}, condition estimate {info.condition:.2e})"
            )
        return x, info

    def solve(self, rhs: np.ndarray, keep: bool = False) -> tuple[np.ndarray, SolveInfo]:
        """Solve for the field on every cell given the incident field ``rhs`` on every cell."""
        rhs = np.asarray(rhs, dtype=complex).reshape(-1)
        u = rhs.copy()
        if self.size == 0:
            return u, SolveInfo(method="trivial", size=0, residual=0.0)
        ua, info = self._solve_active(rhs[self.active], keep)
        u[self.active] = ua
        if len(self.inactive):
            u[self.inactive] -= self.apply_w(self.inactive, self.active, self.q[self.active] * ua)
        return u, info

    def volume_potential(self, U: np.ndarray, points) -> np.ndarray:
        """int_D g(x, y) q(y) U(y) dy at arbitrary points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        src = self.q * np.asarray(U).reshape(-1)
        out = np.empty(len(pts), dtype=complex)
        for s in range(0, len(pts), _EVAL_CHUNK):
            out[s:s + _EVAL_CHUNK] = self.grid.point_kernel(pts[s:s + _EVAL_CHUNK]) @ src
        return out

    def _green_density(self, y: np.ndarray) -> np.ndarray:
        key = tuple(np.round(y, 15))
        with self._lock:
            Gvec = self._green_cache.get(key)
        if Gvec is None:
            rhs = self.grid.point_kernel(y[None, :])[0] / self.grid.cell_volume
            Gvec, _ = self.solve(rhs, keep=True)
            with self._lock:
                self._green_cache[key] = Gvec
        return Gvec

    def green(self, x, y) -> complex:
        """Background Green's function G(x, y) for a point source at ``y``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if np.linalg.norm(x - y) < 1e-14:
            raise ConfigError("background Green's function evaluated at coincident points")
        Gvec = self._green_density(y)
        return complex(free_space_g(x, y, self.grid.k) - self.volume_potential(Gvec, x[None, :])[0])

    def green_regular(self, y) -> complex:
        """(G - g)(y, y): the part of a source's own field returned by the background."""
        y = np.asarray(y, dtype=float)
        return complex(-self.volume_potential(self._green_density(y), y[None, :])[0])


_CACHE_LOCK = threading.Lock()
_OPERATORS: "OrderedDict[tuple, LSOperator]" = OrderedDict()
_CACHE_SIZE = 4


def cached_operator(q: ComplexGridField, k: float) -> LSOperator:
    """Shared, factorisation-keeping operator for repeated solves with one potential."""
    key = (q.domain, float(k), q.values.astype(complex).tobytes())
    with _CACHE_LOCK:
        op = _OPERATORS.get(key)
        if op is not None:
            _OPERATORS.move_to_end(key)
            return op
    op = LSOperator(LSGrid.from_domain(q.domain, k), q.flat)
    with _CACHE_LOCK:
        op = _OPERATORS.setdefault(key, op)
        while len(_OPERATORS) > _CACHE_SIZE:
            _OPERATORS.popitem(last=False)
    return op


def clear_cache() -> None:
    with _CACHE_LOCK:
        _OPERATORS.clear()


@dataclass(frozen=True, eq=False)
class FarFieldPattern:
    alpha: tuple
    betas: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.betas, dtype=float))
        if np.any(np.abs(np.linalg.norm(b, axis=1) - 1) > 1e-12):
            raise ConfigError("far-field directions must be unit vectors")
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if len(amps) != len(b):
            raise ConfigError("one amplitude per direction expected")
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))

    def __add__(self, other: "FarFieldPattern") -> "FarFieldPattern":
        if not np.allclose(self.betas, other.betas):
            raise ConfigError("far-field patterns sampled on different directions")
        return FarFieldPattern(self.alpha, self.betas, self.amplitudes + other.amplitudes)

    def relative_l2(self, reference: "FarFieldPattern") -> float:
        den = np.linalg.norm(reference.amplitudes)
        num = np.linalg.norm(self.amplitudes - reference.amplitudes)
        return float(num / den) if den > 0 else float(num)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bx", "by", "bz", "re", "im"])
            for b, a in zip(self.betas, self.amplitudes):
                w.writerow([repr(float(b[0])), repr(float(b[1])), repr(float(b[2])),
                            repr(float(a.real)), repr(float(a.imag))])


def default_directions() -> np.ndarray:
    """The 26 face, edge and corner directions of a cube."""
    g = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)
                  if (i, j, k) != (0, 0, 0)], dtype=float)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _check_grid(q: ComplexGridField, medium: MediumSpec):
    if q.domain != medium.domain:
        raise ConfigError("potential and medium are sampled on different grids")


def solve_ls(q: ComplexGridField, medium: MediumSpec, method: str = "auto",
             return_info: bool = False):
    """Total field U on the grid for the full potential ``q`` and plane-wave incidence."""
    _check_grid(q, medium)
    incident = plane_wave(medium.domain.cell_centers(), medium.alpha, medium.k)
    if q.is_zero():
        U = ComplexGridField(medium.domain, incident)
        info = SolveInfo(method="trivial", size=0, residual=0.0)
    else:
        op = LSOperator(LSGrid.from_domain(medium.domain, medium.k), q.flat, method=method)
        u, info = op.solve(incident)
        U = ComplexGridField(medium.domain, u)
        logger.info("solve_ls: %d unknowns, %s, residual %.2e", info.size, info.method,
                    info.residual)
    return (U, info) if return_info else U


def exterior_field(U: ComplexGridField, q: ComplexGridField, medium: MediumSpec,
                   points) -> np.ndarray:
    """Total field at arbitrary points from the volume representation."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    grid = LSGrid.from_domain(medium.domain, medium.k)
    src = q.flat * U.flat
    out = plane_wave(pts, medium.alpha, medium.k)
    for s in range(0, len(pts), _EVAL_CHUNK):
        out[s:s + _EVAL_CHUNK] -= grid.point_kernel(pts[s:s + _EVAL_CHUNK]) @ src
    return out


def far_field_total(U: ComplexGridField, q: ComplexGridField, medium: MediumSpec,
                    betas=None) -> FarFieldPattern:
    """Amplitude of the full scattered wave, -(1/4pi) int e^{-ik beta.y} q U dy."""
    _check_grid(q, medium)
    betas = default_directions() if betas is None else np.atleast_2d(betas)
    y = medium.domain.cell_centers()
    phase = np.exp(-1j * medium.k * (np.asarray(betas) @ y.T))
    amps = -(phase @ (q.flat * U.flat)) * medium.domain.cell_volume / (4 * np.pi)
    return FarFieldPattern(medium.alpha, betas, amps)


def far_field(U: ComplexGridField, p: ComplexGridField, u0_eval, betas=None,
              A0: FarFieldPattern | None = None, alpha=None) -> FarFieldPattern:
    """A = A0 + A1 with A1 = -(1/4pi) int u0(y, -beta) p(y) U(y) dy."""
    if U.domain != p.domain:
        raise ConfigError("U and p are sampled on different grids")
    betas = default_directions() if betas is None else np.atleast_2d(betas)
    y = p.domain.cell_centers()
    src = p.flat * U.flat * p.domain.cell_volume
    amps = np.array([-(u0_eval(y, -b) @ src) / (4 * np.pi) for b in betas])
    if alpha is None:
        alpha = A0.alpha if A0 is not None else (0.0, 0.0, 1.0)
    A1 = FarFieldPattern(alpha, betas, amps)
    return A1 if A0 is None else A0 + A1


class BackgroundField:
    """Evaluator u0(x, d) of the background scattering solution for any direction d."""

    def __init__(self, medium: MediumSpec):
        self.medium = medium
        self.k = medium.k
        self.q0 = medium.q0
        self.vacuum = self.q0.is_zero()
        self._cache: dict = {}

    def grid_solution(self, direction) -> np.ndarray:
        key = tuple(np.round(np.asarray(direction, dtype=float), 14))
        if key not in self._cache:
            op = cached_operator(self.q0, self.k)
            rhs = plane_wave(self.medium.domain.cell_centers(), direction, self.k)
            self._cache[key], _ = op.solve(rhs, keep=True)
        return self._cache[key]

    def __call__(self, points, direction) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        direction = np.asarray(direction, dtype=float)
        if self.vacuum:
            return plane_wave(pts, direction, self.k)
        U = self.grid_solution(direction)
        op = cached_operator(self.q0, self.k)
        return plane_wave(pts, direction, self.k) - op.volume_potential(U, pts)


def solve_u0(q0: ComplexGridField, medium: MediumSpec, betas=None):
    """Background solution on the grid and its amplitude A0 over ``betas``."""
    _check_grid(q0, medium)
    betas = default_directions() if betas is None else np.atleast_2d(betas)
    if q0.is_zero():
        u0 = ComplexGridField(medium.domain,
                              plane_wave(medium.domain.cell_centers(), medium.alpha, medium.k))
        return u0, FarFieldPattern(medium.alpha, betas, np.zeros(len(betas), dtype=complex))
    u0 = solve_ls(q0, medium)
    return u0, far_field_total(u0, q0, medium, betas)


def solve_ls_two_stage(q0: ComplexGridField, p: ComplexGridField, medium: MediumSpec):
    """Verification path: U = u0 - G_b p U with the grid background Green operator G_b.

    Builds G_b = (I + W Q0)^{-1} W densely, so it is meant for small grids.
    """
    _check_grid(q0, medium)
    _check_grid(p, medium)
    n = medium.domain.num_cells
    if n > 20**3:
        raise ConfigError("background-green mode is limited to grids of at most 20^3 cells")
    grid = LSGrid.from_domain(medium.domain, medium.k)
    op = LSOperator(grid, np.ones(n))
    W, _ = op.assemble()
    W[np.diag_indices(n)] -= 1.0
    B = np.eye(n, dtype=complex) + W * q0.flat[None, :]
    factor, _ = lu_with_condition(B)
    incident = plane_wave(grid.cell_centers, medium.alpha, medium.k)
    u0 = sla.lu_solve(factor, incident)
    Gb = sla.lu_solve(factor, W)
    A = np.eye(n, dtype=complex) + Gb * p.flat[None, :]
    factor2, _ = lu_with_condition(A)
    U = sla.lu_solve(factor2, u0)
    res = relative_residual(lambda v: A @ v, U, u0)
    if res > RESIDUAL_TOL:
        raise SolverError(f"two-stage solve residual {res:.2e} exceeds {RESIDUAL_TOL:.0e}")
    return ComplexGridField(medium.domain, U), ComplexGridField(medium.domain, u0)


def born_far_field_box(q_const: complex, domain: BoxDomain, k: float, alpha, betas) -> np.ndarray:
    """Closed-form first Born amplitude of a homogeneous box (used by validation)."""
    kappa = k * (np.asarray(alpha)[None, :] - np.atleast_2d(betas))
    L = domain.extent
    fac = np.ones(len(kappa), dtype=complex)
    for i in range(3):
        ki = kappa[:, i]
        safe = np.where(np.abs(ki) > 1e-300, ki, 1.0)
        fac *= np.where(np.abs(ki) > 1e-12, 2 * np.sin(safe * L[i] / 2) / safe, L[i])
    fac *= np.exp(1j * kappa @ domain.center)
    return -q_const * fac / (4 * math.pi)
