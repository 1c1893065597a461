"""Finite collections of small impedance balls.

Each particle m at x_m carries the charge Q_m = -C_m u_e(x_m), where C_m is
its effective capacitance and u_e the field produced by everything except
particle m.  Collocating at the centers gives the self-consistent system

    u_j + sum_{m != j} G(x_j, x_m) C_m u_m = u0(x_j),

after which u(x) = u0(x) + sum_m G(x, x_m) Q_m away from the particles, and
the scattering amplitude is A_M(beta) = (1/4pi) sum_m u0(x_m, -beta) Q_m.

With a vacuum background G is the free-space kernel.  Otherwise the default
"coupled" mode solves for the background grid field and the particle fields
together through the free-space kernel; "background-green" builds G from
grid solves and is meant for small verification runs.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, gmres
from scipy.spatial import cKDTree

from .continuum import (
    BackgroundField,
    FarFieldPattern,
    LSGrid,
    LSOperator,
    cached_operator,
    default_directions,
)
from .design import SOFT, ParticleRecipe, ball_area, capacitance_ball, effective_capacitance, is_soft
from .errors import (
    ConfigError,
    EvaluationError,
    HardParticleError,
    SmallnessError,
    SolverError,
)
from .greens import plane_wave
from .linalg import SolveInfo, lu_with_condition
from .medium import BoxDomain, ComplexGridField, MediumSpec

logger = logging.getLogger(__name__)

DIRECT_MAX = 20000
RESIDUAL_TOL = 1e-10
JITTER = 0.25
_BLOCK = 512


@dataclass(frozen=True, eq=False)
class ParticleSet:
    centers: np.ndarray
    a: float
    zetas: np.ndarray
    C0s: np.ndarray = None
    Ceffs: np.ndarray = None

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        z = np.asarray(self.zetas, dtype=complex).reshape(-1)
        if len(z) != len(c):
            raise ConfigError("one impedance per particle expected")
        if not self.a > 0:
            raise ConfigError(f"particle radius must be positive, got {self.a}")
        if np.any(z == 0):
            raise HardParticleError(
                "zeta = 0 (acoustically hard particles) is not supported: their charge is "
                "O(k^2 a^3) and the effective field obeys a non-local equation"
            )
        if np.any(np.isnan(z)):
            raise ConfigError("particle impedance is unset (nan)")
        C0s = np.full(len(c), capacitance_ball(self.a)) if self.C0s is None else np.asarray(self.C0s, dtype=float)
        Ceffs = effective_capacitance(C0s, z, ball_area(self.a)) if len(c) else np.zeros(0, complex)
        for name, arr in (("centers", c), ("zetas", z), ("C0s", C0s)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        Ceffs = np.asarray(Ceffs, dtype=complex).reshape(-1)
        Ceffs.flags.writeable = False
        object.__setattr__(self, "Ceffs", Ceffs)
        object.__setattr__(self, "a", float(self.a))

    def __len__(self) -> int:
        return len(self.centers)

    def min_distance(self) -> float:
        """Smallest center-to-center distance (inf for fewer than two particles)."""
        if len(self) < 2:
            return math.inf
        d, _ = cKDTree(self.centers).query(self.centers, k=2)
        return float(d[:, 1].min())

    def validate(self, domain: BoxDomain | None = None) -> None:
        if domain is not None and len(self) and not np.all(domain.contains(self.centers)):
            raise ConfigError("particle centers must lie strictly inside the domain")
        if self.min_distance() <= 2 * self.a:
            raise SmallnessError(
                f"overlapping particles: min center distance {self.min_distance():.3e} <= 2a"
            )

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "re_zeta", "im_zeta"])
            for x, z in zip(self.centers, self.zetas):
                re, im = ("inf", "0.0") if is_soft(z) else (repr(float(z.real)), repr(float(z.imag)))
                w.writerow([repr(float(x[0])), repr(float(x[1])), repr(float(x[2])), re, im])

    @classmethod
    def from_csv(cls, path, a: float) -> "ParticleSet":
        rows = list(csv.reader(open(Path(path))))[1:]
        centers = np.array([[float(v) for v in r[:3]] for r in rows]).reshape(-1, 3)
        zetas = np.array([SOFT if r[3] == "inf" else complex(float(r[3]), float(r[4])) for r in rows],
                         dtype=complex)
        return cls(centers, a, zetas)


@dataclass(frozen=True, eq=False)
class SolveResult:
    u_at_particles: np.ndarray
    charges: np.ndarray
    info: SolveInfo
    medium: MediumSpec | None = None
    mode: str = "free-kernel"
    grid_field: ComplexGridField | None = None

    def to_csv(self, path, particles: ParticleSet) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "re_u", "im_u", "re_Q", "im_Q"])
            for x, u, q in zip(particles.centers, self.u_at_particles, self.charges):
                w.writerow([repr(float(v)) for v in x] + [repr(float(u.real)), repr(float(u.imag)),
                                                          repr(float(q.real)), repr(float(q.imag))])


def _serpentine_order(shape) -> np.ndarray:
    """Flat indices of a 3-D grid visited boustrophedon-style (neighbors stay adjacent)."""
    nx, ny, nz = shape
    order = []
    flip_y = flip_z = False
    for i in range(nx):
        ys = range(ny - 1, -1, -1) if flip_y else range(ny)
        for j in ys:
            zs = range(nz - 1, -1, -1) if flip_z else range(nz)
            order.extend((i * ny + j) * nz + k for k in zs)
            flip_z = not flip_z
        flip_y = not flip_y
    return np.asarray(order, dtype=np.int64)


def _overlaps(lo: float, hi: float, n_lattice: int, n_grid: int) -> np.ndarray:
    """(n_lattice, n_grid) lengths of the intersections of two 1-D partitions of [lo, hi]."""
    e = np.linspace(lo, hi, n_lattice + 1)
    g = np.linspace(lo, hi, n_grid + 1)
    return np.clip(np.minimum(e[1:, None], g[None, 1:]) - np.maximum(e[:-1, None], g[None, :-1]),
                   0.0, None)


def place_particles(recipe: ParticleRecipe, domain: BoxDomain, seed: int = 0) -> ParticleSet:
    """Stratified jittered placement following the recipe density.

    A lattice with cell volume at most 1/max N covers the box.  Each lattice
    cell's expected count is the exact integral of the piecewise-constant N
    over it.  Cells are visited in serpentine order and kept by error
    diffusion, so the total is within one half of int N dx and dense regions
    are filled cell by cell.  Kept cells get a particle at the center plus a
    uniform jitter of +-0.25 cell per axis, which keeps every pair more than
    half a cell apart.
    """
    N = np.real(recipe.N.values)
    a = recipe.a
    if np.any(N < 0):
        raise ConfigError("negative particle density in recipe")
    if recipe.domain != domain:
        raise ConfigError("recipe and placement domain differ")
    nmax = float(N.max()) if N.size else 0.0
    if nmax <= 0:
        return ParticleSet(np.zeros((0, 3)), a, np.zeros(0, dtype=complex))
    L = domain.extent
    counts = np.maximum(1, np.ceil(L * nmax ** (1 / 3) - 1e-9)).astype(int)
    delta = L / counts
    if delta.min() <= 4 * a:
        raise SmallnessError(
            f"particles too dense for their size: spacing {delta.min():.3e} <= 4a = {4 * a:.3e} "
            "(the small-particle regime needs d >> a, n0 k a << 1)"
        )
    O = [_overlaps(domain.lo[i], domain.hi[i], counts[i], domain.grid_shape[i]) for i in range(3)]
    expected = np.einsum("ia,jb,kc,abc->ijk", O[0], O[1], O[2], N).reshape(-1)
    idx = np.indices(counts).reshape(3, -1).T
    centers = np.asarray(domain.lo) + (idx + 0.5) * delta

    keep = np.zeros(len(centers), dtype=bool)
    acc = 0.0
    for i in _serpentine_order(tuple(counts)):
        acc += expected[i]
        if acc >= 0.5:
            keep[i] = True
            acc -= 1.0

    rng = np.random.default_rng(seed)
    jitter = rng.uniform(-JITTER, JITTER, size=centers.shape) * delta
    pos = centers[keep] + jitter[keep]
    zeta = recipe.zeta.flat[domain.flat_index(pos)] if len(pos) else np.zeros(0, complex)
    # a jittered particle may sit in a cell without particles (unset impedance);
    # it then takes the impedance of the cell contributing most to its lattice cell
    for m in np.flatnonzero(np.isnan(zeta)):
        i, j, k = idx[keep][m]
        w = O[0][i][:, None, None] * O[1][j][None, :, None] * O[2][k][None, None, :] * N
        zeta[m] = recipe.zeta.values[np.unravel_index(np.argmax(w), w.shape)]
    particles = ParticleSet(pos, a, zeta)
    logger.info("placed %d particles (expected %.2f), lattice %s", len(particles),
                recipe.expected_count, counts.tolist())
    return particles


def _interaction_block(centers, Ceffs, k, rows, cols):
    """Rows/cols block of the matrix delta_jm + (1 - delta_jm) g(x_j, x_m) C_m."""
    d = np.linalg.norm(centers[rows][:, None, :] - centers[cols][None, :, :], axis=2)
    same = rows[:, None] == cols[None, :]
    d[same] = 1.0
    block = np.exp(1j * k * d) / (4 * np.pi * d) * Ceffs[cols][None, :]
    block[same] = 1.0
    return block


def _free_kernel_matrix(particles: ParticleSet, k: float):
    M = len(particles)
    A = np.empty((M, M), dtype=complex, order="F")
    rows = np.arange(M)
    anorm = 0.0
    for j0 in range(0, M, _BLOCK):
        cols = np.arange(j0, min(M, j0 + _BLOCK))
        A[:, cols] = _interaction_block(particles.centers, particles.Ceffs, k, rows, cols)
        anorm = max(anorm, float(np.abs(A[:, cols]).sum(axis=0).max()))
    return A, anorm


def _free_kernel_matvec(particles: ParticleSet, k: float, u: np.ndarray) -> np.ndarray:
    M = len(particles)
    out = np.empty(M, dtype=complex)
    cols = np.arange(M)
    for i0 in range(0, M, _BLOCK):
        rows = np.arange(i0, min(M, i0 + _BLOCK))
        out[rows] = _interaction_block(particles.centers, particles.Ceffs, k, rows, cols) @ u
    return out


def _residual(apply, x, b) -> float:
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(apply(x) - b) / (nb if nb > 0 else 1.0))


def _solve_free(particles: ParticleSet, medium: MediumSpec, rhs: np.ndarray, method: str):
    M = len(particles)
    k = medium.k
    info = SolveInfo(method=method, size=M)
    apply = lambda v: _free_kernel_matvec(particles, k, v)  # noqa: E731
    if method == "direct":
        A, anorm = _free_kernel_matrix(particles, k)
        factor, info.rcond = lu_with_condition(A, anorm, overwrite=True)
        del A
        u = sla.lu_solve(factor, rhs, check_finite=False)
        del factor
    else:
        op = LinearOperator((M, M), matvec=apply, dtype=complex)
        count = [0]
        u, flag = gmres(op, rhs, rtol=1e-12, atol=0.0, restart=80, maxiter=50,
                        callback=lambda _: count.__setitem__(0, count[0] + 1),
                        callback_type="pr_norm")
        info.iterations = count[0]
        if flag != 0:
            raise SolverError(f"GMRES did not converge (flag {flag})")
    info.residual = _residual(apply, u, rhs)
    return u, info


def _solve_coupled(particles: ParticleSet, medium: MediumSpec):
    """Joint solve for the background grid field (on supp q0) and the particle fields."""
    q0 = medium.q0
    grid = LSGrid.from_domain(medium.domain, medium.k)
    op = LSOperator(grid, q0.flat)
    S = op.active
    nS, M = len(S), len(particles)
    dV = grid.cell_volume
    K = grid.point_kernel(particles.centers)  # (M, ncells), dV-weighted
    A = np.empty((nS + M, nS + M), dtype=complex, order="F")
    A[:nS, :nS], _ = op.assemble()
    A[:nS, nS:] = K[:, S].T / dV * particles.Ceffs[None, :]
    A[nS:, :nS] = K[:, S] * q0.flat[S][None, :]
    A[nS:, nS:], _ = _free_kernel_matrix(particles, medium.k)
    incident_grid = plane_wave(grid.cell_centers, medium.alpha, medium.k)
    rhs = np.concatenate([incident_grid[S], plane_wave(particles.centers, medium.alpha, medium.k)])
    A_copy = A.copy(order="F")
    factor, rcond = lu_with_condition(A, overwrite=True)
    x = sla.lu_solve(factor, rhs, check_finite=False)
    info = SolveInfo(method="coupled-direct", size=nS + M, rcond=rcond)
    info.residual = _residual(lambda v: A_copy @ v, x, rhs)
    U = incident_grid.copy()
    U[S] = x[:nS]
    u = x[nS:]
    rest = op.inactive
    if len(rest):
        U[rest] -= op.apply_w(rest, S, q0.flat[S] * x[:nS])
        U[rest] -= (K[:, rest].T / dV) @ (particles.Ceffs * u)
    return u, ComplexGridField(medium.domain, U), info


def _solve_background_green(particles: ParticleSet, medium: MediumSpec):
    op = cached_operator(medium.q0, medium.k)
    M = len(particles)
    G = np.zeros((M, M), dtype=complex)
    for m in range(M):
        for j in range(M):
            if j != m:
                G[j, m] = op.green(particles.centers[j], particles.centers[m])
        # only the singular free-space self term is excluded
        G[m, m] = op.green_regular(particles.centers[m])
    A = np.eye(M, dtype=complex) + G * particles.Ceffs[None, :]
    rhs = BackgroundField(medium)(particles.centers, medium.alpha)
    factor, rcond = lu_with_condition(A)
    u = sla.lu_solve(factor, rhs)
    info = SolveInfo(method="background-green", size=M, rcond=rcond)
    info.residual = _residual(lambda v: A @ v, u, rhs)
    return u, info


def solve_system(particles: ParticleSet, medium: MediumSpec, mode: str = "auto",
                 method: str = "auto") -> SolveResult:
    """Solve the self-consistent particle system for the fields u(x_m) and charges Q_m."""
    M = len(particles)
    if M == 0:
        raise ConfigError("solve_system needs at least one particle")
    if np.any(particles.zetas == 0):
        raise HardParticleError("zeta = 0 particles are not supported")
    vacuum = medium.q0.is_zero()
    if mode == "auto":
        mode = "free-kernel" if vacuum else "coupled"
    if mode not in ("free-kernel", "coupled", "background-green"):
        raise ConfigError(f"unknown solve mode {mode!r}")
    grid_field = None
    if vacuum or mode == "free-kernel":
        if not vacuum:
            mode = "coupled"
        else:
            if method == "auto":
                method = "direct" if M <= DIRECT_MAX else "iterative"
            rhs = plane_wave(particles.centers, medium.alpha, medium.k)
            u, info = _solve_free(particles, medium, rhs, method)
            mode = "free-kernel"
    if mode == "coupled":
        u, grid_field, info = _solve_coupled(particles, medium)
    elif mode == "background-green":
        u, info = _solve_background_green(particles, medium)
    if not info.residual <= RESIDUAL_TOL:
        raise SolverError(f"particle system residual {info.residual:.2e} exceeds {RESIDUAL_TOL:.0e}")
    logger.info("solve_system: M=%d mode=%s residual=%.2e cond=%.2e", M, mode, info.residual,
                info.condition)
    charges = -particles.Ceffs * u
    return SolveResult(u_at_particles=u, charges=charges, info=info, medium=medium, mode=mode,
                       grid_field=grid_field)


def _check_distance(particles: ParticleSet, pts: np.ndarray):
    if not len(particles):
        return
    dist, _ = cKDTree(particles.centers).query(pts)
    if np.any(dist < 2 * particles.a):
        raise EvaluationError("field requested inside (or touching) a particle")
    d = particles.min_distance()
    if np.isfinite(d) and np.any(dist < d):
        warnings.warn("field evaluated closer to a particle than the interparticle distance; "
                      "the point-particle representation is inaccurate there", stacklevel=3)


def evaluate_field(particles: ParticleSet, result: SolveResult, x, medium: MediumSpec | None = None):
    """u(x) = u0(x) + sum_m G(x, x_m) Q_m at one point or an (n, 3) array of points."""
    medium = medium or result.medium
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    _check_distance(particles, pts)
    k = medium.k
    if result.mode == "coupled":
        grid = LSGrid.from_domain(medium.domain, k)
        K = grid.point_kernel(pts)
        out = plane_wave(pts, medium.alpha, k) - K @ (medium.q0.flat * result.grid_field.flat)
        out += _free_g(pts, particles.centers, k) @ result.charges
    elif result.mode == "background-green":
        op = cached_operator(medium.q0, k)
        out = BackgroundField(medium)(pts, medium.alpha)
        for i, p in enumerate(pts):
            out[i] += sum(op.green(p, xm) * Q for xm, Q in zip(particles.centers, result.charges))
    else:
        out = plane_wave(pts, medium.alpha, k)
        for s in range(0, len(pts), _BLOCK):
            out[s:s + _BLOCK] += _free_g(pts[s:s + _BLOCK], particles.centers, k) @ result.charges
    return complex(out[0]) if np.ndim(x) == 1 else out


def _free_g(points, sources, k):
    r = np.linalg.norm(points[:, None, :] - sources[None, :, :], axis=2)
    return np.exp(1j * k * r) / (4 * np.pi * r)


def far_field_discrete(particles: ParticleSet, result: SolveResult, betas=None,
                       medium: MediumSpec | None = None) -> FarFieldPattern:
    """A_M(beta) = (1/4pi) sum_m u0(x_m, -beta) Q_m."""
    medium = medium or result.medium
    betas = default_directions() if betas is None else np.atleast_2d(np.asarray(betas, dtype=float))
    if len(particles) == 0:
        return FarFieldPattern(medium.alpha, betas, np.zeros(len(betas), dtype=complex))
    u0 = BackgroundField(medium)
    amps = np.array([u0(particles.centers, -b) @ result.charges for b in betas]) / (4 * np.pi)
    return FarFieldPattern(medium.alpha, betas, amps)


def relative_volume(particles: ParticleSet, domain: BoxDomain) -> float:
    return len(particles) * (4.0 / 3.0) * math.pi * particles.a**3 / domain.volume


@dataclass(frozen=True)
class SmallnessReport:
    n0ka: float
    d: float
    d_over_a: float
    a_over_d: float
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.warnings

    def to_dict(self) -> dict:
        return {"n0ka": self.n0ka, "d": self.d, "d_over_a": self.d_over_a,
                "a_over_d": self.a_over_d, "warnings": list(self.warnings)}


def smallness_report(a: float, d: float, k: float, n0_max: float = 1.0) -> SmallnessReport:
    n0ka = n0_max * k * a
    d_over_a = d / a
    notes = []
    if n0ka > 0.1:
        notes.append(f"n0*k*a = {n0ka:.3g} > 0.1: particles are not small on the wavelength scale")
    if d_over_a < 5:
        notes.append(f"d/a = {d_over_a:.3g} < 5: particles are not well separated")
    return SmallnessReport(n0ka, d, d_over_a, 1.0 / d_over_a if d_over_a else math.inf, notes)


def check_smallness(particles: ParticleSet, medium: MediumSpec) -> SmallnessReport:
    """n0 k a and the separation ratio, with the surface-to-surface distance as d."""
    n0_max = float(np.abs(medium.n0.values).max())
    d = particles.min_distance() - 2 * particles.a
    return smallness_report(particles.a, d, medium.k, n0_max)
