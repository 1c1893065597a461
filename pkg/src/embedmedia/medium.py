"""Domain, grid fields and the refraction <-> potential conversions.

Fields live at cell centers of a regular grid over an axis-aligned box.
The Helmholtz coefficient and its Schrodinger-form potential are related by

    q(x) = k^2 (1 - n(x)),    n(x) = 1 - q(x) / k^2,

and the potential added by the embedded particles is p = k^2 (n0 - n).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, PassivityError

PASSIVITY_TOL = 1e-12


@dataclass(frozen=True)
class BoxDomain:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    grid_shape: tuple[int, int, int]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        shape = tuple(int(v) for v in self.grid_shape)
        if len(lo) != 3 or len(hi) != 3 or len(shape) != 3:
            raise ConfigError("domain lo, hi and grid_shape must have 3 components")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ConfigError(f"domain needs hi > lo on every axis, got lo={lo} hi={hi}")
        if any(n <= 0 for n in shape):
            raise ConfigError(f"grid_shape must be positive, got {shape}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "grid_shape", shape)

    @classmethod
    def cube(cls, side=1.0, n=16, center=(0.0, 0.0, 0.0)):
        c = np.asarray(center, dtype=float)
        return cls(tuple(c - side / 2), tuple(c + side / 2), (n, n, n))

    @property
    def extent(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)

    @property
    def cell_size(self) -> np.ndarray:
        return self.extent / np.asarray(self.grid_shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_size))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.grid_shape))

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.extent))

    def cell_centers(self) -> np.ndarray:
        """Cell centers as an (num_cells, 3) array in C order of the grid."""
        idx = np.indices(self.grid_shape).reshape(3, -1).T
        return np.asarray(self.lo) + (idx + 0.5) * self.cell_size

    def locate(self, points) -> np.ndarray:
        """Integer cell index (i, j, k) containing each point, clipped to the grid."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ijk = np.floor((pts - np.asarray(self.lo)) / self.cell_size).astype(int)
        return np.clip(ijk, 0, np.asarray(self.grid_shape) - 1)

    def flat_index(self, points) -> np.ndarray:
        return np.ravel_multi_index(self.locate(points).T, self.grid_shape)

    def contains(self, points, strict=True) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if strict:
            return np.all((pts > self.lo) & (pts < self.hi), axis=1)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "grid_shape": list(self.grid_shape)}


@dataclass(frozen=True, eq=False)
class ComplexGridField:
    """Complex scalar sampled at the cell centers of ``domain``."""

    domain: BoxDomain
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.size != self.domain.num_cells:
            raise ConfigError(
                f"field has {vals.size} values, grid {self.domain.grid_shape} needs "
                f"{self.domain.num_cells}"
            )
        if not np.iscomplexobj(vals):
            vals = vals.astype(float)
        vals = vals.reshape(self.domain.grid_shape).copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, domain: BoxDomain, value) -> "ComplexGridField":
        return cls(domain, np.full(domain.grid_shape, value, dtype=complex))

    @classmethod
    def from_function(cls, domain: BoxDomain, fn) -> "ComplexGridField":
        """Sample ``fn`` (vectorised over an (n, 3) array) at the cell centers."""
        return cls(domain, np.asarray(fn(domain.cell_centers()), dtype=complex))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def _check_same_grid(self, other: "ComplexGridField"):
        if self.domain != other.domain:
            raise ConfigError("grid fields live on different grids")

    def __add__(self, other):
        self._check_same_grid(other)
        return ComplexGridField(self.domain, self.values + other.values)

    def __sub__(self, other):
        self._check_same_grid(other)
        return ComplexGridField(self.domain, self.values - other.values)

    def scaled(self, s) -> "ComplexGridField":
        return ComplexGridField(self.domain, s * self.values)

    def is_zero(self, tol=0.0) -> bool:
        return bool(np.all(np.abs(self.values) <= tol))

    def integral(self) -> complex:
        return complex(self.flat.sum() * self.domain.cell_volume)

    def to_csv(self, path) -> None:
        write_field_csv(path, self.domain.cell_centers(), self.flat)


@dataclass(frozen=True, eq=False)
class MediumSpec:
    domain: BoxDomain
    k: float
    alpha: tuple[float, float, float]
    n0: ComplexGridField = field(default=None)

    def __post_init__(self):
        if not self.k > 0:
            raise ConfigError(f"wavenumber must be positive, got k={self.k}")
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.shape != (3,) or abs(np.linalg.norm(alpha) - 1.0) > 1e-12:
            raise ConfigError(f"incident direction must be a unit 3-vector, got {self.alpha}")
        object.__setattr__(self, "alpha", tuple(alpha))
        object.__setattr__(self, "k", float(self.k))
        if self.n0 is None:
            object.__setattr__(self, "n0", ComplexGridField.constant(self.domain, 1.0))
        elif self.n0.domain != self.domain:
            raise ConfigError("n0 must be sampled on the medium's grid")

    @property
    def q0(self) -> ComplexGridField:
        return potential_from_refraction(self.n0, self.k)

    @property
    def is_vacuum(self) -> bool:
        return bool(np.all(self.n0.values == 1.0))

    def with_direction(self, alpha) -> "MediumSpec":
        return MediumSpec(self.domain, self.k, tuple(alpha), self.n0)

    def with_grid(self, grid_shape) -> "MediumSpec":
        """Same medium resampled (nearest cell) on another grid over the same box."""
        dom = BoxDomain(self.domain.lo, self.domain.hi, tuple(grid_shape))
        n0 = resample(self.n0, dom)
        return MediumSpec(dom, self.k, self.alpha, n0)


def resample(f: ComplexGridField, domain: BoxDomain) -> ComplexGridField:
    """Nearest-cell resampling of ``f`` onto another grid over the same box."""
    if f.domain == domain:
        return f
    idx = f.domain.flat_index(domain.cell_centers())
    return ComplexGridField(domain, f.flat[idx])


def potential_from_refraction(n0: ComplexGridField, k: float) -> ComplexGridField:
    if not k > 0:
        raise ConfigError(f"wavenumber must be positive, got k={k}")
    return ComplexGridField(n0.domain, k**2 * (1.0 - n0.values.astype(complex)))


def refraction_from_potential(q: ComplexGridField, k: float) -> ComplexGridField:
    if not k > 0:
        raise ConfigError(f"wavenumber must be positive, got k={k}")
    return ComplexGridField(q.domain, 1.0 - q.values.astype(complex) / k**2)


def p_from_target(n0: ComplexGridField, n: ComplexGridField, k: float) -> ComplexGridField:
    """Potential the particles must add to turn ``n0`` into ``n``."""
    n0._check_same_grid(n)
    return ComplexGridField(n0.domain, (n0.values - n.values).astype(complex) * k**2)


@dataclass(frozen=True)
class PassivityReport:
    ok: bool
    cells: list
    max_imag: float

    def raise_if_failed(self):
        if not self.ok:
            preview = ", ".join(str(c) for c in self.cells[:10])
            raise PassivityError(
                f"Im p > 0 (gain medium) at {len(self.cells)} cell(s): {preview}"
                f"{' ...' if len(self.cells) > 10 else ''}; max Im p = {self.max_imag:.3e}",
                cells=self.cells,
            )


def validate_passivity(p: ComplexGridField, tol=PASSIVITY_TOL) -> PassivityReport:
    """Accept iff Im p <= tol everywhere; otherwise list the offending cells."""
    im = np.imag(p.values)
    bad = np.argwhere(im > tol)
    return PassivityReport(
        ok=len(bad) == 0,
        cells=[tuple(int(i) for i in c) for c in bad],
        max_imag=float(im.max()) if im.size else 0.0,
    )


def write_field_csv(path, points, values) -> None:
    """Write ``x,y,z,re,im`` rows."""
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=complex).reshape(-1)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "re", "im"])
        for (x, y, z), v in zip(points, values):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(z)), repr(float(v.real)), repr(float(v.imag))])


def read_field_csv(path, domain: BoxDomain) -> ComplexGridField:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 5:
        raise ConfigError(f"{path}: expected columns x,y,z,re,im")
    idx = domain.flat_index(data[:, :3])
    vals = np.full(domain.num_cells, np.nan, dtype=complex)
    vals[idx] = data[:, 3] + 1j * data[:, 4]
    if np.isnan(vals).any():
        raise ConfigError(f"{path}: does not cover every cell of the grid")
    return ComplexGridField(domain, vals)


def field_from_spec(spec, domain: BoxDomain, name="field") -> ComplexGridField:
    """Build a grid field from a config entry.

    Accepted forms: a number, ``[re, im]``, ``"vacuum"``, ``{"re": .., "im": ..}``
    with scalar or per-cell arrays, or a flat per-cell list of numbers / pairs.
    """
    if isinstance(spec, str):
        if spec.lower() == "vacuum":
            return ComplexGridField.constant(domain, 1.0)
        raise ConfigError(f"{name}: unknown preset {spec!r}")
    if isinstance(spec, (int, float)):
        return ComplexGridField.constant(domain, complex(spec))
    if isinstance(spec, dict):
        re = np.asarray(spec.get("re", 0.0), dtype=float)
        im = np.asarray(spec.get("im", 0.0), dtype=float)
        vals = re + 1j * im
        if vals.ndim == 0:
            return ComplexGridField.constant(domain, complex(vals))
        return ComplexGridField(domain, vals)
    if isinstance(spec, (list, tuple)):
        arr = np.asarray(spec, dtype=float)
        if arr.shape == (2,) and domain.num_cells != 2:
            return ComplexGridField.constant(domain, complex(arr[0], arr[1]))
        if arr.ndim == 2 and arr.shape[1] == 2:
            return ComplexGridField(domain, arr[:, 0] + 1j * arr[:, 1])
        return ComplexGridField(domain, arr)
    raise ConfigError(f"{name}: cannot interpret {type(spec).__name__} as a grid field")
