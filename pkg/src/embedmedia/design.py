"""Embedding recipes: particle density and impedance for a target potential.

For balls of radius ``a`` with capacitance C0 and impedance zeta, the
particle strength is the effective capacitance

    C_zeta = C0 / (1 + C0 / (zeta |S|)),      |S| = 4 pi a^2,

and a density N(x) of such particles adds the potential

    p(x) = N(x) C0 / (1 + h(x)),              h = C0 / (zeta |S|).

``recipe_soft`` uses h = 0 (zeta = inf); ``recipe_general`` picks h purely
imaginary, h = -i Im p / Re p, so that any passive p with Re p > 0 is reached.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .capacitance import SurfaceMesh, capacitance_mesh, icosphere  # noqa: F401
from .errors import (
    ConfigError,
    HardParticleError,
    PassivityError,
    RecipeError,
    SingularImpedanceError,
)
from .medium import BoxDomain, ComplexGridField, validate_passivity

SOFT = complex(math.inf, 0.0)
SINGULAR_TOL = 1e-12


def is_soft(zeta) -> np.ndarray:
    return np.isinf(np.real(zeta)) | np.isinf(np.imag(zeta))


def capacitance_ball(a: float) -> float:
    """Capacitance of a ball from the |S|^2 / J estimate: 4 pi a."""
    if not a > 0:
        raise ConfigError(f"ball radius must be positive, got a={a}")
    return 4.0 * math.pi * a


def ball_area(a: float) -> float:
    return 4.0 * math.pi * a * a


def effective_capacitance(C0, zeta, area):
    """C0 / (1 + C0 / (zeta * area)); soft particles (zeta = inf) give C0.

    Works elementwise on arrays.
    """
    C0 = np.asarray(C0, dtype=float)
    zeta = np.asarray(zeta, dtype=complex)
    area = np.asarray(area, dtype=float)
    if np.any(zeta == 0):
        raise HardParticleError(
            "zeta = 0 (acoustically hard particle): the induced charge vanishes to "
            "leading order and the effective field is not local; not supported"
        )
    soft = is_soft(zeta)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(soft, 0.0, C0 / (np.where(soft, 1.0, zeta) * area))
    denom = 1.0 + h
    if np.any(np.abs(denom) <= SINGULAR_TOL):
        raise SingularImpedanceError("1 + C0/(zeta |S|) = 0: impedance sits on the pole")
    out = C0 / denom
    return complex(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class ParticleRecipe:
    a: float
    C0: float
    N: ComplexGridField
    h: ComplexGridField
    zeta: ComplexGridField

    @property
    def domain(self) -> BoxDomain:
        return self.N.domain

    @property
    def expected_count(self) -> float:
        return float(np.real(self.N.values).sum() * self.domain.cell_volume)

    def check(self) -> None:
        n = np.real(self.N.values)
        if np.any(n < 0):
            raise RecipeError("negative particle density", cells=_cells(n < 0))
        bad = (n > 0) & (np.abs(1.0 + self.h.values) <= SINGULAR_TOL)
        if bad.any():
            raise SingularImpedanceError(
                f"1 + h = 0 at cells {_cells(bad)[:10]} where N > 0"
            )

    def to_dict(self) -> dict:
        def cplx(f):
            return {"re": np.real(f.flat).tolist(), "im": np.imag(f.flat).tolist()}

        zeta = self.zeta.flat
        unset = np.isnan(zeta)
        return {
            "domain": self.domain.to_dict(),
            "a": self.a,
            "C0": self.C0,
            "N": np.real(self.N.flat).tolist(),
            "h": cplx(self.h),
            # soft cells are written as "inf", cells without particles as null
            "zeta": {
                "re": [None if u else "inf" if is_soft(z) else float(z.real)
                       for z, u in zip(zeta, unset)],
                "im": [None if u else 0.0 if is_soft(z) else float(z.imag)
                       for z, u in zip(zeta, unset)],
            },
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_dict(cls, data: dict) -> "ParticleRecipe":
        try:
            dom = BoxDomain(**data["domain"])
            zre = np.array([math.inf if v == "inf" else math.nan if v is None else v
                            for v in data["zeta"]["re"]], dtype=float)
            zim = np.array([math.nan if v is None else v for v in data["zeta"]["im"]], dtype=float)
            zeta = zre + 1j * zim
            zeta[np.isinf(zre)] = SOFT
            h = np.asarray(data["h"]["re"], dtype=float) + 1j * np.asarray(data["h"]["im"], dtype=float)
            return cls(
                a=float(data["a"]),
                C0=float(data["C0"]),
                N=ComplexGridField(dom, np.asarray(data["N"], dtype=float)),
                h=ComplexGridField(dom, h),
                zeta=ComplexGridField(dom, zeta),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed recipe: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ParticleRecipe":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _cells(mask) -> list:
    return [tuple(int(i) for i in c) for c in np.argwhere(mask)]


def recipe_soft(p: ComplexGridField, a: float) -> ParticleRecipe:
    """Acoustically soft balls: h = 0 and N = p / C0. Needs real p >= 0."""
    C0 = capacitance_ball(a)
    vals = p.values
    bad = (np.abs(np.imag(vals)) > SINGULAR_TOL * np.maximum(1.0, np.abs(vals))) | (np.real(vals) < 0)
    if bad.any():
        raise RecipeError(
            "soft particles only realise real p >= 0; use recipe_general for complex "
            f"or negative targets (offending cells {_cells(bad)[:10]})",
            cells=_cells(bad),
        )
    dom = p.domain
    N = np.real(vals) / C0
    zeta = np.where(N > 0, SOFT, np.nan + 0j)
    return ParticleRecipe(
        a=a, C0=C0,
        N=ComplexGridField(dom, N),
        h=ComplexGridField(dom, np.zeros(dom.grid_shape, dtype=complex)),
        zeta=ComplexGridField(dom, zeta),
    )


def recipe_general(p: ComplexGridField, a: float) -> ParticleRecipe:
    """Impedance balls for a passive complex p with Re p > 0 wherever p != 0.

    h = -i Im p / Re p, N = |p|^2 / (Re p * C0), zeta = C0 / (h |S|).
    Cells with p = 0 get N = 0 and an unset (nan) impedance.
    """
    report = validate_passivity(p)
    if not report.ok:
        raise PassivityError(
            f"Im p > 0 at {len(report.cells)} cell(s), first {report.cells[:10]}",
            cells=report.cells,
        )
    C0 = capacitance_ball(a)
    area = ball_area(a)
    vals = p.values.astype(complex)
    p1, p2 = vals.real, vals.imag
    active = vals != 0
    bad = active & (p1 <= 0)
    if bad.any():
        raise RecipeError(
            f"Re p must be positive wherever p != 0 (offending cells {_cells(bad)[:10]})",
            cells=_cells(bad),
        )
    safe_p1 = np.where(active, p1, 1.0)
    h = np.where(active, -1j * p2 / safe_p1, 0.0)
    N = np.where(active, (p1**2 + p2**2) / (safe_p1 * C0), 0.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        zeta = np.where(h != 0, C0 / (h * area), SOFT)
    zeta = np.where(active, zeta, np.nan + 0j)
    dom = p.domain
    return ParticleRecipe(
        a=a, C0=C0,
        N=ComplexGridField(dom, N),
        h=ComplexGridField(dom, h),
        zeta=ComplexGridField(dom, zeta),
    )


def predicted_p(recipe: ParticleRecipe) -> ComplexGridField:
    """The potential N C0 / (1 + h) realised by a recipe in the dense limit."""
    recipe.check()
    N = np.real(recipe.N.values)
    denom = np.where(N > 0, 1.0 + recipe.h.values, 1.0)
    return ComplexGridField(recipe.domain, N * recipe.C0 / denom)


def radius_for_count(p: ComplexGridField, M: int, general: bool = True) -> float:
    """Particle radius that makes the expected particle count equal to ``M``.

    The recipe density scales as 1/C0(a) = 1/(4 pi a), so
    a = int p (1 + h) dx / (4 pi M).
    """
    if M <= 0:
        raise ConfigError(f"particle count must be positive, got {M}")
    vals = p.values.astype(complex)
    p1 = vals.real
    active = vals != 0
    safe = np.where(active, p1, 1.0)
    weight = np.where(active, np.abs(vals) ** 2 / safe, 0.0) if general else np.real(vals)
    total = float(weight.sum() * p.domain.cell_volume)
    return total / (capacitance_ball(1.0) * M)
