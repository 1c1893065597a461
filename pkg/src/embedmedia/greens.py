"""Helmholtz kernels.

``free_space_g`` is the outgoing kernel e^{ik|x-y|} / (4 pi |x-y|).  The
background Green's function G of a medium with potential q0 satisfies

    G(x, y) = g(x, y) - int_D g(x, z) q0(z) G(z, y) dz

and is obtained from the grid solver in :mod:`embedmedia.continuum`.  Far from
D it factorises as G(x, y) ~ e^{ik|x|} / (4 pi |x|) * u0(y, -beta).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

SINGULAR_DIST = 1e-14


def free_space_g(x, y, k: float):
    """Outgoing Helmholtz kernel; broadcasts over leading axes of ``x`` and ``y``."""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
    if np.any(r < SINGULAR_DIST):
        raise ConfigError("free_space_g evaluated at coincident points |x - y| < 1e-14")
    out = np.exp(1j * k * r) / (4.0 * np.pi * r)
    return complex(out) if np.ndim(out) == 0 else out


def static_g(x, y):
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
    return 1.0 / (4.0 * np.pi * r)


def plane_wave(points, direction, k: float) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return np.exp(1j * k * (pts @ np.asarray(direction, dtype=float)))


class PlaneWave:
    """Scattering-solution evaluator of the vacuum: u0(x, d) = e^{ik d.x}."""

    def __init__(self, k: float):
        self.k = float(k)

    def __call__(self, points, direction) -> np.ndarray:
        return plane_wave(np.atleast_2d(points), direction, self.k)


def background_green(q0, x, y, k: float) -> complex:
    """G(x, y) for the background potential ``q0`` (a grid field).

    Exact free-space kernel when q0 vanishes; otherwise a grid solve with a
    point source at ``y`` (cached per source point and per q0).
    """
    if q0.is_zero():
        return free_space_g(x, y, k)
    from .continuum import cached_operator

    return cached_operator(q0, k).green(x, y)


def far_field_factor(y, beta, u0_minus_beta) -> complex:
    """Coefficient u0(y, -beta) / (4 pi) of a unit point source at ``y``."""
    beta = np.asarray(beta, dtype=float)
    if abs(np.linalg.norm(beta) - 1.0) > 1e-12:
        raise ConfigError("far-field direction must be a unit vector")
    val = np.asarray(u0_minus_beta(np.atleast_2d(y), -beta)).reshape(-1)[0]
    return complex(val) / (4.0 * np.pi)
