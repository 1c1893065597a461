"""Dense complex solves with conditioning and residual checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import ResonanceError, SolverError

logger = logging.getLogger(__name__)

RCOND_MIN = 1e-12


@dataclass
class SolveInfo:
    method: str
    size: int
    residual: float = float("nan")
    rcond: float = float("nan")
    iterations: int = 0

    @property
    def condition(self) -> float:
        return 1.0 / self.rcond if self.rcond > 0 else float("inf")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "size": self.size,
            "residual": self.residual,
            "condition_estimate": self.condition,
            "iterations": self.iterations,
        }


def lu_with_condition(A: np.ndarray, anorm: float | None = None, overwrite: bool = False):
    """LU-factorise ``A`` and estimate its 1-norm reciprocal condition number.

    Raises ResonanceError when the estimate falls below RCOND_MIN.
    """
    if anorm is None:
        anorm = float(np.abs(A).sum(axis=0).max())
    lu, piv = sla.lu_factor(A, overwrite_a=overwrite, check_finite=False)
    rcond, info = lapack.zgecon(lu, anorm, norm="1")
    if info != 0:
        raise SolverError(f"condition estimate failed (LAPACK info={info})")
    if not rcond > RCOND_MIN:
        raise ResonanceError(
            f"system is singular or resonant: condition estimate {1 / max(rcond, 1e-300):.3e} "
            f"exceeds {1 / RCOND_MIN:.0e}",
            condition=1 / max(rcond, 1e-300),
        )
    return (lu, piv), float(rcond)


def relative_residual(apply, x, b) -> float:
    r = apply(x) - b
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(r) / (nb if nb > 0 else 1.0))
