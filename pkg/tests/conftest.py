import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from embedmedia.medium import BoxDomain, ComplexGridField, MediumSpec  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def unit_cube():
    return BoxDomain.cube(1.0, 8)


@pytest.fixture
def vacuum(unit_cube):
    return MediumSpec(unit_cube, 1.0, (0.0, 0.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def const(domain, value):
    return ComplexGridField.constant(domain, value)


ACCEPTANCE_LINES: list = []


def record_criterion(tag: str, ok: bool, detail: str) -> None:
    """Print one PASS/FAIL line for an acceptance criterion and keep it for the summary."""
    line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s[2:s.index(" ")])):
            terminalreporter.write_line(line)
