from __future__ import annotations

import warnings

import numpy as np
import pytest

from dosekit.mctest import AnovaEstimate
from dosekit.models import CandidateModel, DoseDesign

NEURO_DOSES = (0.0, 1.0, 3.0, 10.0, 30.0)
NEURO_MU = (-5.099, -4.581, -3.220, -2.879, -3.520)

MIGRAINE_DOSES = (0.0, 2.5, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0)
MIGRAINE_N = (133, 32, 44, 63, 63, 65, 59, 58)
MIGRAINE_RESP = (13, 4, 5, 16, 12, 14, 14, 21)


def compound_symmetric(k: int, diag: float, off: float) -> np.ndarray:
    S = np.full((k, k), off)
    np.fill_diagonal(S, diag)
    return S


@pytest.fixture
def neuro_est() -> AnovaEstimate:
    return AnovaEstimate(DoseDesign(NEURO_DOSES), NEURO_MU, compound_symmetric(5, 0.149, 0.0094))


@pytest.fixture
def neuro_models() -> list[CandidateModel]:
    return [
        CandidateModel("emax", (1.11,)),
        CandidateModel("quadratic", (-0.022,)),
        CandidateModel("exponential", (8.867,)),
        CandidateModel("linear"),
    ]


@pytest.fixture
def migraine_models() -> list[CandidateModel]:
    sig = [(2.5, 1.0), (10.0, 1.0), (50.0, 3.0), (100.0, 2.0)]
    return [CandidateModel("sigemax", g) for g in sig] + [CandidateModel("quadratic", (-1 / 250,))]


def random_spd(rng: np.random.Generator, k: int) -> np.ndarray:
    A = rng.standard_normal((k, k))
    return A @ A.T + 0.5 * np.eye(k)


@pytest.fixture(autouse=True)
def _quiet_accuracy():
    from dosekit.errors import AccuracyWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AccuracyWarning)
        yield


ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, checks: dict[str, bool], details: str) -> bool:
    """Store and print one pass/fail line; returns whether every check holds."""
    ok = all(checks.values())
    failed = [name for name, good in checks.items() if not good]
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} | {details}"
    if failed:
        line += f" | failed: {', '.join(failed)}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
