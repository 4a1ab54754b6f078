from __future__ import annotations

import numpy as np
import pytest

from openres import GaussianState, SystemSpec, generate_example

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def random_spec(rng: np.random.Generator, L: int, M: int, scale: float = 0.05, n_th: float = 0.0,
                spacing: float = 0.1) -> SystemSpec:
    W = scale * (rng.standard_normal((L, M)) + 1j * rng.standard_normal((L, M))) / np.sqrt(2)
    return SystemSpec(omega=1.0 + spacing * np.arange(L), W=W, n_th=n_th)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def reference_pair():
    """omega = [1, 1.01], gamma = 0.1 [[1, 1], [1, 1]] + 0.02 I, n_th = 0.5."""
    return generate_example("two-mode-parametric", {"gamma_diag": 0.12, "gamma_off": 0.1, "n_th": 0.5})


@pytest.fixture
def coherent_start():
    return GaussianState.coherent([1.0, 0.5j], n_th=0.2)


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        detail = dict(report.user_properties).get("detail", "")
        _ACCEPTANCE[report.nodeid.split("::")[-1]] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{status}  {name}  {detail}")
