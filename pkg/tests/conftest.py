import pytest

from perturbed_lk import CovarianceModel, GridSpec, PerturbationSpec

KAPPA = 100 / 2**10


@pytest.fixture(scope="session")
def model():
    return CovarianceModel(sigma_g2=1.0, kappa=KAPPA)


@pytest.fixture
def small_grid():
    return GridSpec(64, 64, 1.0)


@pytest.fixture
def skellam_half():
    return PerturbationSpec.skellam(0.5, 1.0)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record a PASS/FAIL line for the acceptance summary; returns the verdict."""

    def _report(criterion: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
