from __future__ import annotations

import numpy as np
import pytest

from sgrg import covariance as cv

# name -> (passed, detail); filled by test_acceptance, printed at the end of the session
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0])):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name:<32} {detail}")


@pytest.fixture
def record():
    def _record(name: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE[name] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
        return ok

    return _record


@pytest.fixture(scope="session")
def cov4():
    return cv.reference_covariance(4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

