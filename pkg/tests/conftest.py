import numpy as np
import pytest

from covert_renewal import kernels


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request):
    """Each importable kernel implementation in turn."""
    return kernels.available_backends()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance criterion -> (passed, detail), filled in by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def accept():
    def record(key: str, title: str, ok: bool, detail: str):
        ACCEPTANCE[key] = (bool(ok), f"{title}: {detail}")
        print(f"[{key}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, text = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{key}] {'PASS' if ok else 'FAIL'} {text}")
