import numpy as np
import pytest

_ACCEPTANCE = []


@pytest.fixture
def rng(request):
    # Seed from the test name so every test is reproducible on its own.
    seed = sum(map(ord, request.node.name))
    return np.random.default_rng(seed)


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.passed:
        status = "PASS"
    elif report.skipped:
        status = "SKIP"
    else:
        status = "FAIL"
    _ACCEPTANCE.append((props["criterion"], status, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, status, detail in sorted(_ACCEPTANCE, key=lambda x: x[0]):
        terminalreporter.write_line(f"[{status}] criterion {crit}: {detail}")
