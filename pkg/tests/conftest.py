import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def assert_grad_close(analytic, numeric, rtol=1e-3, atol=1e-5):
    analytic = np.asarray(analytic, np.float64)
    numeric = np.asarray(numeric, np.float64)
    err = np.abs(analytic - numeric)
    allowed = np.maximum(rtol * np.maximum(np.abs(analytic), np.abs(numeric)), atol)
    worst = np.argmax(err - allowed)
    assert np.all(err <= allowed), (
        f"gradient mismatch at {worst}: analytic {analytic.flat[worst]:.6g}, "
        f"numeric {numeric.flat[worst]:.6g}"
    )


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in RESULTS:
        terminalreporter.write_line(line)
