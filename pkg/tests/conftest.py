import numpy as np
import pytest

_criterion_lines = {}


def record_criterion(number: int, title: str, ok: bool, detail: str,
                     seconds: float) -> bool:
    """Register one acceptance-criterion verdict.

    The line prints immediately (visible with -s and in failure output)
    and again in a dedicated terminal section at the end of the run, so
    every criterion's pass/fail status lands in the captured log
    exactly once per position.
    """
    line = "[%s] criterion %d (%s): %s [%.1f s]" % (
        "PASS" if ok else "FAIL", number, title, detail, seconds)
    _criterion_lines[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_criterion_lines):
            terminalreporter.write_line(_criterion_lines[number])


def central_difference(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x, elementwise."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = f()
        flat[i] = keep - eps
        lo = f()
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * eps)
    return g


def relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    """max |a - e| / max(1, |e|), elementwise."""
    denom = np.maximum(1.0, np.abs(exact))
    return float(np.max(np.abs(approx - exact) / denom))


@pytest.fixture
def rng64():
    return np.random.default_rng(0xC0FFEE)
