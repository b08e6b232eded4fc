import re

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# ---------------------------------------------------------------------------
# acceptance criteria report: one pass/fail line per criterion, printed in
# the terminal summary regardless of output capture

_ACCEPTANCE_RESULTS = {}

_CRITERIA = {
    "a1": "full-model gradient check (tol 1e-4, < 60 s)",
    "a2": "attention/gating numeric invariants (100 seeds)",
    "a3": "residual and illumination identity paths",
    "a4": "modality ablation matches self-attention control",
    "a5": "training learns (+6 dB over input PSNR, smooth tail)",
    "a6": "pyramid shape contract, NTSC exactness, single extraction",
    "a7": "PSNR/SSIM against brute-force oracles",
    "a8": "bitwise checkpoint round trip and run determinism",
    "a9": "pluggable modality passes contract with one gate group",
}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py.*::test_(a\d)_", report.nodeid)
    if not m:
        return
    key = m.group(1)
    if report.when == "call":
        _ACCEPTANCE_RESULTS[key] = report.outcome == "passed"
    elif report.when == "setup" and report.outcome != "passed":
        _ACCEPTANCE_RESULTS[key] = False


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for key in sorted(_CRITERIA):
        if key in _ACCEPTANCE_RESULTS:
            verdict = "PASS" if _ACCEPTANCE_RESULTS[key] else "FAIL"
            terminalreporter.write_line(
                f"  {key.upper()}: {verdict} - {_CRITERIA[key]}")


def fd_grad(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f wrt array x.

    Independent oracle: never touches the autodiff tape.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-4):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
