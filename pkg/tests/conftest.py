import numpy as np
import pytest
import torch


def count_peaks(x, sample_rate, min_gap_s=0.25, threshold=1.0):
    """Threshold local-maximum detector with a refractory gap (test oracle)."""
    x = np.asarray(x, dtype=float)
    gap = int(min_gap_s * sample_rate)
    peaks = []
    for i in range(1, len(x) - 1):
        if x[i] > threshold and x[i] > x[i - 1] and x[i] >= x[i + 1]:
            if peaks and i - peaks[-1] < gap:
                if x[i] > x[peaks[-1]]:
                    peaks[-1] = i
                continue
            peaks.append(i)
    return peaks


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion and return the verdict."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
