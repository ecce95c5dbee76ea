import numpy as np
import pytest

from aelif_lab.text_model import build_vocab

ACCEPTANCE_RESULTS = []


def record_criterion(number, name, passed, detail=""):
    ACCEPTANCE_RESULTS.append((number, name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def dog_vocab():
    return build_vocab(["a photo of sks dog", "a photo of a dog"])
