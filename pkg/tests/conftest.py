import time

import numpy as np
import pytest

from neuralbp import codes


@pytest.fixture(scope="session")
def hamming():
    return codes.get_code("hamming74")


@pytest.fixture(scope="session")
def hamming_cyclic():
    return codes.get_code("hamming74_cyclic")


@pytest.fixture(scope="session")
def bch15():
    return codes.get_code("bch15_11")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.notes = number, title, []

    def note(self, text):
        self.notes.append(text)

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, kind, exc, tb):
        status = "PASS" if kind is None else "FAIL"
        notes = list(self.notes)
        if exc is not None:
            notes.append(f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        notes.append(f"{time.perf_counter() - self.start:.1f}s")
        _ACCEPTANCE.append(f"criterion {self.number:>2} {status}  {self.title}  [{'; '.join(notes)}]")
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
