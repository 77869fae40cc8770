from pathlib import Path

import pytest

from lorentzgas.io import load_scene

SCENES = Path(__file__).resolve().parent.parent / "scenes"


@pytest.fixture(scope="session")
def scene_dir():
    return SCENES


@pytest.fixture(scope="session")
def two_disk():
    return load_scene(SCENES / "two_disk.json")


@pytest.fixture(scope="session")
def triangular():
    return load_scene(SCENES / "triangular.json")


@pytest.fixture(scope="session")
def square():
    return load_scene(SCENES / "square.json")


@pytest.fixture(scope="session")
def finite_mod():
    return load_scene(SCENES / "finite_modification.json")


@pytest.fixture(scope="session")
def three_scenes(two_disk, triangular, finite_mod):
    return {"two-disk": two_disk, "triangular": triangular, "finite-modification": finite_mod}


_CRITERIA: dict = {}


@pytest.fixture
def report():
    def _report(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        _CRITERIA[n] = line
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
