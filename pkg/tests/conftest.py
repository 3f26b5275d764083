import numpy as np
import pytest

from ficstack.fic_core import FicParams
from ficstack.harness_cli import parameter_presets

RESULTS: list = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def all_param_sets():
    table = parameter_presets()
    return {f"{g}/{n}": FicParams.from_dict(d) for g in table for n, d in table[g].items()}


@pytest.fixture
def ee_params():
    return FicParams(x0=0.005, xb=0.006, f_max=150.0, k0=5000.0, s=20.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tmp_out(tmp_path, monkeypatch):
    monkeypatch.setenv("FICSTACK_OUT_DIR", str(tmp_path / "runs"))
    return tmp_path
