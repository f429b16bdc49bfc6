import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import BENCHMARK_PLANT  # noqa: E402

from drmpc import TsdrProblem  # noqa: E402
from drmpc.errors import ContractionWarning  # noqa: E402

CONFIG_PATH = Path(__file__).parents[1] / "src" / "drmpc" / "configs" / "benchmark.toml"


def build_benchmark_problem(**overrides):
    p = dict(BENCHMARK_PLANT, **overrides)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ContractionWarning)
        return TsdrProblem.build(
            p["A"], p["B"], p["D"], p["F0"], p["G0"], p["Q"], p["R"], p["N"], p["epsilon"],
            p["n"], p["h"], p["l_c"], p["u_min"], p["u_max"],
        )


@pytest.fixture(scope="session")
def benchmark_problem():
    return build_benchmark_problem()


@pytest.fixture(scope="session")
def config_path():
    return CONFIG_PATH


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance verdicts, one line per criterion, when that module ran."""
    module = sys.modules.get("test_acceptance")
    report = getattr(module, "REPORT", None)
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(report):
        terminalreporter.write_line(report[n])
