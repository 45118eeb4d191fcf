import os
import tempfile
from pathlib import Path

import pytest

# reference clouds are cached on disk between runs
os.environ.setdefault("AKC_CACHE_DIR", str(Path(tempfile.gettempdir()) / "akc-test-cache"))

ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    print(ACCEPTANCE_LINES[number])


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


TINY_CONFIG = """\
# small desk configuration for fast structural tests
d = 2
t0 = 1/2
eps = 0.5
delta = 1.05
N = 1
n_lebesgue = 2
search_samples = 512
orbit_min = 512
orbit_max = 2048
ref_size = 10000
nballs = 50
closeness_samples = 8
closeness_random_powers = 5
power_cap = 50
cud_min_length = 64
cud_max_length = 512
"""


@pytest.fixture(scope="session")
def tiny_config_text():
    return TINY_CONFIG


def _construct(tmp_path_factory, name, text, extra=()):
    from akc.cli import main

    root = tmp_path_factory.mktemp(name)
    cfg = root / "run.cfg"
    cfg.write_text(text)
    code = main(["construct", "--config", str(cfg), "--out", str(root / "out"), *extra])
    return root / "out", code


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """Output directory and exit code of a tiny N=1 construction."""
    return _construct(tmp_path_factory, "tiny", TINY_CONFIG)


@pytest.fixture(scope="session")
def tiny_run_repeat(tmp_path_factory):
    """The same tiny construction rerun into a fresh directory."""
    return _construct(tmp_path_factory, "tiny-repeat", TINY_CONFIG)
