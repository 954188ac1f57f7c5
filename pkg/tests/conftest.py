import numpy as np
import pytest

from pixel_transfer.dataset import split_dataset
from pixel_transfer.synthetic import SyntheticConfig, generate_synthetic


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    generate_synthetic(root, SyntheticConfig(n_products=12, colors=4, seed=3))
    return root


@pytest.fixture(scope="session")
def tiny_dataset(tiny_root):
    from pixel_transfer.dataset import load_lookbook

    return split_dataset(load_lookbook(tiny_root), 0.2, 0.2, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def acceptance_log(request):
    lines: list[str] = []
    request.config._acceptance_lines = lines
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
