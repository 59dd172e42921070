import pytest

from clsurrogate.datasets import SyntheticSpec, generate_synthetic
from clsurrogate.nn import NetworkSpec
from clsurrogate.scenarios import build_bin_incremental, normalize_stream
from clsurrogate.strategies import TrainConfig

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(SyntheticSpec(n_samples=240, feature_dim=4, n_categories=3, noise_std=0.01, seed=3))


@pytest.fixture(scope="session")
def small_stream(small_dataset):
    stream, _ = normalize_stream(build_bin_incremental(small_dataset, 3, seed=1))
    return stream


@pytest.fixture
def fast_config():
    return TrainConfig(epochs_per_experience=3, batch_size=16, seed=5)


@pytest.fixture
def small_net_spec():
    return NetworkSpec(input_dim=4, hidden_layers=(8, 8))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
