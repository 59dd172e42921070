"""Continual learning for regression surrogate models."""

from .datasets import Dataset, Sample, SyntheticSpec, generate_synthetic, load_csv, split_train_test
from .metrics import EvalMatrix, mae, mpe
from .nn import NetworkSpec, RegressionNet, init_network
from .scenarios import Experience, ExperienceStream, build_bin_incremental, build_input_incremental, normalize_stream
from .strategies import STRATEGIES, RunResult, TrainConfig, train_stream

__all__ = [
    "Dataset", "Sample", "SyntheticSpec", "generate_synthetic", "load_csv", "split_train_test",
    "EvalMatrix", "mae", "mpe",
    "NetworkSpec", "RegressionNet", "init_network",
    "Experience", "ExperienceStream", "build_bin_incremental", "build_input_incremental", "normalize_stream",
    "STRATEGIES", "RunResult", "TrainConfig", "train_stream",
]

__version__ = "0.1.0"
