"""Continual-learning strategies over an experience stream.

All five strategies share :func:`train_stream`. They differ only in the
training set used for each experience (Naive, Joint, Replay), a gradient hook
applied before every optimizer step (EWC penalty, GEM projection) and what
they remember once an experience is finished.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from .datasets import Dataset
from .errors import ArgumentError, CLError, ConfigError, NumericError, ShapeError
from .metrics import EvalMatrix, mae, mpe
from .nn import (
    NetworkSpec,
    OptimizerState,
    RegressionNet,
    backward_batch,
    fisher_diagonal,
    forward_batch,
    init_network,
    optimizer_step,
)
from .scenarios import Experience, ExperienceStream

STRATEGIES = ("naive", "joint", "replay", "ewc", "gem")
BUFFER_LIMIT_FRACTION = 0.20


@dataclass(frozen=True)
class TrainConfig:
    epochs_per_experience: int = 30
    batch_size: int = 32
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs_per_experience < 1 or self.batch_size < 1:
            raise ConfigError("epochs_per_experience and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class NaiveParams:
    pass


@dataclass(frozen=True)
class JointParams:
    pass


@dataclass(frozen=True)
class ReplayParams:
    """``budget`` is an absolute sample cap; when unset it is ``floor(budget_fraction * train size)``."""

    budget: int | None = None
    budget_fraction: float = BUFFER_LIMIT_FRACTION

    def __post_init__(self):
        if self.budget is not None and self.budget < 0:
            raise ConfigError("replay budget must be non-negative")
        if not 0.0 <= self.budget_fraction <= BUFFER_LIMIT_FRACTION:
            raise ConfigError(f"budget_fraction must lie in [0, {BUFFER_LIMIT_FRACTION}]")

    def resolve(self, total_train: int) -> int:
        ceiling = math.floor(BUFFER_LIMIT_FRACTION * total_train)
        budget = self.budget if self.budget is not None else math.floor(self.budget_fraction * total_train)
        if budget > ceiling:
            raise ConfigError(f"replay budget {budget} exceeds 20% of the {total_train} training samples")
        return budget


@dataclass(frozen=True)
class EWCParams:
    lam: float = 100.0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("EWC lambda must be non-negative")


@dataclass(frozen=True)
class GEMParams:
    ppe: int = 64
    margin: float = 0.0

    def __post_init__(self):
        if self.ppe < 0:
            raise ConfigError("ppe must be non-negative")
        if self.margin < 0:
            raise ConfigError("margin must be non-negative")


PARAM_TYPES = {
    "naive": NaiveParams,
    "joint": JointParams,
    "replay": ReplayParams,
    "ewc": EWCParams,
    "gem": GEMParams,
}


def make_params(strategy: str, params=None):
    if strategy not in PARAM_TYPES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    cls = PARAM_TYPES[strategy]
    if params is None:
        return cls()
    if isinstance(params, dict):
        try:
            return cls(**params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for {strategy}: {exc}") from None
    if not isinstance(params, cls):
        raise ConfigError(f"{strategy} expects {cls.__name__}, got {type(params).__name__}")
    return params


# -- effective training sets -------------------------------------------------

def effective_train_set_naive(experience: Experience) -> Dataset:
    return experience.train


def effective_train_set_joint(stream: ExperienceStream, k: int) -> Dataset:
    """Union of the train sets of experiences ``0..k``."""
    if not 0 <= k < len(stream):
        raise ArgumentError(f"stage {k} out of range")
    return Dataset.concat([e.train for e in stream.experiences[: k + 1]], f"joint/{k}")


# -- experience replay -------------------------------------------------------

@dataclass(frozen=True)
class ReplayBuffer:
    budget: int
    groups: dict[int, Dataset] = field(default_factory=dict)

    def __len__(self) -> int:
        return sum(len(g) for g in self.groups.values())


def _slots(budget: int, n: int) -> list[int]:
    base, rem = divmod(budget, n)
    return [base + (1 if i < rem else 0) for i in range(n)]


def replay_update_buffer(buffer: ReplayBuffer, finished: Experience, n_seen: int, seed: int) -> ReplayBuffer:
    """Rebalance the buffer to equal per-experience slots and store the finished experience.

    Existing groups are randomly down-sampled when their slot shrinks and are
    never refilled.
    """
    rng = np.random.default_rng([seed, n_seen])
    tasks = sorted(set(buffer.groups) | {finished.task_id})
    slots = dict(zip(tasks, _slots(buffer.budget, max(n_seen, len(tasks)))))
    groups: dict[int, Dataset] = {}
    for t in tasks:
        src = finished.train if t == finished.task_id else buffer.groups[t]
        keep = min(slots[t], len(src))
        if keep == 0:
            continue
        if keep == len(src) and t != finished.task_id:
            groups[t] = src
        else:
            pos = np.sort(rng.choice(len(src), size=keep, replace=False))
            groups[t] = src.subset(pos, f"buffer/{t}")
    return ReplayBuffer(buffer.budget, groups)


def effective_train_set_replay(experience: Experience, buffer: ReplayBuffer) -> Dataset:
    if not buffer.groups:
        return experience.train
    parts = [experience.train] + [buffer.groups[t] for t in sorted(buffer.groups)]
    return Dataset.concat(parts, f"replay/{experience.task_id}")


# -- elastic weight consolidation --------------------------------------------

@dataclass(frozen=True)
class EWCState:
    lam: float
    anchors: tuple[tuple[np.ndarray, np.ndarray], ...] = ()


def _check_anchor(params: np.ndarray, theta_star: np.ndarray, fisher: np.ndarray) -> None:
    if theta_star.shape != params.shape or fisher.shape != params.shape:
        raise ShapeError("EWC anchor does not match the parameter vector")


def ewc_penalty(params, state: EWCState) -> float:
    params = np.asarray(params, dtype=np.float64)
    total = 0.0
    for theta_star, fisher in state.anchors:
        _check_anchor(params, theta_star, fisher)
        d = params - theta_star
        total += 0.5 * state.lam * float(np.dot(fisher, d * d))
    return total


def ewc_penalty_grad(params, state: EWCState) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    for theta_star, fisher in state.anchors:
        _check_anchor(params, theta_star, fisher)
        grad += state.lam * fisher * (params - theta_star)
    return grad


def ewc_consolidate(net: RegressionNet, train_set: Dataset, state: EWCState) -> EWCState:
    fisher = fisher_diagonal(net, train_set.features, train_set.targets)
    return EWCState(state.lam, state.anchors + ((net.get_params(), fisher),))


# -- gradient episodic memory ------------------------------------------------

@dataclass(frozen=True)
class GEMMemory:
    ppe: int
    margin: float = 0.0
    groups: dict[int, Dataset] = field(default_factory=dict)

    def __len__(self) -> int:
        return sum(len(g) for g in self.groups.values())


def gem_memory_update(memory: GEMMemory, finished: Experience, seed: int) -> GEMMemory:
    keep = min(memory.ppe, len(finished.train))
    if keep == 0:
        return memory
    rng = np.random.default_rng([seed, finished.task_id])
    pos = np.sort(rng.choice(len(finished.train), size=keep, replace=False))
    groups = dict(memory.groups)
    groups[finished.task_id] = finished.train.subset(pos, f"gem/{finished.task_id}")
    return GEMMemory(memory.ppe, memory.margin, groups)


def gem_reference_gradients(net: RegressionNet, memory: GEMMemory) -> list[np.ndarray]:
    return [backward_batch(net, g.features, g.targets)[0]
            for _, g in sorted(memory.groups.items())]


def solve_nonneg_qp(Q: np.ndarray, p: np.ndarray, tol: float = 1e-9,
                    max_iter: int | None = None) -> np.ndarray:
    """Minimise ``0.5 v'Qv + p'v`` subject to ``v >= 0`` for a small PSD ``Q``.

    Lawson-Hanson active-set method: repeatedly free the coordinate with the
    most negative gradient, solve the free block exactly, and step back to the
    feasible boundary when that solve leaves the orthant. Finishes in a finite
    number of steps, including when ``Q`` is singular. On return the gradient
    ``Qv + p`` is ``>= -tol`` everywhere.
    """
    Q = np.asarray(Q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    m = p.size
    max_iter = 3 * m + 10 if max_iter is None else max_iter
    v = np.zeros(m)
    free = np.zeros(m, dtype=bool)
    w = -p.copy()
    for _ in range(max_iter):
        cand = np.where(free, -np.inf, w)
        j = int(np.argmax(cand))
        if cand[j] <= tol:
            break
        free[j] = True
        while True:
            idx = np.flatnonzero(free)
            z = np.zeros(m)
            z[idx] = np.linalg.lstsq(Q[np.ix_(idx, idx)], -p[idx], rcond=None)[0]
            if z[idx].min() > 0.0:
                break
            # step from v towards z until the first free coordinate hits zero
            neg = idx[z[idx] <= 0.0]
            alpha = np.min(v[neg] / (v[neg] - z[neg]))
            v = v + alpha * (z - v)
            free &= v > 1e-15 * max(1.0, v.max())
            v[~free] = 0.0
            if not free.any():
                z = v
                break
        v = z
        w = -(Q @ v + p)
    return v


def gem_project(g, memory_grads, margin: float = 0.0, tol: float = 1e-9) -> np.ndarray:
    """Closest gradient to ``g`` that does not point against any memory gradient.

    Returns ``g`` itself when ``<g, g_k> >= -margin`` for every ``k``.
    """
    g = np.asarray(g, dtype=np.float64)
    if not memory_grads:
        return g
    G = np.vstack([np.asarray(r, dtype=np.float64) for r in memory_grads])
    if G.shape[1] != g.size:
        raise ShapeError(f"memory gradients have length {G.shape[1]}, expected {g.size}")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(G))):
        raise NumericError("non-finite gradient passed to GEM projection")
    dots = G @ g
    if dots.min() >= -margin:
        return g
    v = solve_nonneg_qp(G @ G.T, dots, tol=tol * 1e-3)
    return g + G.T @ v


# -- the shared training loop --------------------------------------------------

@dataclass
class RunResult:
    strategy: str
    eval_matrix: EvalMatrix
    final_test_mae: float
    final_test_mpe: float
    wall_clock_seconds: float
    seed: int
    config: dict[str, Any] = field(default_factory=dict)
    memory_sizes: list[int] = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "eval_matrix": self.eval_matrix.to_list(),
            "final_test_mae": _num_out(self.final_test_mae),
            "final_test_mpe": _num_out(self.final_test_mpe),
            "wall_clock_seconds": self.wall_clock_seconds,
            "memory_sizes": list(self.memory_sizes),
            "config": self.config,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunResult:
        return cls(
            strategy=d["strategy"],
            eval_matrix=EvalMatrix.from_list(d["eval_matrix"]),
            final_test_mae=_num_in(d["final_test_mae"]),
            final_test_mpe=_num_in(d["final_test_mpe"]),
            wall_clock_seconds=float(d["wall_clock_seconds"]),
            seed=int(d["seed"]),
            config=d.get("config", {}),
            memory_sizes=list(d.get("memory_sizes", [])),
            error=d.get("error"),
        )


def _num_out(x: float) -> float | None:
    return None if x is None or not math.isfinite(x) else float(x)


def _num_in(x) -> float:
    return math.nan if x is None else float(x)


Monitor = Callable[[int, Any], None]


def _evaluate(net: RegressionNet, data: Dataset) -> np.ndarray:
    return forward_batch(net, data.features)


def train_stream(stream: ExperienceStream, strategy: str, strategy_params=None,
                 train_config: TrainConfig | None = None, network: NetworkSpec | None = None,
                 monitor: Monitor | None = None) -> RunResult:
    """Train through ``stream`` with one strategy and record the evaluation matrix.

    ``monitor``, when given, is called after every optimizer step with the
    experience index and the strategy's memory (buffer, EWC state or GEM
    memory; ``None`` for Naive and Joint).
    """
    return train_stream_with_model(stream, strategy, strategy_params, train_config, network, monitor)[0]


def train_stream_with_model(stream: ExperienceStream, strategy: str, strategy_params=None,
                            train_config: TrainConfig | None = None,
                            network: NetworkSpec | None = None,
                            monitor: Monitor | None = None) -> tuple[RunResult, RegressionNet]:
    """:func:`train_stream`, also returning the final network."""
    params = make_params(strategy, strategy_params)
    cfg = train_config or TrainConfig()
    spec = network or NetworkSpec(input_dim=stream[0].train.feature_dim)
    if spec.input_dim != stream[0].train.feature_dim:
        raise ConfigError("network input_dim does not match the stream's feature_dim")

    K = len(stream)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    memory_seed = int(seeds[1])
    net = init_network(spec, cfg.seed)
    opt = OptimizerState(kind=cfg.optimizer, learning_rate=cfg.learning_rate)
    matrix = EvalMatrix.empty(K)
    snapshot = {
        "train": asdict(cfg),
        "strategy_params": asdict(params),
        "network": {**asdict(spec), "hidden_layers": list(spec.hidden_layers)},
        "stream": stream.provenance,
    }

    state: Any = None
    if strategy == "replay":
        state = ReplayBuffer(params.resolve(stream.train_size))
    elif strategy == "ewc":
        state = EWCState(params.lam)
    elif strategy == "gem":
        state = GEMMemory(params.ppe, params.margin)
    memory_sizes: list[int] = []
    error = None

    start = time.perf_counter()
    try:
        for k, exp in enumerate(stream):
            if strategy == "joint":
                data = effective_train_set_joint(stream, k)
            elif strategy == "replay":
                data = effective_train_set_replay(exp, state)
            else:
                data = effective_train_set_naive(exp)
            x, y = data.features, data.targets
            n = len(data)
            for _ in range(cfg.epochs_per_experience):
                order = shuffle_rng.permutation(n)
                for lo in range(0, n, cfg.batch_size):
                    idx = order[lo: lo + cfg.batch_size]
                    grad, loss = backward_batch(net, x[idx], y[idx])
                    if not math.isfinite(loss):
                        raise NumericError(f"non-finite loss in experience {k}")
                    if strategy == "ewc" and state.anchors and state.lam != 0:
                        grad = grad + ewc_penalty_grad(net.params, state)
                    elif strategy == "gem" and state.groups:
                        grad = gem_project(grad, gem_reference_gradients(net, state), state.margin)
                    new_params, opt = optimizer_step(opt, net.params, grad)
                    net.set_params(new_params)
                    if monitor is not None:
                        monitor(k, state)

            if strategy == "replay":
                state = replay_update_buffer(state, exp, k + 1, memory_seed)
            elif strategy == "ewc":
                state = ewc_consolidate(net, exp.train, state)
            elif strategy == "gem":
                state = gem_memory_update(state, exp, memory_seed)
            if state is not None and hasattr(state, "groups"):
                memory_sizes.append(len(state))
            if monitor is not None:
                monitor(k, state)

            for j in range(k + 1):
                test = stream[j].test
                matrix[k, j] = mae(_evaluate(net, test), test.targets)

        test_all = stream.all_test()
        preds = _evaluate(net, test_all)
        final_mae = mae(preds, test_all.targets)
        try:
            final_mpe = mpe(preds, test_all.targets)
        except CLError:
            final_mpe = math.nan
    except NumericError as exc:
        error = f"numeric divergence: {exc}"
        final_mae = final_mpe = math.nan
    elapsed = time.perf_counter() - start

    result = RunResult(
        strategy=strategy,
        eval_matrix=matrix,
        final_test_mae=final_mae,
        final_test_mpe=final_mpe,
        wall_clock_seconds=elapsed,
        seed=cfg.seed,
        config=snapshot,
        memory_sizes=memory_sizes,
        error=error,
    )
    return result, net
