"""Multi-trial benchmark runs, result persistence, rank summaries and the forgetting demo."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import BenchmarkConfig
from .datasets import Dataset
from .errors import ArgumentError, ConfigError
from .metrics import aggregate_forgetting, best_forgetting_over_trials, forgetting_ratio, mpe
from .nn import forward_batch
from .scenarios import ExperienceStream
from .strategies import RunResult, train_stream, train_stream_with_model

log = logging.getLogger(__name__)

RECORDS_FILE = "records.jsonl"
SUMMARY_FILE = "summary.csv"
SUMMARY_COLUMNS = ("strategy", "final_mpe_mean", "final_mpe_std", "best_fr", "runtime_mean_s")
RANK_METRICS = ("final_mae", "best_fr", "runtime")


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    vals = np.asarray([v for v in values if v is not None and math.isfinite(v)], dtype=np.float64)
    if vals.size == 0:
        return math.nan, math.nan
    if vals.size == 1:
        return float(vals[0]), 0.0
    return float(vals.mean()), float(vals.std(ddof=1))


def _columnwise(rows: list[list[float]]) -> tuple[list[float], list[float]]:
    if not rows:
        return [], []
    stats = [_mean_std(col) for col in zip(*rows)]
    return [m for m, _ in stats], [s for _, s in stats]


@dataclass
class StrategySummary:
    strategy: str
    n_trials: int
    n_failed: int
    final_mpe_mean: float
    final_mpe_std: float
    final_mae_mean: float
    final_mae_std: float
    per_experience_mae_mean: list[float]
    per_experience_mae_std: list[float]
    per_experience_fr_mean: list[float]
    per_experience_fr_std: list[float]
    avg_fr_mean: float
    avg_fr_std: float
    best_fr: float
    runtime_mean_s: float
    runtime_std_s: float

    @property
    def degraded(self) -> bool:
        return self.n_failed > 0


@dataclass
class BenchmarkReport:
    name: str
    strategies: list[str]
    summaries: dict[str, StrategySummary]
    runs: list[RunResult] = field(default_factory=list)
    trials: list[int] = field(default_factory=list)

    def runs_for(self, strategy: str) -> list[RunResult]:
        return [r for r in self.runs if r.strategy == strategy]


def final_avg_fr(run: RunResult) -> float:
    m = run.eval_matrix
    return aggregate_forgetting(m, m.size - 1)[0]


def summarize_strategy(strategy: str, runs: Sequence[RunResult]) -> StrategySummary:
    good = [r for r in runs if r.ok and r.eval_matrix.is_complete()]
    K = runs[0].eval_matrix.size
    last_rows = [list(r.eval_matrix[K - 1]) for r in good]
    fr_rows = [[forgetting_ratio(r.eval_matrix, K - 1, j) for j in range(K - 1)] for r in good]
    avg_frs = [final_avg_fr(r) for r in good] if K > 1 else []
    mae_mean, mae_std = _columnwise(last_rows)
    fr_mean, fr_std = _columnwise(fr_rows)
    mpe_mean, mpe_std = _mean_std([r.final_test_mpe for r in good])
    final_mae_mean, final_mae_std = _mean_std([r.final_test_mae for r in good])
    avg_fr_mean, avg_fr_std = _mean_std(avg_frs)
    rt_mean, rt_std = _mean_std([r.wall_clock_seconds for r in runs])
    return StrategySummary(
        strategy=strategy,
        n_trials=len(runs),
        n_failed=len(runs) - len(good),
        final_mpe_mean=mpe_mean,
        final_mpe_std=mpe_std,
        final_mae_mean=final_mae_mean,
        final_mae_std=final_mae_std,
        per_experience_mae_mean=mae_mean,
        per_experience_mae_std=mae_std,
        per_experience_fr_mean=fr_mean,
        per_experience_fr_std=fr_std,
        avg_fr_mean=avg_fr_mean,
        avg_fr_std=avg_fr_std,
        best_fr=best_forgetting_over_trials(avg_frs) if avg_frs else math.nan,
        runtime_mean_s=rt_mean,
        runtime_std_s=rt_std,
    )


def aggregate(runs: Sequence[RunResult], name: str = "benchmark",
              trials: Sequence[int] | None = None) -> BenchmarkReport:
    if not runs:
        raise ArgumentError("cannot aggregate an empty set of runs")
    order: list[str] = []
    for r in runs:
        if r.strategy not in order:
            order.append(r.strategy)
    summaries = {s: summarize_strategy(s, [r for r in runs if r.strategy == s]) for s in order}
    return BenchmarkReport(name, order, summaries, list(runs), list(trials or []))


def build_trial_streams(config: BenchmarkConfig, dataset: Dataset | None = None) -> list[ExperienceStream]:
    dataset = dataset if dataset is not None else config.dataset.load()
    return [config.scenario.build(dataset, config.base_seed + t) for t in range(config.n_trials)]


def run_benchmark(config: BenchmarkConfig) -> BenchmarkReport:
    """Run every configured strategy for ``n_trials`` paired trials.

    Trial ``t`` uses seed ``base_seed + t`` for stream construction, network
    initialisation and shuffling, and every strategy in that trial trains on
    the same stream object.
    """
    dataset = config.dataset.load()
    streams = build_trial_streams(config, dataset)
    input_dim = streams[0][0].train.feature_dim
    network = config.network.spec(input_dim)
    jobs = [(t, name, params) for t in range(config.n_trials) for name, params in config.strategies.items()]

    def work(job):
        t, name, params = job
        seed = config.base_seed + t
        log.info("trial %d: %s", t, name)
        return train_stream(streams[t], name, params, config.train.for_seed(seed), network)

    if config.workers == 1:
        results = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, jobs))
    for (t, name, _), r in zip(jobs, results):
        if not r.ok:
            log.warning("trial %d %s degraded: %s", t, name, r.error)
    return aggregate(results, config.name, [t for t, _, _ in jobs])


# -- persistence ---------------------------------------------------------------

def _fmt(x: float) -> str:
    return "nan" if x is None or not math.isfinite(x) else format(x, ".17g")


def export_results(report: BenchmarkReport, path) -> tuple[Path, Path]:
    """Write ``records.jsonl`` (one record per trial run) and ``summary.csv`` under ``path``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        records = out / RECORDS_FILE
        with records.open("w", encoding="utf-8") as fh:
            trials = report.trials or [None] * len(report.runs)
            for trial, run in zip(trials, report.runs):
                rec = {"benchmark": report.name, "trial": trial, **run.to_dict()}
                fh.write(json.dumps(rec, allow_nan=False) + "\n")
        summary = out / SUMMARY_FILE
        with summary.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(SUMMARY_COLUMNS)
            for name in report.strategies:
                s = report.summaries[name]
                w.writerow([name, _fmt(s.final_mpe_mean), _fmt(s.final_mpe_std),
                            _fmt(s.best_fr), _fmt(s.runtime_mean_s)])
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return records, summary


def load_records(path) -> BenchmarkReport:
    """Rebuild a report from a records file (or a directory holding ``records.jsonl``)."""
    path = Path(path)
    if path.is_dir():
        path = path / RECORDS_FILE
    runs, trials, name = [], [], None
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                runs.append(RunResult.from_dict(rec))
            except (ValueError, KeyError) as exc:
                raise OSError(f"{path}:{line_no}: malformed record: {exc}") from exc
            trials.append(rec.get("trial"))
            name = name or rec.get("benchmark")
    if not runs:
        raise OSError(f"{path} holds no records")
    return aggregate(runs, name or path.stem, trials)


def read_summary(path) -> list[dict[str, Any]]:
    path = Path(path)
    if path.is_dir():
        path = path / SUMMARY_FILE
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (v if k == "strategy" else float(v)) for k, v in row.items()} for row in rows]


# -- ranks ---------------------------------------------------------------------

def average_ranks(values: dict[str, float]) -> dict[str, float]:
    """Rank ascending (1 = best); ties share the mean of their positions; NaN ranks last."""
    names = list(values)
    keyed = sorted(names, key=lambda n: (not math.isfinite(values[n]), values[n] if math.isfinite(values[n]) else 0.0))
    ranks: dict[str, float] = {}
    i = 0
    while i < len(keyed):
        j = i
        v = values[keyed[i]]
        while j + 1 < len(keyed) and (values[keyed[j + 1]] == v or
                                      (not math.isfinite(v) and not math.isfinite(values[keyed[j + 1]]))):
            j += 1
        r = (i + j) / 2.0 + 1.0
        for n in keyed[i: j + 1]:
            ranks[n] = r
        i = j + 1
    return ranks


def _rank_value(summary: StrategySummary, metric: str) -> float:
    if metric == "final_mae":
        return summary.final_mae_mean
    if metric == "best_fr":
        return summary.best_fr
    return summary.runtime_mean_s


@dataclass
class RankTable:
    strategies: list[str]
    per_benchmark: dict[str, list[dict[str, float]]]
    mean_rank: dict[str, dict[str, float]]

    def rows(self) -> list[list[Any]]:
        return [[s] + [self.mean_rank[m][s] for m in RANK_METRICS] for s in self.strategies]


def summarize_ranks(reports: Sequence[BenchmarkReport]) -> RankTable:
    reports = list(reports)
    if not reports:
        raise ArgumentError("need at least one report to rank")
    names = reports[0].strategies
    for rep in reports[1:]:
        if set(rep.strategies) != set(names):
            raise ArgumentError(f"report {rep.name!r} has strategies {rep.strategies}, expected {names}")
    per_bench = {m: [average_ranks({s: _rank_value(rep.summaries[s], m) for s in names})
                     for rep in reports] for m in RANK_METRICS}
    mean = {m: {s: float(np.mean([r[s] for r in per_bench[m]])) for s in names} for m in RANK_METRICS}
    return RankTable(list(names), per_bench, mean)


def format_rank_table(table: RankTable) -> str:
    header = f"{'strategy':<10}" + "".join(f"{m:>12}" for m in RANK_METRICS)
    lines = [header]
    for row in table.rows():
        lines.append(f"{row[0]:<10}" + "".join(f"{v:>12.2f}" for v in row[1:]))
    return "\n".join(lines)


def format_summary(report: BenchmarkReport) -> str:
    lines = [f"{'strategy':<10}{'final MPE %':>20}{'avg FR':>18}{'best FR':>10}{'runtime s':>12}"]
    for name in report.strategies:
        s = report.summaries[name]
        flag = "  (degraded)" if s.degraded else ""
        lines.append(f"{name:<10}{s.final_mpe_mean:>11.2f} ± {s.final_mpe_std:<6.2f}"
                     f"{s.avg_fr_mean:>9.2f} ± {s.avg_fr_std:<6.2f}{s.best_fr:>10.2f}"
                     f"{s.runtime_mean_s:>12.2f}{flag}")
    return "\n".join(lines)


# -- catastrophic forgetting demo --------------------------------------------

@dataclass
class DemoTrial:
    seed: int
    percent_error: list[float]
    bin_ranges: list[tuple[float, float]]
    predictions: list[list[float]]
    targets: list[list[float]]
    fraction_in_last_two: float

    @property
    def first_to_last_ratio(self) -> float:
        return self.percent_error[0] / self.percent_error[-1]


@dataclass
class DemoReport:
    trials: list[DemoTrial]

    @property
    def median_percent_error(self) -> list[float]:
        return [float(x) for x in np.median([t.percent_error for t in self.trials], axis=0)]

    @property
    def median_ratio(self) -> float:
        return float(np.median([t.first_to_last_ratio for t in self.trials]))

    @property
    def median_fraction_in_last_two(self) -> float:
        return float(np.median([t.fraction_in_last_two for t in self.trials]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "median_percent_error": self.median_percent_error,
            "median_first_to_last_ratio": self.median_ratio,
            "median_fraction_in_last_two_bins": self.median_fraction_in_last_two,
            "trials": [asdict(t) for t in self.trials],
        }


def demo_forgetting(config: BenchmarkConfig) -> DemoReport:
    """Train Naive on a bin-incremental stream and report how the final model treats every bin.

    Per bin: the final model's percent error on the bin's test split, and its
    predictions next to the true targets on all of the bin's samples.
    """
    if config.scenario.kind != "bin_incremental":
        raise ConfigError("the forgetting demo needs a bin_incremental scenario")
    dataset = config.dataset.load()
    streams = build_trial_streams(config, dataset)
    network = config.network.spec(streams[0][0].train.feature_dim)
    trials = []
    for t, stream in enumerate(streams):
        seed = config.base_seed + t
        _, net = train_stream_with_model(stream, "naive", None, config.train.for_seed(seed), network)
        pe, ranges, preds, targs = [], [], [], []
        for exp in stream:
            pe.append(mpe(forward_batch(net, exp.test.features), exp.test.targets))
            whole = Dataset.concat([exp.train, exp.test])
            ranges.append((float(whole.targets.min()), float(whole.targets.max())))
            preds.append(forward_batch(net, whole.features).tolist())
            targs.append(whole.targets.tolist())
        lo = min(ranges[-2][0], ranges[-1][0])
        hi = max(ranges[-2][1], ranges[-1][1])
        everything = np.concatenate([np.asarray(p) for p in preds])
        inside = float(np.mean((everything >= lo) & (everything <= hi)))
        trials.append(DemoTrial(seed, pe, ranges, preds, targs, inside))
    return DemoReport(trials)
