"""Ranking metrics, stratified splits and the parameter sweep.

Reproducibility contract: every random choice comes from
``numpy.random.Generator(numpy.random.PCG64(seed))``.  A split draws one
``permutation`` (a Fisher-Yates shuffle) of the class-1 members in ascending
index order, then one of the class-2 members, and observes the first
``floor(fraction * size + 0.5)`` of each (clamped so both sides keep a node).
Split ``s`` of a sweep uses seed ``master_seed + s``.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import rankdata

try:
    from .graph import Graph, LabelSet, laplacian
    from .kernel import BANDWIDTH_DOMAINS, KernelMatrix, deepen, diffusion_kernel
    from .machines import MACHINES, DEFAULT_COST_GRID, DecisionScores, dkm_run
    from .utils import ConfigError, DataError, DegenerateKernelError, format_number
except ImportError:
    from graph import Graph, LabelSet, laplacian
    from kernel import BANDWIDTH_DOMAINS, KernelMatrix, deepen, diffusion_kernel
    from machines import MACHINES, DEFAULT_COST_GRID, DecisionScores, dkm_run
    from utils import ConfigError, DataError, DegenerateKernelError, format_number

logger = logging.getLogger(__name__)

METRICS = ("AP", "AUC")
OUTPUT_DIGITS = 12

# The three evaluation tasks: class sizes and the metric each is judged by
BENCHMARK_TASKS: Dict[str, dict] = {
    "enron_unbalanced": {"dataset": "enron", "class_counts": (16, 166), "metric": "AP"},
    "enron_balanced": {"dataset": "enron", "class_counts": (77, 105), "metric": "AUC"},
    "lazega": {"dataset": "lazega", "class_counts": (20, 16), "metric": "AUC"},
}

ScoreInput = Union[DecisionScores, Sequence[float], np.ndarray]


def _score_arrays(scores: ScoreInput, truth: Sequence[bool]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(scores, DecisionScores):
        values, order_key = scores.values, scores.indices
    else:
        values = np.asarray(scores, dtype=float)
        order_key = np.arange(values.size)
    truth = np.asarray(truth, dtype=bool)
    if truth.shape != values.shape:
        raise DataError(f"{truth.size} truth values for {values.size} scores")
    return values, truth, order_key


# Metrics
def average_precision(scores: ScoreInput, truth: Sequence[bool]) -> float:
    """Non-interpolated AP: mean precision at the rank of each positive.

    Nodes are ranked by descending score; equal scores are ordered by node
    index, so AP on tie-heavy scores depends on that order.
    """
    values, truth, order_key = _score_arrays(scores, truth)
    positives = int(truth.sum())
    if positives == 0:
        raise DataError("average precision needs at least one positive")
    order = np.lexsort((order_key, -values))
    hits = truth[order]
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision[hits].sum() / positives)


def auc(scores: ScoreInput, truth: Sequence[bool]) -> float:
    """Area under the ROC curve by the rank-sum identity, midranks for ties."""
    values, truth, _ = _score_arrays(scores, truth)
    positives = int(truth.sum())
    negatives = truth.size - positives
    if positives == 0 or negatives == 0:
        raise DataError("AUC needs at least one positive and one negative")
    ranks = rankdata(values, method="average")
    return float((ranks[truth].sum() - positives * (positives + 1) / 2) / (positives * negatives))


METRIC_FUNCTIONS = {"AP": average_precision, "AUC": auc}


# Splits
@dataclass(frozen=True)
class Split:
    seed: int
    obs_fraction: float
    obs_indices: np.ndarray
    miss_indices: np.ndarray

    def labels(self, labels: LabelSet) -> LabelSet:
        """The label set as seen by a classifier: only observed labels kept."""
        return labels.hide(self.obs_indices)

    def as_rows(self, split_id: int) -> List[Tuple[int, int, int, str]]:
        rows = [(split_id, self.seed, int(i), "obs") for i in self.obs_indices]
        rows += [(split_id, self.seed, int(i), "miss") for i in self.miss_indices]
        return sorted(rows, key=lambda row: row[2])


def _observed_count(fraction: float, size: int) -> int:
    return min(max(int(math.floor(fraction * size + 0.5)), 1), size - 1)


def stratified_split(labels: LabelSet, obs_fraction: float, seed: int) -> Split:
    """Random observed/missing partition keeping each class's observed fraction."""
    if not 0.0 < obs_fraction < 1.0:
        raise ConfigError(f"obs_fraction must lie in (0, 1), got {obs_fraction}")
    rng = np.random.Generator(np.random.PCG64(seed))
    observed = []
    for c in (1, 2):
        members = np.array([i for i, y in enumerate(labels.labels) if y == c], dtype=int)
        if members.size < 2:
            raise DataError(
                f"class {c} has {members.size} labeled node(s); a split needs at least 2",
                {"class": c, "size": int(members.size)},
            )
        k = _observed_count(obs_fraction, members.size)
        observed.append(rng.permutation(members)[:k])
    obs = np.sort(np.concatenate(observed))
    miss = np.setdiff1d(np.arange(labels.n), obs)
    return Split(seed, obs_fraction, obs, miss)


def write_splits_csv(splits: Sequence[Split], node_ids: Sequence[str], path: Union[str, Path]):
    with Path(path).open("w") as handle:
        handle.write("split_id,seed,node_id,role\n")
        for split_id, split in enumerate(splits):
            for _, seed, index, role in split.as_rows(split_id):
                handle.write(f"{split_id},{seed},{node_ids[index]},{role}\n")


# Sweep
@dataclass(frozen=True)
class SweepConfig:
    beta_grid: Tuple[float, ...] = (1e-3, 1e-2, 0.1, 1.0)
    levels: Tuple[int, ...] = (0, 1, 2)
    machines: Tuple[str, ...] = ("simple",)
    cost_grid: Tuple[float, ...] = DEFAULT_COST_GRID
    n_splits: int = 25
    obs_fraction: float = 0.5
    metric: str = "AUC"
    master_seed: int = 0
    bandwidth_domain: str = "all_nodes"
    threads: int = 1

    def __post_init__(self):
        if not self.beta_grid or any(not (b >= 0 and math.isfinite(b)) for b in self.beta_grid):
            raise ConfigError(f"beta_grid must be non-empty and nonnegative, got {self.beta_grid}")
        if not self.levels or any(level < 0 for level in self.levels):
            raise ConfigError(f"levels must be non-empty and nonnegative, got {self.levels}")
        if not self.machines or any(m not in MACHINES for m in self.machines):
            raise ConfigError(f"machines must be a non-empty subset of {MACHINES}, got {self.machines}")
        if "svm" in self.machines and (not self.cost_grid or any(c <= 0 for c in self.cost_grid)):
            raise ConfigError("the svm machine needs a non-empty grid of positive costs")
        if self.n_splits < 1:
            raise ConfigError(f"n_splits must be at least 1, got {self.n_splits}")
        if not 0.0 < self.obs_fraction < 1.0:
            raise ConfigError(f"obs_fraction must lie in (0, 1), got {self.obs_fraction}")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.bandwidth_domain not in BANDWIDTH_DOMAINS:
            raise ConfigError(f"bandwidth_domain must be one of {BANDWIDTH_DOMAINS}")
        if self.threads < 1:
            raise ConfigError(f"threads must be at least 1, got {self.threads}")


@dataclass(frozen=True)
class SweepRow:
    beta: float
    level: int
    machine: str
    cost: Optional[float]
    split_id: int
    metric: str
    value: float

    @property
    def key(self) -> tuple:
        return (self.beta, self.level, self.machine, self.split_id)


@dataclass(frozen=True)
class CellAggregate:
    beta: float
    level: int
    machine: str
    metric: str
    mean: float
    stderr: float
    n_splits: int
    level_gain: Optional[float] = None


@dataclass(frozen=True)
class SweepResult:
    rows: Tuple[SweepRow, ...]
    aggregates: Tuple[CellAggregate, ...]
    missing_cells: Tuple[Tuple[float, int, str], ...] = ()
    splits: Tuple[Split, ...] = field(default=(), repr=False)

    def cell(self, beta: float, level: int, machine: str) -> List[SweepRow]:
        return [r for r in self.rows if (r.beta, r.level, r.machine) == (beta, level, machine)]

    def aggregate(self, beta: float, level: int, machine: str) -> Optional[CellAggregate]:
        for a in self.aggregates:
            if (a.beta, a.level, a.machine) == (beta, level, machine):
                return a
        return None

    def write_rows_csv(self, path: Union[str, Path]):
        with Path(path).open("w") as handle:
            handle.write("beta,level,machine,cost,split_id,metric,value\n")
            for r in self.rows:
                cost = "" if r.cost is None else format_number(r.cost, OUTPUT_DIGITS)
                handle.write(
                    f"{format_number(r.beta, OUTPUT_DIGITS)},{r.level},{r.machine},{cost},"
                    f"{r.split_id},{r.metric},{format_number(r.value, OUTPUT_DIGITS)}\n"
                )

    def write_aggregate_csv(self, path: Union[str, Path]):
        with Path(path).open("w") as handle:
            handle.write("beta,level,machine,metric,mean,stderr,n_splits,level_gain\n")
            for a in self.aggregates:
                gain = "" if a.level_gain is None else format_number(a.level_gain, OUTPUT_DIGITS)
                handle.write(
                    f"{format_number(a.beta, OUTPUT_DIGITS)},{a.level},{a.machine},{a.metric},"
                    f"{format_number(a.mean, OUTPUT_DIGITS)},{format_number(a.stderr, OUTPUT_DIGITS)},"
                    f"{a.n_splits},{gain}\n"
                )


def _kernels_by_level(K0: KernelMatrix, levels: Sequence[int], obs_indices=None) -> Dict[int, Union[KernelMatrix, DegenerateKernelError]]:
    """Deepen incrementally through the sorted levels; degeneracy poisons every deeper level."""
    kernels: Dict[int, Union[KernelMatrix, DegenerateKernelError]] = {}
    K, current, failure = K0, 0, None
    for level in sorted(set(levels)):
        if failure is None:
            try:
                K = deepen(K, level - current, obs_indices)
                current = level
            except DegenerateKernelError as e:
                failure = e
        kernels[level] = K if failure is None else failure
    return kernels


def _score_cell(
    K: KernelMatrix,
    labels: LabelSet,
    split: Split,
    split_id: int,
    machine: str,
    config: SweepConfig,
) -> SweepRow:
    split_labels = split.labels(labels)
    score_sets = dkm_run(K, split_labels, 0, machine, config.cost_grid)
    metric = METRIC_FUNCTIONS[config.metric]
    best_value, best_cost = None, None
    for scores in score_sets:
        labeled = np.array([labels.labels[i] is not None for i in scores.indices], dtype=bool)
        truth = np.array([labels.labels[i] == 1 for i in scores.indices[labeled]], dtype=bool)
        kept = DecisionScores(scores.indices[labeled], scores.values[labeled], scores.machine_tag,
                              scores.level, scores.beta, scores.cost)
        value = metric(kept, truth)
        # oracle selection over the cost grid; first cost wins ties
        if best_value is None or value > best_value:
            best_value, best_cost = value, scores.cost
    return SweepRow(K.beta, K.level, machine, best_cost, split_id, config.metric, best_value)


def run_sweep(g: Graph, labels: LabelSet, config: SweepConfig) -> SweepResult:
    """Evaluate every (beta, level, machine) cell over shared stratified splits.

    SVM rows carry the best metric over the cost grid measured on the missing
    nodes themselves (an optimistic oracle choice), with the chosen cost in
    the ``cost`` column.
    """
    if labels.n != g.n:
        raise DataError(f"{labels.n} labels for a {g.n}-node graph")
    started = time.time()
    splits = tuple(stratified_split(labels, config.obs_fraction, config.master_seed + s) for s in range(config.n_splits))
    L = laplacian(g)
    levels = sorted(set(config.levels))

    def sweep_beta(beta: float) -> Tuple[List[SweepRow], List[Tuple[float, int, str]]]:
        rows: List[SweepRow] = []
        missing: Dict[int, str] = {}
        K0 = diffusion_kernel(L, beta)
        shared = _kernels_by_level(K0, levels) if config.bandwidth_domain == "all_nodes" else None
        for split_id, split in enumerate(splits):
            kernels = shared if shared is not None else _kernels_by_level(K0, levels, split.obs_indices)
            for level in levels:
                K = kernels[level]
                if isinstance(K, DegenerateKernelError):
                    missing.setdefault(level, K.message)
                    continue
                for machine in config.machines:
                    rows.append(_score_cell(K, labels, split, split_id, machine, config))
        # a cell degenerate on any split is dropped as a whole
        rows = [r for r in rows if r.level not in missing]
        return rows, [(beta, level, reason) for level, reason in sorted(missing.items())]

    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        results = list(pool.map(sweep_beta, config.beta_grid))

    rows = sorted((r for beta_rows, _ in results for r in beta_rows), key=lambda r: r.key)
    missing_cells = tuple(cell for _, cells in results for cell in cells)
    for beta, level, reason in missing_cells:
        logger.warning(
            f"Sweep cell beta={beta:g} level={level} is degenerate and was skipped",
            extra={"beta": beta, "level": level, "reason": reason},
        )

    aggregates = _aggregate(rows, config.metric)
    logger.info(
        "Sweep finished",
        extra={
            "cells": len(aggregates),
            "missing_cells": len(missing_cells),
            "splits": config.n_splits,
            "duration": round(time.time() - started, 3),
        },
    )
    return SweepResult(tuple(rows), aggregates, missing_cells, splits)


def _aggregate(rows: Sequence[SweepRow], metric: str) -> Tuple[CellAggregate, ...]:
    cells: Dict[Tuple[float, int, str], List[float]] = {}
    for r in rows:
        cells.setdefault((r.beta, r.level, r.machine), []).append(r.value)

    aggregates = []
    previous: Dict[Tuple[float, str], float] = {}
    for (beta, level, machine) in sorted(cells):
        values = np.array(cells[(beta, level, machine)])
        mean = float(values.mean())
        stderr = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
        gain = None
        if (beta, machine) in previous:
            gain = mean - previous[(beta, machine)]
        previous[(beta, machine)] = mean
        aggregates.append(CellAggregate(beta, level, machine, metric, mean, stderr, int(values.size), gain))
    return tuple(aggregates)
