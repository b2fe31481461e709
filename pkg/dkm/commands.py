import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

try:
    from .config import RunConfig
    from .evaluation import BENCHMARK_TASKS, run_sweep, write_splits_csv
    from .graph import (
        Graph, LabelSet, blend_similarity, drop_isolated, generate_sbm, laplacian,
        load_dense_matrix, load_edge_list, load_labels, load_status_file, write_edge_list, write_labels,
    )
    from .kernel import KernelMatrix, deepen, diffusion_kernel, load_kernel_csv, save_kernel_csv
    from .machines import centroid_threshold, classify_threshold, dkm_run, write_scores_csv
    from .utils import ConfigError
except ImportError:
    # For direct execution without package structure
    from config import RunConfig
    from evaluation import BENCHMARK_TASKS, run_sweep, write_splits_csv
    from graph import (
        Graph, LabelSet, blend_similarity, drop_isolated, generate_sbm, laplacian,
        load_dense_matrix, load_edge_list, load_labels, load_status_file, write_edge_list, write_labels,
    )
    from kernel import KernelMatrix, deepen, diffusion_kernel, load_kernel_csv, save_kernel_csv
    from machines import centroid_threshold, classify_threshold, dkm_run, write_scores_csv
    from utils import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Command:
    name: str
    handler: Callable[[RunConfig], List[Path]]
    help: str
    seed_field: str = "master_seed"


class CommandRouter:
    """Named commands, registered with a decorator and dispatched by name."""

    def __init__(self):
        self.commands: Dict[str, Command] = {}

    def command(self, name: str, help: str, seed_field: str = "master_seed"):
        def register(handler: Callable[[RunConfig], List[Path]]):
            self.commands[name] = Command(name, handler, help, seed_field)
            return handler
        return register

    def get(self, name: str) -> Command:
        if name not in self.commands:
            raise ConfigError(f"unknown command {name!r}; expected one of {sorted(self.commands)}")
        return self.commands[name]

    def dispatch(self, name: str, config: RunConfig) -> List[Path]:
        return self.get(name).handler(config)


router = CommandRouter()


# Loading
@dataclass(frozen=True)
class Dataset:
    node_ids: Tuple[str, ...]
    graph: Optional[Graph] = None
    labels: Optional[LabelSet] = None
    kernel: Optional[KernelMatrix] = None


def _load_source(config: RunConfig) -> Tuple[Optional[Graph], Optional[LabelSet], Optional[KernelMatrix], Tuple[str, ...]]:
    source = config.require_data_source()
    if source == "kernel_input":
        kernel, node_ids = load_kernel_csv(config.kernel_input)
        return None, None, kernel, node_ids
    generated = None
    if source == "edge_list":
        graph = load_edge_list(config.edge_list, config.n_hint)
    elif source == "dense_matrix":
        graph = load_dense_matrix(config.dense_matrix, config.dense_format)
    elif source == "blend":
        graph = blend_similarity([(load_dense_matrix(e.path, config.dense_format), e.weight) for e in config.blend])
    else:
        p_in = config.sbm_p_in[0] if len(config.sbm_p_in) == 1 else config.sbm_p_in
        graph, generated = generate_sbm(config.sbm_sizes, p_in, config.sbm_p_out, config.sbm_seed)
    return graph, generated, None, graph.node_ids


def load_dataset(config: RunConfig, need_labels: bool = True) -> Dataset:
    graph, labels, kernel, node_ids = _load_source(config)
    if config.labels is not None:
        labels = load_labels(config.labels, node_ids)
    elif config.status_file is not None:
        labels = load_status_file(config.status_file, node_ids, config.task)
    if labels is None and need_labels:
        raise ConfigError("no labels configured; set labels or status_file")

    if config.drop_isolated and graph is not None:
        pruned, removed = drop_isolated(graph)
        if removed:
            gone = set(removed)
            if labels is not None:
                labels = LabelSet(tuple(y for node_id, y in zip(graph.node_ids, labels.labels) if node_id not in gone))
            graph, node_ids = pruned, pruned.node_ids

    if labels is not None and config.task in BENCHMARK_TASKS:
        expected = BENCHMARK_TASKS[config.task]["class_counts"]
        if (labels.n1, labels.n2) != expected:
            logger.warning(
                f"Class counts {labels.n1} vs {labels.n2} differ from the {config.task} task's {expected[0]} vs {expected[1]}",
                extra={"task": config.task, "n1": labels.n1, "n2": labels.n2},
            )
    return Dataset(tuple(node_ids), graph, labels, kernel)


def base_kernel(dataset: Dataset, beta: float) -> KernelMatrix:
    """The level-0 kernel: the imported one, or the diffusion kernel of the graph."""
    if dataset.kernel is not None:
        return dataset.kernel
    return diffusion_kernel(laplacian(dataset.graph), beta)


def _require_output(config: RunConfig) -> Path:
    if config.output is None:
        raise ConfigError("no output path configured; set output or use --out")
    return config.output


def _sibling(path: Path, tag: str) -> Path:
    return path.with_name(f"{path.stem}_{tag}{path.suffix}")


def _bandwidth_nodes(config: RunConfig, dataset: Dataset) -> Optional[np.ndarray]:
    if config.bandwidth_domain == "all_nodes":
        return None
    if dataset.labels is None:
        raise ConfigError("bandwidth_domain = obs_only needs labels")
    return dataset.labels.observed


# Commands
@router.command("kernel", help="write the level-k deep kernel as CSV")
def cmd_kernel(config: RunConfig) -> List[Path]:
    beta, level = config.single_beta(), config.single_level()
    output = _require_output(config)
    dataset = load_dataset(config, need_labels=config.bandwidth_domain == "obs_only")
    K = deepen(base_kernel(dataset, beta), level, _bandwidth_nodes(config, dataset))
    save_kernel_csv(K, output, dataset.node_ids)
    logger.info("Kernel written", extra={"path": str(output), "level": K.level, "beta": K.beta, "nodes": K.n})
    return [output]


@router.command("classify", help="score every node whose label is '?'")
def cmd_classify(config: RunConfig) -> List[Path]:
    beta, level = config.single_beta(), config.single_level()
    output = _require_output(config)
    dataset = load_dataset(config)
    labels = dataset.labels
    labels.require_both_classes()
    K = deepen(base_kernel(dataset, beta), level, _bandwidth_nodes(config, dataset))

    score_sets, predicted = [], []
    for machine in config.machines:
        for scores in dkm_run(K, labels, 0, machine, config.cost_grid):
            score_sets.append(scores)
            if config.with_labels:
                threshold = centroid_threshold(K, labels) if machine == "simple" else 0.0
                predicted.append(classify_threshold(scores, threshold))

    write_scores_csv(score_sets, dataset.node_ids, output, predicted if config.with_labels else None)
    logger.info(
        "Scores written",
        extra={"path": str(output), "missing": int(labels.missing.size), "score_sets": len(score_sets)},
    )
    return [output]


@router.command("sweep", help="evaluate a beta x level x machine grid over stratified splits")
def cmd_sweep(config: RunConfig) -> List[Path]:
    output = _require_output(config)
    aggregate_output = config.aggregate_output or _sibling(output, "aggregate")
    sweep_config = config.to_sweep_config()
    dataset = load_dataset(config)
    if dataset.graph is None:
        raise ConfigError("sweep builds diffusion kernels and needs a graph source, not kernel_input")

    result = run_sweep(dataset.graph, dataset.labels, sweep_config)
    result.write_rows_csv(output)
    result.write_aggregate_csv(aggregate_output)
    written = [output, aggregate_output]
    if config.splits_output is not None:
        write_splits_csv(result.splits, dataset.node_ids, config.splits_output)
        written.append(config.splits_output)
    logger.info(
        "Sweep written",
        extra={"path": str(output), "rows": len(result.rows), "missing_cells": len(result.missing_cells)},
    )
    return written


@router.command("generate", help="sample a two-block stochastic block model", seed_field="sbm_seed")
def cmd_generate(config: RunConfig) -> List[Path]:
    if not config.sbm_sizes:
        raise ConfigError("generate needs sbm_sizes")
    output = _require_output(config)
    labels_output = config.labels_output or _sibling(output, "labels")
    p_in = config.sbm_p_in[0] if len(config.sbm_p_in) == 1 else config.sbm_p_in
    graph, labels = generate_sbm(config.sbm_sizes, p_in, config.sbm_p_out, config.sbm_seed)
    write_edge_list(graph, output)
    write_labels(graph, labels, labels_output)
    logger.info(
        "Graph generated",
        extra={"path": str(output), "nodes": graph.n, "edges": graph.edge_count, "seed": config.sbm_seed},
    )
    return [output, labels_output]
