import itertools

import numpy as np
import pytest

from conftest import brute_force_ap, brute_force_auc
from dkm.evaluation import (
    BENCHMARK_TASKS, SweepConfig, auc, average_precision, run_sweep, stratified_split,
    write_splits_csv,
)
from dkm.graph import LabelSet, generate_sbm, laplacian
from dkm.kernel import KernelMatrix, Provenance, diffusion_kernel
from dkm.machines import DecisionScores, DEFAULT_COST_GRID, simple_km_scores
from dkm.utils import ConfigError, DataError


# Metrics
def test_metric_examples():
    assert average_precision([3.0, 2.0, 1.0], [True, True, False]) == 1.0
    assert average_precision([3.0, 2.0, 1.0], [True, False, True]) == pytest.approx(5 / 6, abs=1e-15)
    assert average_precision([0.3, -2.0, 7.0], [True, True, True]) == 1.0
    assert auc([3.0, 2.0, 1.0, 0.0], [True, True, False, False]) == 1.0
    assert auc([1.0, 1.0, 1.0], [True, False, True]) == 0.5
    assert auc([3.0, 2.0, 1.0], [True, False, True]) == 0.5


def test_metric_errors():
    with pytest.raises(DataError):
        average_precision([1.0, 2.0], [False, False])
    with pytest.raises(DataError):
        auc([1.0, 2.0], [True, True])
    with pytest.raises(DataError):
        auc([1.0, 2.0], [True])


def test_metrics_match_brute_force_on_small_instances(rng):
    for n in range(2, 9):
        for truth in itertools.product((False, True), repeat=n):
            if not any(truth) or all(truth):
                continue
            scores = rng.integers(0, 4, size=n).astype(float).tolist()
            assert auc(scores, truth) == pytest.approx(brute_force_auc(scores, truth), abs=1e-12)
            assert average_precision(scores, truth) == pytest.approx(brute_force_ap(scores, truth), abs=1e-12)


def test_metrics_ignore_monotone_transforms(rng):
    scores = rng.standard_normal(15)
    truth = rng.random(15) < 0.4
    truth[:2] = (True, False)
    for transform in (np.exp, lambda s: 2.5 * s + 7.0):
        assert auc(transform(scores), truth) == pytest.approx(auc(scores, truth), abs=1e-12)
        assert average_precision(transform(scores), truth) == pytest.approx(average_precision(scores, truth), abs=1e-12)
    assert auc(scores, truth) + auc(scores, ~truth) == pytest.approx(1.0, abs=1e-12)
    assert auc(-scores, ~truth) == pytest.approx(auc(scores, truth), abs=1e-12)


def test_average_precision_ties_follow_node_index():
    early = DecisionScores([4, 9], [1.0, 1.0], "simple")
    assert average_precision(early, [True, False]) == 1.0
    assert average_precision(early, [False, True]) == 0.5


# Splits
def test_split_exact_halves():
    labels = LabelSet(tuple([1] * 10 + [2] * 10))
    split = stratified_split(labels, 0.5, seed=3)
    observed = labels.classes(split.obs_indices)
    assert (observed == 1).sum() == 5 and (observed == 2).sum() == 5
    assert np.intersect1d(split.obs_indices, split.miss_indices).size == 0
    assert np.union1d(split.obs_indices, split.miss_indices).tolist() == list(range(20))


def test_split_seeds_change_partitions_not_counts():
    labels = LabelSet((1, 1, 1, 2, 2, 2))
    partitions = {tuple(stratified_split(labels, 0.5, seed).obs_indices) for seed in range(10)}
    assert len(partitions) > 1
    for obs in partitions:
        classes = labels.classes(obs)
        assert ((classes == 1).sum(), (classes == 2).sum()) == (2, 2)


def test_split_is_reproducible_and_keeps_unknowns_missing():
    labels = LabelSet((1, None, 2, 1, 2, None, 1, 2))
    a = stratified_split(labels, 0.5, seed=11)
    b = stratified_split(labels, 0.5, seed=11)
    assert np.array_equal(a.obs_indices, b.obs_indices)
    assert {1, 5} <= set(a.miss_indices.tolist())


def test_split_clamps_to_keep_both_sides():
    labels = LabelSet((1, 1, 2, 2, 2))
    split = stratified_split(labels, 0.99, seed=0)
    classes = labels.classes(split.obs_indices)
    assert (classes == 1).sum() == 1 and (classes == 2).sum() == 2


def test_split_errors():
    with pytest.raises(DataError):
        stratified_split(LabelSet((1, 2, 2)), 0.5, seed=0)
    with pytest.raises(ConfigError):
        stratified_split(LabelSet((1, 1, 2, 2)), 1.0, seed=0)


def test_splits_csv(tmp_path):
    labels = LabelSet((1, 1, 2, 2))
    split = stratified_split(labels, 0.5, seed=5)
    path = tmp_path / "splits.csv"
    write_splits_csv([split], ("a", "b", "c", "d"), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "split_id,seed,node_id,role"
    assert len(lines) == 5
    assert sorted(line.split(",")[3] for line in lines[1:]) == ["miss", "miss", "obs", "obs"]


# Sweep
def test_sweep_config_validation():
    with pytest.raises(ConfigError):
        SweepConfig(beta_grid=())
    with pytest.raises(ConfigError):
        SweepConfig(machines=("svm",), cost_grid=())
    with pytest.raises(ConfigError):
        SweepConfig(obs_fraction=0.0)
    with pytest.raises(ConfigError):
        SweepConfig(levels=(-1,))
    with pytest.raises(ConfigError):
        SweepConfig(metric="F1")


def test_single_cell_sweep_matches_manual_pipeline():
    g, labels = generate_sbm((10, 10), 0.5, 0.1, seed=2)
    config = SweepConfig(beta_grid=(0.1,), levels=(0,), n_splits=1, master_seed=8)
    result = run_sweep(g, labels, config)
    assert len(result.rows) == 1

    split = stratified_split(labels, 0.5, seed=8)
    scores = simple_km_scores(diffusion_kernel(laplacian(g), 0.1), split.labels(labels))
    truth = [labels.labels[i] == 1 for i in scores.indices]
    assert result.rows[0].value == auc(scores, truth)
    assert result.rows[0].cost is None


def test_sweep_cell_counts_and_aggregates():
    g, labels = generate_sbm((20, 20), 0.3, 0.05, seed=1)
    config = SweepConfig(beta_grid=(1e-3, 1e-2, 0.1, 1.0), levels=(0, 1, 2), n_splits=3)
    result = run_sweep(g, labels, config)
    assert len(result.aggregates) == 12
    for a in result.aggregates:
        cell = result.cell(a.beta, a.level, a.machine)
        assert len(cell) == a.n_splits == 3
        assert a.mean == pytest.approx(np.mean([r.value for r in cell]))
        assert a.stderr == pytest.approx(np.std([r.value for r in cell], ddof=1) / np.sqrt(3))
        if a.level == 0:
            assert a.level_gain is None
        else:
            previous = result.aggregate(a.beta, a.level - 1, a.machine)
            assert a.level_gain == pytest.approx(a.mean - previous.mean)


def test_sweep_svm_rows_record_the_best_cost():
    g, labels = generate_sbm((8, 8), 0.6, 0.1, seed=4)
    config = SweepConfig(beta_grid=(0.5,), levels=(0,), machines=("simple", "svm"), cost_grid=(0.01, 1.0), n_splits=2)
    result = run_sweep(g, labels, config)
    svm_rows = result.cell(0.5, 0, "svm")
    assert len(svm_rows) == 2
    assert all(r.cost in (0.01, 1.0) for r in svm_rows)
    assert all(r.cost is None for r in result.cell(0.5, 0, "simple"))


def test_sweep_skips_degenerate_cells(monkeypatch, caplog):
    g, labels = generate_sbm((5, 5), 0.5, 0.1, seed=0)
    monkeypatch.setattr(
        "dkm.evaluation.diffusion_kernel",
        lambda L, beta: KernelMatrix(np.ones((10, 10)), Provenance(level=0, beta=beta)),
    )
    config = SweepConfig(beta_grid=(0.0,), levels=(0, 1), n_splits=2)
    result = run_sweep(g, labels, config)
    assert result.missing_cells and result.missing_cells[0][:2] == (0.0, 1)
    assert result.cell(0.0, 1, "simple") == []
    assert len(result.cell(0.0, 0, "simple")) == 2
    assert any("degenerate" in r.message for r in caplog.records)


def test_sweep_output_is_independent_of_thread_count(tmp_path):
    g, labels = generate_sbm((12, 12), 0.4, 0.08, seed=6)
    outputs = []
    for threads in (1, 3):
        config = SweepConfig(beta_grid=(0.01, 0.1, 1.0), levels=(0, 1), n_splits=4, threads=threads)
        result = run_sweep(g, labels, config)
        rows, agg = tmp_path / f"rows{threads}.csv", tmp_path / f"agg{threads}.csv"
        result.write_rows_csv(rows)
        result.write_aggregate_csv(agg)
        outputs.append((rows.read_bytes(), agg.read_bytes()))
    assert outputs[0] == outputs[1]
    header = outputs[0][1].decode().splitlines()[0]
    assert header == "beta,level,machine,metric,mean,stderr,n_splits,level_gain"


def test_obs_only_bandwidth_domain_runs_per_split():
    g, labels = generate_sbm((10, 10), 0.5, 0.1, seed=3)
    shared = run_sweep(g, labels, SweepConfig(beta_grid=(0.1,), levels=(1,), n_splits=2))
    per_split = run_sweep(g, labels, SweepConfig(beta_grid=(0.1,), levels=(1,), n_splits=2, bandwidth_domain="obs_only"))
    assert len(per_split.rows) == len(shared.rows) == 2


def test_benchmark_task_catalogue():
    assert BENCHMARK_TASKS["enron_unbalanced"]["class_counts"] == (16, 166)
    assert BENCHMARK_TASKS["enron_unbalanced"]["metric"] == "AP"
    assert BENCHMARK_TASKS["lazega"]["metric"] == "AUC"
    assert 1e-5 in DEFAULT_COST_GRID and 100.0 in DEFAULT_COST_GRID
