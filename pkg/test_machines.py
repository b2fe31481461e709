import numpy as np
import pytest
from pydantic import ValidationError

from conftest import random_graph, random_labels, random_psd
from dkm.graph import LabelSet, laplacian
from dkm.kernel import KernelMatrix, deepen, diffusion_kernel, explicit_features, gaussian_step, bandwidth_heuristic, feature_distance
from dkm.machines import (
    DEFAULT_COST_GRID, DecisionScores, SvmModel, centroid_threshold, classify_threshold, dkm_run,
    kkt_violation, simple_km_scores, svm_scores, svm_train, write_scores_csv,
)
from dkm.utils import ConfigError, DataError, NumericalError

LINE = np.array([-2.0, -1.0, 1.0, 2.0])
LINE_CLASSES = np.array([2, 2, 1, 1])


# Simple machine
def test_simple_scores_on_identity_kernel():
    labels = LabelSet((1, 2, None, 1, 2))
    scores = simple_km_scores(KernelMatrix(np.eye(5)), labels)
    assert scores.indices.tolist() == [2]
    assert scores.values.tolist() == [0.0]
    assert scores.machine_tag == "simple" and scores.cost is None


def test_simple_scores_single_node_classes(rng):
    K = KernelMatrix(random_psd(rng, 4))
    labels = LabelSet((1, None, 2, None))
    scores = simple_km_scores(K, labels)
    for index, value in scores.as_dict().items():
        assert value == K.K[index, 0] - K.K[index, 2]


def test_simple_scores_hand_computed():
    K = np.array([
        [2.0, 0.5, 0.1, 0.3, 0.4],
        [0.5, 2.0, 0.2, 0.6, 0.1],
        [0.1, 0.2, 2.0, 0.9, 0.7],
        [0.3, 0.6, 0.9, 2.0, 0.8],
        [0.4, 0.1, 0.7, 0.8, 2.0],
    ])
    labels = LabelSet((1, 1, 2, 2, None))
    scores = simple_km_scores(KernelMatrix(K), labels)
    assert scores.values[0] == pytest.approx((0.4 + 0.1) / 2 - (0.7 + 0.8) / 2, abs=1e-15)


def test_simple_scores_need_both_classes():
    with pytest.raises(DataError):
        simple_km_scores(KernelMatrix(np.eye(3)), LabelSet((1, 1, None)))


def test_simple_scores_rank_is_scale_invariant(rng):
    K = KernelMatrix(random_psd(rng, 12))
    labels = random_labels(rng, 12, 5)
    base = simple_km_scores(K, labels)
    scaled = simple_km_scores(K.scaled(3.7), labels)
    assert np.array_equal(np.argsort(base.values, kind="stable"), np.argsort(scaled.values, kind="stable"))


def test_simple_scores_flip_sign_when_labels_swap(rng):
    K = KernelMatrix(random_psd(rng, 5))
    forward = simple_km_scores(K, LabelSet((1, 2, None, None, None)))
    backward = simple_km_scores(K, LabelSet((2, 1, None, None, None)))
    assert np.array_equal(forward.values, -backward.values)


def test_centroid_threshold_cases(rng):
    assert centroid_threshold(KernelMatrix(np.eye(6)), LabelSet((1, 1, 1, 2, 2, 2))) == 0.0
    K = KernelMatrix(random_psd(rng, 3))
    c = centroid_threshold(K, LabelSet((1, 2, None)))
    assert c == pytest.approx((K.K[0, 0] - K.K[1, 1]) / 2, abs=1e-14)


def test_simple_machine_is_nearest_centroid(rng):
    for _ in range(10):
        K = KernelMatrix(random_psd(rng, 20, rank=6))
        labels = random_labels(rng, 20, 8)
        scores = simple_km_scores(K, labels)
        c = centroid_threshold(K, labels)
        X = explicit_features(K)
        classes = labels.classes(labels.observed)
        mean_1 = X[:, labels.observed[classes == 1]].mean(axis=1)
        mean_2 = X[:, labels.observed[classes == 2]].mean(axis=1)
        predicted = classify_threshold(scores, c)
        for index, value, label in zip(scores.indices, scores.values, predicted):
            if abs(value - c) <= 1e-9:
                continue
            nearer_1 = np.linalg.norm(X[:, index] - mean_1) < np.linalg.norm(X[:, index] - mean_2)
            assert (label == 1) == nearer_1


def test_classify_threshold_rules():
    assert classify_threshold([0.2, -0.1], 0.0).tolist() == [1, 2]
    assert classify_threshold([0.5], 0.5).tolist() == [2]
    assert classify_threshold([-1e300, 0.0, 3.0], -np.finfo(float).max).tolist() == [1, 1, 1]


# SVM
def test_svm_two_points_identity():
    model = svm_train(np.eye(2), [1, 2], cost=1.0)
    assert model.alphas.tolist() == [1.0, 1.0]
    assert model.bias == pytest.approx(0.0, abs=1e-12)
    assert model.support_indices.tolist() == [0, 1]


def test_svm_separable_line():
    K = np.outer(LINE, LINE)
    model = svm_train(K, LINE_CLASSES, cost=100.0)
    assert np.array_equal(np.sign(model.decision(K)), np.sign(LINE))
    assert kkt_violation(model, K) <= 1e-3 + 1e-9
    assert abs(model.alphas @ model.y) <= 1e-8


def test_svm_duplicated_free_support_vector_sits_on_the_margin():
    K = np.outer(LINE, LINE)
    model = svm_train(K, LINE_CLASSES, cost=100.0)
    free = [i for i in model.support_indices if model.alphas[i] < model.cost]
    assert free
    duplicate = svm_scores(model, K[free[:1]])
    assert abs(model.y[free[0]] * duplicate.values[0] - 1.0) <= 1e-3


def test_svm_is_deterministic(rng):
    K = random_psd(rng, 15)
    classes = rng.integers(1, 3, size=15)
    classes[:2] = (1, 2)
    a = svm_train(K, classes, cost=0.5)
    b = svm_train(K.copy(), classes.copy(), cost=0.5)
    assert np.array_equal(a.alphas, b.alphas) and a.bias == b.bias


def test_svm_certificate_and_monotone_objective(rng):
    for cost in (1e-3, 0.1, 1.0, 10.0):
        K = random_psd(rng, 30, rank=8)
        classes = rng.integers(1, 3, size=30)
        classes[:2] = (1, 2)
        model = svm_train(K, classes, cost, track_objective=True)
        assert not model.hit_limit
        assert np.all(model.alphas >= 0) and np.all(model.alphas <= cost)
        assert abs(model.alphas @ model.y) <= 1e-8
        assert kkt_violation(model, K) <= 1e-3 + 1e-9
        trace = np.array(model.objective_trace)
        assert np.all(np.diff(trace) >= -1e-10 * max(1.0, np.abs(trace).max()))


def test_svm_iteration_cap_is_reported(rng, caplog):
    K = random_psd(rng, 20)
    classes = np.array([1, 2] * 10)
    model = svm_train(K, classes, cost=10.0, max_updates=1)
    assert model.hit_limit and model.updates == 1
    assert any("iteration cap" in r.message for r in caplog.records)


def test_svm_rejects_bad_inputs():
    with pytest.raises(DataError):
        svm_train(np.eye(2), [1, 1], cost=1.0)
    with pytest.raises(ConfigError):
        svm_train(np.eye(2), [1, 2], cost=0.0)
    with pytest.raises(NumericalError):
        svm_train(np.array([[0.0, 1.0], [1.0, 0.0]]), [1, 2], cost=1.0)


def test_svm_scores_arithmetic():
    empty = SvmModel(np.zeros(3), np.array([1.0, -1.0, 1.0]), 0.25, 1.0)
    assert svm_scores(empty, np.ones((2, 3))).values.tolist() == [0.25, 0.25]
    model = SvmModel(np.array([0.5, 0.5]), np.array([1.0, -1.0]), 0.1, 1.0)
    scores = svm_scores(model, np.array([[2.0, 1.0], [0.0, 4.0]]), miss_indices=[7, 9])
    assert scores.values.tolist() == pytest.approx([0.6, -1.9])
    assert scores.indices.tolist() == [7, 9]
    with pytest.raises(DataError):
        svm_scores(model, np.ones((2, 3)))


# Deep kernel machine driver
def test_dkm_run_compositions(rng):
    K0 = diffusion_kernel(laplacian(random_graph(rng, 14, 0.3)), 0.3)
    labels = random_labels(rng, 14, 6)
    level0 = dkm_run(K0, labels, 0, "simple")
    assert len(level0) == 1
    assert np.array_equal(level0[0].values, simple_km_scores(K0, labels).values)

    K1 = gaussian_step(K0, bandwidth_heuristic(feature_distance(K0)))
    level1 = dkm_run(K0, labels, 1, "simple")[0]
    assert np.array_equal(level1.values, simple_km_scores(K1, labels).values)
    assert level1.level == 1 and level1.beta == 0.3

    level2 = dkm_run(K0, labels, 2, "simple")[0]
    assert np.array_equal(level2.values, dkm_run(deepen(K0, 1), labels, 1, "simple")[0].values)


def test_dkm_run_svm_returns_one_set_per_cost(rng):
    K0 = KernelMatrix(random_psd(rng, 12))
    labels = random_labels(rng, 12, 4)
    sets = dkm_run(K0, labels, 0, "svm", DEFAULT_COST_GRID)
    assert [s.cost for s in sets] == list(DEFAULT_COST_GRID)
    assert all(s.machine_tag == "svm" and len(s) == 4 for s in sets)
    with pytest.raises(ConfigError):
        dkm_run(K0, labels, 0, "svm", [])
    with pytest.raises(ConfigError):
        dkm_run(K0, labels, 0, "forest")


def test_decision_scores_reject_non_finite():
    with pytest.raises(NumericalError):
        DecisionScores([0], [np.inf], "simple")


def test_decision_scores_are_read_only_copies():
    values = np.array([0.5, -1.0])
    scores = DecisionScores([3, 7], values, "svm", level=2, beta=0.1, cost=1.0)
    values[0] = 9.0
    assert scores.values.tolist() == [0.5, -1.0]
    assert scores.indices.dtype.kind == "i"
    assert not scores.values.flags.writeable
    assert scores.as_dict() == {3: 0.5, 7: -1.0}
    with pytest.raises(DataError):
        DecisionScores([0, 1], [1.0], "simple")
    with pytest.raises(DataError):
        DecisionScores([0], [1.0], "forest")
    with pytest.raises(ValidationError):
        DecisionScores([0], [1.0], "simple", level=-1)


def test_scores_csv(tmp_path):
    scores = DecisionScores([1, 3], [0.5, -0.25], "simple", level=1, beta=0.1)
    path = tmp_path / "scores.csv"
    write_scores_csv([scores], ("a", "b", "c", "d"), path, predicted=[np.array([1, 2])])
    assert path.read_text().splitlines() == [
        "node_id,score,machine_tag,level,beta,cost,predicted",
        "b,0.5,simple,1,0.10000000000000001,,1",
        "d,-0.25,simple,1,0.10000000000000001,,2",
    ]
