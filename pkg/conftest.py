import logging

import numpy as np
import pytest

from dkm.graph import Graph, LabelSet


@pytest.fixture(autouse=True)
def restore_root_logging():
    """Commands reconfigure the root logger; put it back after each test."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers[:]:
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


@pytest.fixture(autouse=True)
def plain_environment(monkeypatch):
    for name in ("ENVIRONMENT", "DKM_LOG_FORMAT", "DKM_LOG_LEVEL", "DKM_THREADS", "SENTRY_DSN"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240601))


def path_graph(n: int) -> Graph:
    W = np.zeros((n, n))
    for i in range(n - 1):
        W[i, i + 1] = W[i + 1, i] = 1.0
    return Graph(tuple(str(i) for i in range(n)), W)


def random_graph(rng, n: int, p: float) -> Graph:
    A = np.triu(rng.random((n, n)) < p, 1).astype(float)
    return Graph(tuple(str(i) for i in range(n)), A + A.T)


def random_psd(rng, n: int, rank: int = None) -> np.ndarray:
    V = rng.standard_normal((rank or n, n))
    return V.T @ V


def random_labels(rng, n: int, n_missing: int) -> LabelSet:
    """Random labeling with at least one observed node per class and ``n_missing`` hidden nodes."""
    while True:
        classes = rng.integers(1, 3, size=n)
        hidden = set(rng.choice(n, size=n_missing, replace=False).tolist())
        labels = tuple(None if i in hidden else int(c) for i, c in enumerate(classes))
        seen = {y for y in labels if y is not None}
        if seen == {1, 2}:
            return LabelSet(labels)


@pytest.fixture
def write_file(tmp_path):
    def write(name: str, text: str):
        path = tmp_path / name
        path.write_text(text)
        return path
    return write


def brute_force_auc(scores, truth) -> float:
    pos = [s for s, t in zip(scores, truth) if t]
    neg = [s for s, t in zip(scores, truth) if not t]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def brute_force_ap(scores, truth) -> float:
    """Precision at each positive, ties broken by position."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits, total = 0, 0.0
    for rank, i in enumerate(order, start=1):
        if truth[i]:
            hits += 1
            total += hits / rank
    return total / sum(truth)
