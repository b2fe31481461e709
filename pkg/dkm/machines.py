"""Base kernel machines and the deep kernel machine driver.

Two base machines score the missing-label nodes from a precomputed kernel:

* ``simple``: average similarity to class 1 minus average similarity to
  class 2.  Thresholded at ``centroid_threshold`` it is the nearest-centroid
  rule in feature space.  On a deepened kernel it is also the kernel density
  classifier of the previous level's feature space, so density classification
  needs no separate machine.
* ``svm``: a C-SVM fitted on the observed block by pairwise (SMO-style)
  coordinate ascent on the dual.

Class 1 is the positive class (+1) throughout.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

try:
    from .graph import LabelSet
    from .kernel import BANDWIDTH_DOMAINS, KernelMatrix, deepen
    from .utils import ConfigError, DataError, NumericalError, format_number
except ImportError:
    from graph import LabelSet
    from kernel import BANDWIDTH_DOMAINS, KernelMatrix, deepen
    from utils import ConfigError, DataError, NumericalError, format_number

logger = logging.getLogger(__name__)

MACHINES = ("simple", "svm")

# cost values tried per fit, smallest to largest
DEFAULT_COST_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0, 100.0)

SVM_TOLERANCE = 1e-3
SVM_MAX_UPDATES = 10**6
CURVATURE_TOLERANCE = 1e-8
TAU = 1e-12


# Domain types
def _readonly(values: Sequence, dtype: type) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


class DecisionScores(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    indices: np.ndarray
    values: np.ndarray
    machine_tag: str
    level: int = Field(default=0, ge=0)
    beta: float = 0.0
    cost: Optional[float] = None

    def __init__(
        self,
        indices: Sequence[int],
        values: Sequence[float],
        machine_tag: str,
        level: int = 0,
        beta: float = 0.0,
        cost: Optional[float] = None,
        **data,
    ):
        super().__init__(indices=indices, values=values, machine_tag=machine_tag,
                         level=level, beta=beta, cost=cost, **data)

    @field_validator("indices", mode="before")
    @classmethod
    def index_array(cls, v):
        return _readonly(v, int)

    @field_validator("values", mode="before")
    @classmethod
    def value_array(cls, v):
        return _readonly(v, float)

    @field_validator("machine_tag")
    @classmethod
    def known_machine(cls, v: str) -> str:
        if v not in MACHINES:
            raise DataError(f"unknown machine tag {v!r}")
        return v

    @model_validator(mode="after")
    def check_scores(self) -> "DecisionScores":
        if self.indices.shape != self.values.shape:
            raise DataError("one score per scored node is required")
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("non-finite decision score")
        return self

    def __len__(self) -> int:
        return int(self.indices.size)

    def as_dict(self) -> dict:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}


@dataclass(frozen=True)
class SvmModel:
    alphas: np.ndarray
    y: np.ndarray
    bias: float
    cost: float
    updates: int = 0
    hit_limit: bool = False
    objective_trace: Tuple[float, ...] = field(default=(), repr=False)

    @property
    def support_indices(self) -> np.ndarray:
        return np.flatnonzero(self.alphas > 0)

    @property
    def coefficients(self) -> np.ndarray:
        """alpha_i * y_i, the weights of the kernel expansion."""
        return self.alphas * self.y

    def decision(self, K_cross: np.ndarray) -> np.ndarray:
        K_cross = np.asarray(K_cross, dtype=float)
        if K_cross.ndim != 2 or K_cross.shape[1] != self.alphas.size:
            raise DataError(
                f"kernel block has shape {K_cross.shape}; expected (*, {self.alphas.size})"
            )
        return K_cross @ self.coefficients + self.bias


# Simple kernel machine
def _class_columns(labels: LabelSet) -> Tuple[np.ndarray, np.ndarray]:
    labels.require_both_classes()
    observed = labels.observed
    classes = labels.classes(observed)
    return observed[classes == 1], observed[classes == 2]


def simple_km_scores(K: KernelMatrix, labels: LabelSet) -> DecisionScores:
    """f(v) = mean_{y=1} K(v, v_i) - mean_{y=2} K(v, v_i) for every missing node."""
    positives, negatives = _class_columns(labels)
    missing = labels.missing
    if missing.size == 0:
        values = np.zeros(0)
    else:
        values = K.submatrix(missing, positives).mean(axis=1) - K.submatrix(missing, negatives).mean(axis=1)
    return DecisionScores(missing, values, "simple", K.level, K.beta)


def centroid_threshold(K: KernelMatrix, labels: LabelSet) -> float:
    """Threshold turning the simple machine into the nearest-centroid rule."""
    positives, negatives = _class_columns(labels)
    n1, n2 = positives.size, negatives.size
    within_1 = K.submatrix(positives, positives).sum()
    within_2 = K.submatrix(negatives, negatives).sum()
    return float(within_1 / (2 * n1 * n1) - within_2 / (2 * n2 * n2))


def classify_threshold(scores: Union[DecisionScores, Sequence[float]], c: float) -> np.ndarray:
    """Class 1 where the score exceeds ``c``, class 2 otherwise (ties included)."""
    values = scores.values if isinstance(scores, DecisionScores) else np.asarray(scores, dtype=float)
    return np.where(values > c, 1, 2)


# Support vector machine
def _dual_objective(alphas: np.ndarray, gradient: np.ndarray) -> float:
    # sum(a) - a^T Q a / 2, with gradient = Q a - 1
    return float(0.5 * alphas.sum() - 0.5 * alphas @ gradient)


def svm_train(
    K_obs: np.ndarray,
    classes: Sequence[int],
    cost: float,
    tol: float = SVM_TOLERANCE,
    max_updates: int = SVM_MAX_UPDATES,
    track_objective: bool = False,
) -> SvmModel:
    """Solve the C-SVM dual on a precomputed kernel over the observed nodes.

    ``classes`` holds the class (1 or 2) of each row of ``K_obs``.  Each
    update moves the maximal-violating pair chosen with second-order gain;
    iteration stops once the KKT gap drops to ``tol`` or after ``max_updates``
    pair updates.
    """
    K = np.asarray(K_obs, dtype=float)
    classes = np.asarray(classes, dtype=int)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] != classes.size:
        raise DataError(f"kernel of shape {K.shape} does not match {classes.size} labels")
    if not np.all(np.isin(classes, (1, 2))):
        raise DataError("svm labels must be 1 or 2")
    if not (np.any(classes == 1) and np.any(classes == 2)):
        raise DataError("svm needs both classes among the observed nodes")
    cost = float(cost)
    if not (cost > 0 and math.isfinite(cost)):
        raise ConfigError(f"svm cost must be positive, got {cost}")

    n = classes.size
    y = np.where(classes == 1, 1.0, -1.0)
    diag = np.diag(K)
    alphas = np.zeros(n)
    gradient = -np.ones(n)
    trace: List[float] = []
    updates = 0
    hit_limit = False

    while True:
        minus_yg = -y * gradient
        up = ((alphas < cost) & (y > 0)) | ((alphas > 0) & (y < 0))
        low = ((alphas < cost) & (y < 0)) | ((alphas > 0) & (y > 0))
        i = int(np.flatnonzero(up)[np.argmax(minus_yg[up])])
        m = minus_yg[i]
        M = float(minus_yg[low].min())
        if m - M <= tol:
            break
        if updates >= max_updates:
            hit_limit = True
            logger.warning(
                "SVM iteration cap reached",
                extra={"cost": cost, "updates": updates, "kkt_gap": float(m - M)},
            )
            break

        candidates = np.flatnonzero(low & (minus_yg < m))
        b = m - minus_yg[candidates]
        a = diag[i] + diag[candidates] - 2.0 * K[i, candidates]
        gain = -(b * b) / np.where(a > TAU, a, TAU)
        pick = int(np.argmin(gain))
        j = int(candidates[pick])
        curvature = float(a[pick])
        if curvature < -CURVATURE_TOLERANCE:
            raise NumericalError(
                f"negative curvature {curvature:.3e} on working pair ({i}, {j}); kernel is not positive semidefinite",
                {"pair": [i, j], "curvature": curvature},
            )

        room_i = cost - alphas[i] if y[i] > 0 else alphas[i]
        room_j = alphas[j] if y[j] > 0 else cost - alphas[j]
        step = min(b[pick] / max(curvature, TAU), room_i, room_j)

        new_i = alphas[i] + y[i] * step
        new_j = alphas[j] - y[j] * step
        # land exactly on the box when the step is clipped
        if step == room_i:
            new_i = cost if y[i] > 0 else 0.0
        if step == room_j:
            new_j = 0.0 if y[j] > 0 else cost
        delta_i, delta_j = new_i - alphas[i], new_j - alphas[j]
        alphas[i], alphas[j] = new_i, new_j
        gradient += y * (K[:, i] * (y[i] * delta_i) + K[:, j] * (y[j] * delta_j))
        updates += 1
        if track_objective:
            trace.append(_dual_objective(alphas, gradient))

    minus_yg = -y * gradient
    free = (alphas > 0) & (alphas < cost)
    if np.any(free):
        bias = float(minus_yg[free].mean())
    else:
        up = ((alphas < cost) & (y > 0)) | ((alphas > 0) & (y < 0))
        low = ((alphas < cost) & (y < 0)) | ((alphas > 0) & (y > 0))
        bias = float((minus_yg[up].max() + minus_yg[low].min()) / 2)

    logger.debug("Trained SVM", extra={"cost": cost, "updates": updates, "support": int(np.count_nonzero(alphas))})
    return SvmModel(alphas, y, bias, cost, updates, hit_limit, tuple(trace))


def kkt_violation(model: SvmModel, K_obs: np.ndarray) -> float:
    """Largest violation of the dual optimality conditions on the training block."""
    margins = model.y * model.decision(K_obs)
    at_zero = model.alphas <= 0
    at_cost = model.alphas >= model.cost
    free = ~(at_zero | at_cost)
    violations = np.concatenate([
        np.maximum(0.0, 1.0 - margins[at_zero]),
        np.abs(margins[free] - 1.0),
        np.maximum(0.0, margins[at_cost] - 1.0),
    ])
    return float(violations.max(initial=0.0))


def svm_scores(
    model: SvmModel,
    K_cross: np.ndarray,
    miss_indices: Optional[Sequence[int]] = None,
    level: int = 0,
    beta: float = 0.0,
) -> DecisionScores:
    """f(v) = sum_i alpha_i y_i K(v, v_i) + bias for each row of ``K_cross``."""
    values = model.decision(K_cross)
    indices = np.arange(values.size) if miss_indices is None else np.asarray(miss_indices, dtype=int)
    return DecisionScores(indices, values, "svm", level, beta, model.cost)


# Deep kernel machine
def dkm_run(
    K0: KernelMatrix,
    labels: LabelSet,
    level: int,
    machine: str,
    cost_grid: Optional[Iterable[float]] = None,
    bandwidth_domain: str = "all_nodes",
) -> List[DecisionScores]:
    """Deepen ``K0`` by ``level`` steps and score the missing nodes with a base machine.

    The simple machine yields one score set; the svm yields one per cost in
    ``cost_grid``, in grid order, each tagged with its cost.
    """
    if machine not in MACHINES:
        raise ConfigError(f"unknown machine {machine!r}; expected one of {MACHINES}")
    if bandwidth_domain not in BANDWIDTH_DOMAINS:
        raise ConfigError(f"unknown bandwidth domain {bandwidth_domain!r}")
    labels.require_both_classes()
    observed, missing = labels.observed, labels.missing
    K = deepen(K0, level, observed if bandwidth_domain == "obs_only" else None)

    if machine == "simple":
        return [simple_km_scores(K, labels)]

    costs = list(cost_grid or ())
    if not costs:
        raise ConfigError("the svm machine needs a non-empty cost grid")
    K_obs = K.submatrix(observed, observed)
    K_cross = K.submatrix(missing, observed)
    classes = labels.classes(observed)
    score_sets = []
    for cost in costs:
        model = svm_train(K_obs, classes, cost)
        score_sets.append(svm_scores(model, K_cross, missing, K.level, K.beta))
    return score_sets


def write_scores_csv(
    score_sets: Sequence[DecisionScores],
    node_ids: Sequence[str],
    path: Union[str, Path],
    predicted: Optional[Sequence[np.ndarray]] = None,
):
    """One row per scored node: node_id, score, machine_tag, level, beta, cost[, predicted]."""
    columns = ["node_id", "score", "machine_tag", "level", "beta", "cost"]
    if predicted is not None:
        columns.append("predicted")
    with Path(path).open("w") as handle:
        handle.write(",".join(columns) + "\n")
        for k, scores in enumerate(score_sets):
            cost = "" if scores.cost is None else format_number(scores.cost)
            for row, (index, value) in enumerate(zip(scores.indices, scores.values)):
                cells = [
                    node_ids[index], format_number(value), scores.machine_tag,
                    str(scores.level), format_number(scores.beta), cost,
                ]
                if predicted is not None:
                    cells.append(str(int(predicted[k][row])))
                handle.write(",".join(cells) + "\n")
