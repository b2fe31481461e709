"""Graph ingestion, validation, generation and Laplacians.

Graphs are dense: an ``n x n`` nonnegative, symmetric weight matrix with a
zero diagonal plus one opaque string id per node.  Everything here is a pure
function of its inputs, and the returned arrays are read-only.
"""
import csv
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

try:
    from .utils import ConfigError, DataError
except ImportError:
    from utils import ConfigError, DataError

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-9
UNKNOWN = None
NODE_COUNT_HEADER = re.compile(r"#\s*n\s*=\s*(\d+)\s*$")


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


# Domain types
class Graph(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    node_ids: Tuple[str, ...]
    W: np.ndarray
    symmetrized: bool = False

    def __init__(self, node_ids: Sequence[str], W: np.ndarray, symmetrized: bool = False, **data):
        super().__init__(node_ids=node_ids, W=W, symmetrized=symmetrized, **data)

    @field_validator("node_ids", mode="before")
    @classmethod
    def check_node_ids(cls, v) -> Tuple[str, ...]:
        ids = tuple(str(i) for i in v)
        if len(set(ids)) != len(ids):
            raise DataError("node ids are not unique")
        return ids

    @field_validator("W", mode="before")
    @classmethod
    def freeze_weights(cls, v) -> np.ndarray:
        return _frozen(v)

    @model_validator(mode="after")
    def check_weights(self) -> "Graph":
        W, ids = self.W, self.node_ids
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise DataError(f"weight matrix must be square, got shape {W.shape}")
        if len(ids) != W.shape[0]:
            raise DataError(f"{len(ids)} node ids for a {W.shape[0]}-node matrix")
        if not np.all(np.isfinite(W)):
            raise DataError("weight matrix contains non-finite entries")
        if np.any(W < 0):
            i, j = np.argwhere(W < 0)[0]
            raise DataError(f"negative weight at ({ids[i]}, {ids[j]})", {"row": int(i), "column": int(j)})
        if not np.array_equal(W, W.T):
            raise DataError("weight matrix is not symmetric")
        if np.any(np.diag(W) != 0):
            raise DataError("self-loops are not allowed (nonzero diagonal)")
        return self

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def degrees(self) -> np.ndarray:
        return self.W.sum(axis=1)

    @property
    def edge_count(self) -> int:
        return int(np.count_nonzero(np.triu(self.W, 1)))

    def index(self) -> Dict[str, int]:
        return {node_id: i for i, node_id in enumerate(self.node_ids)}

    def subgraph(self, keep: Sequence[int]) -> "Graph":
        keep = np.asarray(keep, dtype=int)
        return Graph(tuple(self.node_ids[i] for i in keep), self.W[np.ix_(keep, keep)], self.symmetrized)


class LabelSet(BaseModel):
    """Per-node labels in {1, 2, None}; None marks a missing label."""

    model_config = ConfigDict(frozen=True)

    labels: Tuple[Optional[int], ...]

    def __init__(self, labels: Sequence[Optional[int]], **data):
        super().__init__(labels=labels, **data)

    @field_validator("labels", mode="before")
    @classmethod
    def check_labels(cls, v) -> Tuple[Optional[int], ...]:
        try:
            labels = tuple(None if y is None else int(y) for y in v)
        except (TypeError, ValueError):
            raise DataError(f"labels must be 1, 2 or unknown, got {v!r}")
        bad = [y for y in labels if y not in (1, 2, None)]
        if bad:
            raise DataError(f"labels must be 1, 2 or unknown, got {bad[0]!r}")
        return labels

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def observed(self) -> np.ndarray:
        return np.array([i for i, y in enumerate(self.labels) if y is not None], dtype=int)

    @property
    def missing(self) -> np.ndarray:
        return np.array([i for i, y in enumerate(self.labels) if y is None], dtype=int)

    @property
    def n1(self) -> int:
        return sum(1 for y in self.labels if y == 1)

    @property
    def n2(self) -> int:
        return sum(1 for y in self.labels if y == 2)

    def classes(self, indices: Sequence[int]) -> np.ndarray:
        return np.array([self.labels[i] for i in indices], dtype=int)

    def require_both_classes(self):
        if self.n1 < 1 or self.n2 < 1:
            raise DataError(
                f"both classes must be observed (n1={self.n1}, n2={self.n2})",
                {"n1": self.n1, "n2": self.n2},
            )

    def hide(self, keep_observed: Sequence[int]) -> "LabelSet":
        """Labels with everything outside ``keep_observed`` marked missing."""
        keep = set(int(i) for i in keep_observed)
        return LabelSet(tuple(y if i in keep else None for i, y in enumerate(self.labels)))


@dataclass(frozen=True)
class LaplacianMatrix:
    L: np.ndarray
    degrees: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "L", _frozen(self.L))
        object.__setattr__(self, "degrees", _frozen(self.degrees))

    @property
    def n(self) -> int:
        return self.L.shape[0]


# Loaders
def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_dense_matrix(path: Union[str, Path], fmt: Optional[str] = None) -> Graph:
    """Load an n x n grid (CSV or TSV), optionally with a header row and id column.

    The layout is read off the grid shape: one extra column means an id
    column, one extra row a header row, and a square grid whose first cell is
    non-numeric carries both.
    """
    path = Path(path)
    if fmt is None:
        fmt = "tsv" if path.suffix.lower() in (".tsv", ".tab") else "csv"
    if fmt not in ("csv", "tsv"):
        raise ConfigError(f"unknown dense matrix format {fmt!r}")
    delimiter = "\t" if fmt == "tsv" else ","

    with path.open(newline="") as handle:
        rows = [[cell.strip() for cell in row] for row in csv.reader(handle, delimiter=delimiter)]
    rows = [row for row in rows if row and not (len(row) == 1 and row[0] == "")]
    if not rows:
        raise DataError(f"{path}: empty matrix file")

    widths = {len(row) for row in rows}
    if len(widths) != 1:
        raise DataError(f"{path}: ragged grid, row widths {sorted(widths)}")
    n_rows, n_cols = len(rows), widths.pop()

    if n_cols == n_rows:
        has_header = has_id_column = not _is_number(rows[0][0])
    elif n_cols == n_rows + 1:
        has_header, has_id_column = False, True
    elif n_rows == n_cols + 1:
        has_header, has_id_column = True, False
    else:
        raise DataError(f"{path}: non-square grid ({n_rows} rows x {n_cols} columns)")

    body = rows[1:] if has_header else rows
    row_offset = 1 if has_header else 0
    col_offset = 1 if has_id_column else 0
    n = len(body)
    if n == 0:
        raise DataError(f"{path}: header without data rows")

    if has_header:
        node_ids = rows[0][col_offset:]
        if has_id_column and [row[0] for row in body] != node_ids:
            raise DataError(f"{path}: id column does not match header row")
    elif has_id_column:
        node_ids = [row[0] for row in body]
    else:
        node_ids = [str(i) for i in range(n)]

    M = np.zeros((n, n))
    for i, row in enumerate(body):
        for j, cell in enumerate(row[col_offset:]):
            try:
                value = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: unparsable cell {cell!r} at row {i + row_offset + 1}, column {j + col_offset + 1}",
                    {"row": i + row_offset + 1, "column": j + col_offset + 1},
                )
            if not math.isfinite(value):
                raise DataError(
                    f"{path}: non-finite cell at row {i + row_offset + 1}, column {j + col_offset + 1}",
                    {"row": i + row_offset + 1, "column": j + col_offset + 1},
                )
            if value < 0:
                raise DataError(
                    f"{path}: negative entry {value} at row {i + row_offset + 1}, column {j + col_offset + 1}",
                    {"row": i + row_offset + 1, "column": j + col_offset + 1},
                )
            M[i, j] = value

    W = (M + M.T) / 2
    symmetrized = bool(np.max(np.abs(W - M), initial=0.0) > SYMMETRY_TOLERANCE)
    if symmetrized:
        logger.warning(
            f"{path}: input matrix was not symmetric; using (M + M^T)/2",
            extra={"path": str(path), "max_change": float(np.max(np.abs(W - M)))},
        )
    if np.any(np.diag(W) != 0):
        logger.info(f"{path}: zeroing {int(np.count_nonzero(np.diag(W)))} diagonal entries")
        np.fill_diagonal(W, 0.0)

    return Graph(tuple(node_ids), W, symmetrized)


def _padded_ids(ids: List[str], n: int) -> List[str]:
    """Add unused integer names until there are ``n`` ids; 1-based when the file is."""
    present = set(ids)
    one_based = bool(ids) and all(s.isdigit() for s in ids) and "0" not in present and "1" in present
    padded = list(ids)
    k = 1 if one_based else 0
    while len(padded) < n:
        if str(k) not in present:
            padded.append(str(k))
        k += 1
    return padded


def _ordered_ids(seen: List[str]) -> List[str]:
    # integer ids keep their numeric order, anything else first-mention order
    if seen and all(s.isdigit() for s in seen):
        return sorted(seen, key=int)
    return seen


def load_edge_list(path: Union[str, Path], n_hint: Optional[int] = None) -> Graph:
    """Load ``id_a id_b [weight]`` lines; '#' lines are comments, last duplicate wins.

    A ``# n=N`` comment stands in for ``n_hint`` when none is passed.
    """
    path = Path(path)
    seen: Dict[str, None] = {}
    edges: Dict[Tuple[str, str], float] = {}

    with path.open() as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                header = NODE_COUNT_HEADER.match(line)
                if header and n_hint is None:
                    n_hint = int(header.group(1))
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise DataError(f"{path}: malformed line {line_number}: {line!r}", {"line": line_number})
            a, b = parts[0], parts[1]
            weight = 1.0
            if len(parts) == 3:
                try:
                    weight = float(parts[2])
                except ValueError:
                    raise DataError(f"{path}: bad weight on line {line_number}: {parts[2]!r}", {"line": line_number})
                if not math.isfinite(weight):
                    raise DataError(f"{path}: non-finite weight on line {line_number}", {"line": line_number})
            if weight < 0:
                raise DataError(f"{path}: negative weight on line {line_number}", {"line": line_number})
            if a == b:
                raise DataError(f"{path}: self-loop on line {line_number} ({a})", {"line": line_number})
            seen.setdefault(a)
            seen.setdefault(b)
            edges[(a, b) if a < b else (b, a)] = weight

    ids = list(seen)
    if n_hint is not None:
        if n_hint < len(ids):
            logger.warning(f"{path}: n_hint={n_hint} is below the {len(ids)} ids mentioned")
        ids = _padded_ids(ids, n_hint)
    ids = _ordered_ids(ids)
    if not ids:
        raise DataError(f"{path}: no nodes")

    index = {node_id: i for i, node_id in enumerate(ids)}
    W = np.zeros((len(ids), len(ids)))
    for (a, b), weight in edges.items():
        W[index[a], index[b]] = W[index[b], index[a]] = weight
    return Graph(tuple(ids), W)


def _node_index(nodes: Union[Graph, Sequence[str]]) -> Dict[str, int]:
    if isinstance(nodes, Graph):
        return nodes.index()
    return {node_id: i for i, node_id in enumerate(nodes)}


def load_labels(path: Union[str, Path], nodes: Union[Graph, Sequence[str]]) -> LabelSet:
    """Read ``node_id label`` pairs; label is 1, 2 or '?'. Unlisted nodes are unknown.

    ``nodes`` is the graph the labels belong to, or just its node ids.
    """
    path = Path(path)
    index = _node_index(nodes)
    labels: List[Optional[int]] = [UNKNOWN] * len(index)
    assigned: Dict[str, Optional[int]] = {}

    with path.open() as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}: malformed label line {line_number}: {line!r}", {"line": line_number})
            node_id, token = parts
            if token not in ("1", "2", "?"):
                raise DataError(f"{path}: label must be 1, 2 or ? on line {line_number}", {"line": line_number})
            value = None if token == "?" else int(token)
            if node_id not in index:
                raise DataError(f"{path}: unknown node {node_id!r} on line {line_number}", {"line": line_number})
            if node_id in assigned and assigned[node_id] != value:
                raise DataError(f"{path}: contradictory labels for node {node_id!r}", {"line": line_number})
            assigned[node_id] = value
            labels[index[node_id]] = value
    return LabelSet(tuple(labels))


# Status presets for the email-network tasks: status -> class
ENRON_STATUSES = (
    "CEO", "President", "Managing Director", "Director", "Vice President",
    "Manager", "Lawyer", "Employee", "Trader", "Other",
)

STATUS_TASKS: Dict[str, Dict[str, int]] = {
    "enron_unbalanced": {s: (1 if s in ("CEO", "President", "Managing Director") else 2) for s in ENRON_STATUSES},
    "enron_balanced": {s: (2 if s in ("Employee", "Trader", "Other") else 1) for s in ENRON_STATUSES},
}


def status_labels(statuses: Sequence[Optional[str]], task: str) -> LabelSet:
    """Map per-node status strings to classes with a named preset; None stays unknown."""
    if task not in STATUS_TASKS:
        raise ConfigError(f"unknown status task {task!r}; expected one of {sorted(STATUS_TASKS)}")
    table = {status.lower(): label for status, label in STATUS_TASKS[task].items()}
    labels = []
    for status in statuses:
        if status is None:
            labels.append(UNKNOWN)
            continue
        key = " ".join(status.split()).lower()
        if key not in table:
            raise DataError(f"status {status!r} is not covered by task {task!r}")
        labels.append(table[key])
    return LabelSet(tuple(labels))


def load_status_file(path: Union[str, Path], nodes: Union[Graph, Sequence[str]], task: str) -> LabelSet:
    """Read ``node_id <whitespace> status`` lines (status may contain spaces)."""
    path = Path(path)
    index = _node_index(nodes)
    statuses: List[Optional[str]] = [None] * len(index)
    with path.open() as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise DataError(f"{path}: malformed status line {line_number}", {"line": line_number})
            node_id, status = parts
            if node_id in index:
                statuses[index[node_id]] = status
    return status_labels(statuses, task)


# Writers
def write_edge_list(graph: Graph, path: Union[str, Path]):
    rows, cols = np.nonzero(np.triu(graph.W, 1))
    with Path(path).open("w") as handle:
        handle.write(f"# n={graph.n}\n")
        for i, j in zip(rows, cols):
            weight = graph.W[i, j]
            if weight == 1.0:
                handle.write(f"{graph.node_ids[i]}\t{graph.node_ids[j]}\n")
            else:
                handle.write(f"{graph.node_ids[i]}\t{graph.node_ids[j]}\t{weight:.17g}\n")


def write_labels(graph: Graph, labels: LabelSet, path: Union[str, Path]):
    with Path(path).open("w") as handle:
        for node_id, y in zip(graph.node_ids, labels.labels):
            handle.write(f"{node_id}\t{'?' if y is None else y}\n")


# Transformations
def drop_isolated(g: Graph) -> Tuple[Graph, List[str]]:
    """Remove degree-0 nodes; returns the pruned graph and the removed ids."""
    degrees = g.degrees
    keep = np.flatnonzero(degrees > 0)
    if keep.size == 0:
        raise DataError("every node is isolated; nothing left after pruning")
    removed = [g.node_ids[i] for i in np.flatnonzero(degrees == 0)]
    if not removed:
        return g, []
    logger.info(f"Dropped {len(removed)} isolated nodes", extra={"removed": removed})
    return g.subgraph(keep), removed


def blend_similarity(mats: Sequence[Tuple[Graph, float]]) -> Graph:
    """Entrywise weighted sum of similarity matrices over a shared node set."""
    if not mats:
        raise ConfigError("blend needs at least one matrix")
    weights = [float(w) for _, w in mats]
    if any(w < 0 or not math.isfinite(w) for w in weights):
        raise ConfigError(f"blend weights must be nonnegative, got {weights}")
    if not any(w > 0 for w in weights):
        raise ConfigError("at least one blend weight must be positive")
    node_ids = mats[0][0].node_ids
    for graph, _ in mats[1:]:
        if graph.node_ids != node_ids:
            raise DataError("blended graphs must share node ids in the same order")
    W = np.zeros_like(mats[0][0].W)
    for (graph, _), weight in zip(mats, weights):
        W = W + weight * graph.W
    return Graph(node_ids, W, any(graph.symmetrized for graph, _ in mats))


def laplacian(g: Graph) -> LaplacianMatrix:
    """L = D - W with weighted degrees."""
    degrees = g.W.sum(axis=1)
    L = np.diag(degrees) - g.W
    return LaplacianMatrix(L, degrees)


def generate_sbm(
    sizes: Sequence[int],
    p_in: Union[float, Sequence[float]],
    p_out: float,
    seed: int,
) -> Tuple[Graph, LabelSet]:
    """Two-block stochastic block model; labels are the block ids (1, 2).

    ``p_in`` is either one within-block probability or one per block.
    Sampling draws a single ``n x n`` uniform matrix from PCG64(seed) and
    keeps its strict upper triangle, so output depends on the seed only.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) != 2:
        raise ConfigError(f"stochastic block model needs exactly two blocks, got {len(sizes)}")
    if any(s <= 0 for s in sizes):
        raise ConfigError(f"block sizes must be positive, got {sizes}")
    p_in = [float(p_in)] * 2 if np.isscalar(p_in) else [float(p) for p in p_in]
    if len(p_in) != 2:
        raise ConfigError("p_in must be a scalar or one value per block")
    for p in (*p_in, float(p_out)):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"edge probabilities must lie in [0, 1], got {p}")

    blocks = np.repeat([0, 1], sizes)
    n = blocks.size
    P = np.where(blocks[:, None] == blocks[None, :], np.asarray(p_in)[blocks][:, None], float(p_out))
    rng = np.random.Generator(np.random.PCG64(seed))
    draws = rng.random((n, n))
    A = np.triu(draws < P, 1).astype(float)
    W = A + A.T

    graph = Graph(tuple(str(i) for i in range(n)), W)
    labels = LabelSet(tuple(int(b) + 1 for b in blocks))
    logger.debug("Generated SBM", extra={"sizes": sizes, "edges": graph.edge_count, "seed": seed})
    return graph, labels
