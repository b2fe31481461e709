"""Diffusion kernels and recursive kernel deepening.

A level-0 kernel is the diffusion kernel ``exp(-beta L)``.  Each deepening
step replaces a kernel by the Gaussian kernel of the distance it induces in
its own feature space, with the bandwidth set to the average pairwise
distance:

    d(i, j)  = sqrt(K(i,i) - 2 K(i,j) + K(j,j))
    h        = mean of d over node pairs (diagonal included)
    K'(i, j) = exp(-d(i,j)^2 / (2 h^2)) / (sqrt(2 pi) h)

The normalising constant is kept; it rescales the next level's distances.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg

try:
    from .graph import LaplacianMatrix
    from .utils import ConfigError, DataError, DegenerateKernelError, NumericalError, format_number
except ImportError:
    from graph import LaplacianMatrix
    from utils import ConfigError, DataError, DegenerateKernelError, NumericalError, format_number

logger = logging.getLogger(__name__)

BANDWIDTH_EPSILON = 1e-12
RADICAND_TOLERANCE = 1e-10
EIGENVALUE_TOLERANCE = 1e-8

BANDWIDTH_DOMAINS = ("all_nodes", "obs_only")

ArrayLike = Union[np.ndarray, Sequence[Sequence[float]]]


def _mirror_upper(M: np.ndarray) -> np.ndarray:
    """Exactly symmetric copy built from the upper triangle."""
    return np.triu(M) + np.triu(M, 1).T


def _readonly(M: np.ndarray) -> np.ndarray:
    M = np.array(M, dtype=float, copy=True)
    M.setflags(write=False)
    return M


# Domain types
class Provenance(BaseModel):
    """Where a kernel came from: deepening level, diffusion beta, one bandwidth per step."""

    model_config = ConfigDict(frozen=True)

    level: int = Field(default=0, ge=0)
    beta: float = Field(default=0.0, ge=0, allow_inf_nan=False)
    bandwidths: Tuple[float, ...] = ()

    @model_validator(mode="after")
    def check_depth(self) -> "Provenance":
        if len(self.bandwidths) != self.level:
            raise ValueError(f"{len(self.bandwidths)} bandwidths for level {self.level}")
        return self

    def header(self) -> str:
        widths = ";".join(format_number(h) for h in self.bandwidths)
        return f"# level={self.level} beta={format_number(self.beta)} bandwidths={widths}"


@dataclass(frozen=True)
class KernelMatrix:
    K: np.ndarray
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise NumericalError(f"kernel must be square, got shape {K.shape}")
        if not np.all(np.isfinite(K)):
            raise NumericalError("kernel contains non-finite entries")
        object.__setattr__(self, "K", _readonly(_mirror_upper(K)))

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def level(self) -> int:
        return self.provenance.level

    @property
    def beta(self) -> float:
        return self.provenance.beta

    def submatrix(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        return self.K[np.ix_(np.asarray(rows, dtype=int), np.asarray(cols, dtype=int))]

    def scaled(self, factor: float) -> "KernelMatrix":
        return replace(self, K=self.K * factor)

    def min_eigenvalue(self) -> float:
        return float(linalg.eigvalsh(self.K)[0])

    def psd_tolerance(self) -> float:
        return EIGENVALUE_TOLERANCE * max(1.0, float(np.max(np.diag(self.K))))

    def is_psd(self) -> bool:
        return self.min_eigenvalue() >= -self.psd_tolerance()


@dataclass(frozen=True)
class DistanceMatrix:
    D: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "D", _readonly(self.D))

    @property
    def n(self) -> int:
        return self.D.shape[0]


@dataclass(frozen=True)
class SpectralDecomposition:
    U: np.ndarray
    s: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.s) @ self.U.T


def _as_matrix(M) -> np.ndarray:
    if isinstance(M, LaplacianMatrix):
        return M.L
    if isinstance(M, KernelMatrix):
        return M.K
    return np.asarray(M, dtype=float)


# Operations
def spectral_decompose(M) -> SpectralDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending.

    Each eigenvector is sign-normalised so its largest-magnitude entry is
    positive.
    """
    M = _as_matrix(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NumericalError(f"matrix must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericalError("matrix contains non-finite entries")
    s, U = linalg.eigh((M + M.T) / 2)
    pivots = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivots, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return SpectralDecomposition(U * signs, s)


def diffusion_kernel(L, beta: float) -> KernelMatrix:
    """K = exp(-beta L) = U diag(exp(-beta s)) U^T."""
    beta = float(beta)
    if not math.isfinite(beta) or beta < 0:
        raise ConfigError(f"beta must be a nonnegative number, got {beta}")
    L = _as_matrix(L)
    if beta == 0:
        if not np.all(np.isfinite(L)):
            raise NumericalError("Laplacian contains non-finite entries")
        return KernelMatrix(np.eye(L.shape[0]), Provenance(level=0, beta=0.0))
    decomposition = spectral_decompose(L)
    U, s = decomposition.U, decomposition.s
    K = (U * np.exp(-beta * s)) @ U.T
    return KernelMatrix(K, Provenance(level=0, beta=beta))


def _squared_distances(K: np.ndarray) -> np.ndarray:
    diag = np.diag(K)
    radicand = diag[:, None] - 2.0 * K + diag[None, :]
    worst = float(radicand.min(initial=0.0))
    if worst < -RADICAND_TOLERANCE:
        raise NumericalError(
            f"negative squared distance {worst:.3e}; the input kernel is not positive semidefinite",
            {"min_radicand": worst},
        )
    radicand[radicand < 0] = 0.0
    return _mirror_upper(radicand)


def feature_distance(K: KernelMatrix) -> DistanceMatrix:
    """Distances between implicit feature images, computed from kernel entries."""
    D = np.sqrt(_squared_distances(K.K))
    np.fill_diagonal(D, 0.0)
    return DistanceMatrix(D)


def bandwidth_heuristic(D: DistanceMatrix, indices: Optional[Sequence[int]] = None) -> float:
    """Average pairwise distance over all ordered pairs, diagonal included.

    With ``indices`` the average runs over the pairs of that node subset only.
    """
    block = D.D if indices is None else D.D[np.ix_(np.asarray(indices, dtype=int), np.asarray(indices, dtype=int))]
    if block.size == 0:
        raise DegenerateKernelError("bandwidth over an empty node set")
    h = float(block.sum() / block.size)
    if not h > BANDWIDTH_EPSILON:
        raise DegenerateKernelError(
            f"bandwidth {h:.3e} is at or below {BANDWIDTH_EPSILON:g}: all points coincide in feature space",
            context={"bandwidth": h},
        )
    return h


def gaussian_step(K: KernelMatrix, h: float) -> KernelMatrix:
    """One deepening step: Gaussian density kernel of the induced distance."""
    h = float(h)
    if not h > BANDWIDTH_EPSILON:
        raise DegenerateKernelError(f"bandwidth {h:.3e} is at or below {BANDWIDTH_EPSILON:g}")
    radicand = _squared_distances(K.K)
    K_next = np.exp(-radicand / (2.0 * h * h)) / (math.sqrt(2.0 * math.pi) * h)
    provenance = Provenance(
        level=K.provenance.level + 1,
        beta=K.provenance.beta,
        bandwidths=K.provenance.bandwidths + (h,),
    )
    return KernelMatrix(K_next, provenance)


def deepen(K0: KernelMatrix, level: int, obs_indices: Optional[Sequence[int]] = None) -> KernelMatrix:
    """Apply ``level`` deepening steps; level 0 returns ``K0`` itself.

    ``obs_indices`` restricts the bandwidth average to the observed nodes.
    """
    if level < 0:
        raise ConfigError(f"level must be nonnegative, got {level}")
    K = K0
    for depth in range(1, level + 1):
        try:
            h = bandwidth_heuristic(feature_distance(K), obs_indices)
            K = gaussian_step(K, h)
        except DegenerateKernelError as e:
            raise DegenerateKernelError(
                f"degenerate kernel at deepening step {depth} (level {K0.level + depth}): {e.message}",
                depth=depth,
                context={**e.context, "level": K0.level + depth, "beta": K0.beta},
            ) from e
        logger.debug("Deepened kernel", extra={"level": K.level, "beta": K.beta, "bandwidth": h})
    return K


def explicit_features(K: KernelMatrix) -> np.ndarray:
    """Columns are explicit feature vectors: V = diag(sqrt(s+)) U^T with V^T V = K.

    Eigenvalues slightly below zero are clamped; clearly negative ones mean the
    kernel is not positive semidefinite.
    """
    decomposition = spectral_decompose(K.K)
    s = decomposition.s.copy()
    tolerance = K.psd_tolerance()
    if s.min(initial=0.0) < -tolerance:
        raise NumericalError(f"kernel has eigenvalue {s.min():.3e} below -{tolerance:.1e}")
    s[s < 0] = 0.0
    return np.sqrt(s)[:, None] * decomposition.U.T


# Kernel CSV: a '#' provenance line, a header row of node ids, one id-prefixed row per node
def save_kernel_csv(kernel: KernelMatrix, path: Union[str, Path], node_ids: Optional[Sequence[str]] = None):
    node_ids = [str(i) for i in range(kernel.n)] if node_ids is None else list(node_ids)
    with Path(path).open("w") as handle:
        handle.write(kernel.provenance.header() + "\n")
        handle.write(",".join(["node_id", *node_ids]) + "\n")
        for node_id, row in zip(node_ids, kernel.K):
            handle.write(",".join([node_id, *(format_number(v) for v in row)]) + "\n")


def _parse_provenance(line: str, path: Path) -> Provenance:
    fields = {}
    for token in line.lstrip("#").split():
        key, _, value = token.partition("=")
        fields[key] = value
    try:
        widths = tuple(float(v) for v in fields.get("bandwidths", "").split(";") if v)
        return Provenance(level=int(fields["level"]), beta=float(fields["beta"]), bandwidths=widths)
    except (KeyError, ValueError):
        raise DataError(f"{path}: malformed provenance header {line.strip()!r}")


def load_kernel_csv(path: Union[str, Path]) -> Tuple[KernelMatrix, Tuple[str, ...]]:
    path = Path(path)
    with path.open() as handle:
        lines = [line.rstrip("\n") for line in handle if line.strip()]
    if len(lines) < 2 or not lines[0].startswith("#"):
        raise DataError(f"{path}: missing provenance header")
    provenance = _parse_provenance(lines[0], path)
    node_ids = tuple(lines[1].split(",")[1:])
    rows = []
    for line_number, line in enumerate(lines[2:], start=3):
        cells = line.split(",")
        if len(rows) >= len(node_ids) or cells[0] != node_ids[len(rows)]:
            raise DataError(f"{path}: row id mismatch on line {line_number}", {"line": line_number})
        try:
            rows.append([float(c) for c in cells[1:]])
        except ValueError:
            raise DataError(f"{path}: unparsable value on line {line_number}", {"line": line_number})
    if len(rows) != len(node_ids) or any(len(r) != len(node_ids) for r in rows):
        raise DataError(f"{path}: kernel is not {len(node_ids)} x {len(node_ids)}")
    return KernelMatrix(np.array(rows), provenance), node_ids
