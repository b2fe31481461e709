import os
import math
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

try:
    from .evaluation import BENCHMARK_TASKS, SweepConfig
    from .graph import STATUS_TASKS
    from .machines import MACHINES, DEFAULT_COST_GRID
    from .utils import ConfigError
except ImportError:
    # For direct execution without package structure
    from evaluation import BENCHMARK_TASKS, SweepConfig
    from graph import STATUS_TASKS
    from machines import MACHINES, DEFAULT_COST_GRID
    from utils import ConfigError

logger = logging.getLogger(__name__)

# Environment settings
def environment() -> str:
    return os.getenv("ENVIRONMENT", "development")


def log_level() -> str:
    return os.getenv("DKM_LOG_LEVEL", "INFO").upper()


def json_logs_requested() -> bool:
    return environment() == "production" or os.getenv("DKM_LOG_FORMAT", "text").lower() == "json"


def default_threads() -> int:
    try:
        return int(os.getenv("DKM_THREADS", "1"))
    except ValueError:
        raise ConfigError(f"DKM_THREADS must be an integer, got {os.getenv('DKM_THREADS')!r}")


DATA_SOURCES = ("edge_list", "dense_matrix", "blend", "sbm_sizes", "kernel_input")

LIST_FIELDS = ("beta_grid", "levels", "machines", "cost_grid", "sbm_sizes", "sbm_p_in", "blend")


class BlendEntry(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    path: Path
    weight: float = Field(ge=0)


class RunConfig(BaseModel):
    """Everything a command needs; built from a config file plus overrides."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    # data sources, exactly one per command
    edge_list: Optional[Path] = None
    n_hint: Optional[int] = Field(default=None, ge=1)
    dense_matrix: Optional[Path] = None
    dense_format: Optional[Literal["csv", "tsv"]] = None
    blend: List[BlendEntry] = Field(default_factory=list)
    sbm_sizes: Optional[List[int]] = None
    sbm_p_in: List[float] = Field(default_factory=lambda: [0.3])
    sbm_p_out: float = Field(default=0.05, ge=0, le=1)
    sbm_seed: int = 0
    kernel_input: Optional[Path] = None
    drop_isolated: bool = False

    # labels
    labels: Optional[Path] = None
    status_file: Optional[Path] = None
    task: Optional[str] = None

    # grids
    beta_grid: List[float] = Field(default_factory=lambda: [1e-3, 1e-2, 0.1, 1.0])
    levels: List[int] = Field(default_factory=lambda: [0, 1, 2])
    machines: List[str] = Field(default_factory=lambda: ["simple"])
    cost_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_COST_GRID))
    bandwidth_domain: Literal["all_nodes", "obs_only"] = "all_nodes"

    # evaluation protocol
    n_splits: int = Field(default=25, ge=1)
    obs_fraction: float = Field(default=0.5, gt=0, lt=1)
    metric: Optional[Literal["AP", "AUC"]] = None
    master_seed: int = 0
    threads: int = Field(default_factory=default_threads, ge=1)

    # outputs
    output: Optional[Path] = None
    aggregate_output: Optional[Path] = None
    splits_output: Optional[Path] = None
    labels_output: Optional[Path] = None
    with_labels: bool = False

    @field_validator("beta_grid")
    @classmethod
    def check_betas(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("beta_grid must not be empty")
        if any(not (b >= 0 and math.isfinite(b)) for b in v):
            raise ValueError(f"beta values must be finite and nonnegative, got {v}")
        return v

    @field_validator("levels")
    @classmethod
    def check_levels(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("levels must not be empty")
        if any(level < 0 for level in v):
            raise ValueError(f"levels must be nonnegative, got {v}")
        return v

    @field_validator("machines")
    @classmethod
    def check_machines(cls, v: List[str]) -> List[str]:
        unknown = [m for m in v if m not in MACHINES]
        if not v or unknown:
            raise ValueError(f"machines must be a non-empty subset of {list(MACHINES)}, got {v}")
        return v

    @field_validator("cost_grid")
    @classmethod
    def check_costs(cls, v: List[float]) -> List[float]:
        if any(not c > 0 for c in v):
            raise ValueError(f"costs must be positive, got {v}")
        return v

    @field_validator("sbm_p_in")
    @classmethod
    def check_p_in(cls, v: List[float]) -> List[float]:
        if len(v) not in (1, 2) or any(not 0 <= p <= 1 for p in v):
            raise ValueError("sbm_p_in takes one probability or one per block, each in [0, 1]")
        return v

    @field_validator("task")
    @classmethod
    def check_task(cls, v: Optional[str]) -> Optional[str]:
        known = set(STATUS_TASKS) | set(BENCHMARK_TASKS)
        if v is not None and v not in known:
            raise ValueError(f"unknown task {v!r}; expected one of {sorted(known)}")
        return v

    @model_validator(mode="after")
    def check_combinations(self) -> "RunConfig":
        if "svm" in self.machines and not self.cost_grid:
            raise ValueError("the svm machine needs a non-empty cost_grid")
        if len(self.data_sources()) > 1:
            raise ValueError(f"choose one data source, got {self.data_sources()}")
        if self.labels is not None and self.status_file is not None:
            raise ValueError("labels and status_file are mutually exclusive")
        if self.status_file is not None and self.task not in STATUS_TASKS:
            raise ValueError(f"status_file needs task set to one of {sorted(STATUS_TASKS)}")
        return self

    def data_sources(self) -> List[str]:
        return [name for name in DATA_SOURCES if getattr(self, name)]

    def require_data_source(self) -> str:
        sources = self.data_sources()
        if not sources:
            raise ConfigError(f"no data source configured; set one of {list(DATA_SOURCES)}")
        return sources[0]

    def resolved_metric(self) -> str:
        if self.metric is not None:
            return self.metric
        if self.task in BENCHMARK_TASKS:
            return BENCHMARK_TASKS[self.task]["metric"]
        return "AUC"

    def single_beta(self) -> float:
        if len(self.beta_grid) != 1:
            raise ConfigError(f"this command takes a single beta, got {self.beta_grid}; use --beta")
        return self.beta_grid[0]

    def single_level(self) -> int:
        if len(self.levels) != 1:
            raise ConfigError(f"this command takes a single level, got {self.levels}; use --level")
        return self.levels[0]

    def to_sweep_config(self) -> SweepConfig:
        return SweepConfig(
            beta_grid=tuple(self.beta_grid),
            levels=tuple(self.levels),
            machines=tuple(self.machines),
            cost_grid=tuple(self.cost_grid),
            n_splits=self.n_splits,
            obs_fraction=self.obs_fraction,
            metric=self.resolved_metric(),
            master_seed=self.master_seed,
            bandwidth_domain=self.bandwidth_domain,
            threads=self.threads,
        )


# Config files: one ``key = value`` per line, '#' comments, comma-separated lists
def parse_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    values: Dict[str, str] = {}
    with path.open() as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or not key:
                raise ConfigError(f"{path}: expected 'key = value' on line {line_number}", {"line": line_number})
            if key not in RunConfig.model_fields:
                raise ConfigError(f"{path}: unknown key {key!r} on line {line_number}", {"line": line_number})
            values[key] = value.strip()
    return values


def parse_override(item: str) -> Tuple[str, str]:
    key, sep, value = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    if key not in RunConfig.model_fields:
        raise ConfigError(f"unknown config key {key!r}")
    return key, value.strip()


def _parse_blend(value: str) -> List[dict]:
    entries = []
    for item in _split_list(value):
        path, sep, weight = item.rpartition(":")
        if not sep or not path:
            raise ConfigError(f"blend entries look like path:weight, got {item!r}")
        entries.append({"path": path, "weight": weight})
    return entries


def _split_list(value: str) -> List[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def coerce_values(raw: Dict[str, object]) -> Dict[str, object]:
    """Turn string values into the shapes RunConfig validates; non-strings pass through."""
    values: Dict[str, object] = {}
    for key, value in raw.items():
        if not isinstance(value, str):
            values[key] = value
        elif key == "blend":
            values[key] = _parse_blend(value)
        elif key in LIST_FIELDS:
            values[key] = _split_list(value)
        elif value == "":
            values[key] = None
        else:
            values[key] = value
    return values


def _describe(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        where = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{where}: {item['msg']}")
    return "; ".join(parts)


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Sequence[str] = (),
    **values,
) -> RunConfig:
    """Config file first, then ``key=value`` overrides, then keyword values."""
    raw: Dict[str, object] = dict(parse_config_file(path)) if path is not None else {}
    for item in overrides:
        key, value = parse_override(item)
        raw[key] = value
    raw.update(values)
    try:
        config = RunConfig(**coerce_values(raw))
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {_describe(e)}", {"config_file": str(path) if path else None})
    logger.debug("Loaded run configuration", extra={"config_file": str(path) if path else None})
    return config
