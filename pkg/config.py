from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Optional

DEFAULT_SEED = 0
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 300
DEFAULT_OVERSAMPLING = 8
DEFAULT_MEMORY_BUDGET = 4 * 1024 ** 3
DEFAULT_TOP_N = 10 ** 6
MINKOWSKI_LIMIT = 10 ** 8
REDUCTION_FRACTION = 0.25
DEFAULT_WORKERS = 1
VARIANTS = ("plain", "shuffle", "sketch")

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
SHARD_PATTERN = "part-r{:05d}.csv"


@dataclass(frozen=True)
class SvdParams:
    k: Optional[int] = None
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    seed: int = DEFAULT_SEED
    oversampling: int = DEFAULT_OVERSAMPLING

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class RunConfig:
    """Parameters of one CLI or node run, echoed into every artifact it writes"""
    command: str
    inputs: Dict[str, str] = field(default_factory=dict)
    output: str = ""
    seed: int = DEFAULT_SEED
    variant: str = "plain"
    workers: int = DEFAULT_WORKERS
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    reduced_rows: Optional[int] = None
    reduced_cols: Optional[int] = None
    sketch_rows: Optional[int] = None
    sketch_cols: Optional[int] = None
    k: Optional[int] = None
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    count: Optional[int] = None
    dry_run: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{key: value for key, value in payload.items() if key in known})

    def svd_params(self) -> SvdParams:
        return SvdParams(k=self.k, tol=self.tol, max_iter=self.max_iter, seed=self.seed)
