import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

from .config import MANIFEST_NAME, MANIFEST_VERSION
from .errors import DataError

_log = logging.getLogger(__name__)

CHECKSUM_BYTES = 8
CHECKSUM_ALGORITHM = f"blake2b-{CHECKSUM_BYTES * 8}"

PathLike = Union[str, Path]


def checksum_file(path: PathLike) -> str:
    """64-bit BLAKE2b digest of a file, hex encoded. Reads in chunks for large shards."""
    h = hashlib.blake2b(digest_size=CHECKSUM_BYTES)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def count_lines(path: PathLike) -> int:
    n = 0
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            n += chunk.count(b"\n")
    return n


@dataclass
class ShardRecord:
    name: str
    block_row: int
    nnz: int
    checksum: Optional[str] = None
    complete: bool = True
    error: Optional[str] = None
    blocks: List[Dict[str, int]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        if not self.blocks:
            payload.pop("blocks")
        if self.error is None:
            payload.pop("error")
        return payload

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ShardRecord":
        return cls(
            name=payload["name"],
            block_row=int(payload["block_row"]),
            nnz=int(payload["nnz"]),
            checksum=payload.get("checksum"),
            complete=bool(payload.get("complete", True)),
            error=payload.get("error"),
            blocks=list(payload.get("blocks", [])),
        )


@dataclass
class Manifest:
    """Machine-readable record of one expansion run"""
    variant: str
    master_seed: int
    dims: List[int]
    nnz_total: int
    block_dims: List[int]
    shards: List[ShardRecord]
    skipped_zero_blocks: int = 0
    rating_scale: Optional[Dict[str, Any]] = None
    mixer: Dict[str, Any] = field(default_factory=dict)
    run_config: Dict[str, Any] = field(default_factory=dict)
    sketch: Optional[Dict[str, Any]] = None
    complete: bool = True
    dry_run: bool = False
    version: int = MANIFEST_VERSION
    checksum_algorithm: str = CHECKSUM_ALGORITHM

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["shards"] = [shard.to_dict() for shard in self.shards]
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, directory: PathLike) -> Path:
        path = Path(directory) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_json())
        return path

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "Manifest":
        data = dict(payload)
        data["shards"] = [ShardRecord.from_dict(shard) for shard in payload.get("shards", [])]
        known = set(cls.__dataclass_fields__)
        return cls(**{key: value for key, value in data.items() if key in known})

    @property
    def n_rows(self) -> int:
        return int(self.dims[0])

    @property
    def n_cols(self) -> int:
        return int(self.dims[1])


def manifest_path(path: PathLike) -> Path:
    """Accept either an output directory or the manifest file itself"""
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def load_manifest(path: PathLike) -> Manifest:
    path = manifest_path(path)
    if not path.is_file():
        raise DataError(f"Manifest does not exist: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise DataError(f"Corrupt manifest {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("version") != MANIFEST_VERSION:
        version = payload.get("version") if isinstance(payload, dict) else None
        raise DataError(f"Unsupported manifest version {version} in {path}")
    try:
        return Manifest.from_dict(payload)
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"Corrupt manifest {path}: {e!r}") from e


def iter_shards(path: PathLike, verify: bool = True) -> Iterator[Dict[str, Any]]:
    """Yield one record per shard of a manifest, in shard-name order"""
    location = manifest_path(path)
    manifest = load_manifest(location)
    for shard in sorted(manifest.shards, key=lambda s: s.name):
        shard_path = location.parent / shard.name
        exists = shard_path.is_file()
        record = {
            "path": str(shard_path),
            "name": shard.name,
            "block_row": shard.block_row,
            "nnz": shard.nnz,
            "checksum": shard.checksum,
            "exists": exists,
            "complete": shard.complete,
        }
        if verify:
            record["checksum_ok"] = bool(exists and shard.checksum and checksum_file(shard_path) == shard.checksum)
        yield record
