"""Kronecker fractal expansion R^ (x) R streamed to sharded CSV.

Each block (i_hat, j_hat) of the output is r^[i_hat, j_hat] times a copy of
R (plain), of R with its rows and columns independently permuted (shuffle),
or of a random row/column sample of R (sketch). Randomness for a block comes
from a counter-based generator keyed by ``block_seed``, so the output is a
pure function of the plan and never of the worker schedule. One shard file
holds one block-row of R^.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from multiprocess import get_all_start_methods, get_context
from multiprocess.dummy import Pool as ThreadPool

from .config import SHARD_PATTERN, VARIANTS
from .errors import DataError, UsageError
from .manifest import Manifest, ShardRecord, checksum_file
from .ratingMatrix import RatingScale, SparseInteractions
from .reducer import ReducedMatrix

_log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_MULTIPLIERS = (0xBF58476D1CE4E5B9, 0x94D049BB133111EB)
MIX_SHIFTS = (30, 27, 31)
MIXER = {
    "name": "splitmix64-finalizer",
    "gamma": f"{GOLDEN_GAMMA:#018x}",
    "multipliers": [f"{m:#018x}" for m in MIX_MULTIPLIERS],
    "shifts": list(MIX_SHIFTS),
    "rounds": "h=mix(seed+gamma); h=mix(h+(i_hat+1)*gamma); h=mix(h+(j_hat+1)*gamma)",
    "block_rng": "numpy Philox keyed by h",
}

Block = Tuple[np.ndarray, np.ndarray, np.ndarray]


def index_map(i_hat, i, p: int):
    """Global index of local index i inside block i_hat of size p (0-based)."""
    i = np.asarray(i, dtype=np.int64)
    if p < 1:
        raise UsageError(f"Block size must be positive, got {p}")
    if np.any(i < 0) or np.any(i >= p) or np.any(np.asarray(i_hat) < 0):
        raise UsageError(f"Local index out of range for block size {p}")
    g = np.int64(i_hat) * p + i
    return int(g) if g.ndim == 0 else g


def index_unmap(g, p: int):
    """Inverse of index_map: (block index, local index)"""
    if p < 1:
        raise UsageError(f"Block size must be positive, got {p}")
    g = np.asarray(g, dtype=np.int64)
    if np.any(g < 0):
        raise UsageError("Global index must be non-negative")
    i_hat, i = np.divmod(g, p)
    if g.ndim == 0:
        return int(i_hat), int(i)
    return i_hat, i


def _mix64(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(MIX_SHIFTS[0]))
    z = z * np.uint64(MIX_MULTIPLIERS[0])
    z = z ^ (z >> np.uint64(MIX_SHIFTS[1]))
    z = z * np.uint64(MIX_MULTIPLIERS[1])
    return z ^ (z >> np.uint64(MIX_SHIFTS[2]))


def block_seeds(master_seed: int, i_hats, j_hats) -> np.ndarray:
    """Vectorized block_seed over coordinate arrays (uint64 wraps modulo 2**64)"""
    i_hats = np.atleast_1d(np.asarray(i_hats, dtype=np.uint64))
    j_hats = np.atleast_1d(np.asarray(j_hats, dtype=np.uint64))
    gamma = np.uint64(GOLDEN_GAMMA)
    h = np.full(np.broadcast(i_hats, j_hats).shape, master_seed & MASK64, dtype=np.uint64)
    h = _mix64(h + gamma)
    h = _mix64(h + (i_hats + np.uint64(1)) * gamma)
    return _mix64(h + (j_hats + np.uint64(1)) * gamma)


def block_seed(master_seed: int, i_hat: int, j_hat: int) -> int:
    return int(block_seeds(master_seed, [i_hat], [j_hat])[0])


def block_rng(omega: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(omega)))


def emit_block(a: float, R: SparseInteractions, omega: int, variant: str = "plain") -> Block:
    """Entries (local rows, local cols, values) of the block F(a, R, omega)."""
    if variant not in ("plain", "shuffle"):
        raise UsageError(f"emit_block supports plain and shuffle, got {variant!r}")
    if a == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, np.empty(0, dtype=np.float64)

    rows, cols, values = R.entries()
    values = a * values
    if variant == "shuffle":
        rng = block_rng(omega)
        row_perm = rng.permutation(R.n_rows)
        col_perm = rng.permutation(R.n_cols)
        rows, cols = row_perm[rows], col_perm[cols]
    return rows, cols, values


def sketch(A: SparseInteractions, rows: int, cols: int, omega: int) -> SparseInteractions:
    """Uniform random sample of ``rows`` distinct rows and ``cols`` distinct columns.

    The selection is kept in ascending order and recorded as the id maps
    of the result.
    """
    if not (1 <= rows <= A.n_rows and 1 <= cols <= A.n_cols):
        raise UsageError(f"Sketch size {rows}x{cols} exceeds source {A.n_rows}x{A.n_cols}")
    rng = block_rng(omega)
    row_sel = np.sort(rng.choice(A.n_rows, size=rows, replace=False))
    col_sel = np.sort(rng.choice(A.n_cols, size=cols, replace=False))
    sub = A.csr[row_sel][:, col_sel]
    sub.eliminate_zeros()
    return SparseInteractions(sub, user_ids=row_sel, item_ids=col_sel, value_bound=None)


@dataclass(frozen=True)
class ExpansionPlan:
    reduced: ReducedMatrix
    base: SparseInteractions
    variant: str = "plain"
    master_seed: int = 0
    sketch_rows: Optional[int] = None
    sketch_cols: Optional[int] = None
    rating_scale: Optional[RatingScale] = None
    run_config: Optional[Dict[str, Any]] = None

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise UsageError(f"Unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.variant == "sketch":
            if self.sketch_rows is None or self.sketch_cols is None:
                raise UsageError("Sketch variant needs sketch dimensions")
            if not (1 <= self.sketch_rows <= self.base.n_rows and 1 <= self.sketch_cols <= self.base.n_cols):
                raise UsageError(
                    f"Sketch size {self.sketch_rows}x{self.sketch_cols} exceeds base "
                    f"{self.base.n_rows}x{self.base.n_cols}"
                )

    @property
    def block_shape(self) -> Tuple[int, int]:
        if self.variant == "sketch":
            return self.sketch_rows, self.sketch_cols
        return self.base.shape

    @property
    def shape(self) -> Tuple[int, int]:
        p, q = self.block_shape
        return self.reduced.shape[0] * p, self.reduced.shape[1] * q


def expansion_size(reduced: np.ndarray, base_rows: int, base_cols: int, base_nnz: int) -> Dict[str, int]:
    """Dimensions and interaction count of the plain expansion, by integer arithmetic"""
    reduced = np.atleast_2d(np.asarray(reduced))
    nonzero_blocks = int(np.count_nonzero(reduced))
    return {
        "n_rows": reduced.shape[0] * int(base_rows),
        "n_cols": reduced.shape[1] * int(base_cols),
        "nnz": nonzero_blocks * int(base_nnz),
        "nonzero_blocks": nonzero_blocks,
        "skipped_zero_blocks": reduced.size - nonzero_blocks,
    }


_WORKER_STATE: Dict[str, Any] = {}


def _init_worker(plan: ExpansionPlan, out_dir: str, dry_run: bool) -> None:
    _WORKER_STATE.update(plan=plan, out_dir=out_dir, dry_run=dry_run)


def _block_entries(plan: ExpansionPlan, i_hat: int, j_hat: int, a: float, omega: int) -> Block:
    if plan.variant == "sketch":
        sample = sketch(plan.base, plan.sketch_rows, plan.sketch_cols, omega)
        rows, cols, values = sample.entries()
        return rows, cols, a * values
    return emit_block(a, plan.base, omega, plan.variant)


def _expand_block_row(i_hat: int) -> ShardRecord:
    plan: ExpansionPlan = _WORKER_STATE["plan"]
    out_dir = Path(_WORKER_STATE["out_dir"])
    dry_run = _WORKER_STATE["dry_run"]
    name = SHARD_PATTERN.format(i_hat)
    p, q = plan.block_shape
    row = plan.reduced.matrix[i_hat]
    record = ShardRecord(name=name, block_row=i_hat, nnz=0, complete=not dry_run)

    if dry_run and plan.variant != "sketch":
        record.nnz = expansion_size(row, p, q, plan.base.nnz)["nnz"]
        return record

    try:
        handle = None if dry_run else open(out_dir / name, "w", encoding="utf-8", newline="")
        try:
            for j_hat, a in enumerate(row):
                if a == 0:
                    continue
                omega = block_seed(plan.master_seed, i_hat, j_hat)
                rows, cols, values = _block_entries(plan, i_hat, j_hat, float(a), omega)
                if plan.variant == "sketch":
                    record.blocks.append({"i_hat": i_hat, "j_hat": j_hat, "seed": omega, "nnz": len(values)})
                record.nnz += len(values)
                if handle is not None and len(values):
                    frame = pd.DataFrame({
                        "user": index_map(i_hat, rows, p),
                        "item": index_map(j_hat, cols, q),
                        "rating": values,
                    })
                    frame.to_csv(handle, header=False, index=False, float_format="%.17g", lineterminator="\n")
        finally:
            if handle is not None:
                handle.close()
    except OSError as e:
        _log.error("Writing shard %s failed: %s", name, e)
        record.complete = False
        record.error = str(e)
        return record

    if not dry_run:
        record.checksum = checksum_file(out_dir / name)
    return record


def _pool(workers: int, plan: ExpansionPlan, out_dir: str, dry_run: bool):
    initargs = (plan, out_dir, dry_run)
    if "fork" in get_all_start_methods():
        return get_context("fork").Pool(workers, initializer=_init_worker, initargs=initargs)
    return ThreadPool(workers, initializer=_init_worker, initargs=initargs)


def expand(plan: ExpansionPlan, out_dir: Union[str, Path], workers: int = 1, dry_run: bool = False) -> Manifest:
    """Write every block-row of the expansion as a shard and return the manifest.

    With ``dry_run`` only the manifest is written (sizes, no shard files and
    no checksums). Raises DataError after writing a manifest flagged
    incomplete when a shard could not be written.
    """
    plan.validate()
    if workers < 1:
        raise UsageError(f"workers must be at least 1, got {workers}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    m_hat, n_hat = plan.reduced.shape
    p, q = plan.block_shape
    _log.info(
        "Expanding %dx%d reduced matrix with %dx%d blocks (%s variant, %d workers%s)",
        m_hat, n_hat, p, q, plan.variant, workers, ", dry run" if dry_run else "",
    )

    block_rows = list(range(m_hat))
    if workers == 1 or m_hat == 1:
        _init_worker(plan, str(out_dir), dry_run)
        records = [_expand_block_row(i_hat) for i_hat in block_rows]
    else:
        with _pool(min(workers, m_hat), plan, str(out_dir), dry_run) as pool:
            records = pool.map(_expand_block_row, block_rows)
    records.sort(key=lambda r: r.block_row)

    skipped = int(plan.reduced.matrix.size - plan.reduced.nnz)
    if skipped:
        _log.info("Skipped %d zero blocks", skipped)
    sketch_info = None
    if plan.variant == "sketch":
        sketch_info = {
            "dims": [plan.sketch_rows, plan.sketch_cols],
            "blocks": [block for record in records for block in record.blocks],
        }
        for record in records:
            record.blocks = []

    manifest = Manifest(
        variant=plan.variant,
        master_seed=int(plan.master_seed),
        dims=list(plan.shape),
        nnz_total=sum(record.nnz for record in records),
        block_dims=[m_hat, n_hat, p, q],
        shards=records,
        skipped_zero_blocks=skipped,
        rating_scale=plan.rating_scale.to_dict() if plan.rating_scale else None,
        mixer=MIXER,
        run_config=plan.run_config or {},
        sketch=sketch_info,
        complete=not dry_run and all(record.complete for record in records),
        dry_run=dry_run,
    )
    path = manifest.write(out_dir)
    failed = [record.name for record in records if record.error]
    if failed:
        raise DataError(f"Could not write shards {failed}; manifest {path} flagged incomplete")
    _log.info("Wrote %d interactions in %d shards, manifest %s", manifest.nnz_total, len(records), path)
    return manifest


def expand_sketch(plan: ExpansionPlan, out_dir: Union[str, Path], workers: int = 1, dry_run: bool = False) -> Manifest:
    if plan.variant != "sketch":
        raise UsageError(f"expand_sketch needs a sketch plan, got variant {plan.variant!r}")
    return expand(plan, out_dir, workers=workers, dry_run=dry_run)


def _empty_frame() -> pd.DataFrame:
    return pd.DataFrame({"user": np.empty(0, np.int64), "item": np.empty(0, np.int64), "rating": np.empty(0)})


def read_shard(path: Union[str, Path], chunksize: Optional[int] = None):
    """Read a shard CSV (``user,item,rating``, no header) with pandas"""
    if Path(path).stat().st_size == 0:
        # block-rows of zeros leave an empty shard
        return iter([_empty_frame()]) if chunksize else _empty_frame()
    return pd.read_csv(
        path,
        header=None,
        names=["user", "item", "rating"],
        dtype={"user": np.int64, "item": np.int64, "rating": np.float64},
        float_precision="round_trip",
        chunksize=chunksize,
    )


def materialize(directory: Union[str, Path], manifest: Manifest) -> SparseInteractions:
    """Load every shard of a (desk scale) expansion into one sparse matrix"""
    directory = Path(directory)
    frames: List[pd.DataFrame] = [read_shard(directory / shard.name) for shard in manifest.shards]
    frame = pd.concat(frames, ignore_index=True) if frames else _empty_frame()
    return SparseInteractions.from_entries(
        frame["user"].to_numpy(), frame["item"].to_numpy(), frame["rating"].to_numpy(),
        (manifest.n_rows, manifest.n_cols), value_bound=None,
    )
