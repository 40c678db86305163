import io
import logging
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sps

from .errors import DataError

_log = logging.getLogger(__name__)

MOVIELENS_COLUMNS = ["userId", "movieId", "rating", "timestamp"]
# zip entries carry this timestamp so rewriting the same matrix gives the same bytes
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class RawRatings:
    """Ratings as read from the source platform, before centering"""
    user_ids: np.ndarray
    item_ids: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        sizes = {len(self.user_ids), len(self.item_ids), len(self.ratings), len(self.timestamps)}
        if len(sizes) != 1:
            raise DataError(f"Rating columns have different lengths: {sorted(sizes)}")
        if len(self.ratings):
            pairs = pd.DataFrame({"user": self.user_ids, "item": self.item_ids})
            duplicated = pairs.duplicated()
            if duplicated.any():
                first = int(np.flatnonzero(duplicated.to_numpy())[0])
                raise DataError(
                    f"Duplicate (user, item) pair ({self.user_ids[first]}, {self.item_ids[first]}) "
                    f"at record {first + 1}"
                )

    def __len__(self) -> int:
        return len(self.ratings)

    @classmethod
    def from_records(cls, records) -> "RawRatings":
        """Build from an iterable of (user_id, item_id, rating, timestamp) tuples"""
        rows = list(records)
        if not rows:
            return cls(*(np.empty(0, dtype=dtype) for dtype in (np.int64, np.int64, np.float64, np.int64)))
        users, items, ratings, stamps = zip(*rows)
        return cls(
            np.asarray(users, dtype=np.int64),
            np.asarray(items, dtype=np.int64),
            np.asarray(ratings, dtype=np.float64),
            np.asarray(stamps, dtype=np.int64),
        )


@dataclass(frozen=True)
class RatingScale:
    global_mean: float
    divisor: float
    dropped: int = 0

    def __post_init__(self):
        if not self.divisor > 0:
            raise DataError(f"Rating divisor must be positive, got {self.divisor}")

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.global_mean, "divisor": self.divisor, "dropped": self.dropped}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "RatingScale":
        return cls(float(payload["mean"]), float(payload["divisor"]), int(payload.get("dropped", 0)))


class SparseInteractions:
    """Sparse user x item matrix with dense 0-based indices.

    Stored as a canonical CSR matrix (sorted column indices, no explicit
    zeros, no duplicates). Values are bounded by ``value_bound`` in absolute
    value; pass ``value_bound=None`` for general sparse matrices.
    ``user_ids``/``item_ids`` map row/column indices back to the ids they
    came from (original platform ids, or source indices for a sketch).
    """

    def __init__(
        self,
        matrix: sps.spmatrix,
        user_ids: Optional[np.ndarray] = None,
        item_ids: Optional[np.ndarray] = None,
        value_bound: Optional[float] = 1.0,
    ):
        csr = sps.csr_matrix(matrix, dtype=np.float64, copy=True)
        if not csr.has_sorted_indices:
            csr.sort_indices()
        if not csr.has_canonical_format:
            raise DataError("Sparse matrix has duplicate entries")
        _check_values(csr.data, value_bound)
        self._csr = csr
        self.user_ids = None if user_ids is None else np.asarray(user_ids)
        self.item_ids = None if item_ids is None else np.asarray(item_ids)
        if self.user_ids is not None and len(self.user_ids) != csr.shape[0]:
            raise DataError(f"Row id map has {len(self.user_ids)} entries for {csr.shape[0]} rows")
        if self.item_ids is not None and len(self.item_ids) != csr.shape[1]:
            raise DataError(f"Column id map has {len(self.item_ids)} entries for {csr.shape[1]} columns")

    @classmethod
    def from_entries(
        cls,
        rows,
        cols,
        values,
        shape: Tuple[int, int],
        user_ids: Optional[np.ndarray] = None,
        item_ids: Optional[np.ndarray] = None,
        value_bound: Optional[float] = 1.0,
    ) -> "SparseInteractions":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        n_rows, n_cols = int(shape[0]), int(shape[1])
        if n_rows < 0 or n_cols < 0:
            raise DataError(f"Invalid shape {shape}")
        if not (len(rows) == len(cols) == len(values)):
            raise DataError("Entry arrays have different lengths")
        if len(rows):
            if rows.min() < 0 or rows.max() >= n_rows:
                raise DataError(f"Row index out of range for {n_rows} rows")
            if cols.min() < 0 or cols.max() >= n_cols:
                raise DataError(f"Column index out of range for {n_cols} columns")
            linear = rows * n_cols + cols
            if len(np.unique(linear)) != len(linear):
                raise DataError("Duplicate (row, col) entries")
        _check_values(values, value_bound)
        coo = sps.coo_matrix((values, (rows, cols)), shape=(n_rows, n_cols))
        csr = coo.tocsr()
        csr.sort_indices()
        return cls(csr, user_ids=user_ids, item_ids=item_ids, value_bound=value_bound)

    @classmethod
    def from_dense(cls, dense, value_bound: Optional[float] = None) -> "SparseInteractions":
        dense = np.atleast_2d(np.asarray(dense, dtype=np.float64))
        rows, cols = np.nonzero(dense)
        return cls.from_entries(rows, cols, dense[rows, cols], dense.shape, value_bound=value_bound)

    @property
    def csr(self) -> sps.csr_matrix:
        return self._csr

    @property
    def shape(self) -> Tuple[int, int]:
        return self._csr.shape

    @property
    def n_rows(self) -> int:
        return self._csr.shape[0]

    @property
    def n_cols(self) -> int:
        return self._csr.shape[1]

    @property
    def nnz(self) -> int:
        return int(self._csr.nnz)

    @property
    def values(self) -> np.ndarray:
        return self._csr.data

    def entries(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(rows, cols, values) in row-major order"""
        rows = np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self._csr.indptr))
        return rows, self._csr.indices.astype(np.int64), self._csr.data

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def __repr__(self) -> str:
        return f"SparseInteractions(shape={self.shape}, nnz={self.nnz})"


def _check_values(values: np.ndarray, value_bound: Optional[float]) -> None:
    if not len(values):
        return
    if not np.all(np.isfinite(values)):
        raise DataError("Matrix values must be finite")
    if np.any(values == 0):
        raise DataError("Explicit zero entries are not allowed, zero means unobserved")
    if value_bound is not None and np.max(np.abs(values)) > value_bound:
        raise DataError(f"Matrix values must lie in [-{value_bound}, {value_bound}]")


def read_movielens_csv(path: PathLike) -> RawRatings:
    """Read a MovieLens ``userId,movieId,rating,timestamp`` CSV file."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8-sig")
    except pd.errors.EmptyDataError:
        raise DataError(f"Ratings file is empty: {path}")
    except pd.errors.ParserError as e:
        raise DataError(f"Malformed ratings file {path}: {e}")

    if list(frame.columns) != MOVIELENS_COLUMNS:
        raise DataError(f"Unexpected header {list(frame.columns)} in {path}, expected {MOVIELENS_COLUMNS}")
    if frame.empty:
        raise DataError(f"Ratings file has a header but no ratings: {path}")

    parsed = frame.apply(lambda column: pd.to_numeric(column.str.strip(), errors="coerce"))
    bad = parsed.isna().any(axis=1).to_numpy()
    for name in ("userId", "movieId", "timestamp"):
        bad |= (parsed[name] % 1 != 0).to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        # +2: 1-based lines and the header line
        raise DataError(f"Malformed rating at line {row + 2} of {path}: {','.join(frame.iloc[row])}")

    _log.info("Read %d ratings from %s", len(parsed), path)
    return RawRatings(
        parsed["userId"].to_numpy(dtype=np.int64),
        parsed["movieId"].to_numpy(dtype=np.int64),
        parsed["rating"].to_numpy(dtype=np.float64),
        parsed["timestamp"].to_numpy(dtype=np.int64),
    )


def center_and_rescale(raw: RawRatings) -> Tuple[SparseInteractions, RatingScale]:
    """Center ratings on their global mean and scale them into [-1, 1].

    Ids are remapped to dense indices in ascending id order. Ratings equal
    to the mean become 0, which the sparse layout reads as unobserved, so
    they are dropped and counted in ``RatingScale.dropped``.
    """
    if len(raw) == 0:
        raise DataError("Cannot center an empty rating set")

    global_mean = float(np.mean(raw.ratings))
    deviations = raw.ratings - global_mean
    divisor = float(np.max(np.abs(deviations)))
    if divisor == 0:
        raise DataError(f"All ratings equal {raw.ratings[0]}, the rescale divisor would be zero")

    user_ids, rows = np.unique(raw.user_ids, return_inverse=True)
    item_ids, cols = np.unique(raw.item_ids, return_inverse=True)
    keep = deviations != 0
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        _log.info("Dropped %d ratings equal to the global mean %.6f", dropped, global_mean)

    matrix = SparseInteractions.from_entries(
        rows[keep],
        cols[keep],
        deviations[keep] / divisor,
        (len(user_ids), len(item_ids)),
        user_ids=user_ids,
        item_ids=item_ids,
    )
    scale = RatingScale(global_mean, divisor, dropped)
    _log.info(
        "Centered %d ratings: %d users x %d items, mean %.6f, divisor %.6f",
        matrix.nnz, matrix.n_rows, matrix.n_cols, global_mean, divisor,
    )
    return matrix, scale


def row_sums(matrix: SparseInteractions) -> np.ndarray:
    return np.asarray(matrix.csr.sum(axis=1), dtype=np.float64).ravel()


def col_sums(matrix: SparseInteractions) -> np.ndarray:
    return np.asarray(matrix.csr.sum(axis=0), dtype=np.float64).ravel()


def write_npz(path: PathLike, arrays: Dict[str, np.ndarray]) -> None:
    """np.savez_compressed with fixed entry timestamps, so equal arrays give equal bytes"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as archive:
        for name, array in arrays.items():
            buffer = io.BytesIO()
            np.save(buffer, np.asarray(array), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            archive.writestr(info, buffer.getvalue())


def save_interactions(path: PathLike, matrix: SparseInteractions, scale: Optional[RatingScale] = None) -> None:
    rows, cols, values = matrix.entries()
    arrays = {
        "row": rows,
        "col": cols,
        "data": values,
        "shape": np.asarray(matrix.shape, dtype=np.int64),
    }
    if matrix.user_ids is not None:
        arrays["user_ids"] = matrix.user_ids
    if matrix.item_ids is not None:
        arrays["item_ids"] = matrix.item_ids
    if scale is not None:
        arrays["scale"] = np.asarray([scale.global_mean, scale.divisor, scale.dropped], dtype=np.float64)
    write_npz(path, arrays)


def load_interactions(path: PathLike) -> Tuple[SparseInteractions, Optional[RatingScale]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Matrix file does not exist: {path}")
    try:
        with np.load(path, allow_pickle=False) as loader:
            matrix = SparseInteractions.from_entries(
                loader["row"],
                loader["col"],
                loader["data"],
                tuple(int(n) for n in loader["shape"]),
                user_ids=loader["user_ids"] if "user_ids" in loader.files else None,
                item_ids=loader["item_ids"] if "item_ids" in loader.files else None,
                value_bound=None,
            )
            scale = None
            if "scale" in loader.files:
                mean, divisor, dropped = loader["scale"]
                scale = RatingScale(float(mean), float(divisor), int(dropped))
    except (ValueError, KeyError, TypeError, zipfile.BadZipFile) as e:
        raise DataError(f"Corrupt matrix file {path}: {e}") from e
    return matrix, scale
