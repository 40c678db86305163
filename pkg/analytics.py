import heapq
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Union

import numpy as np
import pandas as pd
import scipy.sparse as sps

from .config import DEFAULT_MEMORY_BUDGET, DEFAULT_TOP_N, MINKOWSKI_LIMIT, SvdParams
from .errors import DataError, SizeGuardError, UsageError, VerificationError
from .expander import read_shard
from .manifest import checksum_file, load_manifest, manifest_path
from .ratingMatrix import SparseInteractions, col_sums, row_sums
from .reducer import ReducedMatrix
from .spectra import truncated_svd

_log = logging.getLogger(__name__)

SOURCES = ("original", "reduced", "analytic-expanded", "empirical-expanded")
READ_CHUNK = 1_000_000

MatrixLike = Union[ReducedMatrix, SparseInteractions, sps.spmatrix, np.ndarray]


def _lattice(x: np.ndarray, y: np.ndarray, descending: bool) -> Iterator[float]:
    """Products x[i]*y[j] of sorted non-negative inputs, in the inputs' order.

    Each cell enters the heap once: (i, j+1) always, (i+1, 0) only from
    the first column.
    """
    if not len(x) or not len(y):
        return
    sign = -1.0 if descending else 1.0
    heap = [(sign * x[0] * y[0], 0, 0)]
    while heap:
        key, i, j = heapq.heappop(heap)
        yield x[i] * y[j]
        if j + 1 < len(y):
            heapq.heappush(heap, (sign * x[i] * y[j + 1], i, j + 1))
        if j == 0 and i + 1 < len(x):
            heapq.heappush(heap, (sign * x[i + 1] * y[0], i + 1, 0))


def _ranked_products(a: np.ndarray, b: np.ndarray) -> Iterator[float]:
    """All pairwise products in non-increasing order, generated lazily."""
    pos_a, pos_b = np.sort(a[a > 0])[::-1], np.sort(b[b > 0])[::-1]
    neg_a, neg_b = np.sort(-a[a < 0])[::-1], np.sort(-b[b < 0])[::-1]
    positives = heapq.merge(
        _lattice(pos_a, pos_b, descending=True),
        _lattice(neg_a, neg_b, descending=True),
        reverse=True,
    )
    n_zero = len(a) * len(b) - (len(pos_a) + len(neg_a)) * (len(pos_b) + len(neg_b))
    # smallest magnitudes first, so negated products come out non-increasing
    negatives = heapq.merge(
        (-v for v in _lattice(pos_a[::-1], neg_b[::-1], descending=False)),
        (-v for v in _lattice(neg_a[::-1], pos_b[::-1], descending=False)),
        reverse=True,
    )
    return itertools.chain(positives, itertools.repeat(0.0, n_zero), negatives)


def minkowski_product(s1, s2, top_n: Optional[int] = None, limit: int = MINKOWSKI_LIMIT) -> np.ndarray:
    """Multiset of all pairwise products {a * b}.

    Without ``top_n`` the full product is materialized (unordered) and
    guarded by ``limit``; with ``top_n`` the exact ``top_n`` largest
    products are returned sorted non-increasing.
    """
    a = np.asarray(s1, dtype=np.float64).ravel()
    b = np.asarray(s2, dtype=np.float64).ravel()
    size = len(a) * len(b)
    if top_n is None:
        if size > limit:
            raise SizeGuardError(f"Minkowski product of {len(a)} x {len(b)} values exceeds {limit}; use top_n")
        return np.multiply.outer(a, b).ravel()
    if top_n < 1:
        raise UsageError(f"top_n must be positive, got {top_n}")
    n = min(top_n, size)
    return np.fromiter(itertools.islice(_ranked_products(a, b), n), dtype=np.float64, count=n)


def _marginal_sums(matrix: MatrixLike, axis: int) -> np.ndarray:
    if isinstance(matrix, ReducedMatrix):
        matrix = matrix.matrix
    if isinstance(matrix, SparseInteractions):
        return row_sums(matrix) if axis == 1 else col_sums(matrix)
    if sps.issparse(matrix):
        return np.asarray(matrix.sum(axis=axis), dtype=np.float64).ravel()
    return np.atleast_2d(np.asarray(matrix, dtype=np.float64)).sum(axis=axis)


def predict_expanded_sums(reduced: MatrixLike, base: MatrixLike, top_n: Optional[int] = None):
    """Row and column sums of reduced (x) base from the factors' own sums"""
    rows = minkowski_product(_marginal_sums(reduced, 1), _marginal_sums(base, 1), top_n=top_n)
    cols = minkowski_product(_marginal_sums(reduced, 0), _marginal_sums(base, 0), top_n=top_n)
    return rows, cols


@dataclass(frozen=True)
class SpectrumPrediction:
    values: np.ndarray
    certified: int
    bound: float

    @property
    def certified_values(self) -> np.ndarray:
        return self.values[: self.certified]


def predict_expanded_spectrum(
    sigma_hat,
    sigma_r,
    sigma_r_complete: bool = False,
    top_n: Optional[int] = None,
) -> SpectrumPrediction:
    """Ranked singular values of reduced (x) base with a certified exact prefix.

    ``sigma_hat`` must be the full spectrum of the reduced matrix; ``sigma_r``
    may be only the leading values of the base. Unknown base values are at
    most ``sigma_r[-1]``, so every product at or above
    ``max(sigma_hat) * sigma_r[-1]`` is certainly in place.
    """
    sigma_hat = np.sort(np.asarray(sigma_hat, dtype=np.float64).ravel())[::-1]
    sigma_r = np.sort(np.asarray(sigma_r, dtype=np.float64).ravel())[::-1]
    if not len(sigma_hat) or not len(sigma_r):
        raise DataError("Cannot predict a spectrum from an empty singular value list")
    if top_n is None:
        values = np.sort(minkowski_product(sigma_hat, sigma_r))[::-1]
    else:
        values = minkowski_product(sigma_hat, sigma_r, top_n=top_n)
    if sigma_r_complete:
        return SpectrumPrediction(values, len(values), 0.0)
    bound = float(sigma_hat[0] * sigma_r[-1])
    return SpectrumPrediction(values, int(np.count_nonzero(values >= bound)), bound)


def sample_expanded_ratings(
    reduced: MatrixLike,
    base: SparseInteractions,
    count: int,
    seed: int = 0,
    chunk: int = READ_CHUNK,
) -> np.ndarray:
    """Uniform draws from the nonzero values of reduced (x) base, without materializing it.

    A uniform nonzero of the product is a uniform nonzero of each factor,
    multiplied, since nnz(K) = nnz(reduced) * nnz(base).
    """
    if count < 1:
        raise UsageError(f"Sample count must be positive, got {count}")
    dense = reduced.matrix if isinstance(reduced, ReducedMatrix) else np.asarray(reduced, dtype=np.float64)
    hat_values = dense[dense != 0]
    base_values = base.values if isinstance(base, SparseInteractions) else np.asarray(base)[np.asarray(base) != 0]
    if not len(hat_values) or not len(base_values):
        raise DataError("Cannot sample ratings: a Kronecker factor has no nonzero entries")

    rng = np.random.default_rng(seed)
    samples = np.empty(count, dtype=np.float64)
    for start in range(0, count, chunk):
        n = min(chunk, count - start)
        samples[start:start + n] = (hat_values[rng.integers(0, len(hat_values), n)]
                                    * base_values[rng.integers(0, len(base_values), n)])
    return samples


def near_average_fraction(samples) -> float:
    """Share of sampled magnitudes below half of the largest magnitude"""
    magnitudes = np.abs(np.asarray(samples, dtype=np.float64))
    if not len(magnitudes) or magnitudes.max() == 0:
        return 1.0
    return float(np.mean(magnitudes < magnitudes.max() / 2))


@dataclass(frozen=True)
class RankedTable:
    frame: pd.DataFrame
    removed: int = 0

    @property
    def values(self) -> np.ndarray:
        return self.frame["value"].to_numpy()

    def __len__(self) -> int:
        return len(self.frame)


def ranked_report(values, drop_nonpositive: bool = False) -> RankedTable:
    """(rank, value) table sorted non-increasing, ranks from 1.

    With ``drop_nonpositive`` values <= 0 are left out (for log-log plots)
    and counted.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    removed = 0
    if drop_nonpositive:
        keep = values > 0
        removed = int(np.count_nonzero(~keep))
        values = values[keep]
        if removed:
            _log.info("Removed %d non-positive values from ranked report", removed)
    ordered = np.sort(values)[::-1]
    frame = pd.DataFrame({"rank": np.arange(1, len(ordered) + 1, dtype=np.int64), "value": ordered})
    return RankedTable(frame, removed)


def vector_value_report(original: np.ndarray, reduced: np.ndarray) -> Dict[str, RankedTable]:
    """Ranked entries of original vs reduced singular vectors, for comparing their distributions"""
    return {
        "original": ranked_report(np.asarray(original).ravel()),
        "reduced": ranked_report(np.asarray(reduced).ravel()),
    }


def singular_vector_tables(reduced: ReducedMatrix) -> Dict[str, RankedTable]:
    """Value tables of the left and right singular vectors before and after reduction"""
    if reduced.source is None or reduced.factors is None:
        raise DataError("Singular vectors are only available on a freshly reduced matrix")
    tables = {}
    for side, original, resized in (
        ("left", reduced.source.U, reduced.factors.U),
        ("right", reduced.source.V, reduced.factors.V),
    ):
        for name, table in vector_value_report(original, resized).items():
            tables[f"{side}_{name}"] = table
    return tables


@dataclass
class StatReport:
    row_sums: np.ndarray
    col_sums: np.ndarray
    singular_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    rating_values: Optional[np.ndarray] = None
    source: str = "original"
    spectrum_truncated: bool = False
    certified_prefix: Optional[int] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise UsageError(f"Unknown report source {self.source!r}")
        self.row_sums = _descending(self.row_sums)
        self.col_sums = _descending(self.col_sums)
        self.singular_values = _descending(self.singular_values)
        if self.rating_values is not None:
            self.rating_values = _descending(self.rating_values)

    def tables(self, drop_nonpositive: bool = True) -> Dict[str, RankedTable]:
        tables = {
            "row_sums": ranked_report(self.row_sums, drop_nonpositive),
            "col_sums": ranked_report(self.col_sums, drop_nonpositive),
            "singular_values": ranked_report(self.singular_values, drop_nonpositive),
        }
        if self.rating_values is not None:
            # rating values are centered, negative ones are kept
            tables["rating_values"] = ranked_report(self.rating_values, False)
        return tables

    def write(self, out_dir: Union[str, Path], drop_nonpositive: bool = True) -> Dict[str, Any]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        sidecar = {
            "source": self.source,
            "spectrum_truncated": self.spectrum_truncated,
            "certified_prefix": self.certified_prefix,
            "drop_nonpositive": drop_nonpositive,
            "removed": {},
            "lengths": {},
            "metadata": self.metadata,
        }
        for name, table in self.tables(drop_nonpositive).items():
            table.frame.to_csv(
                out_dir / f"{name}.tsv", sep="\t", index=False, float_format="%.17g", lineterminator="\n"
            )
            sidecar["removed"][name] = table.removed
            sidecar["lengths"][name] = len(table)
        with open(out_dir / "report.json", "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        return sidecar


def _descending(values) -> np.ndarray:
    return np.sort(np.asarray(values, dtype=np.float64).ravel())[::-1]


def matrix_stats(matrix: SparseInteractions, k: int = 0, svd_params: Optional[SvdParams] = None) -> StatReport:
    """Ranked sums and leading k singular values of an ingested matrix"""
    svd_params = svd_params or SvdParams()
    sigma = np.empty(0)
    if k:
        sigma = truncated_svd(
            matrix, k, tol=svd_params.tol, max_iter=svd_params.max_iter,
            seed=svd_params.seed, oversampling=svd_params.oversampling,
        ).sigma
    return StatReport(
        row_sums(matrix), col_sums(matrix), sigma,
        source="original",
        spectrum_truncated=k < min(matrix.shape),
        metadata={"shape": list(matrix.shape), "nnz": matrix.nnz, "k": k},
    )


def reduced_stats(reduced: ReducedMatrix) -> StatReport:
    dense = reduced.matrix
    return StatReport(
        dense.sum(axis=1), dense.sum(axis=0), np.linalg.svd(dense, compute_uv=False),
        source="reduced",
        metadata={"shape": list(dense.shape), "provenance": reduced.provenance},
    )


def analytic_stats(
    reduced: ReducedMatrix,
    base: SparseInteractions,
    k: int = 0,
    svd_params: Optional[SvdParams] = None,
    top_n: Optional[int] = None,
    variant: str = "plain",
) -> StatReport:
    """Expanded-dataset statistics predicted from the two Kronecker factors alone.

    Only the plain variant is a Kronecker product: shuffled blocks keep
    neither the global marginals nor the spectrum, and sketch blocks are
    random samples of the base.
    """
    if variant != "plain":
        raise UsageError(
            f"Analytic statistics describe plain expansions only, not {variant!r}; use empirical mode"
        )
    svd_params = svd_params or SvdParams()
    size = reduced.shape[0] * base.n_rows + reduced.shape[1] * base.n_cols
    if top_n is None and size > MINKOWSKI_LIMIT:
        _log.warning("Expanded marginals have %d values, keeping the top %d of each", size, DEFAULT_TOP_N)
        top_n = DEFAULT_TOP_N
    rows, cols = predict_expanded_sums(reduced, base, top_n=top_n)
    sigma_values = np.empty(0)
    certified = None
    truncated = False
    if k:
        sigma_r = truncated_svd(
            base, k, tol=svd_params.tol, max_iter=svd_params.max_iter,
            seed=svd_params.seed, oversampling=svd_params.oversampling,
        ).sigma
        prediction = predict_expanded_spectrum(
            np.linalg.svd(reduced.matrix, compute_uv=False), sigma_r,
            sigma_r_complete=k == min(base.shape), top_n=top_n,
        )
        sigma_values, certified = prediction.values, prediction.certified
        truncated = certified < len(sigma_values) or k < min(base.shape)
    return StatReport(
        rows, cols, sigma_values,
        source="analytic-expanded",
        spectrum_truncated=truncated,
        certified_prefix=certified,
        metadata={
            "reduced_shape": list(reduced.shape), "base_shape": list(base.shape),
            "k": k, "top_n": top_n, "variant": variant,
        },
    )


def empirical_stats(
    directory: Union[str, Path],
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
    k: int = 0,
    svd_params: Optional[SvdParams] = None,
) -> StatReport:
    """Exact statistics of a materialized expansion, streaming its shards once.

    Shards are checksummed before use; partial sums are accumulated per
    shard and merged in shard-name order.
    """
    location = manifest_path(directory)
    manifest = load_manifest(location)
    if not manifest.complete:
        raise DataError(f"Manifest {location} describes an incomplete or dry-run expansion")
    n_rows, n_cols = manifest.n_rows, manifest.n_cols
    needed = 2 * (n_rows + n_cols) * 8
    if k:
        # CSR copy of every entry plus the dense SVD block
        needed += manifest.nnz_total * 16 + (n_rows + n_cols) * (k + 8) * 8 * 3
    if needed > memory_budget:
        raise SizeGuardError(f"Empirical statistics need about {needed} bytes, budget is {memory_budget}")

    row_total = np.zeros(n_rows)
    col_total = np.zeros(n_cols)
    entries = []
    for shard in sorted(manifest.shards, key=lambda s: s.name):
        path = location.parent / shard.name
        if not path.is_file():
            raise VerificationError(f"Shard {shard.name} is missing")
        if checksum_file(path) != shard.checksum:
            raise VerificationError(f"Checksum mismatch for shard {shard.name}")
        row_part = np.zeros(n_rows)
        col_part = np.zeros(n_cols)
        for chunk in read_shard(path, chunksize=READ_CHUNK):
            users = chunk["user"].to_numpy()
            items = chunk["item"].to_numpy()
            ratings = chunk["rating"].to_numpy()
            row_part += np.bincount(users, weights=ratings, minlength=n_rows)
            col_part += np.bincount(items, weights=ratings, minlength=n_cols)
            if k:
                entries.append((users, items, ratings))
        row_total += row_part
        col_total += col_part
        _log.debug("Accumulated shard %s", shard.name)

    sigma = np.empty(0)
    if k:
        svd_params = svd_params or SvdParams()
        if entries:
            users, items, ratings = (np.concatenate(parts) for parts in zip(*entries))
        else:
            users = items = np.empty(0, dtype=np.int64)
            ratings = np.empty(0)
        matrix = SparseInteractions.from_entries(users, items, ratings, (n_rows, n_cols), value_bound=None)
        sigma = truncated_svd(
            matrix, k, tol=svd_params.tol, max_iter=svd_params.max_iter,
            seed=svd_params.seed, oversampling=svd_params.oversampling,
        ).sigma

    return StatReport(
        row_total, col_total, sigma,
        source="empirical-expanded",
        spectrum_truncated=bool(k) and k < min(n_rows, n_cols),
        metadata={"dims": [n_rows, n_cols], "nnz": manifest.nnz_total, "variant": manifest.variant, "k": k},
    )
