import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import scipy.sparse as sps

from .config import REDUCTION_FRACTION, SvdParams
from .errors import DataError, RankDeficiencyError, UsageError
from .ratingMatrix import SparseInteractions
from .spectra import SvdTriplet, orthogonalize_columns, orthogonalize_rows, truncated_svd

_log = logging.getLogger(__name__)

FORMAT_TAG = "reduced-matrix v1"
RESIZE_METHOD = "area-average"


@dataclass(frozen=True)
class ReducedMatrix:
    """Small dense matrix used as the left Kronecker factor.

    ``factors`` holds the orthogonalized (U~, sigma, V~) the matrix was
    rebuilt from and ``source`` the truncated SVD of the original matrix;
    neither is persisted.
    """
    matrix: np.ndarray
    provenance: Dict[str, Any] = field(default_factory=dict)
    factors: Optional[SvdTriplet] = None
    source: Optional[SvdTriplet] = None

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise DataError(f"Reduced matrix must be 2-D, got shape {self.matrix.shape}")
        if self.matrix.size and np.max(np.abs(self.matrix)) > 1.0:
            raise DataError("Reduced matrix values must lie in [-1, 1]")

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.matrix))

    def pre_rescale(self) -> np.ndarray:
        """The matrix before the final division by (max - min)"""
        return self.matrix * (self.provenance["rescale_max"] - self.provenance["rescale_min"])


def _area_weights(n_in: int, n_out: int) -> sps.csr_matrix:
    """Row-stochastic box-filter weights mapping n_in cells onto n_out cells.

    Overlaps are computed on the integer grid scaled by n_out so boundary
    fractions are exact.
    """
    rows, cols, overlaps = [], [], []
    for out in range(n_out):
        start = (out * n_in) // n_out
        stop = -(-((out + 1) * n_in) // n_out)
        cells = np.arange(start, stop, dtype=np.int64)
        overlap = (np.minimum((cells + 1) * n_out, (out + 1) * n_in)
                   - np.maximum(cells * n_out, out * n_in))
        keep = overlap > 0
        rows.append(np.full(np.count_nonzero(keep), out, dtype=np.int64))
        cols.append(cells[keep])
        overlaps.append(overlap[keep])
    weights = np.concatenate(overlaps).astype(np.float64) / n_in
    return sps.csr_matrix((weights, (np.concatenate(rows), np.concatenate(cols))), shape=(n_out, n_in))


def resize_average(M: np.ndarray, out_rows: int, out_cols: int) -> np.ndarray:
    """Downscale by area-weighted box averaging (no interpolation, no filtering)."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    n_rows, n_cols = M.shape
    if out_rows < 1 or out_cols < 1:
        raise UsageError(f"Output size must be positive, got {out_rows}x{out_cols}")
    if out_rows > n_rows or out_cols > n_cols:
        raise UsageError(f"Cannot upscale {n_rows}x{n_cols} to {out_rows}x{out_cols}")

    resized = M
    if out_rows != n_rows:
        resized = _area_weights(n_rows, out_rows) @ resized
    if out_cols != n_cols:
        resized = (_area_weights(n_cols, out_cols) @ resized.T).T
    return np.array(resized)


def reduce(
    R: SparseInteractions,
    out_rows: int,
    out_cols: int,
    svd_params: Optional[SvdParams] = None,
    max_fraction: float = REDUCTION_FRACTION,
) -> ReducedMatrix:
    """Build the reduced matrix R^ from the leading singular structure of R.

    Left singular vectors are resized to ``out_rows`` rows (user side),
    right singular vectors to ``out_cols`` columns (item side), both are
    re-orthogonalized, recombined with the leading singular values and the
    product is divided by its value range.
    """
    svd_params = svd_params or SvdParams()
    m, n = R.shape
    if out_rows < 1 or out_cols < 1:
        raise UsageError(f"Reduced dimensions must be positive, got {out_rows}x{out_cols}")
    if out_rows >= m or out_cols >= n:
        raise UsageError(f"Reduced size {out_rows}x{out_cols} does not reduce a {m}x{n} matrix")
    if out_rows > m * max_fraction or out_cols > n * max_fraction:
        raise UsageError(
            f"Reduced size {out_rows}x{out_cols} exceeds {max_fraction:g} of the source size {m}x{n}"
        )
    k = svd_params.k or min(out_rows, out_cols)
    if k > min(out_rows, out_cols):
        raise UsageError(f"k={k} exceeds min({out_rows}, {out_cols})")

    _log.info("Reducing %dx%d matrix to %dx%d with k=%d", m, n, out_rows, out_cols, k)
    svd = truncated_svd(
        R, k, tol=svd_params.tol, max_iter=svd_params.max_iter,
        seed=svd_params.seed, oversampling=svd_params.oversampling,
    )

    U_bar = resize_average(svd.U, out_rows, k)
    V_bar = resize_average(svd.V, k, out_cols)
    try:
        U_tilde = orthogonalize_columns(U_bar)
        V_tilde = orthogonalize_rows(V_bar)
    except RankDeficiencyError as e:
        raise RankDeficiencyError(
            f"Resized singular vectors lost full rank ({e}); try a lower k",
            smallest_eigenvalue=e.smallest_eigenvalue,
            threshold=e.threshold,
        ) from e

    temp = (U_tilde * svd.sigma) @ V_tilde
    high, low = float(temp.max()), float(temp.min())
    if high == low:
        raise DataError("Reduced matrix is constant, cannot rescale")
    if not low <= 0 <= high:
        raise DataError(f"Reduced matrix range [{low}, {high}] does not straddle zero")

    provenance = {
        "k": k,
        "source_shape": [m, n],
        "source_nnz": R.nnz,
        "resize_method": RESIZE_METHOD,
        "rescale_max": high,
        "rescale_min": low,
        "singular_values": [float(s) for s in svd.sigma],
        "svd": svd_params.to_dict(),
    }
    factors = SvdTriplet(U=U_tilde, sigma=svd.sigma, V=V_tilde, residuals=svd.residuals, rank=svd.rank)
    _log.info("Reduced matrix range [%.6f, %.6f] rescaled by %.6f", low, high, high - low)
    return ReducedMatrix(temp / (high - low), provenance, factors=factors, source=svd)


def save_reduced(path: Union[str, Path], reduced: ReducedMatrix) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "n_rows": reduced.shape[0],
        "n_cols": reduced.shape[1],
        "provenance": reduced.provenance,
    }
    np.savetxt(
        path,
        reduced.matrix,
        fmt="%.17g",
        header=f"{FORMAT_TAG}\n{json.dumps(header, sort_keys=True)}",
        comments="# ",
    )


def load_reduced(path: Union[str, Path]) -> ReducedMatrix:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Reduced matrix file does not exist: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            tag = f.readline().strip()
            header_line = f.readline()
    except UnicodeDecodeError:
        tag = header_line = ""
    if tag != f"# {FORMAT_TAG}":
        raise DataError(f"Not a reduced matrix file (expected '{FORMAT_TAG}'): {path}")
    try:
        header = json.loads(header_line[2:])
    except json.JSONDecodeError as e:
        raise DataError(f"Corrupt reduced matrix header in {path}: {e}") from e
    if not isinstance(header, dict) or not {"n_rows", "n_cols", "provenance"} <= header.keys():
        raise DataError(f"Reduced matrix header in {path} lacks dims or provenance")

    try:
        matrix = np.loadtxt(path, comments="#", ndmin=2, dtype=np.float64)
    except ValueError as e:
        raise DataError(f"Corrupt reduced matrix body in {path}: {e}") from e
    if matrix.shape != (header["n_rows"], header["n_cols"]):
        raise DataError(f"Reduced matrix body is {matrix.shape}, header says "
                        f"{header['n_rows']}x{header['n_cols']}")
    return ReducedMatrix(matrix, header["provenance"])
