import numpy as np
import pytest

from autotask_fractal.errors import DataError
from autotask_fractal.ratingMatrix import (
    RawRatings,
    RatingScale,
    SparseInteractions,
    center_and_rescale,
    col_sums,
    load_interactions,
    read_movielens_csv,
    row_sums,
    save_interactions,
)


def test_read_movielens_csv(write_csv):
    path = write_csv([(1, 10, 4.0, 964982703), (1, 20, 3.5, 964982224), (7, 10, 5.0, 964983815)])
    raw = read_movielens_csv(path)
    assert len(raw) == 3
    assert raw.user_ids.tolist() == [1, 1, 7]
    assert raw.item_ids.tolist() == [10, 20, 10]
    assert raw.ratings.tolist() == [4.0, 3.5, 5.0]


def test_read_movielens_csv_accepts_crlf(tmp_path):
    path = tmp_path / "crlf.csv"
    path.write_bytes(b"userId,movieId,rating,timestamp\r\n1,2,3.0,100\r\n2,2,4.0,101\r\n")
    assert read_movielens_csv(path).ratings.tolist() == [3.0, 4.0]


def test_read_movielens_csv_reports_malformed_line(write_csv):
    path = write_csv([(1, 10, 4.0, 1), (2, 10, "abc", 2), (3, 10, 1.0, 3)])
    with pytest.raises(DataError, match="line 3"):
        read_movielens_csv(path)


def test_read_movielens_csv_rejects_fractional_ids(write_csv):
    path = write_csv([(1, 10.5, 4.0, 1)])
    with pytest.raises(DataError, match="line 2"):
        read_movielens_csv(path)


def test_read_movielens_csv_header_only(write_csv):
    with pytest.raises(DataError, match="no ratings"):
        read_movielens_csv(write_csv([]))


def test_read_movielens_csv_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("", encoding="utf-8")
    with pytest.raises(DataError, match="empty"):
        read_movielens_csv(path)


def test_read_movielens_csv_wrong_header(write_csv):
    with pytest.raises(DataError, match="header"):
        read_movielens_csv(write_csv([(1, 2, 3, 4)], header="user,item,rating,time"))


def test_duplicate_pairs_rejected(write_csv):
    path = write_csv([(1, 10, 4.0, 1), (1, 10, 2.0, 2)])
    with pytest.raises(DataError, match="Duplicate"):
        read_movielens_csv(path)


def test_center_and_rescale_drops_mean_ratings():
    raw = RawRatings.from_records([(5, 1, 1.0, 0), (5, 2, 3.0, 0), (9, 1, 5.0, 0)])
    matrix, scale = center_and_rescale(raw)
    assert scale.global_mean == 3.0
    assert scale.divisor == 2.0
    assert scale.dropped == 1
    assert matrix.shape == (2, 2)
    assert matrix.nnz == 2
    assert matrix.to_dense().tolist() == [[-1.0, 0.0], [1.0, 0.0]]
    assert matrix.user_ids.tolist() == [5, 9]
    assert matrix.item_ids.tolist() == [1, 2]


def test_center_and_rescale_round_trip(rng):
    n = 400
    users = rng.integers(0, 50, n)
    items = rng.integers(0, 80, n)
    keep = ~np.zeros(n, dtype=bool)
    seen = set()
    for index, pair in enumerate(zip(users, items)):
        keep[index] = pair not in seen
        seen.add(pair)
    ratings = rng.choice(np.arange(0.5, 5.01, 0.5), n)[keep]
    raw = RawRatings(users[keep], items[keep], ratings, np.zeros(keep.sum(), dtype=np.int64))
    matrix, scale = center_and_rescale(raw)

    assert np.all(np.abs(matrix.values) <= 1.0)
    rows, cols, values = matrix.entries()
    restored = scale.global_mean + values * scale.divisor
    lookup = {(u, i): r for u, i, r in zip(raw.user_ids, raw.item_ids, raw.ratings)}
    expected = [lookup[(matrix.user_ids[r], matrix.item_ids[c])] for r, c in zip(rows, cols)]
    np.testing.assert_allclose(restored, expected, rtol=0, atol=1e-12)
    assert matrix.nnz + scale.dropped == len(raw)


def test_constant_ratings_rejected():
    raw = RawRatings.from_records([(1, 1, 4.0, 0), (2, 1, 4.0, 0)])
    with pytest.raises(DataError, match="divisor"):
        center_and_rescale(raw)


def test_rating_scale_requires_positive_divisor():
    with pytest.raises(DataError):
        RatingScale(3.0, 0.0)


def test_sums_small_example():
    matrix = SparseInteractions.from_entries([0, 0, 1], [0, 1, 0], [1.0, 2.0, -1.0], (2, 2), value_bound=None)
    assert row_sums(matrix).tolist() == [3.0, -1.0]
    assert col_sums(matrix).tolist() == [0.0, 2.0]


def test_sums_cancellation_and_identity():
    cancel = SparseInteractions.from_entries([0, 1], [0, 0], [1.0, -1.0], (2, 2))
    assert col_sums(cancel).tolist() == [0.0, 0.0]
    identity = SparseInteractions.from_dense(np.eye(3))
    assert col_sums(identity).tolist() == [1.0, 1.0, 1.0]
    empty = SparseInteractions.from_entries([], [], [], (3, 3))
    assert row_sums(empty).tolist() == [0.0, 0.0, 0.0]


def test_sums_match_loop_oracle(rng, make_sparse):
    matrix = make_sparse(rng, 8, 8)
    dense = matrix.to_dense()
    expected_rows = [sum(dense[i, j] for j in range(8)) for i in range(8)]
    expected_cols = [sum(dense[i, j] for i in range(8)) for j in range(8)]
    np.testing.assert_allclose(row_sums(matrix), expected_rows, atol=1e-12)
    np.testing.assert_allclose(col_sums(matrix), expected_cols, atol=1e-12)
    assert abs(row_sums(matrix).sum() - col_sums(matrix).sum()) < 1e-9


@pytest.mark.parametrize("rows, cols, values, message", [
    ([0, 0], [1, 1], [0.5, 0.25], "Duplicate"),
    ([0, 3], [0, 0], [0.5, 0.25], "Row index"),
    ([0], [0], [0.0], "zero"),
    ([0], [0], [1.5], "lie in"),
    ([0], [0], [np.nan], "finite"),
])
def test_from_entries_rejects_invalid(rows, cols, values, message):
    with pytest.raises(DataError, match=message):
        SparseInteractions.from_entries(rows, cols, values, (3, 3))


def test_value_bound_can_be_disabled():
    matrix = SparseInteractions.from_dense(np.diag([3.0, 2.0, 1.0]), value_bound=None)
    assert matrix.nnz == 3


def test_entries_are_row_major(rng, make_sparse):
    matrix = make_sparse(rng, 6, 7, density=0.6)
    rows, cols, _ = matrix.entries()
    order = rows * matrix.n_cols + cols
    assert np.all(np.diff(order) > 0)


def test_save_and_load_interactions(tmp_path):
    raw = RawRatings.from_records([(5, 1, 1.0, 0), (5, 2, 2.0, 0), (9, 1, 5.0, 0), (9, 3, 4.5, 0)])
    matrix, scale = center_and_rescale(raw)
    first = tmp_path / "a.npz"
    second = tmp_path / "b.npz"
    save_interactions(first, matrix, scale)
    save_interactions(second, matrix, scale)
    assert first.read_bytes() == second.read_bytes()

    loaded, loaded_scale = load_interactions(first)
    assert loaded.shape == matrix.shape
    np.testing.assert_array_equal(loaded.to_dense(), matrix.to_dense())
    np.testing.assert_array_equal(loaded.user_ids, matrix.user_ids)
    assert loaded_scale == scale


def test_load_interactions_missing_file(tmp_path):
    with pytest.raises(DataError, match="does not exist"):
        load_interactions(tmp_path / "missing.npz")
