import json
import shutil

import numpy as np
import pandas as pd
import pytest

from autotask_fractal.analytics import predict_expanded_sums, singular_vector_tables
from autotask_fractal.cli import (
    cmd_expand,
    cmd_ingest,
    cmd_reduce,
    cmd_sample,
    cmd_stats,
    cmd_synth,
    cmd_verify,
    main,
)
from autotask_fractal.config import RunConfig
from autotask_fractal.errors import DataError, UsageError
from autotask_fractal.manifest import load_manifest
from autotask_fractal.ratingMatrix import load_interactions
from autotask_fractal.reducer import load_reduced


def _read_ranked(path):
    return pd.read_csv(path, sep="\t")["value"].to_numpy()


def test_ingest_writes_matrix_and_report(write_csv, tmp_path):
    csv = write_csv([(1, 10, 1.0, 0), (1, 20, 3.0, 0), (2, 10, 5.0, 0), (3, 30, 4.0, 0)])
    report = cmd_ingest(csv, tmp_path / "R.npz")
    assert report["n_rows"] == 3
    assert report["n_cols"] == 3
    assert report["nnz"] == 4
    assert report["mean"] == 3.25
    assert report["dropped_at_mean"] == 0
    sidecar = json.loads((tmp_path / "R.json").read_text(encoding="utf-8"))
    assert sidecar["run_config"]["inputs"] == {"ratings": str(csv.resolve())}
    matrix, scale = load_interactions(tmp_path / "R.npz")
    assert matrix.shape == (3, 3)
    assert scale.divisor == 2.25


def test_ingest_header_only_fails(write_csv, tmp_path):
    with pytest.raises(DataError, match="no ratings"):
        cmd_ingest(write_csv([]), tmp_path / "R.npz")


def test_reduce_records_provenance(desk_pipeline):
    reduced = load_reduced(desk_pipeline["reduced"])
    assert reduced.shape == (8, 16)
    assert reduced.provenance["k"] == 8
    assert reduced.provenance["source_shape"] == [120, 200]
    config = RunConfig.from_dict(reduced.provenance["run_config"])
    assert config.command == "reduce"
    assert (config.reduced_rows, config.reduced_cols) == (8, 16)


def test_desk_pipeline_end_to_end(desk_pipeline, tmp_path):
    out = tmp_path / "plain"
    manifest = cmd_expand(desk_pipeline["reduced"], desk_pipeline["matrix"], out, workers=2)
    base, _ = load_interactions(desk_pipeline["matrix"])
    reduced = load_reduced(desk_pipeline["reduced"])
    assert manifest.nnz_total == reduced.nnz * base.nnz
    assert manifest.dims == [8 * base.n_rows, 16 * base.n_cols]

    empirical = cmd_stats(out, tmp_path / "empirical", mode="empirical")
    analytic = cmd_stats(out, tmp_path / "analytic", mode="analytic")
    rows, cols = predict_expanded_sums(reduced, base)
    np.testing.assert_allclose(empirical.row_sums, np.sort(rows)[::-1], rtol=0, atol=1e-9)
    np.testing.assert_allclose(empirical.col_sums, analytic.col_sums, rtol=0, atol=1e-9)

    table = _read_ranked(tmp_path / "empirical" / "row_sums.tsv")
    assert np.all(np.diff(table) <= 0)
    assert np.all(table > 0)
    sidecar = json.loads((tmp_path / "empirical" / "report.json").read_text(encoding="utf-8"))
    assert sidecar["source"] == "empirical-expanded"
    assert sidecar["removed"]["row_sums"] + sidecar["lengths"]["row_sums"] == manifest.n_rows

    report = cmd_verify(out)
    assert report.passed, report.failures


def test_desk_pipeline_spectrum(desk_pipeline, tmp_path):
    out = tmp_path / "plain"
    cmd_expand(desk_pipeline["reduced"], desk_pipeline["matrix"], out)
    analytic = cmd_stats(out, tmp_path / "analytic", mode="analytic", k=24, tol=1e-8, max_iter=5000)
    empirical = cmd_stats(out, tmp_path / "empirical", mode="empirical", k=8, tol=1e-8, max_iter=5000)
    certified = min(analytic.certified_prefix, 8)
    assert certified >= 1
    np.testing.assert_allclose(
        empirical.singular_values[:certified], analytic.singular_values[:certified], rtol=1e-4
    )
    sidecar = json.loads((tmp_path / "analytic" / "report.json").read_text(encoding="utf-8"))
    assert sidecar["certified_prefix"] == analytic.certified_prefix
    assert sidecar["spectrum_truncated"] is True


def test_expand_is_reproducible(desk_pipeline, tmp_path):
    for name, workers in (("one", 1), ("many", 8)):
        cmd_expand(desk_pipeline["reduced"], desk_pipeline["matrix"], tmp_path / name,
                   variant="shuffle", seed=5, workers=workers)
    one = load_manifest(tmp_path / "one")
    many = load_manifest(tmp_path / "many")
    assert [s.checksum for s in one.shards] == [s.checksum for s in many.shards]
    assert (tmp_path / "one" / "manifest.json").read_bytes() == (tmp_path / "many" / "manifest.json").read_bytes()
    assert RunConfig.from_dict(one.run_config).seed == 5


def test_shuffle_keeps_counts_and_values(desk_pipeline, tmp_path):
    plain = cmd_expand(desk_pipeline["reduced"], desk_pipeline["matrix"], tmp_path / "plain")
    shuffled = cmd_expand(desk_pipeline["reduced"], desk_pipeline["matrix"], tmp_path / "shuffle",
                          variant="shuffle", seed=2)
    assert plain.nnz_total == shuffled.nnz_total
    plain_stats = cmd_stats(tmp_path / "plain", tmp_path / "s1", mode="empirical", drop_nonpositive=False)
    shuffle_stats = cmd_stats(tmp_path / "shuffle", tmp_path / "s2", mode="empirical", drop_nonpositive=False)
    assert not np.allclose(plain_stats.row_sums, shuffle_stats.row_sums)

    def values(directory):
        frames = [pd.read_csv(path, header=None)[2] for path in sorted(directory.glob("part-r*.csv"))]
        return np.sort(pd.concat(frames).to_numpy())

    np.testing.assert_array_equal(values(tmp_path / "plain"), values(tmp_path / "shuffle"))
    report = cmd_verify(tmp_path / "shuffle")
    assert report.passed
    assert report.skipped == ["marginal sums are not conserved by shuffle expansions"]


def test_dry_run_reports_sizes(desk_pipeline, tmp_path):
    manifest = cmd_expand(desk_pipeline["reduced"], desk_pipeline["matrix"], tmp_path, dry_run=True)
    base, _ = load_interactions(desk_pipeline["matrix"])
    assert manifest.nnz_total == 128 * base.nnz
    assert not list(tmp_path.glob("part-r*.csv"))


def test_verify_detects_edited_shard(desk_pipeline, tmp_path):
    cmd_expand(desk_pipeline["reduced"], desk_pipeline["matrix"], tmp_path)
    shard = tmp_path / "part-r00003.csv"
    lines = shard.read_text(encoding="utf-8").splitlines()
    user, item, _ = lines[0].split(",")
    lines[0] = f"{user},{item},0.125"
    shard.write_text("\n".join(lines) + "\n", encoding="utf-8")

    report = cmd_verify(tmp_path)
    assert not report.passed
    assert any("checksum" in failure for failure in report.failures)
    assert main(["verify", str(tmp_path)]) == 3


def test_verify_detects_count_mismatch(desk_pipeline, tmp_path):
    cmd_expand(desk_pipeline["reduced"], desk_pipeline["matrix"], tmp_path)
    path = tmp_path / "manifest.json"
    payload = json.loads(path.read_text(encoding="utf-8"))
    payload["nnz_total"] += 1
    path.write_text(json.dumps(payload), encoding="utf-8")

    report = cmd_verify(tmp_path)
    assert not report.passed
    assert any("count mismatch" in failure for failure in report.failures)


def test_sample_writes_ranked_table(desk_pipeline, tmp_path):
    out = tmp_path / "samples.tsv"
    summary = cmd_sample(desk_pipeline["reduced"], desk_pipeline["matrix"], 20_000, out, seed=4)
    table = _read_ranked(out)
    assert len(table) == 20_000
    assert np.all(np.diff(table) <= 0)
    assert summary["near_average_fraction"] >= 0.6
    sidecar = json.loads(out.with_suffix(".json").read_text(encoding="utf-8"))
    assert sidecar["count"] == 20_000
    again = cmd_sample(desk_pipeline["reduced"], desk_pipeline["matrix"], 20_000, tmp_path / "again.tsv", seed=4)
    assert again["near_average_fraction"] == summary["near_average_fraction"]
    assert out.read_bytes() == (tmp_path / "again.tsv").read_bytes()


def test_stats_on_matrix_and_reduced(desk_pipeline, tmp_path):
    report = cmd_stats(desk_pipeline["matrix"], tmp_path / "R", k=4)
    assert report.source == "original"
    assert len(report.singular_values) == 4
    assert (tmp_path / "R" / "singular_values.tsv").is_file()
    reduced = cmd_stats(desk_pipeline["reduced"], tmp_path / "R_hat")
    assert reduced.source == "reduced"
    assert len(reduced.singular_values) == 8


def test_main_runs_the_pipeline(tmp_path):
    assert main(["synth", str(tmp_path / "r.csv"), "--users", "60", "--items", "90", "--seed", "1"]) == 0
    assert main(["ingest", str(tmp_path / "r.csv"), str(tmp_path / "R.npz")]) == 0
    assert main(["reduce", str(tmp_path / "R.npz"), str(tmp_path / "R_hat.txt"),
                 "--rows", "4", "--cols", "8", "--tol", "1e-9", "--max-iter", "3000"]) == 0
    assert main(["expand", str(tmp_path / "R_hat.txt"), str(tmp_path / "R.npz"), str(tmp_path / "out"),
                 "--variant", "plain", "--workers", "2"]) == 0
    assert main(["stats", str(tmp_path / "out"), str(tmp_path / "stats"), "--mode", "empirical",
                 "--memory-budget", "1GiB"]) == 0
    assert main(["verify", str(tmp_path / "out")]) == 0


@pytest.mark.parametrize("argv", [
    ["reduce", "R.npz", "out.txt", "--rows", "0", "--cols", "4"],
    ["expand", "a", "b", "c", "--variant", "nonlinear"],
    ["stats", "x", "y", "--memory-budget", "lots"],
    ["frobnicate"],
    [],
])
def test_main_usage_errors(argv):
    assert main(argv) == 1


def test_main_data_errors(tmp_path):
    assert main(["ingest", str(tmp_path / "missing.csv"), str(tmp_path / "R.npz")]) == 2
    (tmp_path / "bad.csv").write_text("userId,movieId,rating,timestamp\n", encoding="utf-8")
    assert main(["ingest", str(tmp_path / "bad.csv"), str(tmp_path / "R.npz")]) == 2
    assert main(["verify", str(tmp_path)]) == 2


def test_main_reduce_guard_is_usage_error(desk_pipeline, tmp_path):
    assert main(["reduce", str(desk_pipeline["matrix"]), str(tmp_path / "x.txt"),
                 "--rows", "100", "--cols", "16"]) == 1


def test_reduce_writes_singular_vector_tables(desk_pipeline, tmp_path):
    cmd_reduce(desk_pipeline["matrix"], 8, 16, tmp_path / "R_hat.txt", seed=3, tol=1e-8, max_iter=5000,
               vectors_dir=tmp_path / "vectors")
    lengths = {
        "left_original": 120 * 8, "left_reduced": 8 * 8,
        "right_original": 8 * 200, "right_reduced": 8 * 16,
    }
    for name, length in lengths.items():
        table = _read_ranked(tmp_path / "vectors" / f"{name}.tsv")
        assert len(table) == length
        assert np.all(np.diff(table) <= 0)
    with pytest.raises(DataError, match="freshly reduced"):
        singular_vector_tables(load_reduced(tmp_path / "R_hat.txt"))


def test_max_fraction_only_tightens(desk_pipeline, tmp_path):
    with pytest.raises(UsageError, match="tighten"):
        cmd_reduce(desk_pipeline["matrix"], 60, 16, tmp_path / "loose.txt", max_fraction=0.5)
    assert main(["reduce", str(desk_pipeline["matrix"]), str(tmp_path / "loose.txt"),
                 "--rows", "60", "--cols", "16", "--max-fraction", "0.5"]) == 1
    with pytest.raises(UsageError, match="exceeds"):
        cmd_reduce(desk_pipeline["matrix"], 8, 16, tmp_path / "tight.txt", max_fraction=0.05)
    assert not (tmp_path / "loose.txt").exists()


def test_analytic_stats_need_plain_expansion(desk_pipeline, tmp_path):
    cmd_expand(desk_pipeline["reduced"], desk_pipeline["matrix"], tmp_path / "shuffle", variant="shuffle", seed=2)
    cmd_expand(desk_pipeline["reduced"], desk_pipeline["matrix"], tmp_path / "sketch", variant="sketch",
               seed=2, sketch_rows=30, sketch_cols=50)
    for variant in ("shuffle", "sketch"):
        with pytest.raises(UsageError, match="plain expansions only"):
            cmd_stats(tmp_path / variant, tmp_path / f"{variant}-stats")
        assert main(["stats", str(tmp_path / variant), str(tmp_path / f"{variant}-main")]) == 1
    empirical = cmd_stats(tmp_path / "sketch", tmp_path / "sketch-empirical", mode="empirical")
    assert len(empirical.row_sums) == 8 * 30

    cmd_expand(desk_pipeline["reduced"], desk_pipeline["matrix"], tmp_path / "plain")
    analytic = cmd_stats(tmp_path / "plain", tmp_path / "plain-stats")
    assert analytic.metadata["variant"] == "plain"


def test_verify_uses_resolved_inputs(desk_pipeline, tmp_path, monkeypatch):
    monkeypatch.chdir(desk_pipeline["root"])
    manifest = cmd_expand("R_hat.txt", "R.npz", tmp_path / "out")
    assert manifest.run_config["inputs"] == {
        "reduced": str(desk_pipeline["reduced"].resolve()),
        "matrix": str(desk_pipeline["matrix"].resolve()),
    }
    monkeypatch.chdir(tmp_path)
    report = cmd_verify(tmp_path / "out")
    assert report.passed, report.failures
    assert report.skipped == []
    assert "row sums match the analytic prediction" in report.checks
    assert "column sums match the analytic prediction" in report.checks


def test_verify_lists_skipped_checks(desk_pipeline, tmp_path):
    shutil.copy(desk_pipeline["reduced"], tmp_path / "R_hat.txt")
    shutil.copy(desk_pipeline["matrix"], tmp_path / "R.npz")
    cmd_expand(tmp_path / "R_hat.txt", tmp_path / "R.npz", tmp_path / "out")
    (tmp_path / "R.npz").unlink()

    report = cmd_verify(tmp_path / "out")
    assert report.passed
    assert len(report.skipped) == 1
    assert report.skipped[0].startswith("input cross-checks, inputs unavailable")
    assert not any("sums match" in check for check in report.checks)


def test_corrupt_inputs_are_data_errors(desk_pipeline, tmp_path):
    lines = desk_pipeline["reduced"].read_text(encoding="utf-8").splitlines()
    lines[-1] = "0.1 not-a-number"
    bad_body = tmp_path / "body.txt"
    bad_body.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(DataError, match="body"):
        load_reduced(bad_body)
    assert main(["stats", str(bad_body), str(tmp_path / "s1")]) == 2

    bad_header = tmp_path / "header.txt"
    bad_header.write_text('# reduced-matrix v1\n# {"n_rows": 1}\n0.5\n', encoding="utf-8")
    with pytest.raises(DataError, match="lacks"):
        load_reduced(bad_header)

    not_zip = tmp_path / "R.npz"
    not_zip.write_text("userId,movieId\n", encoding="utf-8")
    with pytest.raises(DataError, match="Corrupt matrix"):
        load_interactions(not_zip)
    assert main(["stats", str(not_zip), str(tmp_path / "s2")]) == 2

    cmd_expand(desk_pipeline["reduced"], desk_pipeline["matrix"], tmp_path / "out", dry_run=True)
    path = tmp_path / "out" / "manifest.json"
    payload = json.loads(path.read_text(encoding="utf-8"))
    del payload["shards"][0]["nnz"]
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(DataError, match="Corrupt manifest"):
        load_manifest(tmp_path / "out")
    assert main(["verify", str(tmp_path / "out")]) == 2


@pytest.mark.slow
def test_full_size_desk_pipeline(tmp_path):
    csv = cmd_synth(tmp_path / "ratings.csv", n_users=1000, n_items=1700, density=0.06, seed=11)
    cmd_ingest(csv, tmp_path / "R.npz")
    cmd_reduce(tmp_path / "R.npz", 8, 16, tmp_path / "R_hat.txt", seed=3, tol=1e-8, max_iter=5000)
    manifest = cmd_expand(tmp_path / "R_hat.txt", tmp_path / "R.npz", tmp_path / "out", workers=4)
    base, _ = load_interactions(tmp_path / "R.npz")
    reduced = load_reduced(tmp_path / "R_hat.txt")
    assert manifest.dims == [8000, 27_200]
    assert manifest.nnz_total == reduced.nnz * base.nnz

    params = dict(k=64, tol=1e-8, max_iter=5000)
    empirical = cmd_stats(tmp_path / "out", tmp_path / "empirical", mode="empirical", **params)
    analytic = cmd_stats(tmp_path / "out", tmp_path / "analytic", mode="analytic", **params)
    rows, cols = predict_expanded_sums(reduced, base)
    np.testing.assert_allclose(empirical.row_sums, np.sort(rows)[::-1], rtol=0, atol=1e-9)
    np.testing.assert_allclose(empirical.col_sums, np.sort(cols)[::-1], rtol=0, atol=1e-9)
    assert analytic.certified_prefix >= 64
    np.testing.assert_allclose(empirical.singular_values[:64], analytic.singular_values[:64], rtol=1e-4)
    assert cmd_verify(tmp_path / "out").passed
