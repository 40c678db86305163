"""Command-line surface: ingest, reduce, expand, stats, sample, verify (and synth).

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
"""
import argparse
import json
import logging
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from . import analytics
from .config import (
    DEFAULT_MAX_ITER,
    DEFAULT_MEMORY_BUDGET,
    DEFAULT_SEED,
    DEFAULT_TOL,
    DEFAULT_WORKERS,
    MANIFEST_NAME,
    REDUCTION_FRACTION,
    VARIANTS,
    RunConfig,
    SvdParams,
)
from .errors import DataError, FractalError, SizeGuardError, UsageError, VerificationError
from .expander import ExpansionPlan, expand
from .manifest import Manifest, checksum_file, count_lines, load_manifest, manifest_path
from .ratingMatrix import center_and_rescale, load_interactions, read_movielens_csv, save_interactions
from .reducer import ReducedMatrix, load_reduced, reduce, save_reduced
from .synthetic import synthesize_ratings, write_movielens_csv

_log = logging.getLogger(__name__)

PathLike = Union[str, Path]
SUM_TOLERANCE = 1e-9


def _write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _resolved(path: PathLike) -> str:
    return str(Path(path).resolve())


def _echo(config: RunConfig) -> Dict[str, Any]:
    """Run configuration as recorded in artifacts; scheduling and output location are not content"""
    payload = config.to_dict()
    payload.pop("workers")
    payload.pop("output")
    return payload


def cmd_ingest(in_csv: PathLike, out_matrix: PathLike) -> Dict[str, Any]:
    """Read a MovieLens CSV, center/rescale it and persist matrix + report"""
    out_matrix = Path(out_matrix)
    config = RunConfig(command="ingest", inputs={"ratings": _resolved(in_csv)}, output=str(out_matrix))
    matrix, scale = center_and_rescale(read_movielens_csv(in_csv))
    save_interactions(out_matrix, matrix, scale)
    report = {
        "n_rows": matrix.n_rows,
        "n_cols": matrix.n_cols,
        "nnz": matrix.nnz,
        "mean": scale.global_mean,
        "divisor": scale.divisor,
        "dropped_at_mean": scale.dropped,
        "run_config": _echo(config),
    }
    _write_json(out_matrix.with_suffix(".json"), report)
    _log.info("Ingested %d x %d matrix with %d ratings into %s", matrix.n_rows, matrix.n_cols, matrix.nnz, out_matrix)
    return report


def cmd_reduce(
    matrix: PathLike,
    out_rows: int,
    out_cols: int,
    out: PathLike,
    k: Optional[int] = None,
    seed: int = DEFAULT_SEED,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    max_fraction: float = REDUCTION_FRACTION,
    vectors_dir: Optional[PathLike] = None,
) -> ReducedMatrix:
    """Reduce an ingested matrix; with ``vectors_dir`` also write ranked singular-vector values"""
    if max_fraction > REDUCTION_FRACTION:
        raise UsageError(
            f"--max-fraction may only tighten the {REDUCTION_FRACTION:g} reduction bound, got {max_fraction:g}"
        )
    config = RunConfig(
        command="reduce", inputs={"matrix": _resolved(matrix)}, output=str(out), seed=seed,
        reduced_rows=out_rows, reduced_cols=out_cols, k=k, tol=tol, max_iter=max_iter,
    )
    base, _ = load_interactions(matrix)
    reduced = reduce(base, out_rows, out_cols, config.svd_params(), max_fraction=max_fraction)
    reduced.provenance["run_config"] = _echo(config)
    save_reduced(out, reduced)
    _log.info("Wrote %dx%d reduced matrix to %s", out_rows, out_cols, out)
    if vectors_dir is not None:
        vectors_dir = Path(vectors_dir)
        vectors_dir.mkdir(parents=True, exist_ok=True)
        for name, table in analytics.singular_vector_tables(reduced).items():
            table.frame.to_csv(
                vectors_dir / f"{name}.tsv", sep="\t", index=False, float_format="%.17g", lineterminator="\n"
            )
        _log.info("Wrote singular vector value tables to %s", vectors_dir)
    return reduced


def cmd_expand(
    reduced: PathLike,
    matrix: PathLike,
    out_dir: PathLike,
    variant: str = "plain",
    seed: int = DEFAULT_SEED,
    workers: int = DEFAULT_WORKERS,
    dry_run: bool = False,
    sketch_rows: Optional[int] = None,
    sketch_cols: Optional[int] = None,
) -> Manifest:
    config = RunConfig(
        command="expand", inputs={"reduced": _resolved(reduced), "matrix": _resolved(matrix)},
        output=str(out_dir), seed=seed, variant=variant, workers=workers,
        sketch_rows=sketch_rows, sketch_cols=sketch_cols, dry_run=dry_run,
    )
    base, scale = load_interactions(matrix)
    plan = ExpansionPlan(
        reduced=load_reduced(reduced),
        base=base,
        variant=variant,
        master_seed=seed,
        sketch_rows=sketch_rows,
        sketch_cols=sketch_cols,
        rating_scale=scale,
        run_config=_echo(config),
    )
    return expand(plan, out_dir, workers=workers, dry_run=dry_run)


def _target_kind(target: Path) -> str:
    if target.is_dir() or target.name == MANIFEST_NAME:
        return "manifest"
    if target.suffix == ".npz":
        return "matrix"
    return "reduced"


def _load_inputs(manifest: Manifest):
    inputs = manifest.run_config.get("inputs", {})
    if "reduced" not in inputs or "matrix" not in inputs:
        raise DataError("Manifest does not record the reduced and base matrix inputs")
    base, _ = load_interactions(inputs["matrix"])
    return load_reduced(inputs["reduced"]), base


def cmd_stats(
    target: PathLike,
    out_dir: PathLike,
    mode: str = "analytic",
    k: int = 0,
    seed: int = DEFAULT_SEED,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
    top_n: Optional[int] = None,
    drop_nonpositive: bool = True,
) -> analytics.StatReport:
    """Ranked statistics of an ingested matrix, a reduced matrix or an expansion"""
    target = Path(target)
    if mode not in ("analytic", "empirical"):
        raise UsageError(f"Unknown stats mode {mode!r}")
    svd_params = SvdParams(k=k or None, tol=tol, max_iter=max_iter, seed=seed)
    kind = _target_kind(target)
    _log.info("Computing %s statistics of %s %s", mode if kind == "manifest" else "direct", kind, target)
    if kind == "matrix":
        matrix, _ = load_interactions(target)
        report = analytics.matrix_stats(matrix, k, svd_params)
    elif kind == "reduced":
        report = analytics.reduced_stats(load_reduced(target))
    elif mode == "analytic":
        manifest = load_manifest(target)
        reduced, base = _load_inputs(manifest)
        report = analytics.analytic_stats(reduced, base, k, svd_params, top_n=top_n, variant=manifest.variant)
    else:
        report = analytics.empirical_stats(target, memory_budget, k, svd_params)
    report.metadata["run_config"] = _echo(RunConfig(
        command="stats", inputs={"target": _resolved(target)}, output=str(out_dir), seed=seed,
        memory_budget=memory_budget, k=k, tol=tol, max_iter=max_iter,
    ))
    report.metadata["mode"] = mode
    report.write(out_dir, drop_nonpositive=drop_nonpositive)
    return report


def cmd_sample(
    reduced: PathLike,
    matrix: PathLike,
    count: int,
    out: PathLike,
    seed: int = DEFAULT_SEED,
) -> Dict[str, Any]:
    """Sample rating values of the plain expansion and write them ranked"""
    out = Path(out)
    base, scale = load_interactions(matrix)
    samples = analytics.sample_expanded_ratings(load_reduced(reduced), base, count, seed)
    table = analytics.ranked_report(samples)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.frame.to_csv(out, sep="\t", index=False, float_format="%.17g", lineterminator="\n")
    summary = {
        "count": count,
        "near_average_fraction": analytics.near_average_fraction(samples),
        "max_magnitude": float(np.max(np.abs(samples))),
        "rating_scale": scale.to_dict() if scale else None,
        "run_config": _echo(RunConfig(
            command="sample", inputs={"reduced": _resolved(reduced), "matrix": _resolved(matrix)},
            output=str(out), seed=seed, count=count,
        )),
    }
    _write_json(out.with_suffix(".json"), summary)
    _log.info("Sampled %d ratings, %.1f%% near the average", count, 100 * summary["near_average_fraction"])
    return summary


@dataclass
class VerificationReport:
    passed: bool = True
    failures: List[str] = field(default_factory=list)
    checks: List[str] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)

    def fail(self, message: str) -> None:
        _log.error("Verification failed: %s", message)
        self.passed = False
        self.failures.append(message)

    def ok(self, message: str) -> None:
        _log.info("Verified: %s", message)
        self.checks.append(message)

    def skip(self, message: str) -> None:
        _log.warning("Not verified: %s", message)
        self.skipped.append(message)


def cmd_verify(target: PathLike, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> VerificationReport:
    """Re-check shard checksums, interaction counts and (when affordable) marginal sums"""
    location = manifest_path(target)
    manifest = load_manifest(location)
    report = VerificationReport()
    if not manifest.complete:
        report.fail("manifest is flagged incomplete")

    shards_ok = True
    for shard in manifest.shards:
        path = location.parent / shard.name
        if not path.is_file():
            report.fail(f"shard {shard.name} is missing")
            shards_ok = False
            continue
        if checksum_file(path) != shard.checksum:
            report.fail(f"checksum mismatch for shard {shard.name}")
            shards_ok = False
        lines = count_lines(path)
        if lines != shard.nnz:
            report.fail(f"shard {shard.name} holds {lines} interactions, manifest says {shard.nnz}")
            shards_ok = False
    if shards_ok:
        report.ok(f"{len(manifest.shards)} shard checksums and counts")

    shard_total = sum(shard.nnz for shard in manifest.shards)
    if shard_total != manifest.nnz_total:
        report.fail(f"count mismatch: shards hold {shard_total} interactions, manifest total is {manifest.nnz_total}")
    else:
        report.ok(f"total of {shard_total} interactions")

    if manifest.variant == "sketch":
        report.skip("input cross-checks do not apply to sketch expansions")
        return report
    try:
        reduced, base = _load_inputs(manifest)
    except DataError as e:
        report.skip(f"input cross-checks, inputs unavailable: {e}")
        return report

    expected = reduced.nnz * base.nnz
    if expected != manifest.nnz_total:
        report.fail(f"count mismatch: nnz(reduced) * nnz(base) = {expected}, manifest total is {manifest.nnz_total}")
    else:
        report.ok(f"total equals nnz(reduced) * nnz(base) = {expected}")
    expected_dims = [reduced.shape[0] * base.n_rows, reduced.shape[1] * base.n_cols]
    if list(manifest.dims) != expected_dims:
        report.fail(f"dims {manifest.dims} differ from expected {expected_dims}")
    else:
        report.ok(f"dims {expected_dims} match the inputs")

    if manifest.variant != "plain":
        report.skip(f"marginal sums are not conserved by {manifest.variant} expansions")
        return report
    if not report.passed:
        report.skip("marginal sum comparison, earlier checks failed")
        return report
    try:
        empirical = analytics.empirical_stats(location, memory_budget)
    except SizeGuardError as e:
        report.skip(f"marginal sum comparison: {e}")
        return report
    rows, cols = analytics.predict_expanded_sums(reduced, base)
    for name, predicted, actual in (("row", rows, empirical.row_sums), ("column", cols, empirical.col_sums)):
        predicted = np.sort(predicted)[::-1]
        tolerance = SUM_TOLERANCE * max(1.0, float(np.max(np.abs(predicted), initial=0.0)))
        if predicted.shape != actual.shape or not np.allclose(predicted, actual, rtol=0, atol=tolerance):
            report.fail(f"{name} sums differ from the analytic prediction")
        else:
            report.ok(f"{name} sums match the analytic prediction")
    return report


def cmd_synth(
    out_csv: PathLike,
    n_users: int = 1000,
    n_items: int = 1700,
    density: float = 0.06,
    seed: int = DEFAULT_SEED,
    exponent: float = 1.0,
) -> Path:
    return write_movielens_csv(synthesize_ratings(n_users, n_items, density, seed, exponent), out_csv)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


_SIZE_UNITS = {"": 1, "k": 1024, "m": 1024 ** 2, "g": 1024 ** 3, "t": 1024 ** 4}


def _byte_size(text: str) -> int:
    match = re.fullmatch(r"\s*(\d+)\s*([kmgt]?)(?:i?b)?\s*", text.lower())
    if not match:
        raise argparse.ArgumentTypeError(f"invalid size {text!r}, expected e.g. 4GiB or 512M")
    return int(match.group(1)) * _SIZE_UNITS[match.group(2)]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="autotask_fractal", description="Kronecker fractal expansion of rating matrices")
    parser.add_argument("--log-level", default="INFO", help="logging level (default INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="center and rescale a MovieLens ratings CSV")
    ingest.add_argument("in_csv")
    ingest.add_argument("out_matrix")

    red = sub.add_parser("reduce", help="build the reduced matrix")
    red.add_argument("matrix")
    red.add_argument("out")
    red.add_argument("--rows", type=_positive_int, required=True, help="m', rows of the reduced matrix")
    red.add_argument("--cols", type=_positive_int, required=True, help="n', columns of the reduced matrix")
    red.add_argument("--k", type=_positive_int, default=None, help="rank (default min(m', n'))")
    red.add_argument("--max-fraction", type=float, default=REDUCTION_FRACTION,
                     help=f"largest reduced/source ratio per dimension (at most {REDUCTION_FRACTION:g})")
    red.add_argument("--vectors-dir", default=None,
                     help="also write ranked singular-vector values before and after reduction here")

    exp = sub.add_parser("expand", help="stream the Kronecker expansion to shards")
    exp.add_argument("reduced")
    exp.add_argument("matrix")
    exp.add_argument("out_dir")
    exp.add_argument("--variant", choices=VARIANTS, default="plain")
    exp.add_argument("--workers", type=_positive_int, default=DEFAULT_WORKERS)
    exp.add_argument("--dry-run", action="store_true", help="write the manifest only")
    exp.add_argument("--sketch-rows", type=_positive_int, default=None)
    exp.add_argument("--sketch-cols", type=_positive_int, default=None)

    st = sub.add_parser("stats", help="ranked row/column sums and singular values")
    st.add_argument("target", help="matrix .npz, reduced matrix file, or expansion directory/manifest")
    st.add_argument("out_dir")
    st.add_argument("--mode", choices=("analytic", "empirical"), default="analytic")
    st.add_argument("--k", type=int, default=0, help="leading singular values to compute (0: none)")
    st.add_argument("--top-n", type=_positive_int, default=None)
    st.add_argument("--keep-nonpositive", action="store_true")

    sam = sub.add_parser("sample", help="sample rating values of the expansion")
    sam.add_argument("reduced")
    sam.add_argument("matrix")
    sam.add_argument("out")
    sam.add_argument("--count", type=_positive_int, required=True)

    ver = sub.add_parser("verify", help="re-check an expansion against its manifest")
    ver.add_argument("manifest")

    syn = sub.add_parser("synth", help="write a synthetic MovieLens-format ratings CSV")
    syn.add_argument("out_csv")
    syn.add_argument("--users", type=_positive_int, default=1000)
    syn.add_argument("--items", type=_positive_int, default=1700)
    syn.add_argument("--density", type=float, default=0.06)
    syn.add_argument("--exponent", type=float, default=1.0)

    for command in (red, exp, st, sam, syn):
        command.add_argument("--seed", type=int, default=DEFAULT_SEED)
    for command in (red, st):
        command.add_argument("--tol", type=float, default=DEFAULT_TOL)
        command.add_argument("--max-iter", type=_positive_int, default=DEFAULT_MAX_ITER)
    for command in (st, ver):
        command.add_argument("--memory-budget", type=_byte_size, default=DEFAULT_MEMORY_BUDGET)
    return parser


def _run(args: argparse.Namespace) -> int:
    if args.command == "ingest":
        cmd_ingest(args.in_csv, args.out_matrix)
    elif args.command == "reduce":
        cmd_reduce(args.matrix, args.rows, args.cols, args.out, k=args.k, seed=args.seed,
                   tol=args.tol, max_iter=args.max_iter, max_fraction=args.max_fraction,
                   vectors_dir=args.vectors_dir)
    elif args.command == "expand":
        cmd_expand(args.reduced, args.matrix, args.out_dir, variant=args.variant, seed=args.seed,
                   workers=args.workers, dry_run=args.dry_run,
                   sketch_rows=args.sketch_rows, sketch_cols=args.sketch_cols)
    elif args.command == "stats":
        cmd_stats(args.target, args.out_dir, mode=args.mode, k=args.k, seed=args.seed, tol=args.tol,
                  max_iter=args.max_iter, memory_budget=args.memory_budget, top_n=args.top_n,
                  drop_nonpositive=not args.keep_nonpositive)
    elif args.command == "sample":
        cmd_sample(args.reduced, args.matrix, args.count, args.out, seed=args.seed)
    elif args.command == "verify":
        report = cmd_verify(args.manifest, memory_budget=args.memory_budget)
        if not report.passed:
            raise VerificationError("; ".join(report.failures))
    elif args.command == "synth":
        cmd_synth(args.out_csv, args.users, args.items, args.density, args.seed, args.exponent)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        logging.basicConfig(level=logging.INFO)
        _log.error("Usage error: %s", e)
        return UsageError.exit_code
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return _run(args)
    except FractalError as e:
        _log.error("%s failed: %s", args.command, e)
        return e.exit_code
    except OSError as e:
        _log.error("%s failed: %s", args.command, e)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
