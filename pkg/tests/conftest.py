import importlib.util
import logging
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
PACKAGE = "autotask_fractal"


def _load_package():
    """Import the repository root as a package, the way the plugin host does"""
    if PACKAGE in sys.modules:
        return sys.modules[PACKAGE]
    spec = importlib.util.spec_from_file_location(
        PACKAGE, ROOT / "__init__.py", submodule_search_locations=[str(ROOT)]
    )
    module = importlib.util.module_from_spec(spec)
    sys.modules[PACKAGE] = module
    spec.loader.exec_module(module)
    return module


_load_package()

from autotask_fractal.ratingMatrix import SparseInteractions  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20190702)


@pytest.fixture
def make_sparse():
    def build(rng, n_rows, n_cols, density=0.5, value_bound=None):
        dense = rng.uniform(-1.0, 1.0, (n_rows, n_cols)) * (rng.random((n_rows, n_cols)) < density)
        return SparseInteractions.from_dense(dense, value_bound=value_bound)
    return build


@pytest.fixture
def workflow_logger():
    return logging.getLogger("workflow")


@pytest.fixture
def write_csv(tmp_path):
    def write(rows, name="ratings.csv", header="userId,movieId,rating,timestamp"):
        path = tmp_path / name
        lines = ([header] if header is not None else []) + [",".join(str(v) for v in row) for row in rows]
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        return path
    return write


@pytest.fixture(scope="module")
def desk_pipeline(tmp_path_factory):
    """Synthetic ratings, ingested and reduced to 8 x 16"""
    from autotask_fractal.cli import cmd_ingest, cmd_reduce, cmd_synth

    root = tmp_path_factory.mktemp("desk")
    csv = cmd_synth(root / "ratings.csv", n_users=120, n_items=200, density=0.05, seed=7)
    cmd_ingest(csv, root / "R.npz")
    cmd_reduce(root / "R.npz", 8, 16, root / "R_hat.txt", seed=3, tol=1e-8, max_iter=5000)
    return {"root": root, "csv": csv, "matrix": root / "R.npz", "reduced": root / "R_hat.txt"}
