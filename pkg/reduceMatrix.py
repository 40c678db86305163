from typing import Dict, Any
try:
    from autotask.nodes import Node, register_node
except ImportError:
    from .stub import Node, register_node
import os

from .cli import cmd_reduce
from .config import DEFAULT_MAX_ITER, DEFAULT_SEED, DEFAULT_TOL, REDUCTION_FRACTION


@register_node
class ReduceMatrixNode(Node):
    NAME = "Reduce Matrix"
    DESCRIPTION = """Build the small reduced matrix that seeds a fractal expansion.

The leading k singular vectors of the ingested matrix are resized by area
averaging, re-orthogonalized, recombined with the singular values and
rescaled into [-1, 1]."""
    INPUTS = {
        "matrix_path": {
            "label": "Matrix File",
            "description": "Ingested matrix (.npz)",
            "type": "STRING",
            "required": True,
            "widget": "FILE"
        },
        "output_path": {
            "label": "Reduced Matrix File",
            "description": "Where to write the reduced matrix text file",
            "type": "STRING",
            "required": True
        },
        "rows": {
            "label": "Rows",
            "description": "Rows m' of the reduced matrix",
            "type": "INT",
            "required": True
        },
        "cols": {
            "label": "Columns",
            "description": "Columns n' of the reduced matrix",
            "type": "INT",
            "required": True
        },
        "k": {
            "label": "Rank",
            "description": "Number of singular triplets, 0 means min(rows, cols)",
            "type": "INT",
            "default": 0,
            "required": False
        },
        "seed": {
            "label": "Seed",
            "description": "Seed of the randomized SVD",
            "type": "INT",
            "default": DEFAULT_SEED,
            "required": False
        },
        "tol": {
            "label": "Tolerance",
            "description": "Relative residual tolerance of the SVD",
            "type": "FLOAT",
            "default": DEFAULT_TOL,
            "required": False
        },
        "max_iter": {
            "label": "Max Iterations",
            "description": "Iteration cap of the SVD",
            "type": "INT",
            "default": DEFAULT_MAX_ITER,
            "required": False
        },
        "max_fraction": {
            "label": "Max Fraction",
            "description": "Largest allowed ratio of reduced to source dimensions (at most 0.25)",
            "type": "FLOAT",
            "default": REDUCTION_FRACTION,
            "required": False
        },
        "vectors_dir": {
            "label": "Singular Vector Tables",
            "description": "Optional directory for ranked singular-vector values before and after reduction",
            "type": "STRING",
            "required": False,
            "widget": "DIR"
        }
    }
    OUTPUTS = {
        "reduced_path": {
            "label": "Reduced Matrix File",
            "description": "Path of the written reduced matrix",
            "type": "STRING"
        },
        "singular_values": {
            "label": "Singular Values",
            "description": "Leading singular values of the source matrix",
            "type": "LIST"
        },
        "nnz": {
            "label": "Nonzero Entries",
            "description": "Nonzero entries of the reduced matrix (nonzero blocks of the expansion)",
            "type": "INT"
        },
        "vectors_dir": {
            "label": "Singular Vector Tables",
            "description": "Directory holding the singular-vector value tables, empty when not written",
            "type": "STRING"
        }
    }
    CATEGORY = "Fractal Expansion"

    async def execute(self, node_inputs: Dict[str, Any], workflow_logger=None) -> Dict[str, Any]:
        log = workflow_logger
        try:
            matrix_path = os.path.abspath(node_inputs["matrix_path"])
            output_path = os.path.abspath(node_inputs["output_path"])
            rows = int(node_inputs["rows"])
            cols = int(node_inputs["cols"])
            k = int(node_inputs.get("k") or 0) or None
            vectors_dir = node_inputs.get("vectors_dir") or None
            if vectors_dir:
                vectors_dir = os.path.abspath(vectors_dir)

            log.info(f"Reducing {matrix_path} to {rows} x {cols}")
            log.debug(f"k={k}, seed={node_inputs.get('seed', DEFAULT_SEED)}")
            reduced = cmd_reduce(
                matrix_path, rows, cols, output_path,
                k=k,
                seed=int(node_inputs.get("seed", DEFAULT_SEED)),
                tol=float(node_inputs.get("tol", DEFAULT_TOL)),
                max_iter=int(node_inputs.get("max_iter", DEFAULT_MAX_ITER)),
                max_fraction=float(node_inputs.get("max_fraction", REDUCTION_FRACTION)),
                vectors_dir=vectors_dir,
            )
            if reduced.nnz < reduced.matrix.size:
                log.warning(f"Reduced matrix has {reduced.matrix.size - reduced.nnz} zero entries")

            return {
                "success": True,
                "reduced_path": output_path,
                "singular_values": reduced.provenance["singular_values"],
                "nnz": reduced.nnz,
                "vectors_dir": vectors_dir or ""
            }

        except Exception as e:
            error_msg = f"Matrix reduction failed: {str(e)}"
            log.error(error_msg)
            return {
                "success": False,
                "error_message": error_msg
            }
