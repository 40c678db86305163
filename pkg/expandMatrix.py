from typing import Dict, Any, AsyncGenerator
try:
    from autotask.nodes import Node, register_node, GeneratorNode
except ImportError:
    from .stub import Node, register_node, GeneratorNode
import os

from .cli import cmd_expand
from .config import DEFAULT_SEED, DEFAULT_WORKERS, VARIANTS
from .manifest import iter_shards, manifest_path


@register_node
class ExpandMatrixNode(Node):
    NAME = "Expand Matrix"
    DESCRIPTION = """Stream the Kronecker expansion of a reduced matrix and an ingested matrix to sharded CSV.

One shard (part-rNNNNN.csv, rows user,item,rating) per block-row of the
reduced matrix, plus manifest.json with sizes, seeds and checksums.
Variants: plain, shuffle (rows and columns of every block independently
permuted), sketch (every block is a random row/column sample)."""

    INPUTS = {
        "reduced_path": {
            "label": "Reduced Matrix File",
            "description": "Reduced matrix written by Reduce Matrix",
            "type": "STRING",
            "required": True,
            "widget": "FILE"
        },
        "matrix_path": {
            "label": "Matrix File",
            "description": "Ingested matrix (.npz)",
            "type": "STRING",
            "required": True,
            "widget": "FILE"
        },
        "output_dir": {
            "label": "Output Directory",
            "description": "Directory receiving the shards and the manifest",
            "type": "STRING",
            "required": True,
            "widget": "DIR"
        },
        "variant": {
            "label": "Variant",
            "description": f"One of {', '.join(VARIANTS)}",
            "type": "STRING",
            "default": "plain",
            "required": False
        },
        "seed": {
            "label": "Seed",
            "description": "Master seed of the shuffle and sketch variants",
            "type": "INT",
            "default": DEFAULT_SEED,
            "required": False
        },
        "workers": {
            "label": "Workers",
            "description": "Parallel block-row workers; output does not depend on it",
            "type": "INT",
            "default": DEFAULT_WORKERS,
            "required": False
        },
        "dry_run": {
            "label": "Dry Run",
            "description": "Only compute sizes and write the manifest",
            "type": "BOOLEAN",
            "default": False,
            "required": False
        },
        "sketch_rows": {
            "label": "Sketch Rows",
            "description": "Rows sampled per block (sketch variant)",
            "type": "INT",
            "required": False
        },
        "sketch_cols": {
            "label": "Sketch Columns",
            "description": "Columns sampled per block (sketch variant)",
            "type": "INT",
            "required": False
        }
    }
    OUTPUTS = {
        "manifest_path": {
            "label": "Manifest",
            "description": "Path of manifest.json",
            "type": "STRING"
        },
        "dims": {
            "label": "Dimensions",
            "description": "Rows and columns of the expanded matrix",
            "type": "LIST"
        },
        "nnz_total": {
            "label": "Interactions",
            "description": "Number of interactions in the expansion",
            "type": "INT"
        }
    }
    CATEGORY = "Fractal Expansion"

    async def execute(self, node_inputs: Dict[str, Any], workflow_logger=None) -> Dict[str, Any]:
        log = workflow_logger
        try:
            reduced_path = os.path.abspath(node_inputs["reduced_path"])
            matrix_path = os.path.abspath(node_inputs["matrix_path"])
            output_dir = os.path.abspath(node_inputs["output_dir"])
            variant = node_inputs.get("variant") or "plain"
            sketch_rows = node_inputs.get("sketch_rows")
            sketch_cols = node_inputs.get("sketch_cols")

            for path in (reduced_path, matrix_path):
                if not os.path.isfile(path):
                    log.error(f"Input file does not exist: {path}")
                    return {"success": False, "error_message": f"Input file does not exist: {path}"}

            log.info(f"Expanding {reduced_path} x {matrix_path} into {output_dir}")
            log.debug(f"Variant: {variant}")
            manifest = cmd_expand(
                reduced_path, matrix_path, output_dir,
                variant=variant,
                seed=int(node_inputs.get("seed", DEFAULT_SEED)),
                workers=int(node_inputs.get("workers", DEFAULT_WORKERS)),
                dry_run=bool(node_inputs.get("dry_run", False)),
                sketch_rows=int(sketch_rows) if sketch_rows else None,
                sketch_cols=int(sketch_cols) if sketch_cols else None,
            )
            log.info(f"Expansion {manifest.dims[0]} x {manifest.dims[1]} with {manifest.nnz_total} interactions")

            return {
                "success": True,
                "manifest_path": str(manifest_path(output_dir)),
                "dims": list(manifest.dims),
                "nnz_total": manifest.nnz_total
            }

        except Exception as e:
            error_msg = f"Matrix expansion failed: {str(e)}"
            log.error(error_msg)
            return {
                "success": False,
                "error_message": error_msg
            }


@register_node
class ExpansionShardGeneratorNode(GeneratorNode):
    """Generator node to walk the shards of an expansion one by one"""
    NAME = "Expansion Shard Generator"
    DESCRIPTION = """List the shards recorded in an expansion manifest one by one.

Return format for each yield:
{
        "path": "absolute path of the shard",
        "block_row": block-row index,
        "nnz": interactions in the shard,
        "checksum_ok": true/false
}"""

    INPUTS = {
        "manifest_path": {
            "label": "Manifest",
            "description": "manifest.json or the expansion directory",
            "type": "STRING",
            "required": True
        },
        "verify": {
            "label": "Verify Checksums",
            "description": "Recompute every shard checksum before yielding it",
            "type": "BOOLEAN",
            "default": True,
            "required": False
        }
    }

    OUTPUTS = {
        "path": {
            "label": "Shard Path",
            "description": "Absolute path of the current shard",
            "type": "STRING"
        },
        "block_row": {
            "label": "Block Row",
            "description": "Block-row of the reduced matrix the shard holds",
            "type": "INT"
        },
        "nnz": {
            "label": "Interactions",
            "description": "Interactions in the current shard",
            "type": "INT"
        },
        "checksum_ok": {
            "label": "Checksum OK",
            "description": "Whether the shard matches its recorded checksum (null when not verified)",
            "type": "BOOLEAN"
        }
    }

    CATEGORY = "Fractal Expansion"

    async def execute(self, node_inputs: Dict[str, Any], workflow_logger=None) -> AsyncGenerator[Any, None]:
        log = workflow_logger
        try:
            location = manifest_path(os.path.abspath(node_inputs["manifest_path"]))
            verify = node_inputs.get("verify", True)

            if not location.is_file():
                log.error(f"Manifest does not exist: {location}")
                return

            log.info(f"Walking shards of {location}")
            for record in iter_shards(location, verify=verify):
                if not record["exists"]:
                    log.warning(f"Shard missing: {record['path']}")
                elif verify and not record["checksum_ok"]:
                    log.warning(f"Checksum mismatch: {record['path']}")
                yield {
                    "path": record["path"],
                    "block_row": record["block_row"],
                    "nnz": record["nnz"],
                    "checksum_ok": record.get("checksum_ok")
                }

            log.info("Shard walk completed successfully")

        except Exception as e:
            error_msg = f"Shard walk failed: {str(e)}"
            log.error(error_msg)
            return
