from typing import Dict, Any
try:
    from autotask.nodes import Node, register_node
except ImportError:
    from .stub import Node, register_node
import os

from .cli import cmd_stats
from .config import DEFAULT_MEMORY_BUDGET, DEFAULT_SEED


@register_node
class ExpansionStatsNode(Node):
    NAME = "Expansion Statistics"
    DESCRIPTION = """Ranked row sums, column sums and singular values of a matrix, a reduced matrix or an expansion.

Each statistic is written as a rank<TAB>value TSV sorted non-increasing,
with report.json alongside. Expansions are summarized either analytically
(from the two Kronecker factors) or empirically (by streaming the shards)."""
    INPUTS = {
        "target_path": {
            "label": "Target",
            "description": "Matrix .npz, reduced matrix file, or expansion directory/manifest",
            "type": "STRING",
            "required": True
        },
        "output_dir": {
            "label": "Output Directory",
            "description": "Directory receiving the ranked tables",
            "type": "STRING",
            "required": True,
            "widget": "DIR"
        },
        "mode": {
            "label": "Mode",
            "description": "analytic or empirical (expansions only)",
            "type": "STRING",
            "default": "analytic",
            "required": False
        },
        "k": {
            "label": "Singular Values",
            "description": "Leading singular values to compute, 0 skips the spectrum",
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
        "memory_budget": {
            "label": "Memory Budget",
            "description": "Bytes empirical statistics may use",
            "type": "INT",
            "default": DEFAULT_MEMORY_BUDGET,
            "required": False
        },
        "drop_nonpositive": {
            "label": "Drop Non-positive",
            "description": "Leave values <= 0 out of the ranked tables (for log-log plots)",
            "type": "BOOLEAN",
            "default": True,
            "required": False
        }
    }
    OUTPUTS = {
        "output_dir": {
            "label": "Output Directory",
            "description": "Directory holding the tables and report.json",
            "type": "STRING"
        },
        "report": {
            "label": "Report",
            "description": "Source, lengths and removed counts of the ranked tables",
            "type": "DICT"
        }
    }
    CATEGORY = "Fractal Expansion"

    async def execute(self, node_inputs: Dict[str, Any], workflow_logger=None) -> Dict[str, Any]:
        log = workflow_logger
        try:
            target = os.path.abspath(node_inputs["target_path"])
            output_dir = os.path.abspath(node_inputs["output_dir"])
            mode = node_inputs.get("mode") or "analytic"
            drop_nonpositive = node_inputs.get("drop_nonpositive", True)

            if not os.path.exists(target):
                log.error(f"Target does not exist: {target}")
                return {"success": False, "error_message": f"Target does not exist: {target}"}

            log.info(f"Computing statistics of {target}")
            log.debug(f"Mode: {mode}, k: {node_inputs.get('k', 0)}")
            report = cmd_stats(
                target, output_dir,
                mode=mode,
                k=int(node_inputs.get("k", 0) or 0),
                seed=int(node_inputs.get("seed", DEFAULT_SEED)),
                memory_budget=int(node_inputs.get("memory_budget", DEFAULT_MEMORY_BUDGET)),
                drop_nonpositive=drop_nonpositive,
            )
            tables = report.tables(drop_nonpositive)

            return {
                "success": True,
                "output_dir": output_dir,
                "report": {
                    "source": report.source,
                    "lengths": {name: len(table) for name, table in tables.items()},
                    "removed": {name: table.removed for name, table in tables.items()},
                    "certified_prefix": report.certified_prefix
                }
            }

        except Exception as e:
            error_msg = f"Statistics failed: {str(e)}"
            log.error(error_msg)
            return {
                "success": False,
                "error_message": error_msg
            }
