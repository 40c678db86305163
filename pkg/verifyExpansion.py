from typing import Dict, Any
try:
    from autotask.nodes import Node, register_node
except ImportError:
    from .stub import Node, register_node
import os

from .cli import cmd_verify
from .config import DEFAULT_MEMORY_BUDGET


@register_node
class VerifyExpansionNode(Node):
    NAME = "Verify Expansion"
    DESCRIPTION = """Re-check an expansion against its manifest.

Checks shard checksums, per-shard and total interaction counts, the
nnz(reduced) * nnz(base) identity and, for the plain variant within the
memory budget, that row and column sums match their analytic prediction."""
    INPUTS = {
        "manifest_path": {
            "label": "Manifest",
            "description": "manifest.json or the expansion directory",
            "type": "STRING",
            "required": True
        },
        "memory_budget": {
            "label": "Memory Budget",
            "description": "Bytes the sum comparison may use; it is skipped above this",
            "type": "INT",
            "default": DEFAULT_MEMORY_BUDGET,
            "required": False
        }
    }
    OUTPUTS = {
        "passed": {
            "label": "Passed",
            "description": "Whether every check passed",
            "type": "BOOLEAN"
        },
        "failures": {
            "label": "Failures",
            "description": "Description of every failed check",
            "type": "LIST"
        },
        "checks": {
            "label": "Checks",
            "description": "Description of every passed check",
            "type": "LIST"
        },
        "skipped": {
            "label": "Skipped",
            "description": "Checks that could not be run on this expansion",
            "type": "LIST"
        }
    }
    CATEGORY = "Fractal Expansion"

    async def execute(self, node_inputs: Dict[str, Any], workflow_logger=None) -> Dict[str, Any]:
        log = workflow_logger
        try:
            location = os.path.abspath(node_inputs["manifest_path"])
            if not os.path.exists(location):
                log.error(f"Manifest does not exist: {location}")
                return {"success": False, "error_message": f"Manifest does not exist: {location}"}

            log.info(f"Verifying expansion {location}")
            report = cmd_verify(location, int(node_inputs.get("memory_budget", DEFAULT_MEMORY_BUDGET)))
            for failure in report.failures:
                log.error(failure)
            for skipped in report.skipped:
                log.warning(f"Not verified: {skipped}")

            return {
                "success": True,
                "passed": report.passed,
                "failures": report.failures,
                "checks": report.checks,
                "skipped": report.skipped
            }

        except Exception as e:
            error_msg = f"Verification failed: {str(e)}"
            log.error(error_msg)
            return {
                "success": False,
                "error_message": error_msg
            }
