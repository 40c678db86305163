from typing import Dict, Any
try:
    from autotask.nodes import Node, register_node
except ImportError:
    from .stub import Node, register_node
import os

from .cli import cmd_sample
from .config import DEFAULT_SEED


@register_node
class SampleRatingsNode(Node):
    NAME = "Sample Expanded Ratings"
    DESCRIPTION = "Draw rating values uniformly from the nonzero entries of an expansion without materializing it"
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
        "output_path": {
            "label": "Sample Table",
            "description": "TSV receiving the ranked samples; a .json summary is written next to it",
            "type": "STRING",
            "required": True
        },
        "count": {
            "label": "Count",
            "description": "Number of samples",
            "type": "INT",
            "default": 100000,
            "required": False
        },
        "seed": {
            "label": "Seed",
            "description": "Sampling seed",
            "type": "INT",
            "default": DEFAULT_SEED,
            "required": False
        }
    }
    OUTPUTS = {
        "sample_path": {
            "label": "Sample Table",
            "description": "Path of the ranked sample table",
            "type": "STRING"
        },
        "near_average_fraction": {
            "label": "Near Average Fraction",
            "description": "Share of samples whose magnitude is below half of the largest one",
            "type": "FLOAT"
        }
    }
    CATEGORY = "Fractal Expansion"

    async def execute(self, node_inputs: Dict[str, Any], workflow_logger=None) -> Dict[str, Any]:
        try:
            reduced_path = os.path.abspath(node_inputs["reduced_path"])
            matrix_path = os.path.abspath(node_inputs["matrix_path"])
            output_path = os.path.abspath(node_inputs["output_path"])
            count = int(node_inputs.get("count", 100000))

            workflow_logger.info(f"Sampling {count} expanded ratings")
            summary = cmd_sample(
                reduced_path, matrix_path, count, output_path,
                seed=int(node_inputs.get("seed", DEFAULT_SEED)),
            )
            return {
                "success": True,
                "sample_path": output_path,
                "near_average_fraction": summary["near_average_fraction"]
            }

        except Exception as e:
            error_msg = f"Rating sampling failed: {str(e)}"
            workflow_logger.error(error_msg)
            return {
                "success": False,
                "error_message": error_msg
            }
