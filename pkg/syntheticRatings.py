from typing import Dict, Any
try:
    from autotask.nodes import Node, register_node
except ImportError:
    from .stub import Node, register_node
import os

from .cli import cmd_synth
from .config import DEFAULT_SEED


@register_node
class SyntheticRatingsNode(Node):
    NAME = "Synthetic Ratings"
    DESCRIPTION = "Write a MovieLens-format ratings CSV with power-law user and item activity"
    INPUTS = {
        "output_path": {
            "label": "Ratings CSV",
            "description": "Where to write the ratings",
            "type": "STRING",
            "required": True
        },
        "users": {
            "label": "Users",
            "description": "Number of users",
            "type": "INT",
            "default": 1000,
            "required": False
        },
        "items": {
            "label": "Items",
            "description": "Number of items",
            "type": "INT",
            "default": 1700,
            "required": False
        },
        "density": {
            "label": "Density",
            "description": "Fraction of (user, item) pairs that carry a rating",
            "type": "FLOAT",
            "default": 0.06,
            "required": False
        },
        "exponent": {
            "label": "Zipf Exponent",
            "description": "Power-law exponent of user and item activity",
            "type": "FLOAT",
            "default": 1.0,
            "required": False
        },
        "seed": {
            "label": "Seed",
            "description": "Generator seed",
            "type": "INT",
            "default": DEFAULT_SEED,
            "required": False
        }
    }
    OUTPUTS = {
        "ratings_path": {
            "label": "Ratings CSV",
            "description": "Path of the written file",
            "type": "STRING"
        }
    }
    CATEGORY = "Fractal Expansion"

    async def execute(self, node_inputs: Dict[str, Any], workflow_logger=None) -> Dict[str, Any]:
        try:
            output_path = os.path.abspath(node_inputs["output_path"])
            workflow_logger.info(f"Writing synthetic ratings to {output_path}")
            path = cmd_synth(
                output_path,
                n_users=int(node_inputs.get("users", 1000)),
                n_items=int(node_inputs.get("items", 1700)),
                density=float(node_inputs.get("density", 0.06)),
                seed=int(node_inputs.get("seed", DEFAULT_SEED)),
                exponent=float(node_inputs.get("exponent", 1.0)),
            )
            return {
                "success": True,
                "ratings_path": str(path)
            }

        except Exception as e:
            error_msg = f"Synthetic rating generation failed: {str(e)}"
            workflow_logger.error(error_msg)
            return {
                "success": False,
                "error_message": error_msg
            }
