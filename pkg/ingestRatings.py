from typing import Dict, Any
try:
    from autotask.nodes import Node, register_node
except ImportError:
    from .stub import Node, register_node
import os

from .cli import cmd_ingest


@register_node
class IngestRatingsNode(Node):
    NAME = "Ingest Ratings"
    DESCRIPTION = "Read a MovieLens ratings CSV, center it on the global mean and rescale it into [-1, 1]"
    INPUTS = {
        "ratings_path": {
            "label": "Ratings CSV",
            "description": "MovieLens file with header userId,movieId,rating,timestamp",
            "type": "STRING",
            "required": True,
            "widget": "FILE"
        },
        "output_path": {
            "label": "Matrix File",
            "description": "Where to write the centered sparse matrix (.npz); a .json report is written next to it",
            "type": "STRING",
            "required": True
        }
    }
    OUTPUTS = {
        "matrix_path": {
            "label": "Matrix File",
            "description": "Path of the written matrix",
            "type": "STRING"
        },
        "report": {
            "label": "Ingest Report",
            "description": "Dimensions, interaction count, mean and divisor of the ratings",
            "type": "DICT"
        }
    }
    CATEGORY = "Fractal Expansion"

    async def execute(self, node_inputs: Dict[str, Any], workflow_logger=None) -> Dict[str, Any]:
        log = workflow_logger
        try:
            ratings_path = os.path.abspath(node_inputs["ratings_path"])
            output_path = os.path.abspath(node_inputs["output_path"])

            if not os.path.isfile(ratings_path):
                log.error(f"Ratings file does not exist: {ratings_path}")
                return {"success": False, "error_message": f"Ratings file does not exist: {ratings_path}"}

            log.info(f"Ingesting ratings from {ratings_path}")
            report = cmd_ingest(ratings_path, output_path)
            log.info(f"Matrix {report['n_rows']} x {report['n_cols']} with {report['nnz']} ratings")
            if report["dropped_at_mean"]:
                log.warning(f"{report['dropped_at_mean']} ratings equal to the mean were dropped")

            return {
                "success": True,
                "matrix_path": output_path,
                "report": report
            }

        except Exception as e:
            error_msg = f"Rating ingestion failed: {str(e)}"
            log.error(error_msg)
            return {
                "success": False,
                "error_message": error_msg
            }
