"""Python access to the hiprompt core."""

import json

from ._hiprompt import (
    HipromptError,
    TextEncoder,
    Vocabulary,
    average_precision,
    f1_at_k,
    gradcheck,
    local_similarity,
    lr_at,
    normalize_name,
    order_loss,
    parse_list_answer,
    similarity_matrix,
    synthetic_experiment,
)
from ._hiprompt import run_command as _run_command

__all__ = [
    "HipromptError",
    "TextEncoder",
    "Vocabulary",
    "average_precision",
    "f1_at_k",
    "gradcheck",
    "local_similarity",
    "lr_at",
    "normalize_name",
    "order_loss",
    "parse_list_answer",
    "run",
    "similarity_matrix",
    "synthetic_experiment",
]


def run(command, config, **options):
    """Run a CLI command in-process. Returns (exit_code, stdout, stderr)."""
    return _run_command(command, json.dumps(config), **options)
