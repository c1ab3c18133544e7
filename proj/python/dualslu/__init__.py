"""Dual-task speech model testbed.

The heavy lifting lives in the compiled `_core` module. Installed wheels
carry it inside this package; source-tree test runs find it on
PYTHONPATH next to the CMake build outputs.
"""

try:
    from ._core import *  # noqa: F401,F403
    from ._core import __doc__, __version__  # noqa: F401
except ImportError:  # in-tree build: module sits beside the package on the path
    from _core import *  # noqa: F401,F403
    from _core import __doc__, __version__  # noqa: F401

__all__ = [
    "parse",
    "serialize",
    "levenshtein",
    "score",
    "significance",
    "ctc_loss",
    "ctc_grad",
    "cosine_loss",
    "generate_corpus",
    "generate_dataset",
    "run_experiment",
    "sweep_lambda",
    "run_matrix",
    "evaluate",
    "param_counts",
    "set_verbose",
]
