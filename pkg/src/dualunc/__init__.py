"""Dual-uncertainty learning under label noise.

Annotator disagreement (UoD/iUoD) filters and adjudicates multi-annotator
samples; MC-dropout entropy (UoSL) re-weights the rest during a
focal-loss-to-weighted-CE curriculum.
"""

from .errors import DualUncError

__version__ = "0.1.0"

__all__ = ["DualUncError", "__version__"]
