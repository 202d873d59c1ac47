"""Batch land-cover classification engine.

Spectro-temporal feature extraction from optical and radar time stacks,
reference-sample cleaning and bias correction, a from-scratch random forest
with OOB-based evaluation and selection, and a full accuracy and
area-statistics assessment suite, all behind a deterministic file-driven CLI.
"""

__version__ = "0.1.0"

from .grid import NODATA, GridSpec, Raster, SceneStack, TimedScene  # noqa: F401
