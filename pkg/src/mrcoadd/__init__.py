"""Parallel image coaddition over a map/reduce engine with pluggable input strategies."""

from .coadd import CoaddResult, Query, compare_coadds, map_fn, reduce_fn, serial_coadd
from .dataset import Database
from .engine import EngineConfig, InputStrategy, RunReport, TaskPlan, execute, plan_splits, run_job
from .geometry import Band, SkyBounds, Wcs, bounds_intersect, make_target_wcs
from .image import ImageRecord, SurveyConfig, generate_survey

__all__ = [
    "Band",
    "CoaddResult",
    "Database",
    "EngineConfig",
    "ImageRecord",
    "InputStrategy",
    "Query",
    "RunReport",
    "SkyBounds",
    "SurveyConfig",
    "TaskPlan",
    "Wcs",
    "bounds_intersect",
    "compare_coadds",
    "execute",
    "generate_survey",
    "make_target_wcs",
    "map_fn",
    "plan_splits",
    "reduce_fn",
    "run_job",
    "serial_coadd",
]

__version__ = "0.1.0"
