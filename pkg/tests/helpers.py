from __future__ import annotations

import numpy as np

from mrcoadd.coadd import Query
from mrcoadd.image import SurveyConfig


def noise_survey(n_runs: int, seed: int = 11) -> SurveyConfig:
    """Noise-only single-band survey whose tiles are 125 x 100 px at 0.002 deg/px."""
    return SurveyConfig(
        n_runs=n_runs, fields_per_run=1, dec_min=-0.6, dec_max=0.6, ra_min=37.0, ra_max=37.25,
        field_width=0.25, pixel_scale=0.002, n_sources=0, noise_sigma=1.0, bands=("r",), seed=seed,
    )


def aligned_query(cfg: SurveyConfig, strip: int = 3, qid: str = "aligned") -> Query:
    """A query whose target grid coincides with the tiles of ``strip``."""
    b = cfg.layout.strip_bounds(strip, cfg.ra_min, cfg.ra_max)
    return Query(qid, cfg.bands[0], b, cfg.pixel_scale)


def random_tile_pixels(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    return rng.normal(0.0, 10.0, (h, w)).astype(np.float32)
