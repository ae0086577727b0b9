import dataclasses
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import aligned_query, noise_survey
from mrcoadd.coadd import (
    SNAP_EPS,
    CoaddResult,
    ProjectedTile,
    Query,
    compare_coadds,
    map_fn,
    parse_bounds,
    reduce_fn,
    serial_coadd,
)
from mrcoadd.geometry import SkyBounds, bounds_intersect, make_target_wcs, wcs_for_bounds
from mrcoadd.image import ImageMeta, ImageRecord, ImageTile, generate_survey

# a deliberately misaligned query: straddles field 690/691 and strips 3/4
ODD_QUERY = Query("odd", "g", SkyBounds(37.83, 38.14, -0.17, 0.12), 0.013)


def constant_record(bounds, scale, value, band="g", key_field=690):
    wcs = wcs_for_bounds(bounds, scale)
    meta = ImageMeta(5902, 40, 3, band, key_field, bounds)
    return ImageRecord(meta, ImageTile(wcs, np.full((wcs.height, wcs.width), value)))


def _neighbors_inside(sx, sy, w, h):
    """Source pixels with nonzero bilinear weight all lie inside the tile (scalar form)."""
    need = []
    for s in (sx, sy):
        f = s - 0.5
        i = math.floor(f)
        t = f - i
        if t > 1 - SNAP_EPS:
            i, t = i + 1, 0.0
        elif t < SNAP_EPS:
            t = 0.0
        need.append((i, i + 1 if t > 0 else i))
    (x0, x1), (y0, y1) = need
    return x0 >= 0 and y0 >= 0 and x1 < w and y1 < h


def brute_force_depth(records, query):
    wcs = make_target_wcs(query)
    depth = np.zeros((wcs.height, wcs.width), dtype=np.int64)
    for rec in records:
        if rec.meta.band != query.band:
            continue
        overlap = bounds_intersect(rec.meta.bounds, query.bounds)
        if overlap is None:
            continue
        for y in range(wcs.height):
            for x in range(wcs.width):
                ra, dec = wcs.pixel_to_sky(x + 0.5, y + 0.5)
                if not overlap.contains(ra, dec, half_open=True):
                    continue
                sx, sy = rec.tile.wcs.sky_to_pixel(ra, dec)
                if _neighbors_inside(sx, sy, rec.tile.width, rec.tile.height):
                    depth[y, x] += 1
    return depth


class TestMap:
    def test_band_mismatch(self, small_records):
        rec = next(r for r in small_records if r.meta.band.value == "u")
        assert map_fn(rec, [ODD_QUERY]) == []

    def test_disjoint(self, small_records):
        rec = next(r for r in small_records if r.meta.band.value == "g" and r.meta.strip == 1)
        assert map_fn(rec, [ODD_QUERY]) == []

    @pytest.mark.parametrize("value", [0.0, 3.25, -7.5])
    def test_constant_on_aligned_grid(self, value):
        b = SkyBounds(37.5, 37.75, 0.1, 0.3)
        rec = constant_record(b, 0.002, value)
        (tile,) = map_fn(rec, [Query("c", "g", b, 0.002)])
        wcs = make_target_wcs(Query("c", "g", b, 0.002))
        assert (tile.width, tile.height) == (wcs.width, wcs.height)
        assert (tile.coverage == 1).all()
        assert np.max(np.abs(tile.values - value)) <= 1e-6

    def test_multi_query_emits_one_tile_each(self, small_records):
        rec = next(r for r in small_records if r.key == "fpC-005902-g3-0691")
        q2 = dataclasses.replace(ODD_QUERY, id="odd2")
        q3 = dataclasses.replace(ODD_QUERY, id="other-band", band="r")
        tiles = map_fn(rec, [ODD_QUERY, q2, q3])
        assert [t.query_id for t in tiles] == ["odd", "odd2"]
        assert np.array_equal(tiles[0].values, tiles[1].values)

    def test_uncovered_pixels_are_zero(self, small_records):
        for rec in small_records:
            for t in map_fn(rec, [ODD_QUERY]):
                assert (t.values[t.coverage == 0] == 0).all()
                wcs = make_target_wcs(ODD_QUERY)
                assert t.origin_x + t.width <= wcs.width and t.origin_y + t.height <= wcs.height


class TestReduce:
    @pytest.fixture()
    def tile(self, small_records):
        rec = next(r for r in small_records if r.key == "fpC-005902-g3-0691")
        return map_fn(rec, [ODD_QUERY])[0]

    def test_one_tile(self, tile):
        res = reduce_fn(ODD_QUERY, [tile])
        win = np.s_[tile.origin_y : tile.origin_y + tile.height, tile.origin_x : tile.origin_x + tile.width]
        assert np.array_equal(res.sum[win], tile.values)
        assert np.array_equal(res.depth[win], tile.coverage)
        assert res.depth.sum() == tile.coverage.sum()

    def test_same_tile_twice(self, tile):
        one = reduce_fn(ODD_QUERY, [tile])
        two = reduce_fn(ODD_QUERY, [tile, tile])
        assert np.array_equal(two.sum, (one.sum.astype(np.float64) * 2).astype(np.float32))
        assert np.array_equal(two.depth, one.depth * 2)

    def test_tile_outside_grid(self, tile):
        bad = dataclasses.replace(tile, origin_x=10_000)
        with pytest.raises(ValueError):
            reduce_fn(ODD_QUERY, [bad])

    def test_tile_of_other_query(self, tile):
        with pytest.raises(ValueError):
            reduce_fn(ODD_QUERY, [dataclasses.replace(tile, query_id="x")])

    def test_writes_sum_and_depth(self, tile, tmp_path):
        res = reduce_fn(ODD_QUERY, [tile], out_path=tmp_path / "o.cdf")
        back = CoaddResult.load(tmp_path / "o.cdf")
        assert compare_coadds(res, back).identical
        assert back.wcs == res.wcs

    def test_noise_law_at_79(self):
        cfg = noise_survey(79)
        res = serial_coadd(generate_survey(cfg), aligned_query(cfg))
        assert res.depth.size >= 10_000 and (res.depth == 79).all()
        assert abs(np.std(res.mean) - 1 / math.sqrt(79)) <= 0.1 / math.sqrt(79)


class TestSerial:
    def test_empty(self):
        res = serial_coadd([], ODD_QUERY)
        assert not res.sum.any() and not res.depth.any() and res.n_contributing == 0

    def test_mean_zero_where_uncovered(self, small_records):
        res = serial_coadd(small_records, ODD_QUERY)
        assert (res.sum[res.depth == 0] == 0).all()
        assert (res.mean[res.depth == 0] == 0).all()

    def test_depth_conservation_brute_force(self, small_records):
        res = serial_coadd(small_records, ODD_QUERY)
        assert res.depth.max() == 2
        assert np.array_equal(res.depth, brute_force_depth(small_records, ODD_QUERY))

    def test_flux_conservation_under_alignment(self):
        cfg = noise_survey(1)
        records = generate_survey(cfg)
        q = aligned_query(cfg, strip=4)
        (rec,) = [r for r in records if r.meta.strip == 4]
        res = serial_coadd(records, q)
        assert np.array_equal(res.sum, rec.tile.pixels)
        assert (res.depth == 1).all()

    def test_permutation_invariance(self, small_records):
        base = serial_coadd(small_records, ODD_QUERY)
        shuffled = list(small_records)
        random.Random(4).shuffle(shuffled)
        assert compare_coadds(base, serial_coadd(shuffled, ODD_QUERY)).identical


@settings(max_examples=25, deadline=None)
@given(st.sets(st.integers(0, 179), max_size=60), st.integers(0, 179))
def test_adding_a_record_never_lowers_depth(small_records, picks, extra):
    subset = [small_records[i] for i in sorted(picks)]
    bigger = subset + ([small_records[extra]] if extra not in picks else [])
    a = serial_coadd(subset, ODD_QUERY)
    b = serial_coadd(bigger, ODD_QUERY)
    assert (b.depth >= a.depth).all()


class TestCompare:
    def test_self(self, small_records):
        res = serial_coadd(small_records, ODD_QUERY)
        cmp = compare_coadds(res, res)
        assert cmp.max_abs_diff == 0 and cmp.depth_equal and cmp.identical

    def test_one_pixel_bumped(self, small_records):
        a = serial_coadd(small_records, ODD_QUERY)
        b = CoaddResult(a.wcs, a.sum.copy(), a.depth.copy())
        b.sum[3, 4] += 1
        cmp = compare_coadds(a, b)
        assert cmp.max_abs_diff == pytest.approx(1.0, abs=1e-5)
        assert cmp.depth_equal and not cmp.identical

    def test_shape_mismatch(self):
        a = serial_coadd([], ODD_QUERY)
        b = serial_coadd([], dataclasses.replace(ODD_QUERY, pixel_scale=0.02))
        with pytest.raises(ValueError):
            compare_coadds(a, b)


def test_parse_bounds():
    assert parse_bounds("37.5:38.5:-0.5:0.5") == SkyBounds(37.5, 38.5, -0.5, 0.5)
    with pytest.raises(ValueError):
        parse_bounds("1:2:3")
    with pytest.raises(ValueError):
        parse_bounds("a:b:c:d")


def test_projected_tile_dims():
    t = ProjectedTile("q", "k", 0, 0, np.zeros((2, 3), np.float32), np.zeros((2, 3), np.uint8))
    assert (t.width, t.height) == (3, 2)
