import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import as_lists, nearest_non_self_oracle, neighbors_oracle, random_cloud, window_cells

from echodenoise.cloud import MultiEchoOrderedCloud
from echodenoise.errors import ConfigError
from echodenoise.neighbors import (
    GRID,
    EncoderConfig,
    encode_features,
    gather_neighbors,
    nearest_distance,
    self_slots,
    wrap_angle,
)


def colinear():
    xyz = np.array([[[[5, 0, 0]], [[6, 0, 0]], [[20, 0, 0]]]], np.float32)
    az = np.array([[0.1, 0.0, -0.1]], np.float32)
    el = np.zeros((1, 3), np.float32)
    return MultiEchoOrderedCloud(xyz, np.full((1, 3, 1), 0.5), np.ones((1, 3, 1), bool), az, el)


def test_config_validation():
    for kw in ({"k": 0}, {"cutoff": 0.0}, {"window": (4, 3)}, {"window": (3, 0)}, {"mode": "ball"}):
        with pytest.raises(ConfigError):
            EncoderConfig(**kw)


def test_colinear_example():
    ns = gather_neighbors(colinear(), EncoderConfig(k=2, cutoff=3.0, window=(1, 3)))
    others = ns.present[0, 0, 0] & ~self_slots(ns)[0, 0, 0]
    assert others.sum() == 1
    j = np.flatnonzero(others)[0]
    assert ns.cols[0, 0, 0, j] == 1 and ns.dist[0, 0, 0, j] == pytest.approx(1.0)
    assert not np.any(ns.present & (ns.cols == 2) & (np.arange(3)[None, :, None, None] == 0))


def test_self_match_ranked_first():
    ns = gather_neighbors(colinear(), EncoderConfig(k=2, cutoff=3.0, window=(1, 3)))
    assert ns.present[0, 0, 0, 0] and ns.dist[0, 0, 0, 0] == 0.0 and ns.cols[0, 0, 0, 0] == 0


def test_nearest_distance_examples():
    c = colinear()
    nd = nearest_distance(gather_neighbors(c, EncoderConfig(k=2, cutoff=3.0, window=(1, 3))))
    assert nd[0, 0, 0] == pytest.approx(1.0)
    assert nd[0, 2, 0] == 3.0  # isolated point falls back to the cutoff


def test_matches_bruteforce_oracle():
    c = random_cloud(np.random.default_rng(11), 16, 64, 2)
    cfg = EncoderConfig(k=5, cutoff=2.0, window=(5, 7))
    got = as_lists(gather_neighbors(c, cfg))
    want = neighbors_oracle(c, cfg.k, cfg.cutoff, cfg.window)
    assert got.keys() == want.keys()
    for key in want:
        assert [(r, cc) for _, r, cc in got[key]] == [(r, cc) for _, r, cc in want[key]], key
        np.testing.assert_allclose([d for d, *_ in got[key]], [d for d, *_ in want[key]], atol=1e-6)


def test_nearest_distance_matches_oracle():
    c = random_cloud(np.random.default_rng(12), 8, 32, 2)
    cfg = EncoderConfig(k=6, cutoff=1.5, window=(3, 5))
    np.testing.assert_allclose(nearest_distance(gather_neighbors(c, cfg)),
                               nearest_non_self_oracle(c, cfg.cutoff, cfg.window), atol=1e-6)


def test_invalid_queries_have_no_neighbors():
    c = random_cloud(np.random.default_rng(13), 6, 10, 2)
    ns = gather_neighbors(c, EncoderConfig())
    assert not ns.present[~c.valid].any()


def test_window_wider_than_image_has_no_duplicates():
    c = random_cloud(np.random.default_rng(14), 2, 3, 1, p_valid=1.0, spread=0.01)
    ns = gather_neighbors(c, EncoderConfig(k=20, cutoff=100.0, window=(9, 9)))
    assert ns.present.sum(axis=-1).max() == 6
    cells = window_cells(0, 0, 2, 3, (9, 9))
    assert len(cells) == len(set(cells)) == 6


def test_grid_mode_raster_order():
    c = random_cloud(np.random.default_rng(15), 5, 9, 1, p_valid=1.0)
    cfg = EncoderConfig(cutoff=0.1, window=(3, 3), mode=GRID)
    ns = gather_neighbors(c, cfg)
    assert ns.shape[-1] == 9
    # interior query: all nine cells present regardless of distance, in raster order
    np.testing.assert_array_equal(ns.rows[2, 4, 0], [1, 1, 1, 2, 2, 2, 3, 3, 3])
    np.testing.assert_array_equal(ns.cols[2, 4, 0], [3, 4, 5] * 3)
    assert ns.present[2, 4, 0].all()
    # top row: the three out-of-image cells are absent
    assert ns.present[0, 4, 0].sum() == 6


def test_encode_self_and_east_neighbor():
    c = colinear()
    ns = gather_neighbors(c, EncoderConfig(k=2, cutoff=3.0, window=(1, 3)))
    f = encode_features(c, ns)
    np.testing.assert_allclose(f.values[0, 0, 0, 0], [5.0, 0.0, 0.0])
    # slot 1 of query column 0 is column 1, azimuth step 0.1 rad (query minus neighbor)
    np.testing.assert_allclose(f.values[0, 0, 0, 1], [6.0, 0.1, 0.0], atol=1e-6)
    assert f.flat().shape == (1, 3, 2 * 3)


def test_encode_wraparound():
    assert wrap_angle(3.1 - (-3.1)) == pytest.approx(6.2 - 2 * math.pi)
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    xs = np.linspace(-20, 20, 401)
    w = wrap_angle(xs)
    assert np.all((w > -math.pi) & (w <= math.pi + 1e-12))
    np.testing.assert_allclose(np.cos(w), np.cos(xs), atol=1e-9)


def test_absent_slots_zeroed():
    c = random_cloud(np.random.default_rng(16), 6, 12, 2)
    f = encode_features(c, gather_neighbors(c, EncoderConfig(cutoff=0.8)))
    assert np.all(f.values[~f.present] == 0)
    assert np.all(f.ref[~f.present] == -1)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 6), dk=st.integers(0, 4),
       cutoff=st.floats(0.2, 3.0), dc=st.floats(0.0, 2.0))
def test_monotone_in_k_and_cutoff(seed, k, dk, cutoff, dc):
    c = random_cloud(np.random.default_rng(seed), 5, 12, 2)
    small = as_lists(gather_neighbors(c, EncoderConfig(k=k, cutoff=cutoff, window=(3, 5))))
    big = as_lists(gather_neighbors(c, EncoderConfig(k=k + dk, cutoff=cutoff + dc, window=(3, 5))))
    for key, lst in small.items():
        have = {(r, cc) for _, r, cc in big[key]}
        assert {(r, cc) for _, r, cc in lst} <= have
        ds = [d for d, *_ in lst]
        assert ds == sorted(ds) and all(d < cutoff for d in ds)
