import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echodenoise.errors import ConfigError, InvariantError
from echodenoise.projection import EchoKind, ProjectionConfig, RawEchoList, assemble_2p5, cloud_to_points, project

CFG = ProjectionConfig(height=4, width=8, fov_up=0.2, fov_down=-0.2)
S, SS, L = EchoKind.STRONGEST, EchoKind.SECOND_STRONGEST, EchoKind.LAST


def raw(rows):
    """rows: (x, y, z, intensity, pulse, kind)."""
    a = np.array(rows, dtype=np.float64).reshape(-1, 6)
    return RawEchoList(a[:, :3], a[:, 3], a[:, 4].astype(int), a[:, 5].astype(int))


def test_single_point_lands_in_centre_cell():
    c = project(raw([(10, 0, 0, 0.5, 0, S)]), CFG)
    assert np.argwhere(c.valid[:, :, 0]).tolist() == [[2, 4]]


def test_two_echoes_share_a_cell():
    c = project(raw([(10, 0, 0, 0.9, 7, S), (14, 0, 0, 0.3, 7, L)]), CFG)
    np.testing.assert_array_equal(c.valid[2, 4], [True, True])
    assert c.valid.sum() == 2
    np.testing.assert_allclose(c.xyz[2, 4, 1], [14, 0, 0])


def test_collision_keeps_nearer_pulse():
    c = project(raw([(9, 0, 0, 0.5, 0, S), (5, 0, 0, 0.5, 1, S)]), CFG)
    assert c.valid.sum() == 1
    assert c.xyz[2, 4, 0, 0] == 5.0
    # order of arrival does not matter
    c2 = project(raw([(5, 0, 0, 0.5, 1, S), (9, 0, 0, 0.5, 0, S)]), CFG)
    assert c2 == c


def test_empty_input_gives_empty_cloud():
    c = project(raw([]), CFG)
    assert c.shape == (4, 8, 2) and not c.valid.any()


def test_invalid_fov():
    with pytest.raises(ConfigError):
        ProjectionConfig(4, 8, 0.1, 0.1)


def test_duplicate_kind_rejected():
    with pytest.raises(InvariantError):
        project(raw([(10, 0, 0, 0.5, 0, S), (11, 0, 0, 0.4, 0, S)]), CFG)


def test_assemble_keeps_distinct_last():
    assert assemble_2p5((5, 0, 0, 1.0), last=(9, 0, 0, 0.2)) == [(5, 0, 0, 1.0), (9, 0, 0, 0.2)]


def test_assemble_replaces_duplicate_last_with_second():
    s, second = (5, 0, 0, 1.0), (7, 0, 0, 0.4)
    assert assemble_2p5(s, second=second, last=(5, 0, 0, 1.0)) == [s, second]


def test_assemble_strongest_only():
    assert assemble_2p5((5, 0, 0, 1.0)) == [(5, 0, 0, 1.0), None]
    assert assemble_2p5((5, 0, 0, 1.0), last=(5 + 1e-7, 0, 0, 1.0)) == [(5, 0, 0, 1.0), None]


def test_duplicate_last_through_projection():
    c = project(raw([(10, 0, 0, 0.9, 0, S), (10, 0, 0, 0.9, 0, L), (12, 0, 0, 0.5, 0, SS)]), CFG)
    np.testing.assert_allclose(c.xyz[2, 4, 1], [12, 0, 0])


def random_pulses(rng, n):
    rows = []
    for pid in range(n):
        d = rng.normal(size=3)
        d[2] = rng.uniform(-0.15, 0.15) * np.linalg.norm(d[:2])
        d /= np.linalg.norm(d)
        r0 = rng.uniform(2, 30)
        i0 = rng.uniform(0.5, 1)
        rows.append((*(d * r0), i0, pid, S))
        if rng.random() < 0.5:
            rows.append((*(d * (r0 + rng.uniform(0.5, 10))), i0 * rng.uniform(0, 0.9), pid, L))
    return raw(rows)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(0, 80))
def test_projection_properties(seed, n):
    pts = random_pulses(np.random.default_rng(seed), n)
    c = project(pts, CFG)
    assert c.valid.sum() <= len(pts)
    # every kept echo is one of the inputs
    inputs = {tuple(np.float32(v) for v in p) for p in pts.xyz}
    for h, w, e in np.argwhere(c.valid):
        assert tuple(c.xyz[h, w, e]) in inputs
    # re-projection is idempotent
    assert project(cloud_to_points(c), CFG) == c
