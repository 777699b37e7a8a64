import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nbound.indicator import GridIndicator, ProceduralIndicator, disk_grid
from nbound.query import (QueryOracle, QueryType, Region, clip_rays, forward_facing_rays,
                          normalize_regions, region_width, sample_region, sample_regions,
                          uniform_regions)


def test_widths():
    assert region_width("point", 3) == 3
    for q in ("ray", "plane", "box"):
        assert region_width(q, 3) == 6


def test_region_canonical_form():
    r = Region.ray([0.1, 0.2], [3.0, 4.0])
    assert np.allclose(r.parts[1], [0.6, 0.8])
    b = Region.box([0.9, 0.1], [0.2, 0.5])
    assert np.allclose(b.coords, [0.2, 0.1, 0.9, 0.5])
    with pytest.raises(ValueError):
        Region.plane([0.5, 0.5], [0.0, 0.0])
    with pytest.raises(ValueError):
        normalize_regions("ray", np.ones((2, 3)))


@pytest.mark.parametrize("q", list(QueryType))
def test_uniform_regions_valid(q):
    rng = np.random.default_rng(0)
    c = uniform_regions(rng, q, 3, 500)
    assert c.shape == (500, region_width(q, 3))
    assert np.allclose(normalize_regions(q, c), c)
    assert np.all((c[:, :3] >= 0) & (c[:, :3] <= 1))


def test_forward_facing_rays():
    r = forward_facing_rays(np.random.default_rng(0), 1000)
    assert np.all(r[:, 2] == 0) and np.all(r[:, 5] >= 0)
    assert np.allclose(np.linalg.norm(r[:, 3:], axis=1), 1)


def test_clip_rays():
    coords = np.array([[0.5, 0.5, 1.0, 0.0],    # inside, exits at t=0.5
                       [-1.0, 0.5, 1.0, 0.0],   # enters at 1, exits at 2
                       [-1.0, 0.5, -1.0, 0.0],  # points away
                       [0.5, 2.0, 1.0, 0.0]])   # parallel, outside
    t0, t1 = clip_rays(coords)
    assert np.allclose([t0[0], t1[0]], [0, 0.5])
    assert np.allclose([t0[1], t1[1]], [1, 2])
    assert t0[2] > t1[2] and t0[3] > t1[3]


@given(st.sampled_from(["ray", "plane", "box"]), st.integers(2, 4), st.integers(0, 2**31))
def test_samples_lie_in_region(q, n, seed):
    rng = np.random.default_rng(seed)
    c = uniform_regions(rng, q, n, 20)
    pts, valid = sample_regions(rng, q, c, 16)
    a, b = c[:, None, :n], c[:, None, n:]
    if q == "box":
        assert np.all((pts >= a - 1e-12) & (pts <= b + 1e-12))
    elif q == "plane":
        assert np.allclose(np.sum((pts - a) * b, axis=2)[valid], 0, atol=1e-9)
    else:
        rel = pts - a
        t = np.sum(rel * b, axis=2)
        assert np.all(t[valid] >= -1e-12)
        assert np.allclose(np.linalg.norm(rel - t[..., None] * b, axis=2)[valid], 0, atol=1e-9)
    inside = np.all((pts >= 0) & (pts <= 1), axis=2)
    assert np.all(inside[valid])


def test_ray_missing_domain_has_no_samples():
    r = Region.ray([-0.5, 0.5], [-1.0, 0.0])
    assert len(sample_region(np.random.default_rng(0), r, 32)) == 0


def test_oracle_point_is_exact():
    g = disk_grid()
    o = QueryOracle(g)
    X = np.random.default_rng(0).random((1000, 2))
    assert np.array_equal(o.labels(np.random.default_rng(1), "point", X), g.eval(X))


def test_oracle_regions():
    half = ProceduralIndicator("halfspace", {"normal": (1.0, 0.0), "offset": 0.2})
    o = QueryOracle(half, 64)
    rng = np.random.default_rng(0)
    assert o.label(rng, Region.box([0.1, 0.1], [0.9, 0.9])) == 1
    assert o.label(rng, Region.box([0.3, 0.1], [0.9, 0.9])) == 0
    assert o.label(rng, Region.ray([0.9, 0.5], [-1.0, 0.0])) == 1
    assert o.label(rng, Region.ray([0.9, 0.5], [1.0, 0.0])) == 0
    assert o.label(rng, Region.plane([0.5, 0.5], [0.0, 1.0])) == 1
    assert o.label(rng, Region.plane([0.5, 0.5], [1.0, 0.0])) == 0


def test_oracle_width_check():
    with pytest.raises(ValueError):
        QueryOracle(disk_grid()).labels(np.random.default_rng(0), "ray", np.zeros((3, 2)))


def test_empty_and_full_grids():
    rng = np.random.default_rng(0)
    for q in QueryType:
        c = uniform_regions(rng, q, 2, 200)
        assert not QueryOracle(GridIndicator.empty((4, 4))).labels(rng, q, c).any()
    c = uniform_regions(rng, "box", 2, 200)
    assert QueryOracle(GridIndicator(np.ones((4, 4), bool))).labels(rng, "box", c).all()
