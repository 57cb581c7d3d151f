import numpy as np
import pytest

from fieldstyle import tensor as T
from fieldstyle.geometry import normalize_to_box, positional_encode
from fieldstyle.tensor.gradcheck import check_gradients
from fieldstyle.triplane import PLANE_AXES, PLANES, PlaneEncoder, TriPlaneField, build_geometry_raster, dump_planes


@pytest.fixture(autouse=True)
def float64():
    with T.default_dtype(np.float64):
        yield


def naive_query(planes, lo, voxel, x):
    """Scalar per-channel bilinear interpolation and product (independent of grid_sample2d)."""
    out = np.ones(planes[0].shape[-1])
    for pl, name in zip(planes, PLANES):
        i, j = PLANE_AXES[name]
        h, w, c = pl.shape
        u = min(max((x[i] - lo[i]) / voxel - 0.5, 0.0), h - 1)
        v = min(max((x[j] - lo[j]) / voxel - 0.5, 0.0), w - 1)
        u0, v0 = min(int(np.floor(u)), h - 2), min(int(np.floor(v)), w - 2)
        a, b = u - u0, v - v0
        val = np.empty(c)
        for ch in range(c):
            val[ch] = ((1 - a) * (1 - b) * pl[u0, v0, ch] + (1 - a) * b * pl[u0, v0 + 1, ch]
                       + a * (1 - b) * pl[u0 + 1, v0, ch] + a * b * pl[u0 + 1, v0 + 1, ch])
        out *= val
    return out


def make_field(rng, bounds=((0, 0, 0), (0.4, 0.3, 0.2)), voxel=0.05, d=4, **kw):
    with T.default_dtype(np.float64):
        f = TriPlaneField(bounds, voxel, d, rng, **kw)
        planes = [rng.standard_normal(f.raster.planes[p].shape[:2] + (d,)) for p in PLANES]
        f.set_planes([T.Tensor(p) for p in planes])
    return f, planes


def test_single_voxel_raster():
    r = build_geometry_raster(((0, 0, 0), (0.01, 0.01, 0.01)), 0.01)
    centre = positional_encode(normalize_to_box(np.full(3, 0.005), np.zeros(3), np.full(3, 0.01)), 6)
    for p in PLANES:
        assert r.planes[p].shape == (1, 1, 39)
        assert np.allclose(r.planes[p][0, 0], centre)


def test_raster_matches_brute_force_pooling():
    lo, hi = np.zeros(3), np.full(3, 0.04)
    r = build_geometry_raster((lo, hi), 0.01, L=3)
    c = (np.arange(4) + 0.5) * 0.01
    for name, (i, j) in PLANE_AXES.items():
        k = 3 - i - j
        for a in range(4):
            for b in range(4):
                acc = 0
                for z in range(4):
                    p = np.zeros(3)
                    p[i], p[j], p[k] = c[a], c[b], c[z]
                    acc = acc + positional_encode(normalize_to_box(p, lo, hi), 3)
                assert np.array_equal(r.planes[name][a, b], acc / 4)


def test_raster_resolution_and_cap():
    r = build_geometry_raster(((0, 0, 0), (0.105, 0.2, 0.05)), 0.01)
    assert r.resolution == (11, 20, 5) and r.planes["xz"].shape[:2] == (11, 5)
    with pytest.raises(ValueError, match="voxel size"):
        build_geometry_raster(((0, 0, 0), (6.0, 1, 1)), 0.01)
    with pytest.raises(ValueError):
        build_geometry_raster(((0, 0, 0), (1, 1, 1)), 0.0)


def test_encoder_zero_weights_and_shape():
    rng = np.random.default_rng(0)
    enc = PlaneEncoder(5, 4, rng)
    x = rng.standard_normal((8, 12, 5))
    assert enc(x).shape == (8, 12, 4)
    assert enc(rng.standard_normal((7, 9, 5))).shape == (7, 9, 4)
    T.zero_module(enc)
    assert np.array_equal(enc(x).data, np.zeros((8, 12, 4)))


def test_encoder_gradient_finite_differences():
    rng = np.random.default_rng(1)
    with T.default_dtype(np.float64):
        enc = PlaneEncoder(3, 2, rng)
        x = rng.standard_normal((4, 8, 3))
        wts = T.Tensor(rng.standard_normal((4, 8, 2)))
        err = check_gradients(lambda: T.sum(enc(x) * wts), enc.parameters(), max_entries=40,
                              rng=np.random.default_rng(2))
    assert err < 1e-5


def test_constant_and_zero_planes():
    rng = np.random.default_rng(2)
    f, planes = make_field(rng)
    x = rng.uniform(f.bounds[0], f.bounds[1], (20, 3))
    f.set_planes([np.ones_like(p) for p in planes])
    assert np.allclose(f.query(x).data, 1)
    f.set_planes([planes[0], np.zeros_like(planes[1]), planes[2]])
    assert np.array_equal(f.query(x).data, np.zeros((20, 4)))


def test_node_exactness():
    rng = np.random.default_rng(3)
    f, planes = make_field(rng)
    lo, v = f.bounds[0], 0.05
    for _ in range(20):
        idx = [rng.integers(0, n) for n in f.raster.resolution]
        x = lo + (np.array(idx) + 0.5) * v
        got = f.query(x[None]).data[0]
        want = planes[0][idx[0], idx[1]] * planes[1][idx[0], idx[2]] * planes[2][idx[1], idx[2]]
        assert np.allclose(got, want, atol=1e-12)


def test_query_matches_naive_oracle():
    rng = np.random.default_rng(4)
    f, planes = make_field(rng, d=3)
    x = rng.uniform(f.bounds[0], f.bounds[1], (10_000, 3))
    got = f.query(x).data
    for i in range(0, 10_000, 97):
        assert np.abs(got[i] - naive_query(planes, f.bounds[0], 0.05, x[i])).max() < 1e-6


def test_continuity_across_cell_edges():
    rng = np.random.default_rng(5)
    f, _ = make_field(rng)
    lo = f.bounds[0]
    edge = lo[0] + 2.5 * 0.05          # node 2 along x, a shared cell edge
    x = np.array([[edge - 1e-9, 0.11, 0.07], [edge + 1e-9, 0.11, 0.07]])
    a, b = f.query(x).data
    assert np.abs(a - b).max() < 1e-6


def test_query_out_of_bounds_and_sum_mode():
    rng = np.random.default_rng(6)
    f, planes = make_field(rng)
    with pytest.raises(ValueError):
        f.query(np.array([[1.0, 0, 0]]))
    g, _ = make_field(np.random.default_rng(6), mode="sum")
    x = rng.uniform(g.bounds[0], g.bounds[1], (5, 3))
    assert g.query(x).shape == (5, 4)


def test_affine_reproduction_per_plane():
    rng = np.random.default_rng(7)
    f, planes = make_field(rng, d=2)
    ones = [np.ones_like(p) for p in planes]
    h, w, _ = planes[0].shape
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    aff = np.stack([0.3 * ii - 1.2 * jj + 0.5, 2 * ii + jj], -1)
    f.set_planes([aff, ones[1], ones[2]])
    lo = f.bounds[0]
    x = rng.uniform(lo + 0.025, f.bounds[1] - 0.025, (200, 3))
    u = (x[:, 0] - lo[0]) / 0.05 - 0.5
    v = (x[:, 1] - lo[1]) / 0.05 - 0.5
    want = np.stack([0.3 * u - 1.2 * v + 0.5, 2 * u + v], -1)
    assert np.abs(f.query(x).data - want).max() < 1e-6


def test_guided_and_direct_planes_share_query_path():
    rng = np.random.default_rng(8)
    g = TriPlaneField(((0, 0, 0), (0.2, 0.2, 0.2)), 0.05, 3, rng, guided=False)
    assert len(g.parameters()) == 3
    x = rng.uniform(0, 0.2, (10, 3))
    loss = T.sum(g.query(x))
    loss.backward()
    assert all(p.grad is not None for p in g.parameters())


def test_encode_cache_invalidation():
    rng = np.random.default_rng(9)
    f = TriPlaneField(((0, 0, 0), (0.2, 0.2, 0.2)), 0.05, 3, rng)
    a = f.encode()
    assert f.encode() is a
    f.invalidate()
    assert f.encode() is not a


def test_plane_dump(tmp_path):
    rng = np.random.default_rng(10)
    f = TriPlaneField(((0, 0, 0), (0.2, 0.1, 0.15)), 0.05, 3, rng)
    dump_planes(f, tmp_path)
    raw = np.fromfile(tmp_path / "plane_xz.f32", "<f4").reshape(4, 3, 3)
    assert np.allclose(raw, f.encode()[1].data)
    assert (tmp_path / "plane_yz.png").exists()
