import numpy as np
import pytest

from gs2d.core import Gaussian2D, GaussianCloud, eval_contribution, random_cloud
from gs2d.raster import (InvalidConfigError, RenderConfig, bin_gaussians, bin_params, pair_count,
                         render, render_reference, set_threads)


def small_sigma_cloud(rng, h, w, m=1):
    raw = rng.uniform(-3, 3, (m * h * w, 9))
    raw[:, 3:5] = rng.uniform(-3, 0, (m * h * w, 2))  # sigma <= 0.5
    raw[:, 1:3] = rng.uniform(-1, 1, (m * h * w, 2))
    return GaussianCloud(h, w, m, raw)


def test_config_validation():
    with pytest.raises(InvalidConfigError):
        RenderConfig(scale=0.5)
    with pytest.raises(InvalidConfigError):
        RenderConfig(ratio=0.0)
    with pytest.raises(InvalidConfigError):
        RenderConfig(ratio=1.5)
    with pytest.raises(InvalidConfigError):
        RenderConfig(tile=0)
    assert RenderConfig(scale=2.7).output_size(10, 20) == (27, 54)


def test_single_gaussian_matches_pointwise(rng):
    raw = np.zeros((1, 9))
    raw[0, 0] = 20.0  # alpha ~ 1
    raw[0, 1:3] = (0.3, -0.2)
    raw[0, 5] = 0.4
    raw[0, 6:9] = -1.0
    cloud = GaussianCloud(1, 1, 1, raw)
    cfg = RenderConfig(scale=6.0, ratio=1.0, tile=4)
    img = render(cloud, cfg, clamp=False)
    g = Gaussian2D.from_array(cloud.activated()[0])
    for y in range(img.shape[0]):
        for x in range(img.shape[1]):
            if abs(x / 6.0 - g.mu[0]) < 1 and abs(y / 6.0 - g.mu[1]) < 1:
                exp = eval_contribution(g, x / 6.0, y / 6.0)
            else:
                exp = (0.0, 0.0, 0.0)
            np.testing.assert_allclose(img[y, x], exp, rtol=1e-13, atol=1e-300)


def test_two_gaussian_probe(rng):
    cloud = random_cloud(rng, 1, 2, 1, -1, 1)
    cfg = RenderConfig(scale=3.0, ratio=1.0)
    img = render_reference(cloud, cfg, clamp=False)
    g0, g1 = (Gaussian2D.from_array(a) for a in cloud.activated())
    x, y = 4, 2
    hand = np.add(eval_contribution(g0, x / 3, y / 3), eval_contribution(g1, x / 3, y / 3))
    np.testing.assert_allclose(img[y, x], hand, rtol=1e-13)


def test_empty_contribution_is_zero_image():
    raw = np.zeros((4, 9))
    raw[:, 1] = 1e6  # every Gaussian far outside the frame
    cloud = GaussianCloud(2, 2, 1, raw)
    cfg = RenderConfig(2.0, 1.0)
    assert not render(cloud, cfg).any()
    assert not render_reference(cloud, cfg).any()
    assert not render((np.zeros((0, 9)), 3, 5), cfg).any()
    assert render((np.zeros((0, 9)), 3, 5), cfg).shape == (6, 10, 3)


@pytest.mark.parametrize("scale", [1.0, 1.7, 2.0, 3.3])
@pytest.mark.parametrize("tile", [1, 5, 16])
def test_ratio_one_equals_reference(rng, scale, tile):
    cloud = random_cloud(rng, 6, 9, 4)
    cfg = RenderConfig(scale, 1.0, tile)
    assert np.array_equal(render(cloud, cfg, clamp=False), render_reference(cloud, cfg, clamp=False))


def test_pruned_render_close_to_full(rng):
    cloud = small_sigma_cloud(rng, 60, 60)
    full = render(cloud, RenderConfig(1.5, 1.0), clamp=False)
    pruned = render(cloud, RenderConfig(1.5, 0.1), clamp=False)
    assert np.max(np.abs(full - pruned)) < 1e-6


def brute_pruned(cloud, cfg):
    """Pixel-by-pixel application of the pruning predicate."""
    act = cloud.activated()
    oh, ow = cfg.output_size(cloud.height, cloud.width)
    hx, hy = cfg.ratio * cloud.width, cfg.ratio * cloud.height
    sets = {}
    for y in range(oh):
        for x in range(ow):
            keep = (np.abs(x / cfg.scale - act[:, 1]) < hx) & (np.abs(y / cfg.scale - act[:, 2]) < hy)
            sets[(y, x)] = set(np.flatnonzero(keep).tolist())
    return sets


@pytest.mark.parametrize("scale,ratio,tile", [(1.0, 0.1, 4), (2.5, 0.2, 3), (4.0, 0.05, 8)])
def test_binning_is_exact(rng, scale, ratio, tile):
    cloud = random_cloud(rng, 10, 12, 1, -3, 3)
    cfg = RenderConfig(scale, ratio, tile)
    b = bin_gaussians(cloud, cfg)
    truth = brute_pruned(cloud, cfg)
    oh, ow = b.out_shape
    for ty in range(b.tiles_y):
        for tx in range(b.tiles_x):
            lst = b.tile_list(ty, tx).tolist()
            assert lst == sorted(lst)
            expect = set()
            for y in range(ty * tile, min(ty * tile + tile, oh)):
                for x in range(tx * tile, min(tx * tile + tile, ow)):
                    expect |= truth[(y, x)]
            assert set(lst) == expect
    assert b.pair_count == sum(len(v) for v in truth.values())


def test_binning_ratio_one_puts_everything_everywhere(rng):
    cloud = random_cloud(rng, 8, 8, 1, -0.4, 0.4)
    b = bin_gaussians(cloud, RenderConfig(4.0, 1.0, 8))
    for ty in range(b.tiles_y):
        for tx in range(b.tiles_x):
            assert b.tile_list(ty, tx).tolist() == list(range(cloud.n))


def test_binning_corner_gaussian():
    raw = np.zeros((64, 9))
    raw[:, 1:3] = 40.0  # move all but Gaussian 0 away
    raw[0, 1:3] = -0.5  # Gaussian 0 sits at (0, 0)
    cloud = GaussianCloud(8, 8, 1, raw)
    cfg = RenderConfig(2.0, 0.1, 4)  # window half-extent 0.8 LR = 1.6 SR px < tile
    b = bin_gaussians(cloud, cfg)
    hits = [(ty, tx) for ty in range(b.tiles_y) for tx in range(b.tiles_x)
            if 0 in b.tile_list(ty, tx).tolist()]
    assert hits == [(0, 0)]


def test_binned_sum_equals_reference(rng):
    cloud = random_cloud(rng, 5, 7, 1)
    cfg = RenderConfig(2.0, 1.0, 3)
    b = bin_gaussians(cloud, cfg)
    act = cloud.activated()
    out = np.zeros((*b.out_shape, 3))
    for ty in range(b.tiles_y):
        for tx in range(b.tiles_x):
            for y in range(ty * 3, min(ty * 3 + 3, b.out_shape[0])):
                for x in range(tx * 3, min(tx * 3 + 3, b.out_shape[1])):
                    for i in b.tile_list(ty, tx):
                        # tile lists are a union; the window still applies per pixel
                        if abs(x / 2 - act[i, 1]) >= 7 or abs(y / 2 - act[i, 2]) >= 5:
                            continue
                        out[y, x] +=eval_contribution(Gaussian2D.from_array(act[i]), x / 2, y / 2)
    np.testing.assert_allclose(out, render_reference(cloud, cfg, clamp=False), rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("s", [2, 3, 4])
def test_integer_scale_consistency(rng, s):
    cloud = random_cloud(rng, 7, 5, 4)
    for ratio in (0.1, 1.0):
        base = render(cloud, RenderConfig(1.0, ratio), clamp=False)
        up = render(cloud, RenderConfig(float(s), ratio), clamp=False)
        assert np.array_equal(up[::s, ::s], base)


def test_scale_density(rng):
    cloud = random_cloud(rng, 6, 6, 1)
    a = render(cloud, RenderConfig(1.5, 0.3), clamp=False)
    b = render(cloud, RenderConfig(3.0, 0.3), clamp=False)
    assert b.shape[0] * b.shape[1] == 4 * a.shape[0] * a.shape[1]
    assert np.array_equal(b[::2, ::2], a)


def test_linearity(rng):
    a = random_cloud(rng, 4, 6, 1).activated()
    b = random_cloud(rng, 4, 6, 1).activated()
    cfg = RenderConfig(2.2, 0.3, 5)
    both = render((np.concatenate([a, b]), 4, 6), cfg, clamp=False)
    sep = render((a, 4, 6), cfg, clamp=False) + render((b, 4, 6), cfg, clamp=False)
    np.testing.assert_allclose(both, sep, rtol=1e-12, atol=1e-300)


def test_clamped_output_range(rng):
    img = render(random_cloud(rng, 5, 5, 4), RenderConfig(2.0, 0.5))
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_pair_count_monotone_and_quadratic(rng):
    cloud = random_cloud(rng, 40, 40, 1, -0.3, 0.3)
    ratios = [0.02, 0.05, 0.1, 0.2, 0.4, 0.8, 1.0]
    counts = [pair_count(cloud, RenderConfig(1.0, r)) for r in ratios]
    assert counts == sorted(counts)
    n = cloud.n
    for r, c in zip(ratios[1:4], counts[1:4]):
        ideal = n * (2 * r * 40) ** 2
        # edge Gaussians lose part of their window
        assert 0.6 * ideal <= c <= 1.05 * ideal
    assert counts[-1] == n * 40 * 40


def test_determinism_across_threads(rng):
    import numba
    cloud = random_cloud(rng, 12, 12, 4)
    cfg = RenderConfig(3.0, 0.2, 8)
    outs = []
    for n in sorted({1, 4, numba.config.NUMBA_NUM_THREADS}):
        set_threads(n)
        outs.append(render(cloud, cfg, clamp=False))
    set_threads(numba.config.NUMBA_NUM_THREADS)
    assert all(np.array_equal(outs[0], o) for o in outs[1:])


def test_bin_params_accepts_activated(rng):
    cloud = random_cloud(rng, 3, 3, 1)
    b1 = bin_params(cloud.activated(), 3, 3, RenderConfig(2.0, 0.5))
    b2 = bin_gaussians(cloud, RenderConfig(2.0, 0.5))
    assert np.array_equal(b1.indices, b2.indices)
