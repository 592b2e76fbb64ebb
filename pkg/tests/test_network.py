import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neural_levelset import cutcell
from neural_levelset.mesh import build_grid
from neural_levelset.network import (DecoderConfig, ParamLayout, Parameterization, conv2d, conv2d_backward,
                                     dense_reshape, init_params, layer_backward, layer_forward, load_params,
                                     network_backward, network_forward, normalize, normalize_backward, param_count,
                                     pixel_backward, pixel_forward, resize, resize_backward, save_params)

FULL_HEAT = DecoderConfig(64, (16, 128, 64, 32, 16, 1), (12, 12, 24, 46, 96, 96), (12, 12, 24, 46, 96, 96))
DESK = DecoderConfig(16, (8, 16, 8, 1), (7, 13, 25, 49), (7, 13, 25, 49))
SMALL = DecoderConfig(4, (3, 2, 1), (3, 5, 9), (4, 7, 13))


def fd_rel(a, b):
    s = max(abs(a), abs(b))
    return 0.0 if s == 0 else abs(a - b) / s


def test_full_parameter_count():
    assert param_count(FULL_HEAT) == 470465
    assert ParamLayout(FULL_HEAT).size == 470465


def test_full_output_length():
    assert FULL_HEAT.n_outputs == 9216 == build_grid(95, 95).n_nodes


def test_desk_decoder_targets_48_mesh():
    assert DecoderConfig.for_grid(48, 48) == DESK


configs = st.builds(
    lambda lat, n, data: DecoderConfig(lat, tuple(data[:n]) + (1,), tuple(sorted(data[n:2 * n + 1])),
                                       tuple(sorted(data[2 * n + 1:3 * n + 2]))),
    st.integers(1, 8), st.integers(1, 3), st.lists(st.integers(1, 9), min_size=11, max_size=11))


@settings(max_examples=30, deadline=None)
@given(configs)
def test_count_matches_enumeration(cfg):
    n = cfg.latent + cfg.channels[0] * cfg.heights[0] * cfg.widths[0] * (cfg.latent + 1)
    for cin, cout in zip(cfg.channels[:-1], cfg.channels[1:]):
        n += cout * cin * 25 + cout
    assert param_count(cfg) == n
    p = np.arange(param_count(cfg), dtype=float)
    layout = ParamLayout(cfg)
    assert np.array_equal(layout.join(layout.split(p)), p)


def test_invalid_configs():
    with pytest.raises(ValueError):
        DecoderConfig(4, (2, 2), (3, 5), (3, 5))  # last channel must be 1
    with pytest.raises(ValueError):
        DecoderConfig(4, (2, 1), (3,), (3, 5))
    with pytest.raises(ValueError):
        Parameterization(100, SMALL)


def test_init_deterministic_and_xavier():
    a, b = init_params(DESK, 3), init_params(DESK, 3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, init_params(DESK, 4))
    parts = ParamLayout(DESK).split(a)
    assert np.all(parts["b"] == 0) and all(np.all(parts[f"c{l}"] == 0) for l in range(3))
    lim = np.sqrt(6.0 / sum(parts["W"].shape))
    assert np.max(np.abs(parts["W"])) <= lim


def test_init_weight_mean():
    cfg = DecoderConfig(100, (10, 1), (10, 12), (10, 12))  # W has 10^5 entries
    W = ParamLayout(cfg).split(init_params(cfg, 0))["W"]
    assert W.size == 100000
    a = np.sqrt(6.0 / sum(W.shape))
    sigma = a / np.sqrt(3.0)
    assert abs(W.mean()) < 3 * sigma / np.sqrt(W.size)


def test_dense_reshape():
    p = np.zeros(param_count(SMALL))
    assert np.all(dense_reshape(p, SMALL) == 0)
    rng = np.random.default_rng(0)
    p = rng.standard_normal(param_count(SMALL))
    parts = ParamLayout(SMALL).split(p)
    ref = (parts["W"] @ parts["theta"] + parts["b"]).reshape(3, 3, 4)
    assert np.allclose(dense_reshape(p, SMALL), ref)
    parts = {k: v.copy() for k, v in parts.items()}
    parts["theta"][:] = 0
    parts["theta"][2] = 1
    parts["b"][:] = 0
    q = ParamLayout(SMALL).join(parts)
    assert np.allclose(dense_reshape(q, SMALL).ravel(), parts["W"][:, 2])


def test_constant_channel_gives_bias():
    x = np.full((1, 4, 4), 0.7)
    K = np.random.default_rng(0).standard_normal((2, 1, 5, 5))
    out, _ = layer_forward(x, K, np.array([0.3, -1.2]), 6, 6)
    assert np.allclose(out[0], 0.3) and np.allclose(out[1], -1.2)


def test_identity_kernel():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 5, 6))
    K = np.zeros((1, 1, 5, 5))
    K[0, 0, 2, 2] = 1.0
    out, _ = layer_forward(x, K, np.zeros(1), 8, 9)
    ref, _ = normalize(resize(np.tanh(x), 8, 9))
    assert np.allclose(out, ref, atol=1e-14)


def test_corner_aligned_resize():
    assert np.allclose(resize(np.array([[[0.0, 1.0]]]), 1, 3), [[[0.0, 0.5, 1.0]]])


def test_resize_exact_on_ramps():
    y, x = np.meshgrid(np.linspace(0, 1, 5), np.linspace(0, 2, 7), indexing="ij")
    r = resize((x + 3 * y)[None], 11, 13)
    y2, x2 = np.meshgrid(np.linspace(0, 1, 11), np.linspace(0, 2, 13), indexing="ij")
    assert np.allclose(r[0], x2 + 3 * y2, atol=1e-13)


def test_zero_params_zero_output():
    assert np.all(network_forward(np.zeros(param_count(DESK)), DESK) == 0)


def test_forward_deterministic():
    p = init_params(DESK, 9)
    assert np.array_equal(network_forward(p, DESK), network_forward(p.copy(), DESK))


def test_output_size_mismatch():
    with pytest.raises(ValueError):
        network_forward(init_params(SMALL, 0), SMALL, n_nodes=10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normalization_moments(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-5, 5) + rng.uniform(0.1, 10) * rng.standard_normal((3, 6, 7))
    y, _ = normalize(x)
    assert np.max(np.abs(y.mean(axis=(1, 2)))) < 1e-10
    assert np.all(np.abs(y.var(axis=(1, 2)) - 1) <= 1e-6)


# --- gradients ------------------------------------------------------------------------

def _coordinate_check(f, x, g, rng, n=20, h=1e-5, tol=1e-5):
    for i in rng.choice(x.size, size=min(n, x.size), replace=False):
        e = np.zeros(x.size)
        e[i] = h
        fd = (f((x.ravel() + e).reshape(x.shape)) - f((x.ravel() - e).reshape(x.shape))) / (2 * h)
        assert fd_rel(g.ravel()[i], fd) <= tol or abs(g.ravel()[i] - fd) < 1e-11


def test_layer_pieces_gradients():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 4, 5))
    K = rng.standard_normal((3, 2, 5, 5))
    c = rng.standard_normal(3)
    W = rng.standard_normal((3, 4, 5))
    gx, gK, gc = conv2d_backward(W, x, K)
    _coordinate_check(lambda v: np.sum(W * conv2d(v, K, c)), x, gx, rng)
    _coordinate_check(lambda v: np.sum(W * conv2d(x, v, c)), K, gK, rng)
    _coordinate_check(lambda v: np.sum(W * conv2d(x, K, v)), c, gc, rng)
    R = rng.standard_normal((2, 7, 9))
    _coordinate_check(lambda v: np.sum(R * resize(v, 7, 9)), x, resize_backward(R, (4, 5)), rng)
    y, cache = normalize(x)
    G = rng.standard_normal(x.shape)
    _coordinate_check(lambda v: np.sum(G * normalize(v)[0]), x, normalize_backward(G, y, cache), rng)
    out, lc = layer_forward(x, K, c, 7, 9)
    Go = rng.standard_normal(out.shape)
    gl, _, _ = layer_backward(Go, K, lc)
    _coordinate_check(lambda v: np.sum(Go * layer_forward(v, K, c, 7, 9)[0]), x, gl, rng)


def test_normalize_backward_on_floor_path():
    x = np.full((1, 3, 3), 2.0)
    y, cache = normalize(x)
    g = normalize_backward(np.ones_like(x), y, cache)
    assert np.allclose(g, 0.0)


def test_single_layer_network_gradient():
    rng = np.random.default_rng(4)
    cfg = DecoderConfig(3, (2, 1), (3, 6), (4, 8))
    p = init_params(cfg, 1)
    G = rng.standard_normal(cfg.n_outputs)
    _coordinate_check(lambda v: G @ network_forward(v, cfg), p, network_backward(p, cfg, G), rng)


def test_zero_seed_zero_gradient():
    p = init_params(SMALL, 0)
    assert np.all(network_backward(p, SMALL, np.zeros(SMALL.n_outputs)) == 0)


@pytest.mark.parametrize("cfg", [SMALL, DESK], ids=["small", "desk"])
def test_composed_directional_gradient(cfg):
    rng = np.random.default_rng(5)
    p = init_params(cfg, 2)
    G = rng.standard_normal(cfg.n_outputs)
    g = network_backward(p, cfg, G)
    h = 1e-5
    for _ in range(5):
        v = rng.standard_normal(p.size)
        fd = (G @ network_forward(p + h * v, cfg) - G @ network_forward(p - h * v, cfg)) / (2 * h)
        assert fd_rel(g @ v, fd) <= 1e-4


def test_full_heat_directional_gradient():
    rng = np.random.default_rng(6)
    p = init_params(FULL_HEAT, 0)
    G = rng.standard_normal(FULL_HEAT.n_outputs)
    phi, caches = network_forward(p, FULL_HEAT, return_cache=True)
    g = network_backward(p, FULL_HEAT, G, caches)
    h = 1e-5
    for _ in range(5):
        v = rng.standard_normal(p.size)
        fd = (G @ network_forward(p + h * v, FULL_HEAT) - G @ network_forward(p - h * v, FULL_HEAT)) / (2 * h)
        assert fd_rel(g @ v, fd) <= 1e-4


# --- pixel baseline and ordering --------------------------------------------------------

def test_pixel_identity():
    n = 9
    e = np.zeros(n)
    e[4] = 1
    assert np.array_equal(pixel_forward(e, n), e)
    g = np.random.default_rng(0).standard_normal(n)
    assert np.array_equal(pixel_backward(g), g)
    assert np.array_equal(pixel_backward(pixel_forward(g, n)), g)
    with pytest.raises(ValueError):
        pixel_forward(np.zeros(3), n)


def test_delta_lands_on_grid_node():
    g = build_grid(4, 3)
    k = g.node_index(3, 1)
    phi = pixel_forward(np.where(np.arange(g.n_nodes) == k, 1.0, -1.0), g.n_nodes)
    d = cutcell.decompose(g, phi, dual=False)
    cut = set(d.cut_cells.tolist())
    expected = {j * g.nx + i for i in (2, 3) for j in (0, 1)}
    assert cut == expected


def test_network_image_rows_follow_y():
    # a decoder output that increases with the row index must increase with y on the grid
    cfg = DecoderConfig.for_grid(6, 4, latent=2, channels=(1, 1))
    img = np.repeat(np.arange(cfg.heights[-1], dtype=float)[:, None], cfg.widths[-1], axis=1).ravel()
    g = build_grid(6, 4)
    assert np.allclose(np.diff(img.reshape(g.shape), axis=0), 1.0)
    assert np.allclose(g.node_coords[:, 1].reshape(g.shape)[:, 0], np.linspace(0, 1, 5))


def test_parameterization_interface():
    par = Parameterization(SMALL.n_outputs, SMALL)
    p = par.init(0)
    phi, cache = par.forward(p)
    assert phi.shape == (SMALL.n_outputs,)
    assert par.backward(p, np.zeros_like(phi), cache).shape == p.shape
    pix = Parameterization(10)
    assert pix.kind == "pixel" and pix.size == 10 and np.all(pix.init(0) == 0)


def test_checkpoint_roundtrip(tmp_path):
    p = init_params(SMALL, 7)
    save_params(tmp_path / "p.bin", p, SMALL, 7, {"problem": "heat"})
    q, cfg, header = load_params(tmp_path / "p.bin")
    assert np.array_equal(p, q) and cfg == SMALL and header["seed"] == 7 and header["problem"] == "heat"
    (tmp_path / "bad.bin").write_bytes(b"xxxx")
    with pytest.raises(ValueError):
        load_params(tmp_path / "bad.bin")
