import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neural_levelset import cutcell
from neural_levelset.levelset import (DesignRegion, LevelSetPipeline, PipelineError, Reinitializer, build_filter,
                                      pipeline_backward, process, smooth, volume_translate)
from neural_levelset.mesh import build_grid, q1_gradient


def circle_sdf(g, r=0.3):
    X = g.node_coords
    return r - np.hypot(X[:, 0] - 0.5, X[:, 1] - 0.5)


# --- smoothing ------------------------------------------------------------------------

def test_filter_preserves_constants():
    g = build_grid(10, 7, 1.0, 0.7)
    f = build_filter(g, 3 * g.h)
    assert np.allclose(smooth(np.full(g.n_nodes, 2.5), f), 2.5, atol=1e-12)


def test_filter_small_radius_is_identity():
    g = build_grid(6, 6, 6.0, 6.0)
    f = build_filter(g, 1.0)
    phi = np.random.default_rng(0).standard_normal(g.n_nodes)
    assert np.array_equal(smooth(phi, f), phi)


def test_filter_matches_dense_formula():
    g = build_grid(5, 4, 1.0, 0.8)
    r = 2.5 * g.h
    X = g.node_coords
    W = np.maximum(0.0, r - np.linalg.norm(X[:, None] - X[None], axis=-1))
    W /= W.sum(axis=1, keepdims=True)
    phi = np.random.default_rng(1).standard_normal(g.n_nodes)
    assert np.allclose(build_filter(g, r)(phi), W @ phi, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_filter_linear(seed, a, b):
    g = build_grid(6, 5)
    f = build_filter(g, 2.2 * g.h)
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, g.n_nodes))
    assert np.allclose(f(a * x + b * y), a * f(x) + b * f(y), atol=1e-12)


def test_filter_rejects_bad_radius():
    with pytest.raises(ValueError):
        build_filter(build_grid(2, 2), 0.0)


# --- reinitialization -----------------------------------------------------------------

def _grad_norm_far(g, phi, dist, far=2.0):
    c = g.cell_origin + 0.5 * np.array([g.hx, g.hy])
    mask = dist(c) > far * g.h
    pc = phi[g.cell_nodes][mask]
    half = np.full((mask.sum(), 1), 0.5)
    gx, gy = q1_gradient(pc, half, half, g.hx, g.hy)
    return np.hypot(gx, gy).ravel()


def _contour_x(g, phi):
    out = []
    for row in phi.reshape(g.shape):
        k = np.nonzero(np.sign(row[:-1]) != np.sign(row[1:]))[0][0]
        out.append((k + row[k] / (row[k] - row[k + 1])) * g.hx)
    return np.array(out)


def test_distance_function_is_kept():
    g = build_grid(24, 24)
    phi = Reinitializer(g)(g.node_coords[:, 0] - 0.5 + 1e-3).phi
    gn = _grad_norm_far(g, phi, lambda c: np.abs(c[:, 0] - 0.501))
    assert np.sqrt(np.mean((gn - 1) ** 2)) < 0.05
    assert np.max(np.abs(_contour_x(g, phi) - 0.501)) < 0.5 * g.h


def test_scaled_plane():
    g = build_grid(32, 32)
    phi = Reinitializer(g)(3.0 * (g.node_coords[:, 0] - 0.47)).phi
    gn = _grad_norm_far(g, phi, lambda c: np.abs(c[:, 0] - 0.47))
    assert np.sqrt(np.mean((gn - 1) ** 2)) <= 0.1
    assert np.max(np.abs(_contour_x(g, phi) - 0.47)) < 0.5 * g.h


def test_scaled_circle_fine_mesh():
    g = build_grid(256, 256)
    res = Reinitializer(g)(5 * circle_sdf(g))
    gn = _grad_norm_far(g, res.phi, lambda c: np.abs(0.3 - np.hypot(c[:, 0] - 0.5, c[:, 1] - 0.5)))
    assert np.mean((gn >= 0.9) & (gn <= 1.1)) >= 0.9


def test_single_phase_rejected():
    g = build_grid(4, 4)
    with pytest.raises(PipelineError):
        Reinitializer(g)(np.ones(g.n_nodes))
    with pytest.raises(PipelineError):
        LevelSetPipeline(g, 0.4).process(-np.ones(g.n_nodes))


def _node_distance_to_interface(g, phi):
    seg = cutcell.decompose(g, phi, dual=False).segments
    X = g.node_coords
    a, b = seg[:, 0], seg[:, 1]
    ab = b - a
    t = np.clip(np.einsum("nsk,sk->ns", X[:, None] - a[None], ab) / np.maximum((ab * ab).sum(1), 1e-300), 0, 1)
    p = a[None] + t[..., None] * ab[None]
    return np.min(np.linalg.norm(X[:, None] - p, axis=-1), axis=1)


@settings(max_examples=15, deadline=None)
@given(st.integers(8, 16), st.integers(0, 2**32 - 1))
def test_sign_preserved_away_from_interface(n, seed):
    g = build_grid(n, n)
    phi_f = build_filter(g, 3 * g.h)(np.random.default_rng(seed).uniform(-1, 1, g.n_nodes))
    if np.all(phi_f > 0) or np.all(phi_f < 0):
        return
    phi_s = Reinitializer(g)(phi_f).phi
    far = _node_distance_to_interface(g, phi_f) > 2 * g.h
    assert np.all(np.sign(phi_s[far]) == np.sign(phi_f[far]))


def test_reinit_vjp_matches_fd():
    g = build_grid(8, 8)
    r = Reinitializer(g)
    phi_f = build_filter(g, 3 * g.h)(np.random.default_rng(4).uniform(-1, 1, g.n_nodes)) + 0.05
    res = r(phi_f)
    w = np.random.default_rng(5).standard_normal(g.n_nodes)
    gf = r.vjp(res, w)
    v = np.random.default_rng(6).standard_normal(g.n_nodes)
    eps = 1e-6
    fd = (w @ r(phi_f + eps * v).phi - w @ r(phi_f - eps * v).phi) / (2 * eps)
    assert gf @ v == pytest.approx(fd, rel=1e-5)


# --- volume translation ---------------------------------------------------------------

def test_translate_plane():
    g = build_grid(20, 20)
    x = g.node_coords[:, 0]
    phi_b, b = volume_translate(g, x - 0.3, 0.5)
    assert b == pytest.approx(-0.2, abs=1e-9)
    assert np.allclose(phi_b, x - 0.5, atol=1e-9)


def test_translate_already_satisfied():
    g = build_grid(20, 20)
    _, b = volume_translate(g, g.node_coords[:, 0] - 0.3, 0.7)
    assert b == pytest.approx(0.0, abs=1e-9)


def test_translate_circle_radius_shift():
    g = build_grid(64, 64)
    phi_b, b = volume_translate(g, circle_sdf(g), np.pi * 0.04)
    assert abs(b + 0.1) < 2 * g.h
    assert cutcell.in_area(g, phi_b) == pytest.approx(np.pi * 0.04, abs=1e-12)


def test_translate_idempotent():
    g = build_grid(16, 16)
    phi = np.random.default_rng(2).standard_normal(g.n_nodes)
    phi_b, _ = volume_translate(g, phi, 0.4)
    phi_bb, b2 = volume_translate(g, phi_b, 0.4)
    assert abs(b2) < 1e-9 and np.allclose(phi_bb, phi_b, atol=1e-9)


def test_translate_errors():
    g = build_grid(4, 4)
    with pytest.raises(ValueError):
        volume_translate(g, g.node_coords[:, 0], 1.5)
    with pytest.raises(PipelineError):
        volume_translate(g, np.ones(g.n_nodes), 0.4)


def test_translate_with_region():
    g = build_grid(16, 8, 2.0, 1.0)
    X = g.node_coords
    mask = X[:, 0] <= 1.0 + 1e-12
    region = DesignRegion(mask, np.full(g.n_nodes, -1.0))
    phi_b, _ = volume_translate(g, X[:, 1] - 0.5, 0.3, region)
    assert cutcell.in_area(g, region.apply(phi_b)) == pytest.approx(0.3, abs=1e-12)


# --- full pipeline ---------------------------------------------------------------------

def test_pipeline_volume_on_heat_setting():
    g = build_grid(24, 24)
    pipe = LevelSetPipeline(g, 0.4)
    phi, _ = process(pipe, np.random.default_rng(0).uniform(-1, 1, g.n_nodes))
    assert abs(cutcell.in_area(g, phi) - 0.4) <= 1e-6


def test_pipeline_scaled_plane():
    g = build_grid(24, 24)
    x = g.node_coords[:, 0]
    phi, tape = LevelSetPipeline(g, 0.4).process(4.0 * (x - 0.3))
    # material x > 0.6 has area 0.4
    assert np.max(np.abs(_contour_x(g, phi) - 0.6)) < 0.5 * g.h
    assert abs(cutcell.in_area(g, phi) - 0.4) < 1e-9


def test_pipeline_backward_zero():
    g = build_grid(8, 8)
    pipe = LevelSetPipeline(g, 0.4)
    _, tape = pipe.process(np.random.default_rng(1).uniform(-1, 1, g.n_nodes))
    assert np.all(pipeline_backward(pipe, tape, np.zeros(g.n_nodes)) == 0.0)


def test_volume_gradient_annihilated():
    g = build_grid(8, 8)
    pipe = LevelSetPipeline(g, 0.4)
    _, tape = pipe.process(np.random.default_rng(1).uniform(-1, 1, g.n_nodes))
    _, dV = cutcell.in_area(g, tape.phi, dual=True)
    assert np.max(np.abs(pipe.backward(tape, dV))) <= 1e-6 * g.area


def _first_moment(g, phi, dual=False):
    d = cutcell.decompose(g, phi, dual=dual)
    xs = lambda cells, xi, eta: g.cell_origin[cells, 0][:, None] + xi * g.hx
    out = cutcell.integrate_bulk(d, cutcell.IN, xs, dual=dual)
    if not dual:
        return out
    val, (cells, partials) = out
    return val, cutcell.scatter_partials(g, cells, partials)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_pipeline_gradient_fd(seed):
    g = build_grid(8, 8)
    pipe = LevelSetPipeline(g, 0.4)
    varphi = np.random.default_rng(seed).uniform(-1, 1, g.n_nodes)
    phi, tape = pipe.process(varphi)
    _, dJ = _first_moment(g, phi, dual=True)
    grad = pipe.backward(tape, dJ)
    eps = 1e-6
    fd = np.empty(g.n_nodes)
    for i in range(g.n_nodes):
        e = np.zeros(g.n_nodes)
        e[i] = eps
        fd[i] = (_first_moment(g, pipe.process(varphi + e)[0]) - _first_moment(g, pipe.process(varphi - e)[0])) / (2 * eps)
    assert np.max(np.abs(grad - fd)) <= 1e-3 * np.max(np.abs(fd))
