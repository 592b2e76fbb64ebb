import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neural_levelset import cutcell
from neural_levelset.mesh import CartesianGrid, build_grid
from neural_levelset.physics.fcm import Materials
from neural_levelset.physics.simp import (DensityMap, SimpElasticity, SimpHeat, density_to_levelset, simp_material,
                                          simp_material_derivative)


def rel(a, b):
    s = max(abs(a), abs(b))
    return 0.0 if s == 0 else abs(a - b) / s


def test_power_law_examples():
    assert simp_material(1.0, 0.01) == pytest.approx(1.0)
    assert simp_material(0.0, 0.01) == pytest.approx(0.01)
    assert simp_material(0.5, 0.01, 3.0) == pytest.approx(0.01 + 0.99 * 0.125)
    assert simp_material(0.5, 0.01, 3.0) == pytest.approx(0.13375)


@pytest.mark.parametrize("bad", [-0.1, 1.1, np.nan])
def test_density_out_of_range(bad):
    with pytest.raises(ValueError):
        simp_material(np.array([0.5, bad]), 0.01)


def test_power_law_derivative():
    r = np.linspace(0.05, 0.95, 7)
    fd = (simp_material(r + 1e-6, 0.01) - simp_material(r - 1e-6, 0.01)) / 2e-6
    assert np.allclose(simp_material_derivative(r, 0.01), fd, rtol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 0.9))
def test_density_map_volume(seed, vf):
    g = build_grid(10, 8)
    dm = DensityMap(g, vf)
    rho, _ = dm.forward(np.random.default_rng(seed).uniform(-3, 3, g.n_nodes))
    assert np.all((rho >= 0) & (rho <= 1))
    assert abs(dm.volume(rho) - vf * g.area) <= 1e-10


def test_uniform_start():
    g = build_grid(8, 8)
    rho, _ = DensityMap(g, 0.4).forward(np.zeros(g.n_nodes))
    assert np.allclose(rho, 0.4, atol=1e-12)


def test_density_map_gradient():
    g = build_grid(10, 8)
    dm = DensityMap(g, 0.4)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(g.n_nodes)
    w = rng.standard_normal(g.n_nodes)
    rho, tape = dm.forward(x)
    gx = dm.backward(tape, w)
    for _ in range(5):
        v = rng.standard_normal(g.n_nodes)
        h = 1e-6
        fd = (w @ dm.forward(x + h * v)[0] - w @ dm.forward(x - h * v)[0]) / (2 * h)
        assert rel(gx @ v, fd) < 1e-6


def test_density_gradient_preserves_volume():
    g = build_grid(10, 8)
    dm = DensityMap(g, 0.4)
    rho, tape = dm.forward(np.random.default_rng(1).standard_normal(g.n_nodes))
    # a load proportional to the mass vector only changes the (fixed) volume
    assert np.max(np.abs(dm.backward(tape, dm.mass))) < 1e-12


@pytest.mark.parametrize("kind", ["heat", "mbb"])
def test_simp_gradient_fd(kind):
    if kind == "heat":
        g = build_grid(10, 10)
        prob = SimpHeat(g)
    else:
        g = CartesianGrid(15, 5, 3.0, 1.0)
        prob = SimpElasticity(g)
    rng = np.random.default_rng(2)
    rho = rng.uniform(0.2, 0.9, g.n_nodes)
    grad = prob.gradient(prob.solve(rho))
    for _ in range(4):
        v = rng.standard_normal(g.n_nodes)
        h = 1e-5  # truncation ~1e-10 relative; smaller steps are dominated by round-off at J ~ 1e3
        fd = (prob.solve(rho + h * v).J - prob.solve(rho - h * v).J) / (2 * h)
        assert rel(grad @ v, fd) < 1e-6


def test_simp_full_density_matches_levelset_physics():
    from neural_levelset.physics.heat import HeatProblem
    g = build_grid(12, 12)
    J_simp = SimpHeat(g).solve(np.ones(g.n_nodes)).J
    J_ls = HeatProblem(g, Materials(alpha_out=0.01)).solve(np.ones(g.n_nodes)).J
    assert rel(J_simp, J_ls) < 1e-12


def test_simp_elasticity_void_fraction():
    m = Materials()
    prob = SimpElasticity(CartesianGrid(6, 2, 3.0, 1.0), m)
    assert prob.alpha == m.alpha_d == 0.001 and prob.gamma == 3.0


def test_density_to_levelset_volume():
    g = build_grid(16, 16)
    X = g.node_coords
    rho = 1 / (1 + np.exp(-20 * (0.3 - np.hypot(X[:, 0] - 0.5, X[:, 1] - 0.5))))
    phi = density_to_levelset(g, rho, 0.25)
    assert abs(cutcell.in_area(g, phi) - 0.25) < 1e-10
