"""Wire a :class:`~.config.RunConfig` into parameterization, design map and physics."""
from __future__ import annotations

import numpy as np

from . import cutcell
from .config import RunConfig
from .levelset import LevelSetPipeline
from .network import Parameterization, make_rng
from .physics.elasticity import mbb_problem
from .physics.fsi import FsiProblem
from .physics.heat import HeatProblem
from .physics.simp import DensityMap, SimpElasticity, SimpHeat, density_to_levelset


def levelset_problem(cfg: RunConfig, grid=None):
    grid = grid or cfg.grid
    if cfg.problem == "heat":
        return HeatProblem(grid, cfg.materials)
    if cfg.problem == "mbb":
        return mbb_problem(grid, cfg.materials)
    return FsiProblem(grid, cfg.materials, freeze_fluid=cfg.freeze_fluid)


class Model:
    """Forward map pieces for one run configuration.

    ``design`` is a :class:`LevelSetPipeline` for the ``*-ls`` methods and a
    :class:`DensityMap` for the ``*-simp`` methods; ``problem`` solves the
    matching physics and returns objective and design gradient.
    """

    def __init__(self, cfg: RunConfig):
        self.config = cfg
        self.grid = grid = cfg.grid
        self.param = Parameterization(grid.n_nodes, cfg.decoder())
        radius = cfg.levelset.filter_radius * grid.h
        if cfg.uses_levelset:
            region = target = None
            if cfg.problem == "fsi_support":
                layout = FsiProblem.__dataclass_fields__["layout"].default_factory()
                region = layout.region(grid)
                target = layout.target_volume(cfg.volume_fraction)
            ls = cfg.levelset
            self.design = LevelSetPipeline(grid, cfg.volume_fraction, radius, ls.c_a, ls.penalty, ls.reinit_tol,
                                           ls.reinit_max_iter, region=region, target_volume=target)
            self.target_volume = self.design.target_volume
            self.problem = levelset_problem(cfg, grid)
        else:
            self.design = DensityMap(grid, cfg.volume_fraction, radius)
            self.target_volume = self.design.target
            self.problem = SimpHeat(grid, cfg.materials) if cfg.problem == "heat" else SimpElasticity(grid, cfg.materials)

    @property
    def kind(self) -> str:
        return "levelset" if self.config.uses_levelset else "density"

    def init_params(self, seed: int) -> np.ndarray:
        """Network: Xavier init.  Pixel-LS: uniform nodal noise.  Pixel-SIMP: uniform density."""
        if self.param.kind == "network":
            return self.param.init(seed)
        if self.kind == "levelset":
            return make_rng(seed).uniform(-1.0, 1.0, self.grid.n_nodes)
        return np.zeros(self.grid.n_nodes)

    def design_forward(self, varphi):
        if self.kind == "levelset":
            return self.design.process(varphi)
        return self.design.forward(varphi)

    def design_backward(self, tape, g):
        return self.design.backward(tape, g)

    def volume(self, field: np.ndarray) -> float:
        if self.kind == "levelset":
            return cutcell.in_area(self.grid, field)
        return self.design.volume(field)

    def evaluate_levelset(self, rho: np.ndarray) -> float:
        """Objective of the 0.5-contour of a density under the level-set physics."""
        phi = density_to_levelset(self.grid, rho, self.target_volume)
        return levelset_problem(self.config, self.grid).solve(phi).J
