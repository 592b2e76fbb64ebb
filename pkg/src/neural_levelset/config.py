"""Run configuration: TOML files with nested sections, strict validation.

Unknown keys are rejected, defaults are filled per problem, and
:func:`dump_config` writes a complete file that parses back to an identical
:class:`RunConfig`.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .mesh import CartesianGrid
from .network import DecoderConfig
from .physics.fcm import Materials

PROBLEMS = ("heat", "mbb", "fsi_support")
METHODS = ("nn-ls", "pixel-ls", "nn-simp", "pixel-simp")
SCALES = ("desk", "full")
OUTPUT_ROOT_ENV = "NLS_OUTPUT_ROOT"

# domain size and meshes per problem
DOMAIN = {"heat": (1.0, 1.0), "mbb": (3.0, 1.0), "fsi_support": (2.0, 1.0)}
MESH = {
    ("heat", "desk"): (48, 48), ("heat", "full"): (95, 95),
    ("mbb", "desk"): (96, 32), ("mbb", "full"): (287, 95),
    ("fsi_support", "desk"): (32, 16), ("fsi_support", "full"): (191, 95),
}
VOLUME_FRACTION = {"heat": 0.4, "mbb": 0.4, "fsi_support": 0.45}
ALPHA_OUT = {"heat": 0.01, "mbb": 0.001, "fsi_support": 0.001}
FULL_CHANNELS = (16, 128, 64, 32, 16, 1)
FULL_HEIGHTS = (12, 12, 24, 46, 96, 96)
FULL_WIDTHS = {"heat": (12, 12, 24, 46, 96, 96), "mbb": (36, 36, 72, 144, 288, 288),
                "fsi_support": (24, 24, 48, 96, 192, 192)}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class MeshConfig:
    nx: int
    ny: int


@dataclass(frozen=True)
class NetworkConfig:
    latent: int = 16
    channels: tuple = (8, 16, 8, 1)
    heights: tuple = ()
    widths: tuple = ()


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    iterations: int = 200
    window: int = 25
    tolerance: float = 1e-5


@dataclass(frozen=True)
class LevelSetConfig:
    filter_radius: float = 3.0  # in units of the cell size h
    c_a: float = 3.0
    penalty: float = 1.0
    reinit_tol: float = 1e-6
    reinit_max_iter: int = 50


@dataclass(frozen=True)
class RunConfig:
    problem: str
    parameterization: str
    scale: str
    volume_fraction: float
    seed: int
    n_seeds: int
    output_dir: str
    freeze_fluid: bool
    mesh: MeshConfig
    materials: Materials
    network: NetworkConfig
    optimizer: OptimizerConfig
    levelset: LevelSetConfig

    @property
    def grid(self) -> CartesianGrid:
        lx, ly = DOMAIN[self.problem]
        return CartesianGrid(self.mesh.nx, self.mesh.ny, lx, ly)

    @property
    def uses_network(self) -> bool:
        return self.parameterization.startswith("nn")

    @property
    def uses_levelset(self) -> bool:
        return self.parameterization.endswith("-ls")

    def decoder(self) -> DecoderConfig | None:
        if not self.uses_network:
            return None
        n = self.network
        if n.heights:
            return DecoderConfig(n.latent, n.channels, n.heights, n.widths)
        return DecoderConfig.for_grid(self.mesh.nx, self.mesh.ny, n.latent, n.channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["network"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["network"].items()}
        return d


_SECTIONS = {"mesh": MeshConfig, "materials": Materials, "network": NetworkConfig,
             "optimizer": OptimizerConfig, "levelset": LevelSetConfig}
_TOP = ("problem", "parameterization", "scale", "volume_fraction", "seed", "n_seeds", "output_dir", "freeze_fluid")


def _coerce(name: str, value, target):
    """Type check one scalar against the default's type."""
    if isinstance(target, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(target, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(target, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(target, tuple):
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{name}: expected a list of integers, got {value!r}")
        return tuple(value)
    if isinstance(target, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    return value


def _section(name: str, cls, data: dict, base):
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {', '.join(unknown)}")
    values = {k: _coerce(f"{name}.{k}", v, getattr(base, k)) for k, v in data.items()}
    try:
        return replace(base, **values)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def default_output_dir(problem: str, parameterization: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return str(Path(root) / f"{problem}-{parameterization}")


def config_from_dict(data: dict) -> RunConfig:
    """Validate a parsed mapping and fill in defaults."""
    unknown = sorted(set(data) - set(_TOP) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}")
    problem = data.get("problem")
    if problem not in PROBLEMS:
        raise ConfigError(f"problem: must be one of {', '.join(PROBLEMS)}, got {problem!r}")
    method = data.get("parameterization", "nn-ls")
    if method not in METHODS:
        raise ConfigError(f"parameterization: must be one of {', '.join(METHODS)}, got {method!r}")
    if problem == "fsi_support" and method.endswith("simp"):
        raise ConfigError("parameterization: SIMP baselines exist only for heat and mbb")
    scale = data.get("scale", "desk")
    if scale not in SCALES:
        raise ConfigError(f"scale: must be one of {', '.join(SCALES)}, got {scale!r}")

    vf = _coerce("volume_fraction", data.get("volume_fraction", VOLUME_FRACTION[problem]), 0.0)
    if not (0.0 < vf < 1.0):
        raise ConfigError("volume fraction must lie in (0,1)")
    seed = _coerce("seed", data.get("seed", 0), 0)
    n_seeds = _coerce("n_seeds", data.get("n_seeds", 5), 0)
    if seed < 0:
        raise ConfigError("seed: must be non-negative")
    if n_seeds < 1:
        raise ConfigError("n_seeds: must be at least 1")
    out = _coerce("output_dir", data.get("output_dir", default_output_dir(problem, method)), "")
    freeze = _coerce("freeze_fluid", data.get("freeze_fluid", False), False)

    nx, ny = MESH[problem, scale]
    mesh = _section("mesh", MeshConfig, data.get("mesh", {}), MeshConfig(nx, ny))
    if mesh.nx < 2 or mesh.ny < 2:
        raise ConfigError("mesh: nx and ny must be at least 2")
    materials = _section("materials", Materials, data.get("materials", {}), Materials(alpha_out=ALPHA_OUT[problem]))
    base_net = NetworkConfig()
    if scale == "full":
        base_net = NetworkConfig(64, FULL_CHANNELS, FULL_HEIGHTS, FULL_WIDTHS[problem])
    network = _section("network", NetworkConfig, data.get("network", {}), base_net)
    optimizer = _section("optimizer", OptimizerConfig, data.get("optimizer", {}), OptimizerConfig())
    levelset = _section("levelset", LevelSetConfig, data.get("levelset", {}), LevelSetConfig())

    o = optimizer
    if o.learning_rate <= 0 or not (0 <= o.beta1 < 1) or not (0 <= o.beta2 < 1) or o.epsilon <= 0:
        raise ConfigError("optimizer: need learning_rate > 0, 0 <= beta < 1, epsilon > 0")
    if o.iterations < 0 or o.window < 1 or o.tolerance < 0:
        raise ConfigError("optimizer: need iterations >= 0, window >= 1, tolerance >= 0")
    if levelset.filter_radius <= 0 or levelset.c_a <= 0 or levelset.penalty <= 0:
        raise ConfigError("levelset: filter_radius, c_a and penalty must be positive")

    cfg = RunConfig(problem, method, scale, vf, seed, n_seeds, out, freeze, mesh, materials, network,
                    optimizer, levelset)
    if cfg.uses_network:
        try:
            dec = cfg.decoder()
        except ValueError as exc:
            raise ConfigError(f"network: {exc}") from exc
        if dec.output_shape != (mesh.ny + 1, mesh.nx + 1):
            raise ConfigError(f"network: output {dec.output_shape} does not match the node grid "
                              f"{(mesh.ny + 1, mesh.nx + 1)}")
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def write_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg))
    return path


def make_config(problem: str, **overrides) -> RunConfig:
    """Programmatic construction with the same validation as files."""
    data = {"problem": problem}
    data.update(overrides)
    return config_from_dict(data)
