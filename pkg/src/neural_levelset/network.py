"""Convolutional decoder that maps a parameter vector to nodal level-set values.

Layer ``l`` takes ``x`` of shape ``(c_l, h_l, w_l)`` to::

    conv5x5(normalize(resize(tanh(x), h_{l+1}, w_{l+1})))

and the first tensor comes from a dense layer ``reshape(W theta + b)``.
Images are stored as ``(channels, rows, columns)`` with rows along ``y``, so a
single-channel ``(ny+1, nx+1)`` output flattened in C order is already in grid
node order ``k = j*(nx+1) + i``.

Gradients are hand-written reverse-mode rules; everything is plain numpy.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KERNEL = 5
PAD = KERNEL // 2
NORM_EPS = 1e-6


@dataclass(frozen=True)
class DecoderConfig:
    latent: int
    channels: tuple[int, ...]
    heights: tuple[int, ...]
    widths: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "heights", tuple(int(c) for c in self.heights))
        object.__setattr__(self, "widths", tuple(int(c) for c in self.widths))
        n = len(self.channels)
        if n == 0 or len(self.heights) != n or len(self.widths) != n:
            raise ValueError("channels, heights and widths need the same (nonzero) length")
        if self.latent <= 0 or min(self.channels + self.heights + self.widths) <= 0:
            raise ValueError("all decoder sizes must be positive")
        if self.channels[-1] != 1:
            raise ValueError("the last layer must have a single channel")

    @property
    def n_layers(self) -> int:
        return len(self.channels)

    @property
    def output_shape(self) -> tuple[int, int]:
        return self.heights[-1], self.widths[-1]

    @property
    def n_outputs(self) -> int:
        return self.heights[-1] * self.widths[-1]

    @classmethod
    def for_grid(cls, nx: int, ny: int, latent: int = 16, channels=(8, 16, 8, 1)) -> "DecoderConfig":
        """Sizes halve (rounding up) from the node grid back to the first layer."""
        h, w = [ny + 1], [nx + 1]
        for _ in range(len(channels) - 1):
            h.insert(0, (h[0] + 1) // 2)
            w.insert(0, (w[0] + 1) // 2)
        return cls(latent, tuple(channels), tuple(h), tuple(w))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class ParamLayout:
    """Offsets of every block inside the flat parameter vector."""

    config: DecoderConfig

    @property
    def blocks(self) -> list[tuple[str, tuple[int, ...]]]:
        cfg = self.config
        m = cfg.channels[0] * cfg.heights[0] * cfg.widths[0]
        out = [("theta", (cfg.latent,)), ("W", (m, cfg.latent)), ("b", (m,))]
        for l in range(cfg.n_layers - 1):
            cin, cout = cfg.channels[l], cfg.channels[l + 1]
            out.append((f"K{l}", (cout, cin, KERNEL, KERNEL)))
            out.append((f"c{l}", (cout,)))
        return out

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.blocks)

    def split(self, p: np.ndarray) -> dict[str, np.ndarray]:
        """Views into ``p`` keyed by block name."""
        p = np.asarray(p)
        if p.shape != (self.size,):
            raise ValueError(f"parameter vector has length {p.size}, layout needs {self.size}")
        out, k = {}, 0
        for name, shape in self.blocks:
            n = int(np.prod(shape))
            out[name] = p[k:k + n].reshape(shape)
            k += n
        return out

    def join(self, parts: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(parts[name], float).ravel() for name, _ in self.blocks])


def param_count(config: DecoderConfig) -> int:
    c, h, w = config.channels, config.heights, config.widths
    n = config.latent + c[0] * h[0] * w[0] * (config.latent + 1)
    return n + sum(c[l + 1] * (KERNEL * KERNEL * c[l] + 1) for l in range(config.n_layers - 1))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def init_params(config: DecoderConfig, seed: int) -> np.ndarray:
    """Xavier-uniform weights, zero biases, standard-normal latent vector."""
    rng = make_rng(seed)
    layout = ParamLayout(config)
    parts = {}
    for name, shape in layout.blocks:
        if name == "theta":
            parts[name] = rng.standard_normal(shape)
        elif name == "W":
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            parts[name] = rng.uniform(-a, a, shape)
        elif name.startswith("K"):
            cout, cin = shape[:2]
            a = np.sqrt(6.0 / (KERNEL * KERNEL * (cin + cout)))
            parts[name] = rng.uniform(-a, a, shape)
        else:
            parts[name] = np.zeros(shape)
    return layout.join(parts)


# --- layer pieces ---------------------------------------------------------------------

def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Corner-aligned linear interpolation weights, shape ``(n_out, n_in)``."""
    R = np.zeros((n_out, n_in))
    if n_in == 1:
        R[:, 0] = 1.0
        return R
    if n_out == 1:
        R[0, 0] = 1.0
        return R
    s = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.minimum(np.floor(s).astype(int), n_in - 2)
    t = s - i0
    R[np.arange(n_out), i0] = 1.0 - t
    R[np.arange(n_out), i0 + 1] += t
    return R


def resize(x: np.ndarray, height: int, width: int) -> np.ndarray:
    Rh = resize_matrix(x.shape[1], height)
    Rw = resize_matrix(x.shape[2], width)
    return Rh @ x @ Rw.T


def resize_backward(g: np.ndarray, in_shape: tuple[int, int]) -> np.ndarray:
    Rh = resize_matrix(in_shape[0], g.shape[1])
    Rw = resize_matrix(in_shape[1], g.shape[2])
    return Rh.T @ g @ Rw


def normalize(x: np.ndarray, eps: float = NORM_EPS):
    """Per-channel zero mean, unit variance over the spatial extent.

    Returns the output and the per-channel standard deviation used (the
    variance is floored at ``eps``).
    """
    mu = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    sd = np.sqrt(np.maximum(var, eps))
    return (x - mu) / sd, (sd, var > eps)


def normalize_backward(g: np.ndarray, y: np.ndarray, cache) -> np.ndarray:
    sd, active = cache
    gm = g.mean(axis=(1, 2), keepdims=True)
    gy = (g * y).mean(axis=(1, 2), keepdims=True)
    return (g - gm - np.where(active, y * gy, 0.0)) / sd


def _windows(x: np.ndarray) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (PAD, PAD), (PAD, PAD)))
    return sliding_window_view(xp, (KERNEL, KERNEL), axis=(1, 2))  # (c, h, w, 5, 5)


def conv2d(x: np.ndarray, K: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded 5x5 cross-correlation, ``K`` of shape ``(c_out, c_in, 5, 5)``."""
    out = np.tensordot(K, _windows(x), axes=([1, 2, 3], [0, 3, 4]))
    return out + bias[:, None, None]


def conv2d_backward(g: np.ndarray, x: np.ndarray, K: np.ndarray):
    dK = np.tensordot(g, _windows(x), axes=([1, 2], [1, 2]))
    dc = g.sum(axis=(1, 2))
    dx = np.tensordot(K[:, :, ::-1, ::-1], _windows(g), axes=([0, 2, 3], [0, 3, 4]))
    return dx, dK, dc


def dense_reshape(p: np.ndarray, config: DecoderConfig) -> np.ndarray:
    parts = ParamLayout(config).split(p)
    x = parts["W"] @ parts["theta"] + parts["b"]
    return x.reshape(config.channels[0], config.heights[0], config.widths[0])


def layer_forward(x: np.ndarray, K: np.ndarray, bias: np.ndarray, height: int, width: int):
    """One decoder layer; returns the output and the cache for the backward pass."""
    t = np.tanh(x)
    r = resize(t, height, width)
    y, ncache = normalize(r)
    out = conv2d(y, K, bias)
    return out, (t, y, ncache)


def layer_backward(g: np.ndarray, K: np.ndarray, cache):
    t, y, ncache = cache
    gy, dK, dc = conv2d_backward(g, y, K)
    gr = normalize_backward(gy, y, ncache)
    gt = resize_backward(gr, t.shape[1:])
    return gt * (1.0 - t * t), dK, dc


# --- full network ----------------------------------------------------------------------

def _check_outputs(config: DecoderConfig, n_nodes: int | None):
    if n_nodes is not None and config.n_outputs != n_nodes:
        raise ValueError(f"decoder produces {config.n_outputs} values but the grid has {n_nodes} nodes")


def network_forward(p: np.ndarray, config: DecoderConfig, n_nodes: int | None = None,
                    return_cache: bool = False):
    _check_outputs(config, n_nodes)
    parts = ParamLayout(config).split(p)
    x = dense_reshape(p, config)
    caches = []
    for l in range(config.n_layers - 1):
        x, cache = layer_forward(x, parts[f"K{l}"], parts[f"c{l}"], config.heights[l + 1], config.widths[l + 1])
        caches.append(cache)
    phi = x.reshape(-1)
    return (phi, caches) if return_cache else phi


def network_backward(p: np.ndarray, config: DecoderConfig, dJ_dphi: np.ndarray, caches=None) -> np.ndarray:
    """Vector-Jacobian product ``dJ/dp`` for a given ``dJ/dphi``."""
    layout = ParamLayout(config)
    parts = layout.split(p)
    if caches is None:
        _, caches = network_forward(p, config, return_cache=True)
    g = np.asarray(dJ_dphi, float).reshape(1, *config.output_shape)
    grads = {}
    for l in reversed(range(config.n_layers - 1)):
        g, grads[f"K{l}"], grads[f"c{l}"] = layer_backward(g, parts[f"K{l}"], caches[l])
    g1 = g.reshape(-1)
    grads["b"] = g1
    grads["W"] = np.outer(g1, parts["theta"])
    grads["theta"] = parts["W"].T @ g1
    return layout.join(grads)


def pixel_forward(p: np.ndarray, n_nodes: int) -> np.ndarray:
    """Baseline parameterization: the parameters are the nodal values."""
    p = np.asarray(p, float)
    if p.shape != (n_nodes,):
        raise ValueError(f"pixel parameterization needs {n_nodes} values, got {p.shape}")
    return p.copy()


def pixel_backward(dJ_dphi: np.ndarray) -> np.ndarray:
    return np.array(dJ_dphi, dtype=float)


@dataclass
class Parameterization:
    """Uniform interface over the decoder and the pixel baseline."""

    n_nodes: int
    config: DecoderConfig | None = None

    def __post_init__(self):
        if self.config is not None:
            _check_outputs(self.config, self.n_nodes)

    @property
    def kind(self) -> str:
        return "pixel" if self.config is None else "network"

    @property
    def size(self) -> int:
        return self.n_nodes if self.config is None else param_count(self.config)

    def init(self, seed: int, pixel_init: np.ndarray | None = None) -> np.ndarray:
        if self.config is None:
            return np.zeros(self.n_nodes) if pixel_init is None else pixel_forward(pixel_init, self.n_nodes)
        return init_params(self.config, seed)

    def forward(self, p: np.ndarray):
        if self.config is None:
            return pixel_forward(p, self.n_nodes), None
        return network_forward(p, self.config, self.n_nodes, return_cache=True)

    def backward(self, p: np.ndarray, dJ_dphi: np.ndarray, cache=None) -> np.ndarray:
        if self.config is None:
            return pixel_backward(dJ_dphi)
        return network_backward(p, self.config, dJ_dphi, cache)


# --- checkpoints ----------------------------------------------------------------------------

_MAGIC = b"NLSP"


def save_params(path, p: np.ndarray, config: DecoderConfig | None, seed: int, extra: dict | None = None):
    """Header (magic, length, JSON echo) followed by little-endian float64 values."""
    header = {"seed": int(seed), "n": int(np.size(p)), "config": None if config is None else config.to_dict()}
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode()
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.asarray(p, dtype="<f8").tobytes())


def load_params(path):
    """Inverse of :func:`save_params`; returns ``(p, config, header)``."""
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint")
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + n].decode())
    p = np.frombuffer(data[8 + n:], dtype="<f8").astype(float)
    if p.size != header["n"]:
        raise ValueError(f"{path}: expected {header['n']} values, found {p.size}")
    cfg = header["config"]
    config = None if cfg is None else DecoderConfig(cfg["latent"], cfg["channels"], cfg["heights"], cfg["widths"])
    return p, config, header
