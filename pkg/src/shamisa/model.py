"""Trainable conv encoder and MLP projector, plus the frozen handle.

Encoder: stride-2 3x3 conv blocks with bias and relu, global average
pooling, then a linear map to d_h. Projector: linear-relu-linear to
d_z. No normalization layers; relu+bias is enough at desk scale.
"""

import copy
from dataclasses import dataclass

import numpy as np

from .numgrad import Graph, ops


@dataclass(frozen=True)
class ModelConfig:
    blocks: tuple = (16, 32, 64, 128)  # out channels; kernel 3, stride 2 fixed
    d_h: int = 128
    d_z: int = 64
    proj_hidden: int = 0  # 0 means d_h
    input_size: int = 64

    def __post_init__(self):
        if len(self.blocks) == 0:
            raise ValueError("need at least one conv block")
        if self.d_h < 1 or self.d_z < 2:
            raise ValueError("need d_h >= 1 and d_z >= 2")
        if self.input_size < 1:
            raise ValueError("input size must be positive")

    @property
    def hidden(self):
        return self.proj_hidden if self.proj_hidden else self.d_h


def _out_size(s):
    return (s + 2 - 3) // 2 + 1


def init_params(cfg, rng):
    """Scaled-normal weights (std = sqrt(2 / fan_in)), zero biases."""
    params = {}
    cin = 3
    for bi, cout in enumerate(cfg.blocks):
        std = np.sqrt(2.0 / (cin * 9))
        params[f"enc.conv{bi}.w"] = rng.normal(0.0, std, size=(cout, cin, 3, 3))
        params[f"enc.conv{bi}.b"] = np.zeros((cout, 1, 1))
        cin = cout
    params["enc.head.w"] = rng.normal(0.0, np.sqrt(2.0 / cin), size=(cin, cfg.d_h))
    params["enc.head.b"] = np.zeros(cfg.d_h)
    params["proj.fc0.w"] = rng.normal(
        0.0, np.sqrt(2.0 / cfg.d_h), size=(cfg.d_h, cfg.hidden)
    )
    params["proj.fc0.b"] = np.zeros(cfg.hidden)
    params["proj.fc1.w"] = rng.normal(
        0.0, np.sqrt(2.0 / cfg.hidden), size=(cfg.hidden, cfg.d_z)
    )
    params["proj.fc1.b"] = np.zeros(cfg.d_z)
    return params


def count_params(params):
    return int(sum(v.size for v in params.values()))


def param_nodes(g, params, requires_grad=True, names=None):
    """Bind a parameter map as named graph inputs."""
    return {
        name: g.input(name, arr, requires_grad=requires_grad)
        for name, arr in params.items()
        if names is None or name in names
    }


def encode_nodes(g, pnodes, x, cfg):
    """Forward the encoder on an already-bound image node."""
    if x.shape[1:] != (3, cfg.input_size, cfg.input_size):
        raise ValueError(
            f"expected images shaped (n, 3, {cfg.input_size}, {cfg.input_size}), "
            f"got {x.shape}"
        )
    h = x
    for bi in range(len(cfg.blocks)):
        h = ops.conv2d(h, pnodes[f"enc.conv{bi}.w"], stride=2, padding=1)
        h = ops.relu(ops.add(h, pnodes[f"enc.conv{bi}.b"]))
    pooled = ops.global_average_pool(h)
    return ops.add(ops.matmul(pooled, pnodes["enc.head.w"]), pnodes["enc.head.b"])


def project_nodes(g, pnodes, h):
    z = ops.relu(ops.add(ops.matmul(h, pnodes["proj.fc0.w"]), pnodes["proj.fc0.b"]))
    return ops.add(ops.matmul(z, pnodes["proj.fc1.w"]), pnodes["proj.fc1.b"])


def encode(params, images, cfg):
    """Plain-array convenience forward (no gradients retained)."""
    g = Graph()
    pnodes = param_nodes(g, params, requires_grad=False)
    x = g.input("x", images)
    return encode_nodes(g, pnodes, x, cfg).value.copy()


class FrozenEncoder:
    """Inference-only encoder handle: no projector, no gradients."""

    def __init__(self, params, cfg):
        self.cfg = cfg
        self._params = {
            k: copy.deepcopy(v) for k, v in params.items() if k.startswith("enc.")
        }
        self.d_h = cfg.d_h

    def encode(self, images):
        images = np.asarray(images, dtype=np.float64)
        return encode(self._params, images, self.cfg)

    def gradient(self, *_args, **_kwargs):
        raise RuntimeError("frozen encoder does not provide gradients")

    def project(self, *_args, **_kwargs):
        raise RuntimeError("projector is not part of the frozen encoder")


def freeze(params, cfg):
    return FrozenEncoder(params, cfg)
