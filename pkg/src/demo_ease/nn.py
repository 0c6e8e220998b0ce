"""Dense networks with hand-written backprop, Adam, Polyak averaging and the
binary checkpoint format."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import BadMagic, FileFormatError, TruncatedFile, VersionMismatch

IDENTITY = "identity"
TANH = "tanh"


class DimensionMismatch(ValueError):
    pass


class Mlp:
    """ReLU hidden layers followed by an identity or scaled-tanh output.

    Parameters are kept in a flat list ``[W0, b0, W1, b1, ...]`` with
    ``W`` of shape ``(fan_in, fan_out)``, so ``y = x @ W + b`` per layer.
    """

    def __init__(self, layer_sizes, output_activation: str = IDENTITY, output_scale: float = 1.0, rng=None,
                 final_scale: float = 1.0):
        layer_sizes = [int(n) for n in layer_sizes]
        if len(layer_sizes) < 2 or min(layer_sizes) < 1:
            raise ValueError(f"bad layer sizes {layer_sizes}")
        if output_activation not in (IDENTITY, TANH):
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.layer_sizes = layer_sizes
        self.output_activation = output_activation
        self.output_scale = float(output_scale)
        rng = np.random.default_rng() if rng is None else rng
        self.params: list[np.ndarray] = []
        n_layers = len(layer_sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            if i == n_layers - 1:
                bound *= final_scale
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "Mlp":
        new = Mlp.__new__(Mlp)
        new.layer_sizes = list(self.layer_sizes)
        new.output_activation = self.output_activation
        new.output_scale = self.output_scale
        new.params = [p.copy() for p in self.params]
        return new

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim or x.ndim not in (1, 2):
            raise DimensionMismatch(f"expected input of size {self.in_dim}, got shape {x.shape}")
        return x

    def forward_cached(self, x):
        """Forward pass that also returns the activations needed by backward."""
        x = self._check(x)
        acts = [x]
        h = x
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            h = h @ W + b
            if i < self.n_layers - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        if self.output_activation == TANH:
            y = self.output_scale * np.tanh(h)
        else:
            y = h
        return y, (acts, y)

    def forward(self, x) -> np.ndarray:
        return self.forward_cached(x)[0]

    __call__ = forward

    def backward(self, x, upstream, cache=None):
        """Reverse-mode gradients for a summed objective.

        ``upstream`` is d(objective)/d(output) with the same shape as the
        output. Returns ``(param_grads, input_grad)``, the former aligned
        with ``self.params``.
        """
        if cache is None:
            _, cache = self.forward_cached(x)
        acts, y = cache
        g = np.asarray(upstream, dtype=float)
        if g.shape != y.shape:
            raise DimensionMismatch(f"upstream gradient shape {g.shape} != output shape {y.shape}")
        if self.output_activation == TANH:
            t = y / self.output_scale
            g = g * self.output_scale * (1.0 - t * t)
        grads: list[Optional[np.ndarray]] = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            a_in = acts[i]
            W = self.params[2 * i]
            if a_in.ndim == 1:
                grads[2 * i] = np.outer(a_in, g)
                grads[2 * i + 1] = g.copy()
            else:
                grads[2 * i] = a_in.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ W.T
            if i > 0:
                g = g * (acts[i] > 0.0)
        return grads, g


@dataclass
class Adam:
    shapes: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros(s) for s in self.shapes]
            self.v = [np.zeros(s) for s in self.shapes]

    @classmethod
    def for_net(cls, net: Mlp, lr: float = 1e-3) -> "Adam":
        return cls([p.shape for p in net.params], lr=lr)


OptimizerState = Adam


def adam_step(params: list, grads: list, opt: Adam) -> list:
    """Bias-corrected Adam update applied in place; returns ``params``."""
    if len(params) != len(grads) or len(params) != len(opt.m):
        raise DimensionMismatch("params, grads and optimizer state must align")
    opt.step += 1
    c1 = 1.0 - opt.beta1**opt.step
    c2 = 1.0 - opt.beta2**opt.step
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params


def polyak_update(target: list, online: list, omega: float) -> list:
    """``target <- omega * target + (1 - omega) * online`` in place."""
    if not 0.0 <= omega <= 1.0:
        raise ValueError("omega must lie in [0, 1]")
    for t, o in zip(target, online):
        t *= omega
        t += (1.0 - omega) * o
    return target


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"DEZC"
CKPT_VERSION = 1
_ACTIVATION_CODES = {IDENTITY: 0, TANH: 1}


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedFile(f"{self.path}: unexpected end of file at byte {self.pos}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).astype(float)

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def save_checkpoint(path, nets: dict, opts: dict, meta: Optional[dict] = None) -> None:
    """Write networks, optimizer states (keyed by the net they belong to) and
    a JSON metadata blob. All numbers are little-endian f64 except counts."""
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(nets))]
    for name, net in nets.items():
        out.append(_pack_str(name))
        out.append(struct.pack("<I", len(net.layer_sizes)))
        out.append(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
        out.append(struct.pack("<Bd", _ACTIVATION_CODES[net.output_activation], net.output_scale))
    out.append(struct.pack("<I", len(opts)))
    for name, opt in opts.items():
        if name not in nets:
            raise KeyError(f"optimizer {name!r} has no matching network")
        out.append(_pack_str(name))
        out.append(struct.pack("<ddddQ", opt.lr, opt.beta1, opt.beta2, opt.eps, opt.step))
    out.append(_pack_str(json.dumps(meta or {}, sort_keys=True)))
    for net in nets.values():
        for p in net.params:
            out.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    for name, opt in opts.items():
        for arr in list(opt.m) + list(opt.v):
            out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path):
    """Inverse of ``save_checkpoint``; returns ``(nets, opts, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise BadMagic(f"{path}: not a checkpoint file (magic {raw[:4]!r})")
    rd = _Reader(raw, path)
    rd.take(4)
    version, n_nets = rd.unpack("<II")
    if version != CKPT_VERSION:
        raise VersionMismatch(f"{path}: file version {version}, reader version {CKPT_VERSION}")
    codes = {v: k for k, v in _ACTIVATION_CODES.items()}
    specs = []
    for _ in range(n_nets):
        name = rd.string()
        (n_sizes,) = rd.unpack("<I")
        sizes = list(rd.unpack(f"<{n_sizes}I"))
        code, scale = rd.unpack("<Bd")
        if code not in codes:
            raise BadMagic(f"{path}: unknown activation code {code}")
        specs.append((name, sizes, codes[code], scale))
    (n_opts,) = rd.unpack("<I")
    opt_specs = []
    for _ in range(n_opts):
        name = rd.string()
        lr, b1, b2, eps, step = rd.unpack("<ddddQ")
        opt_specs.append((name, lr, b1, b2, eps, step))
    meta = json.loads(rd.string())

    nets = {}
    for name, sizes, act, scale in specs:
        net = Mlp.__new__(Mlp)
        net.layer_sizes = sizes
        net.output_activation = act
        net.output_scale = scale
        net.params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            net.params.append(rd.array((fan_in, fan_out)))
            net.params.append(rd.array((fan_out,)))
        nets[name] = net
    opts = {}
    for name, lr, b1, b2, eps, step in opt_specs:
        if name not in nets:
            raise BadMagic(f"{path}: optimizer {name!r} has no matching network")
        shapes = [p.shape for p in nets[name].params]
        m = [rd.array(s) for s in shapes]
        v = [rd.array(s) for s in shapes]
        opts[name] = Adam(shapes, lr, b1, b2, eps, step, m, v)
    if rd.pos != len(raw):
        raise FileFormatError(f"{path}: {len(raw) - rd.pos} trailing bytes")
    return nets, opts, meta
