"""Parameterised layers, the parameter store and checkpoint files."""
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .._fileio import read_container, require_keys, write_container
from ..errors import MalformedFile, ShapeMismatch
from . import functional as F
from .tensor import Tensor, add, relu, reshape, silu, transpose

CHECKPOINT_MAGIC = "KTRECON-PARAMS 1"


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def he_normal(rng, shape, fan_in):
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


ACTIVATIONS = {"silu": silu, "relu": relu}


class Module:
    """Minimal container: parameters are discovered from attributes in
    definition order, recursing into sub-modules and lists of them."""

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            yield from _named(val, prefix + key)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _named(val, name):
    if isinstance(val, Tensor) and val.requires_grad:
        yield name, val
    elif isinstance(val, Module):
        yield from val.named_parameters(name + ".")
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            yield from _named(item, f"{name}.{i}")


def group_count(channels, groups=8):
    if channels < groups:
        return 1
    return math.gcd(channels, groups)


class ConvSpatial(Module):
    def __init__(self, cin, cout, rng, zero=False):
        shape = (cout, cin, 1, 3, 3)
        w = np.zeros(shape) if zero else he_normal(rng, shape, cin * 9)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(cout))

    def forward(self, x):
        return F.conv_spatial(x, self.weight, self.bias)


class ConvDown(Module):
    def __init__(self, cin, cout, rng):
        self.weight = parameter(he_normal(rng, (cout, cin, 1, 4, 4), cin * 16))
        self.bias = parameter(np.zeros(cout))

    def forward(self, x):
        return F.conv_down(x, self.weight, self.bias)


class ConvUp(Module):
    def __init__(self, cin, cout, rng):
        # each output pixel of a stride-2 transposed 4x4 conv sees 2x2 taps
        self.weight = parameter(he_normal(rng, (cin, cout, 1, 4, 4), cin * 4))
        self.bias = parameter(np.zeros(cout))

    def forward(self, x):
        return F.conv_up(x, self.weight, self.bias)


class ConvPointwise(Module):
    def __init__(self, cin, cout, rng, zero=False):
        shape = (cout, cin, 1, 1, 1)
        self.weight = parameter(np.zeros(shape) if zero else he_normal(rng, shape, cin))
        self.bias = parameter(np.zeros(cout))

    def forward(self, x):
        return F.conv_pointwise(x, self.weight, self.bias)


class GroupNorm(Module):
    def __init__(self, channels, groups=8):
        self.groups = group_count(channels, groups)
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))

    def forward(self, x):
        return F.group_norm(x, self.gamma, self.beta, self.groups)


class Identity(Module):
    def forward(self, x):
        return x


class ResnetBlock(Module):
    """(norm -> activation -> conv) twice, plus a skip connection.

    The skip is a 1x1x1 projection when the channel count changes. The second
    convolution starts at zero so a fresh block is the identity (or the
    projection) of its input.
    """

    def __init__(self, cin, cout, rng, activation="silu", norm=True, spatial=True):
        conv = ConvSpatial if spatial else ConvPointwise
        self.norm1 = GroupNorm(cin) if norm else Identity()
        self.conv1 = conv(cin, cout, rng)
        self.norm2 = GroupNorm(cout) if norm else Identity()
        self.conv2 = conv(cout, cout, rng, zero=True)
        self.skip = ConvPointwise(cin, cout, rng) if cin != cout else None
        self.act = ACTIVATIONS[activation]
        self.cin, self.cout = cin, cout

    def forward(self, x):
        if x.shape[1] != self.cin:
            raise ShapeMismatch(f"resnet block expects {self.cin} channels, got {x.shape[1]}")
        h = self.conv1(self.act(self.norm1(x)))
        h = self.conv2(self.act(self.norm2(h)))
        return add(h, x if self.skip is None else self.skip(x))


@dataclass(frozen=True)
class AttentionConfig:
    heads: int = 8
    head_dim: int = 32
    axis: str = "SPATIAL"

    @property
    def width(self):
        return self.heads * self.head_dim


class SelfAttention(Module):
    """Multi-head scaled dot-product self-attention with a residual add.

    Input and output are ``(N, S, D)``: softmax runs over ``S``. There is no
    positional encoding, so the layer is equivariant to permutations of ``S``.
    """

    def __init__(self, dim, cfg, rng):
        width = cfg.width
        std = 1.0 / math.sqrt(dim)
        self.wq = parameter(rng.normal(0.0, std, (dim, width)))
        self.wk = parameter(rng.normal(0.0, std, (dim, width)))
        self.wv = parameter(rng.normal(0.0, std, (dim, width)))
        self.bq = parameter(np.zeros(width))
        self.bk = parameter(np.zeros(width))
        self.bv = parameter(np.zeros(width))
        self.wo = parameter(np.zeros((width, dim)))
        self.bo = parameter(np.zeros(dim))
        self.cfg = cfg
        self.dim = dim

    def _heads(self, t, N, S):
        t = reshape(t, (N, S, self.cfg.heads, self.cfg.head_dim))
        return transpose(t, (0, 2, 1, 3))

    def project(self, x):
        """Per-head query, key and value tensors, each ``(N, heads, S, d)``."""
        N, S, _ = x.shape
        q = self._heads(F.linear(x, self.wq, self.bq), N, S)
        k = self._heads(F.linear(x, self.wk, self.bk), N, S)
        v = self._heads(F.linear(x, self.wv, self.bv), N, S)
        return q, k, v

    def weights(self, x):
        q, k, _ = self.project(Tensor(np.asarray(getattr(x, "data", x))))
        return F.attention_weights(q.data, k.data)

    def forward(self, x):
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise ShapeMismatch(f"self-attention expects (N, S, {self.dim}), got {x.shape}")
        N, S, _ = x.shape
        q, k, v = self.project(x)
        a = F.scaled_dot_product_attention(q, k, v)
        a = reshape(transpose(a, (0, 2, 1, 3)), (N, S, self.cfg.width))
        return add(x, F.linear(a, self.wo, self.bo))


class AttentionSpatial(Module):
    """Self-attention over the H*W pixels of each frame (B*T as batch)."""

    def __init__(self, channels, cfg, rng):
        self.attn = SelfAttention(channels, cfg, rng)

    def forward(self, x):
        B, C, T, H, W = x.shape
        seq = reshape(transpose(x, (0, 2, 3, 4, 1)), (B * T, H * W, C))
        out = self.attn(seq)
        return transpose(reshape(out, (B, T, H, W, C)), (0, 4, 1, 2, 3))


class AttentionTemporal(Module):
    """Self-attention over the T frames of each pixel (B*H*W as batch)."""

    def __init__(self, channels, cfg, rng):
        self.attn = SelfAttention(channels, cfg, rng)

    def forward(self, x):
        B, C, T, H, W = x.shape
        seq = reshape(transpose(x, (0, 3, 4, 2, 1)), (B * H * W, T, C))
        out = self.attn(seq)
        return transpose(reshape(out, (B, H, W, T, C)), (0, 4, 3, 1, 2))


class ParamStore:
    """Ordered ``name -> array`` mapping with a binary checkpoint format."""

    def __init__(self, arrays=None, meta=None):
        self.arrays = OrderedDict(arrays or ())
        self.meta = dict(meta or {})

    @classmethod
    def from_module(cls, module, meta=None):
        return cls(((n, p.data.copy()) for n, p in module.named_parameters()), meta)

    def load_into(self, module):
        params = OrderedDict(module.named_parameters())
        missing = [n for n in params if n not in self.arrays]
        if missing:
            raise ShapeMismatch(f"checkpoint lacks parameters: {', '.join(missing[:5])}")
        for name, p in params.items():
            arr = self.arrays[name]
            if arr.shape != p.shape:
                raise ShapeMismatch(f"{name}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data = arr.copy()

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def __len__(self):
        return len(self.arrays)

    def names(self):
        return list(self.arrays)

    def count(self):
        return int(sum(a.size for a in self.arrays.values()))

    def save(self, path):
        table = [[n, list(a.shape)] for n, a in self.arrays.items()]
        payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in self.arrays.values())
        write_container(path, CHECKPOINT_MAGIC, {"params": table, "meta": self.meta}, payload)

    @classmethod
    def load(cls, path):
        header, payload = read_container(path, CHECKPOINT_MAGIC)
        require_keys(header, ("params",), path)
        arrays, offset = OrderedDict(), 0
        try:
            for name, shape in header["params"]:
                n = int(np.prod(shape)) if shape else 1
                chunk = payload[offset:offset + 8 * n]
                if len(chunk) != 8 * n:
                    raise MalformedFile(f"{path}: truncated payload at {name}")
                arrays[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
                offset += 8 * n
        except (TypeError, ValueError) as exc:
            raise MalformedFile(f"{path}: bad parameter table ({exc})") from None
        if offset != len(payload):
            raise MalformedFile(f"{path}: {len(payload) - offset} trailing payload bytes")
        return cls(arrays, header.get("meta"))
