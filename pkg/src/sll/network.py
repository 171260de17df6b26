"""Sequential networks assembled from declarative layer specs."""

from dataclasses import dataclass, field

import numpy as np

from .layers import (Layer, Conv2d, ConvTranspose2d, Linear, ReLU, Tanh,
                     MaxPool2d, BatchNorm2d, ResBlock, ShapeError, ensure_finite)

LAYER_KINDS = ("conv2d", "transposed-conv2d", "linear", "relu", "tanh",
               "maxpool2d", "batchnorm2d", "resblock")


@dataclass
class LayerSpec:
    kind: str
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_json(self):
        return {"kind": self.kind, **self.hyper}

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        return cls(d.pop("kind"), d)


def conv(out_ch, kernel=3, stride=1, pad=None, bias=True):
    return LayerSpec("conv2d", {"out_channels": out_ch, "kernel": kernel,
                                "stride": stride, "pad": pad, "bias": bias})


def convT(out_ch, kernel=4, stride=2, pad=None):
    return LayerSpec("transposed-conv2d", {"out_channels": out_ch, "kernel": kernel,
                                           "stride": stride, "pad": pad})


def linear(out_features, init_scale=1.0):
    h = {"out_features": out_features}
    if init_scale != 1.0:
        h["init_scale"] = init_scale
    return LayerSpec("linear", h)


def relu():
    return LayerSpec("relu")


def tanh():
    return LayerSpec("tanh")


def maxpool(window=2):
    return LayerSpec("maxpool2d", {"window": window})


def batchnorm():
    return LayerSpec("batchnorm2d")


def resblock():
    return LayerSpec("resblock")


def _build_layer(spec: LayerSpec, in_shape, rng, dtype):
    h = spec.hyper
    if spec.kind == "conv2d":
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d needs [C,H,W] input, got {in_shape}")
        return Conv2d(in_shape[0], h["out_channels"], h.get("kernel", 3),
                      h.get("stride", 1), h.get("pad"), h.get("bias", True),
                      rng=rng, dtype=dtype)
    if spec.kind == "transposed-conv2d":
        if len(in_shape) != 3:
            raise ShapeError(f"transposed-conv2d needs [C,H,W] input, got {in_shape}")
        return ConvTranspose2d(in_shape[0], h["out_channels"], h.get("kernel", 4),
                               h.get("stride", 2), h.get("pad"), rng=rng, dtype=dtype)
    if spec.kind == "linear":
        return Linear(int(np.prod(in_shape)), h["out_features"], rng=rng,
                      dtype=dtype, init_scale=h.get("init_scale", 1.0))
    if spec.kind == "relu":
        return ReLU()
    if spec.kind == "tanh":
        return Tanh()
    if spec.kind == "maxpool2d":
        return MaxPool2d(h.get("window", 2))
    if spec.kind == "batchnorm2d":
        if len(in_shape) != 3:
            raise ShapeError(f"batchnorm2d needs [C,H,W] input, got {in_shape}")
        return BatchNorm2d(in_shape[0], dtype=dtype)
    if spec.kind == "resblock":
        if len(in_shape) != 3:
            raise ShapeError(f"resblock needs [C,H,W] input, got {in_shape}")
        ch = h.get("channels", in_shape[0])
        if ch != in_shape[0]:
            raise ShapeError(f"resblock channels {ch} != input channels {in_shape[0]}")
        return ResBlock(ch, rng=rng, dtype=dtype)
    raise ValueError(spec.kind)


class Network:
    """An ordered chain of layers with shared train/eval mode.

    ``forward`` in train mode retains every layer's activations for a later
    ``backward``; params are only modified by an explicit optimizer step.
    """

    def __init__(self, layers, input_shape, specs=None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.specs = specs
        self.training = True
        self._ready = False
        shape = self.input_shape
        for l in self.layers:
            shape = l.out_shape(shape)
        self.output_shape = shape

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    @property
    def params(self):
        return [p for l in self.layers for p in l.params]

    @property
    def grads(self):
        return [g for l in self.layers for g in l.grads]

    def param_count(self):
        return sum(p.size for p in self.params)

    def forward(self, x, train=None):
        train = self.training if train is None else train
        if x.shape[0] < 1 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"expected input [N,{self.input_shape}], got {x.shape}")
        for l in self.layers:
            x = l.forward(x, train)
        ensure_finite(x, "network output")
        if train:
            self._ready = True
        return x

    def backward(self, upstream):
        """Returns (input gradient, param gradient list matching ``params``)."""
        if not self._ready:
            raise RuntimeError("backward called before a train-mode forward")
        if tuple(upstream.shape[1:]) != tuple(self.output_shape):
            raise ShapeError(f"upstream shape {upstream.shape} != output {self.output_shape}")
        d = upstream
        for l in reversed(self.layers):
            d = l.backward(d)
        return d, [g.copy() for l in self.layers for g in l.grads]

    def state_dict(self):
        out = {}
        for i, l in enumerate(self.layers):
            for name, p in zip(l.param_names(), l.params):
                out[f"{i:02d}.{name}"] = p
            if isinstance(l, BatchNorm2d):
                out[f"{i:02d}.running_mean"] = l.running_mean
                out[f"{i:02d}.running_var"] = l.running_var
            if isinstance(l, ResBlock):
                for tag, bn in (("bn1", l.bn1), ("bn2", l.bn2)):
                    out[f"{i:02d}.{tag}.running_mean"] = bn.running_mean
                    out[f"{i:02d}.{tag}.running_var"] = bn.running_var
        return out

    def load_state_dict(self, state):
        own = self.state_dict()
        if set(own) != set(state):
            missing = set(own) ^ set(state)
            raise KeyError(f"state dict mismatch: {sorted(missing)[:4]}...")
        for k, dst in own.items():
            src = state[k]
            if dst.shape != src.shape:
                raise ShapeError(f"shape mismatch for {k}: {dst.shape} vs {src.shape}")
            dst[...] = src.astype(dst.dtype)


def build_network(specs, input_shape, rng, dtype=np.float32) -> Network:
    layers = []
    shape = tuple(input_shape)
    for spec in specs:
        layer = _build_layer(spec, shape, rng, dtype)
        layers.append(layer)
        shape = layer.out_shape(shape)
    return Network(layers, input_shape, specs=list(specs))


def subnetwork(net: Network, start: int, stop: int) -> Network:
    """A view over a slice of ``net``'s layers (parameters are shared)."""
    layers = net.layers[start:stop]
    in_shape = net.input_shape
    for l in net.layers[:start]:
        in_shape = l.out_shape(in_shape)
    return Network(layers, in_shape)
