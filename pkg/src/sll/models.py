"""Architecture builders for the split task model and the attack networks.

The task model is a VGG-style stack of conv/bn/relu/pool blocks with a linear
head; splitting after block k gives the client k blocks.  Attack nets adapt to
whatever feature shape appears at the split.
"""

import numpy as np

from .network import (conv, convT, linear, relu, tanh, maxpool, batchnorm,
                      resblock, build_network, subnetwork)

SUBSTITUTE_FAMILIES = ("vgg", "res", "dense")

SPECS_PER_BLOCK = 4  # conv, batchnorm, relu, maxpool


def target_specs(image_size=16, base_channels=8, num_blocks=4, num_classes=4):
    """Full task model: num_blocks conv blocks then a linear head."""
    if image_size % (2 ** num_blocks) != 0:
        raise ValueError(f"{num_blocks} pooling stages do not fit {image_size}px")
    specs = []
    for b in range(num_blocks):
        specs += [conv(base_channels * 2 ** b, bias=False), batchnorm(), relu(),
                  maxpool(2)]
    specs.append(linear(num_classes))
    return specs


def split_index(split_point, num_blocks=4):
    """Layer index of the client/server boundary for split_point in 1..blocks."""
    if not 1 <= split_point <= num_blocks:
        raise ValueError(f"split_point must be 1..{num_blocks}")
    return SPECS_PER_BLOCK * split_point


def smashed_shape(image_size, base_channels, split_point):
    side = image_size // 2 ** split_point
    return (base_channels * 2 ** (split_point - 1), side, side)


def substitute_specs(family, split_point, image_size=16, base_channels=8):
    """A client stand-in whose output shape matches the real split features.

    Three block families (the substitute-robustness sweep): plain conv stacks,
    residual blocks, and a channel-growth chain standing in for dense blocks
    (true dense concatenation needs multi-input wiring this substrate lacks).
    """
    if family not in SUBSTITUTE_FAMILIES:
        raise ValueError(f"unknown substitute family {family!r}")
    specs = []
    for b in range(split_point):
        ch = base_channels * 2 ** b
        if family == "vgg":
            specs += [conv(ch, bias=False), batchnorm(), relu(), maxpool(2)]
        elif family == "res":
            specs += [conv(ch, bias=False), batchnorm(), relu(), resblock(),
                      maxpool(2)]
        else:  # dense: grow channels in two hops before pooling
            specs += [conv(max(ch // 2, 2)), relu(), conv(ch, bias=False),
                      batchnorm(), relu(), maxpool(2)]
    return specs


def discriminator_specs(feature_shape):
    """Scalar-logit critic over smashed feature maps; adapts to the split's
    spatial size. Deliberately norm-free: batch statistics would couple the
    two sides of every critic batch and make its gradient field erratic.
    The zero-init head makes initial scores side-blind."""
    c, h, w = feature_shape
    specs = []
    ch = c
    while h > 2:
        ch = min(4 * ch, 64)
        specs += [conv(ch, stride=2), relu()]
        h //= 2
    specs += [conv(64), relu(), linear(1, init_scale=0.0)]
    return specs


def inverse_specs(feature_shape, image_size=16, out_channels=3):
    """Decoder from smashed features back to image space; tanh output."""
    c, h, w = feature_shape
    if h > image_size:
        raise ValueError(f"feature side {h} exceeds image size {image_size}")
    specs = []
    ch = c
    while h < image_size:
        ch = max(ch // 2, 16)
        specs += [convT(ch), relu()]
        h *= 2
    specs += [conv(out_channels), tanh()]
    return specs


def build_split_pair(specs, split_idx, input_shape, rng, dtype=np.float32):
    """One full network built from a single stream, plus client/server views.

    Both views share parameters with the full net, so split training and
    monolithic training of the same seed start from identical weights.
    """
    full = build_network(specs, input_shape, rng, dtype=dtype)
    client = subnetwork(full, 0, split_idx)
    server = subnetwork(full, split_idx, len(full.layers))
    return full, client, server
