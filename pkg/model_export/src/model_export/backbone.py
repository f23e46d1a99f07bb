"""Source models: torchvision residual networks cut at the pool layer.

The exported graph consumes raw [0, 255] RGB pixel values in NCHW
layout, so the standard ImageNet input normalization must travel inside
the graph. :class:`HeadlessDescriptor` prepends that normalization as a
per-channel affine stage and ends the forward pass at the flattened
global-average-pool output, the 2048-length descriptor; the fully
connected classification head never enters the trace.
"""

from __future__ import annotations

import torch
from torch import nn
from torchvision import models

from model_export.errors import ExportError

INPUT_SIZE = 224
DESCRIPTOR_LEN = 2048

# ImageNet channel statistics for inputs scaled to [0, 1]
CHANNEL_MEAN = (0.485, 0.456, 0.406)
CHANNEL_STD = (0.229, 0.224, 0.225)

_BUILDERS = {
    "rn50": (models.resnet50, "IMAGENET1K_V2"),
    "rn101": (models.resnet101, "IMAGENET1K_V2"),
    "rn152": (models.resnet152, "IMAGENET1K_V2"),
}

VARIANTS = tuple(_BUILDERS)


class HeadlessDescriptor(nn.Module):
    """Normalization stage plus the network up to global average pooling."""

    def __init__(self, net: nn.Module):
        super().__init__()
        mean = torch.tensor(CHANNEL_MEAN).reshape(1, 3, 1, 1)
        std = torch.tensor(CHANNEL_STD).reshape(1, 3, 1, 1)
        # raw pixels x map to (x/255 - mean)/std = x * scale - shift
        self.register_buffer("scale", 1.0 / (255.0 * std))
        self.register_buffer("shift", mean / std)
        self.net = net

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = x * self.scale - self.shift
        net = self.net
        h = net.maxpool(net.relu(net.bn1(net.conv1(z))))
        h = net.layer4(net.layer3(net.layer2(net.layer1(h))))
        return torch.flatten(net.avgpool(h), 1)


def _calibrate(net: nn.Module) -> None:
    """Populate batch-norm running statistics with a few noise batches.

    Freshly initialized norm layers are identity maps; without this a
    randomly initialized export would not exercise the normalization
    constants that a trained network carries.
    """
    net.train()
    with torch.no_grad():
        for _ in range(2):
            net(torch.randn(2, 3, 128, 128))
    net.eval()


def build_source_model(
    variant: str, weights: str = "pretrained", seed: int = 0
) -> HeadlessDescriptor:
    """Construct the torch-side descriptor model for one variant.

    ``weights`` is ``"pretrained"`` for the published ImageNet weights
    (fetched by torchvision), ``"random"`` for a seeded random
    initialization, or a path to a saved ``state_dict`` of the full
    network.
    """
    try:
        builder, pretrained = _BUILDERS[variant]
    except KeyError:
        raise ExportError(
            f"unknown variant {variant!r}, expected one of {', '.join(VARIANTS)}"
        ) from None
    torch.manual_seed(seed)
    if weights == "pretrained":
        try:
            net = builder(weights=pretrained)
        except Exception as exc:
            raise ExportError(
                f"fetching pretrained {variant} weights failed: {exc}"
            ) from exc
    elif weights == "random":
        net = builder(weights=None)
        _calibrate(net)
    else:
        net = builder(weights=None)
        try:
            state = torch.load(weights, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        except (OSError, RuntimeError, ValueError) as exc:
            raise ExportError(f"loading weights from {weights} failed: {exc}") from exc
    net.eval()
    model = HeadlessDescriptor(net)
    model.eval()
    return model
