"""Encoder backbones and the two feature surfaces used downstream.

Three ResNet variants:

- ``small_resnet18``: the CIFAR-style ResNet-18 with a 3x3 stride-1 stem and
  no initial max-pool, for 32x32 inputs (pre-pool features are 512*4*4).
- ``standard_resnet18``: stock torchvision ResNet-18.
- ``resnet50_mlp``: stock ResNet-50 with a 2-layer MLP head (hidden 2048).

The contrastive loss consumes the unit-normalized embedding head; linear
evaluation consumes the flattened pre-pooling features of the last
convolutional stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn
from torchvision.models import resnet18, resnet50

from .checkpoint import load_archive, save_archive
from .errors import ConfigInvalid, ShapeMismatch

VARIANTS = ("small_resnet18", "standard_resnet18", "resnet50_mlp")


@dataclass(frozen=True)
class EncoderConfig:
    variant: str = "small_resnet18"
    input_channels: int = 3
    embedding_dim: int = 128
    mlp_hidden: int = 2048

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigInvalid(f"unknown encoder variant {self.variant!r}; expected one of {VARIANTS}")
        if self.input_channels < 1:
            raise ConfigInvalid(f"input_channels must be >= 1, got {self.input_channels}")
        if self.embedding_dim < 1 or self.mlp_hidden < 1:
            raise ConfigInvalid("embedding_dim and mlp_hidden must be >= 1")


class FeatureBundle(NamedTuple):
    """Unit-normalized contrastive embedding plus flattened pre-pool features."""

    embedding: torch.Tensor
    prepool: torch.Tensor


class Encoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        if config.variant == "resnet50_mlp":
            backbone = resnet50(weights=None)
            feature_dim = 2048
            head = nn.Sequential(
                nn.Linear(feature_dim, config.mlp_hidden),
                nn.ReLU(inplace=True),
                nn.Linear(config.mlp_hidden, config.embedding_dim),
            )
        else:
            backbone = resnet18(weights=None)
            feature_dim = 512
            head = nn.Linear(feature_dim, config.embedding_dim)

        if config.variant == "small_resnet18":
            # CIFAR stem: 3x3 stride-1 convolution, no initial max-pool.
            backbone.conv1 = nn.Conv2d(
                config.input_channels, 64, kernel_size=3, stride=1, padding=1, bias=False
            )
            backbone.maxpool = nn.Identity()
        elif config.input_channels != 3:
            backbone.conv1 = nn.Conv2d(
                config.input_channels, 64, kernel_size=7, stride=2, padding=3, bias=False
            )
        self.backbone = backbone
        self.head = head

    def forward(self, x: torch.Tensor) -> FeatureBundle:
        if x.dim() != 4:
            raise ShapeMismatch(f"expected B x C x H x W input, got shape {tuple(x.shape)}")
        if x.shape[1] != self.config.input_channels:
            raise ShapeMismatch(
                f"encoder expects {self.config.input_channels} channels, got {x.shape[1]}"
            )
        net = self.backbone
        h = net.relu(net.bn1(net.conv1(x)))
        h = net.maxpool(h)
        h = net.layer1(h)
        h = net.layer2(h)
        h = net.layer3(h)
        h = net.layer4(h)
        prepool = torch.flatten(h, 1)
        pooled = torch.flatten(net.avgpool(h), 1)
        embedding = F.normalize(self.head(pooled), dim=-1)
        return FeatureBundle(embedding=embedding, prepool=prepool)


def build_encoder(config: EncoderConfig, seed: int | None = None) -> Encoder:
    """Construct an encoder, optionally with deterministic initialization."""
    if seed is None:
        return Encoder(config)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return Encoder(config)


def encode(encoder: Encoder, x: torch.Tensor) -> FeatureBundle:
    """Deterministic evaluation-mode forward pass (no gradients, no BN updates)."""
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            return encoder(x)
    finally:
        encoder.train(was_training)


def save_encoder(encoder: Encoder, path) -> None:
    save_archive(path, kind="encoder", config=encoder.config, state_dict=encoder.state_dict())


def load_encoder(path) -> Encoder:
    config, state_dict = load_archive(path, kind="encoder", config_cls=EncoderConfig)
    encoder = Encoder(config)
    encoder.load_state_dict(state_dict)
    return encoder
