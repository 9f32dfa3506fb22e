"""The stochastic bounded adversary.

An image-to-image generator (style-transfer trunk: 9x9 stem, two stride-2
downsampling convolutions, residual blocks, two upsampling blocks, 9x9
output convolution; instance normalization throughout) that ingests an
input plus injected uniform noise and emits a raw perturbation. The view is
produced by projecting that perturbation onto the budget sphere and adding
it to the input.

One uniform noise channel is concatenated to the input and to the
activations before each residual block; each injection site draws an
independent sample at its own spatial resolution. The output layer is
linear: magnitude control belongs entirely to the projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .checkpoint import load_archive, save_archive
from .errors import ConfigInvalid, ShapeMismatch
from .perturb import (
    PerturbationBudget,
    apply_perturbation,
    dct2,
    idct2,
    project_to_budget,
)


@dataclass(frozen=True)
class ViewmakerConfig:
    in_channels: int = 3
    num_residual_blocks: int = 3
    budget: PerturbationBudget = field(default_factory=lambda: PerturbationBudget(epsilon=0.05))
    noise_dim: int = 1

    def __post_init__(self):
        if self.in_channels < 1:
            raise ConfigInvalid(f"in_channels must be >= 1, got {self.in_channels}")
        if self.num_residual_blocks < 1:
            raise ConfigInvalid(
                f"num_residual_blocks must be >= 1, got {self.num_residual_blocks}"
            )
        if self.noise_dim < 1:
            raise ConfigInvalid(f"noise_dim must be >= 1, got {self.noise_dim}")


class _ConvInstRelu(nn.Module):
    """Convolution + instance norm + ReLU; 9x9 convs use reflection padding."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1):
        super().__init__()
        if kernel == 9:
            self.pad = nn.ReflectionPad2d(4)
            padding = 0
        else:
            self.pad = nn.Identity()
            padding = kernel // 2
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=padding)
        self.norm = nn.InstanceNorm2d(out_ch, affine=True)

    def forward(self, x):
        return torch.relu(self.norm(self.conv(self.pad(x))))


class _ResidualBlock(nn.Module):
    """Style-transfer residual block; the skip carries the trunk activations
    while the convolutions also see the injected noise channels."""

    def __init__(self, channels: int, noise_dim: int):
        super().__init__()
        self.channels = channels
        self.conv1 = nn.Conv2d(channels + noise_dim, channels, 3, padding=1)
        self.norm1 = nn.InstanceNorm2d(channels, affine=True)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.InstanceNorm2d(channels, affine=True)

    def forward(self, x_with_noise):
        residual = x_with_noise[:, : self.channels]
        h = torch.relu(self.norm1(self.conv1(x_with_noise)))
        h = self.norm2(self.conv2(h))
        return residual + h


class _UpsampleConv(nn.Module):
    """Nearest-neighbor resize followed by convolution (avoids checkerboarding)."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm = nn.InstanceNorm2d(out_ch, affine=True)

    def forward(self, x):
        x = nn.functional.interpolate(x, scale_factor=2, mode="nearest")
        return torch.relu(self.norm(self.conv(x)))


class Viewmaker(nn.Module):
    def __init__(self, config: ViewmakerConfig):
        super().__init__()
        self.config = config
        noise = config.noise_dim
        self.stem = _ConvInstRelu(config.in_channels + noise, 32, kernel=9)
        self.down1 = _ConvInstRelu(32, 64, kernel=3, stride=2)
        self.down2 = _ConvInstRelu(64, 128, kernel=3, stride=2)
        self.blocks = nn.ModuleList(
            _ResidualBlock(128, noise) for _ in range(config.num_residual_blocks)
        )
        self.up1 = _UpsampleConv(128, 64)
        self.up2 = _UpsampleConv(64, 32)
        self.pad_out = nn.ReflectionPad2d(4)
        self.conv_out = nn.Conv2d(32, config.in_channels, 9)  # linear output

    def _noise(self, batch: int, height: int, width: int, ref: torch.Tensor,
               generator: torch.Generator | None) -> torch.Tensor:
        return torch.rand(
            batch, self.config.noise_dim, height, width,
            generator=generator, dtype=ref.dtype, device=ref.device,
        )

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        """Raw (unprojected) perturbation for a B x C x H x W batch."""
        if x.dim() != 4:
            raise ShapeMismatch(f"expected B x C x H x W input, got shape {tuple(x.shape)}")
        if x.shape[1] != self.config.in_channels:
            raise ShapeMismatch(
                f"viewmaker expects {self.config.in_channels} channels, got {x.shape[1]}"
            )
        b, _, h, w = x.shape
        z = torch.cat([x, self._noise(b, h, w, x, generator)], dim=1)
        z = self.stem(z)
        z = self.down1(z)
        z = self.down2(z)
        for block in self.blocks:
            site_noise = self._noise(b, z.shape[2], z.shape[3], x, generator)
            z = block(torch.cat([z, site_noise], dim=1))
        z = self.up1(z)
        z = self.up2(z)
        return self.conv_out(self.pad_out(z))


def build_viewmaker(config: ViewmakerConfig, seed: int | None = None) -> Viewmaker:
    """Construct a viewmaker, optionally with deterministic initialization."""
    if seed is None:
        return Viewmaker(config)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return Viewmaker(config)


def generate_view(
    model: Viewmaker, x: torch.Tensor, generator: torch.Generator | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """One stochastic view of x plus the projected (pre-clamp) perturbation.

    Differentiable end to end with respect to both the viewmaker parameters
    and x. Accepts a single C x H x W tensor or a batch.
    """
    single = x.dim() == 3
    batch = x.unsqueeze(0) if single else x
    budget = model.config.budget
    raw = model(batch, generator)
    if budget.domain == "dct":
        perturbation = project_to_budget(raw, budget)
        view = idct2(dct2(batch) + perturbation)
        if budget.clamp:
            view = view.clamp(0.0, 1.0)
    else:
        perturbation = project_to_budget(raw, budget)
        view = apply_perturbation(batch, perturbation, budget)
    if single:
        return view.squeeze(0), perturbation.squeeze(0)
    return view, perturbation


@dataclass
class ViewPair:
    """Two stochastically generated views of one input, with provenance."""

    view_a: torch.Tensor
    view_b: torch.Tensor
    source: str


def viewmaker_pair(
    model: Viewmaker, x: torch.Tensor, generator: torch.Generator | None = None
) -> ViewPair:
    """Two independent stochastic views of the same input."""
    view_a, _ = generate_view(model, x, generator)
    view_b, _ = generate_view(model, x, generator)
    return ViewPair(view_a=view_a, view_b=view_b, source="viewmaker")


def save_viewmaker(model: Viewmaker, path) -> None:
    save_archive(path, kind="viewmaker", config=model.config, state_dict=model.state_dict())


def load_viewmaker(path) -> Viewmaker:
    config, state_dict = load_archive(path, kind="viewmaker", config_cls=ViewmakerConfig)
    model = Viewmaker(config)
    model.load_state_dict(state_dict)
    return model
