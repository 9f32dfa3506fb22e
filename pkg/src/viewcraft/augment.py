"""Expert (handcrafted) view pipelines for images, waveforms, and spectrograms.

All pipelines are pure functions of their inputs plus an explicit generator,
so a fixed seed makes them deterministic. Augmentation parameters are
sampled here (not delegated to library transform objects) so the whole
training loop can share one reproducible random stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode

from .errors import ConfigInvalid, EmptyInput, MaskTooLarge, ShapeMismatch


def _uniform(low: float, high: float, generator) -> float:
    return low + (high - low) * torch.rand((), generator=generator).item()


def _randint(low: int, high: int, generator) -> int:
    """Uniform integer in [low, high] inclusive."""
    if high < low:
        return low
    return int(torch.randint(low, high + 1, (), generator=generator).item())


def _coin(prob: float, generator) -> bool:
    if prob <= 0:
        return False
    if prob >= 1:
        return True
    return torch.rand((), generator=generator).item() < prob


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImageExpertPolicy:
    """The SimCLR handcrafted pipeline: crop/resize, flip, color jitter,
    grayscale, blur. Jitter strengths follow the reference defaults
    (0.8 / 0.8 / 0.8 / 0.2 applied with probability 0.8; grayscale 0.2);
    blur uses a kernel of ~10% of the image side.
    """

    crop_scale: tuple[float, float] = (0.08, 1.0)
    flip_prob: float = 0.5
    jitter_prob: float = 0.8
    brightness: float = 0.8
    contrast: float = 0.8
    saturation: float = 0.8
    hue: float = 0.2
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    blur_kernel: int = 3
    blur_sigma: tuple[float, float] = (0.1, 2.0)

    def __post_init__(self):
        for name in ("flip_prob", "jitter_prob", "grayscale_prob", "blur_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigInvalid(f"{name} must be in [0, 1], got {value}")
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigInvalid(f"crop_scale must lie within (0, 1], got {self.crop_scale}")

    @classmethod
    def crop_flip_only(cls) -> "ImageExpertPolicy":
        """The cropping-and-flipping subset (no color ops, no blur)."""
        return cls(jitter_prob=0.0, grayscale_prob=0.0, blur_prob=0.0)

    def identity(self) -> "ImageExpertPolicy":
        """Degenerate policy that leaves inputs unchanged (used in tests)."""
        return replace(
            self, crop_scale=(1.0, 1.0), flip_prob=0.0, jitter_prob=0.0,
            grayscale_prob=0.0, blur_prob=0.0,
        )


def _sample_crop_box(height: int, width: int, scale: tuple[float, float], generator):
    """Area-and-aspect crop sampling with center-crop fallback."""
    area = height * width
    log_ratio = (math.log(3.0 / 4.0), math.log(4.0 / 3.0))
    for _ in range(10):
        target_area = area * _uniform(scale[0], scale[1], generator)
        aspect = math.exp(_uniform(log_ratio[0], log_ratio[1], generator))
        w = int(round(math.sqrt(target_area * aspect)))
        h = int(round(math.sqrt(target_area / aspect)))
        if 0 < w <= width and 0 < h <= height:
            top = _randint(0, height - h, generator)
            left = _randint(0, width - w, generator)
            return top, left, h, w
    return 0, 0, height, width


def image_expert_view(
    x: torch.Tensor, policy: ImageExpertPolicy, generator: torch.Generator
) -> torch.Tensor:
    """One expert view of a C x H x W image in [0, 1]; output has the same shape."""
    if x.dim() != 3:
        raise ShapeMismatch(f"expected C x H x W image, got shape {tuple(x.shape)}")
    _, height, width = x.shape

    top, left, h, w = _sample_crop_box(height, width, policy.crop_scale, generator)
    if (top, left, h, w) != (0, 0, height, width):
        view = TF.resized_crop(
            x, top, left, h, w, [height, width],
            interpolation=InterpolationMode.BILINEAR, antialias=True,
        )
    else:
        view = x.clone()

    if _coin(policy.flip_prob, generator):
        view = TF.hflip(view)

    if _coin(policy.jitter_prob, generator):
        order = torch.randperm(4, generator=generator).tolist()
        for op in order:
            if op == 0 and policy.brightness > 0:
                view = TF.adjust_brightness(
                    view, _uniform(max(0.0, 1 - policy.brightness), 1 + policy.brightness, generator)
                )
            elif op == 1 and policy.contrast > 0:
                view = TF.adjust_contrast(
                    view, _uniform(max(0.0, 1 - policy.contrast), 1 + policy.contrast, generator)
                )
            elif op == 2 and policy.saturation > 0:
                view = TF.adjust_saturation(
                    view, _uniform(max(0.0, 1 - policy.saturation), 1 + policy.saturation, generator)
                )
            elif op == 3 and policy.hue > 0:
                view = TF.adjust_hue(view, _uniform(-policy.hue, policy.hue, generator))

    if _coin(policy.grayscale_prob, generator):
        view = TF.rgb_to_grayscale(view, num_output_channels=view.shape[0])

    if _coin(policy.blur_prob, generator):
        sigma = _uniform(policy.blur_sigma[0], policy.blur_sigma[1], generator)
        view = TF.gaussian_blur(view, kernel_size=policy.blur_kernel, sigma=sigma)

    return view.clamp(0.0, 1.0)


# ---------------------------------------------------------------------------
# Waveforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WaveformPolicy:
    """Time-domain views: a random contiguous crop plus additive Gaussian noise."""

    crop_scale: tuple[float, float] = (0.08, 1.0)
    noise_scale: float = 1.0

    def __post_init__(self):
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigInvalid(f"crop_scale must lie within (0, 1], got {self.crop_scale}")
        if self.noise_scale < 0:
            raise ConfigInvalid(f"noise_scale must be >= 0, got {self.noise_scale}")


def waveform_view(
    w: torch.Tensor, policy: WaveformPolicy, generator: torch.Generator
) -> torch.Tensor:
    """Random contiguous crop of relative length in crop_scale, then noise."""
    if w.numel() == 0:
        raise EmptyInput("cannot view an empty waveform")
    w = w.reshape(-1)
    n = w.shape[0]
    length = max(1, int(round(n * _uniform(policy.crop_scale[0], policy.crop_scale[1], generator))))
    length = min(length, n)
    start = _randint(0, n - length, generator)
    crop = w[start : start + length]
    if policy.noise_scale > 0:
        crop = crop + policy.noise_scale * torch.randn(
            crop.shape, generator=generator, dtype=crop.dtype
        )
    else:
        crop = crop.clone()
    return crop


# ---------------------------------------------------------------------------
# Spectrograms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralMaskPolicy:
    """Frequency- and time-masking views, with optional additive noise.

    ``shared_mask_across_channels`` applies identical band positions to all
    channels (required for multi-sensor spectrogram stacks).
    """

    mask_factor: int = 40
    apply_noise: bool = False
    noise_scale: float = 1.0
    shared_mask_across_channels: bool = True

    def __post_init__(self):
        if self.mask_factor < 0:
            raise ConfigInvalid(f"mask_factor must be >= 0, got {self.mask_factor}")


def _mask_band(s: torch.Tensor, axis: int, mask_factor: int, generator) -> None:
    extent = s.shape[axis]
    width = _randint(0, mask_factor, generator)
    if width == 0:
        return
    start = _randint(0, extent - width, generator)
    index = [slice(None)] * s.dim()
    index[axis] = slice(start, start + width)
    s[tuple(index)] = 0.0


def spectral_mask_view(
    s: torch.Tensor, policy: SpectralMaskPolicy, generator: torch.Generator
) -> torch.Tensor:
    """Mask one contiguous frequency band and one contiguous time band.

    Input is C x F x T; widths are sampled in [0, mask_factor]. Order of
    operations: noise (optional), frequency mask, time mask.
    """
    if s.dim() != 3:
        raise ShapeMismatch(f"expected C x F x T spectrogram, got shape {tuple(s.shape)}")
    _, freq, time = s.shape
    if policy.mask_factor > freq or policy.mask_factor > time:
        raise MaskTooLarge(
            f"mask_factor {policy.mask_factor} exceeds spectrogram extent ({freq} x {time})"
        )
    view = s.clone()
    if policy.apply_noise and policy.noise_scale > 0:
        view = view + policy.noise_scale * torch.randn(
            view.shape, generator=generator, dtype=view.dtype
        )
    if policy.shared_mask_across_channels:
        _mask_band(view, axis=1, mask_factor=policy.mask_factor, generator=generator)
        _mask_band(view, axis=2, mask_factor=policy.mask_factor, generator=generator)
    else:
        for c in range(view.shape[0]):
            channel = view[c : c + 1]
            _mask_band(channel, axis=1, mask_factor=policy.mask_factor, generator=generator)
            _mask_band(channel, axis=2, mask_factor=policy.mask_factor, generator=generator)
    return view
