"""Budget algebra for bounded perturbations.

A perturbation lives on an lp sphere whose radius scales with the input
volume: radius = epsilon * C * W * H. Projection rescales exactly onto the
sphere (small perturbations are scaled up, large ones down), so a view never
collapses onto its input. Clamping to [0, 1] is applied only for pixel
inputs; spectrograms are perturbed additively without clamping.

Also provides the two non-network view baselines: budget-normalized Gaussian
noise, and perturbations applied in the DCT frequency domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ConfigInvalid, DegenerateNorm, ShapeMismatch

# Below this lp norm a generator output is considered dead.
NORM_FLOOR = 1e-12

_SUPPORTED_ORDERS = (1, 2, math.inf)


@dataclass(frozen=True)
class PerturbationBudget:
    """Norm order, per-element distortion budget, and application policy.

    ``clamp`` is only meaningful when inputs live in [0, 1] (images).
    ``domain`` selects whether the perturbation is added to the signal
    directly or to its DCT coefficients.
    """

    epsilon: float
    p: float = 1
    clamp: bool = True
    domain: str = "signal"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigInvalid(f"budget epsilon must be >= 0, got {self.epsilon}")
        if self.p not in _SUPPORTED_ORDERS:
            raise ConfigInvalid(f"budget p must be one of 1, 2, inf, got {self.p}")
        if self.domain not in ("signal", "dct"):
            raise ConfigInvalid(f"budget domain must be 'signal' or 'dct', got {self.domain!r}")

    def radius(self, shape) -> float:
        """Sphere radius for a C x W x H tensor: epsilon * C * W * H."""
        c, w, h = shape[-3], shape[-2], shape[-1]
        return self.epsilon * c * w * h


def perturbation_norm(perturbation: torch.Tensor, p: float = 1) -> torch.Tensor:
    """Per-sample lp norm over the trailing (C, W, H) dims.

    Accepts a single C x W x H tensor (returns a scalar) or any batch of
    them (returns one norm per leading index).
    """
    if perturbation.dim() < 3:
        raise ShapeMismatch(
            f"perturbation must have at least 3 dims (C, W, H), got shape {tuple(perturbation.shape)}"
        )
    flat = perturbation.reshape(*perturbation.shape[:-3], -1)
    if p == 1:
        return flat.abs().sum(dim=-1)
    if p == 2:
        return flat.pow(2).sum(dim=-1).sqrt()
    return flat.abs().amax(dim=-1)


def project_to_budget(perturbation: torch.Tensor, budget: PerturbationBudget) -> torch.Tensor:
    """Scale a perturbation exactly onto the budget sphere.

    Returns perturbation * radius / |perturbation|_p, computed per sample
    over the trailing three dims.

    Raises DegenerateNorm when any sample's norm is below NORM_FLOOR: a dead
    generator must be visible to the caller, not silently zeroed.
    """
    norms = perturbation_norm(perturbation, budget.p)
    if (norms < NORM_FLOOR).any():
        raise DegenerateNorm(
            f"perturbation {budget.p}-norm below {NORM_FLOOR:g}; generator output is dead"
        )
    scale = budget.radius(perturbation.shape) / norms
    return perturbation * scale.reshape(*scale.shape, 1, 1, 1)


def apply_perturbation(
    x: torch.Tensor, perturbation: torch.Tensor, budget: PerturbationBudget
) -> torch.Tensor:
    """Add an (already projected) perturbation, clamping per the budget policy."""
    if x.shape != perturbation.shape:
        raise ShapeMismatch(
            f"input shape {tuple(x.shape)} != perturbation shape {tuple(perturbation.shape)}"
        )
    view = x + perturbation
    if budget.clamp:
        view = view.clamp(0.0, 1.0)
    return view


def gaussian_noise_view(
    x: torch.Tensor, budget: PerturbationBudget, generator: torch.Generator
) -> torch.Tensor:
    """Random-noise baseline: standard Gaussian noise projected to the budget."""
    noise = torch.randn(x.shape, generator=generator, dtype=x.dtype, device=x.device)
    return apply_perturbation(x, project_to_budget(noise, budget), budget)


# ---------------------------------------------------------------------------
# DCT domain
#
# Orthonormal type-II forward / type-III inverse, applied separably over the
# last two dims per channel. Implemented as matrix products so the transform
# is differentiable.
# ---------------------------------------------------------------------------

_DCT_CACHE: dict = {}


def _dct_matrix(n: int, dtype: torch.dtype, device: torch.device) -> torch.Tensor:
    key = (n, dtype, str(device))
    cached = _DCT_CACHE.get(key)
    if cached is None:
        i = torch.arange(n, dtype=torch.float64)
        k = i.unsqueeze(1)
        mat = torch.cos(math.pi / n * (i + 0.5) * k) * math.sqrt(2.0 / n)
        mat[0] *= math.sqrt(0.5)
        cached = mat.to(dtype=dtype, device=device)
        _DCT_CACHE[key] = cached
    return cached


def dct2(x: torch.Tensor) -> torch.Tensor:
    """Orthonormal 2D DCT-II over the last two dims."""
    d_rows = _dct_matrix(x.shape[-2], x.dtype, x.device)
    d_cols = _dct_matrix(x.shape[-1], x.dtype, x.device)
    return d_rows @ x @ d_cols.T


def idct2(x: torch.Tensor) -> torch.Tensor:
    """Inverse of dct2 (type-III); exact because the basis is orthonormal."""
    d_rows = _dct_matrix(x.shape[-2], x.dtype, x.device)
    d_cols = _dct_matrix(x.shape[-1], x.dtype, x.device)
    return d_rows.T @ x @ d_cols


def dct_view(
    x: torch.Tensor, perturbation: torch.Tensor, budget: PerturbationBudget
) -> torch.Tensor:
    """Apply a budget-projected perturbation to the DCT coefficients of x.

    The view is IDCT(DCT(x) + P), optionally clamped. The reference image
    configuration for this domain uses epsilon = 1.0.
    """
    if x.shape != perturbation.shape:
        raise ShapeMismatch(
            f"input shape {tuple(x.shape)} != perturbation shape {tuple(perturbation.shape)}"
        )
    coeffs = dct2(x)
    projected = project_to_budget(perturbation, budget)
    view = idct2(coeffs + projected)
    if budget.clamp:
        view = view.clamp(0.0, 1.0)
    return view
