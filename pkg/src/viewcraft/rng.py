"""Seeded randomness handles.

Every stochastic operation in the package takes an explicit ``torch.Generator``
so that runs are reproducible and concurrent callers can own independent
streams.
"""

from __future__ import annotations

import hashlib

import torch


def seeded_generator(seed: int, device: str = "cpu") -> torch.Generator:
    """Return a fresh generator seeded with ``seed``."""
    gen = torch.Generator(device=device)
    gen.manual_seed(int(seed))
    return gen


def derive_seed(*parts) -> int:
    """Stable 63-bit seed derived from a tuple of parts.

    Used to give data-loading workers independent streams from
    (global seed, worker id, epoch).
    """
    digest = hashlib.sha256(repr(tuple(parts)).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1
