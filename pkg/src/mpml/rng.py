"""Reproducible random streams for sampling.

Every random draw is addressed by ``(master seed, replicate, level, sample
index)``. The first two select a Philox key, the last two set the Philox
counter, so a sample's draw does not depend on which worker produced it or in
which order samples were generated. Normals come from inverse-CDF transforms
of the uniforms.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = ["stream_key", "uniforms", "standard_normals", "omega_draw"]


def stream_key(seed: int, replicate: int) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(replicate), 0x6D706D6C])
    return ss.generate_state(2, dtype=np.uint64)


def uniforms(seed: int, replicate: int, level: int, index: int, size: int, key=None) -> np.ndarray:
    """``size`` uniforms in (0, 1) for one (level, sample) address."""
    if key is None:
        key = stream_key(seed, replicate)
    counter = np.array([0, index, level, 0], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
    u = gen.random(size)
    # random() is in [0, 1); keep ndtri finite
    return np.where(u == 0.0, np.finfo(float).tiny, u)


def standard_normals(seed: int, replicate: int, level: int, index: int, size: int, key=None) -> np.ndarray:
    return ndtri(uniforms(seed, replicate, level, index, size, key))


def omega_draw(seed: int, replicate: int, level: int, index: int, s: int, sigma: float, key=None) -> np.ndarray:
    """KL coordinates for one coupled sample: ``s`` independent N(0, sigma^2)."""
    return sigma * standard_normals(seed, replicate, level, index, s, key)
