"""Seeded randomness with independent named substreams.

Every source of randomness in a run (initial noise, background color,
per-step padding noise, resample positions, dataset construction) draws
from its own substream derived from (seed, purpose name).  Adding a new
purpose therefore never perturbs the draws of existing ones, and any two
runs with the same seed are bit-identical.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .validation import require

INIT_NOISE = "init-noise"
BACKGROUND = "background"
PAD_NOISE = "pad-noise"
UNCOND_PAD_NOISE = "uncond-pad-noise"
RESAMPLE = "resample"
DATASET = "dataset"
COMPARE_LATENT = "compare-latent"


def _name_key(name: str) -> int:
    # stable across runs and platforms, unlike the builtin hash()
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a fresh generator for (seed, name); same inputs, same stream."""
    require(int(seed) >= 0, f"seed must be non-negative, got {seed}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), _name_key(name)]))
