"""Conditional diffusion alignment with hypernetwork-generated LoRA deltas.

The heavy lifting lives in the compiled ``_core`` module; this package only
re-exports it.
"""

from ._core import (
    CheckpointError,
    Config,
    ConfigError,
    Denoiser,
    HyperNet,
    align,
    bench,
    diversity,
    grid_kl,
    reward,
    sample,
    select_keysteps,
    sliced_w2,
    train_base,
)

__all__ = [
    "CheckpointError",
    "Config",
    "ConfigError",
    "Denoiser",
    "HyperNet",
    "align",
    "bench",
    "diversity",
    "grid_kl",
    "reward",
    "sample",
    "select_keysteps",
    "sliced_w2",
    "train_base",
]
