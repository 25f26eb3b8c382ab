"""Batch assembly helpers shared by training and evaluation."""

from __future__ import annotations

import numpy as np

from .phantom.patches import PATCH_SIZE


def block_mean(x: np.ndarray, factor: int) -> np.ndarray:
    """Downsample (N, C, H, W) by integer-factor area averaging."""
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ValueError(f"spatial size ({h},{w}) not divisible by {factor}")
    return x.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))


def stack_samples(samples, input_size: int = PATCH_SIZE) -> np.ndarray:
    """Stack PatchSamples into a network batch, downsampling if the model
    takes smaller inputs than the native patch size."""
    batch = np.stack([s.to_tensor() for s in samples])
    if input_size != batch.shape[-1]:
        if batch.shape[-1] % input_size != 0:
            raise ValueError(
                f"cannot resize {batch.shape[-1]} px patches to {input_size} px "
                f"(non-integer factor)"
            )
        batch = block_mean(batch, batch.shape[-1] // input_size)
    return batch.astype(np.float32)
