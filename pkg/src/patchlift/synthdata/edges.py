"""Edge-map extraction from (reference, mask) pairs.

The edge channel must be computable at inference time, when the flat asset is
unknown, so it is a pure function of the reference image and the mask:
Sobel gradient magnitude of the grayscale reference, scaled by a fixed
constant, zeroed outside the mask dilated by one pixel.
"""

from __future__ import annotations

import numpy as np

from patchlift.errors import ShapeError

# Rec.601 luma weights.
_LUMA = np.array([0.299, 0.587, 0.114])

# Each Sobel response is bounded by 4 for inputs in [0, 1]; dividing by 4
# makes a unit step produce a full-scale response while keeping values <= 1
# after clipping.
_SOBEL_SCALE = 4.0

_KX = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_KY = _KX.T


def _conv3x3(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Replicate-pad correlation; small enough that an explicit loop over the
    # nine taps beats pulling in an FFT.
    padded = np.pad(image, 1, mode="edge")
    out = np.zeros_like(image)
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy, dx] * padded[dy : dy + image.shape[0], dx : dx + image.shape[1]]
    return out


def dilate_mask(mask: np.ndarray) -> np.ndarray:
    """Binary dilation by one pixel (3x3 structuring element)."""
    padded = np.pad(mask.astype(bool), 1, mode="constant")
    out = np.zeros_like(mask, dtype=bool)
    for dy in range(3):
        for dx in range(3):
            out |= padded[dy : dy + mask.shape[0], dx : dx + mask.shape[1]]
    return out


def derive_edge_map(reference: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Single-channel edge map in [0, 1]; zero outside the dilated mask.

    An all-zero mask yields an all-zero edge map (an empty selection is a
    valid input, not an error).
    """
    if reference.ndim != 3 or reference.shape[2] != 3:
        raise ShapeError(f"reference must be HxWx3, got {reference.shape}")
    if mask.shape != reference.shape[:2]:
        raise ShapeError(f"mask shape {mask.shape} != reference {reference.shape[:2]}")
    gray = reference.astype(np.float64) @ _LUMA
    gx = _conv3x3(gray, _KX)
    gy = _conv3x3(gray, _KY)
    magnitude = np.hypot(gx, gy) / _SOBEL_SCALE
    edge = np.clip(magnitude, 0.0, 1.0)
    edge[~dilate_mask(mask)] = 0.0
    return edge.astype(np.float32)
