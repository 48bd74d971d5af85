"""Input validation helpers shared by every module.

All pixel work happens on plain numpy arrays: an RGB image is an
(H, W, 3) uint8 array, a vessel mask is an (H, W) array of {0, 1},
a grayscale raster is an (H, W) float array on the 0-255 scale.
"""

import numpy as np


def check_rgb_image(img) -> np.ndarray:
    """Validate an (H, W, 3) uint8 RGB image and return it as ndarray."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) RGB image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must have at least one pixel")
    if img.dtype != np.uint8:
        if np.issubdtype(img.dtype, np.integer) and img.min() >= 0 and img.max() <= 255:
            img = img.astype(np.uint8)
        else:
            raise ValueError(f"RGB channels must be 8-bit integers, got dtype {img.dtype}")
    return img


def check_mask(mask, shape=None) -> np.ndarray:
    """Validate an (H, W) binary mask; values must be exactly 0 or 1."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected an (H, W) mask, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask values must be strictly binary (0 or 1)")
    if shape is not None and mask.shape != tuple(shape[:2]):
        raise ValueError(
            f"mask shape {mask.shape} does not match image shape {tuple(shape[:2])}"
        )
    return mask.astype(np.uint8)


def check_grayscale(gray) -> np.ndarray:
    """Validate an (H, W) real-valued raster and return it as float64."""
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2:
        raise ValueError(f"expected an (H, W) grayscale raster, got shape {gray.shape}")
    if not np.isfinite(gray).all():
        raise ValueError("grayscale raster contains non-finite values")
    return gray


def check_feature_matrix(X) -> np.ndarray:
    """Validate an (n_samples, n_features) finite float matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected an (n_samples, n_features) matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("feature matrix contains non-finite values")
    return X


def round_half_up(x) -> np.ndarray:
    """Round to nearest integer with .5 going up (away from floor)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def quantize_u8(x) -> np.ndarray:
    """Clamp to [0, 255] and round half-up to uint8."""
    return np.clip(round_half_up(x), 0, 255).astype(np.uint8)
