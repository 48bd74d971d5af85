"""RGB <-> HSI conversion and grayscale reduction.

The HSI model is the classical arccos formulation: hue in degrees in
[0, 360) with H = 0 at the undefined (achromatic) point, saturation in
[0, 1], and intensity kept on the 0-255 scale as a real number so the
enhancement arithmetic can work in 8-bit units without quantizing.
"""

from dataclasses import dataclass

import numpy as np

from .validation import check_rgb_image, quantize_u8


@dataclass(frozen=True)
class HsiImage:
    """Per-channel H (degrees), S (fraction), I (0-255) float arrays."""

    h: np.ndarray
    s: np.ndarray
    i: np.ndarray

    @property
    def shape(self):
        return self.i.shape


def rgb_to_hsi(img) -> HsiImage:
    """Convert an (H, W, 3) uint8 RGB image to HSI.

    I = (R+G+B)/3 exactly (no rounding), S = 1 - 3*min/(R+G+B) with
    S = 0 for black pixels, H from the arccos formula with H = 0
    whenever S = 0.
    """
    img = check_rgb_image(img)
    r = img[..., 0].astype(np.float64)
    g = img[..., 1].astype(np.float64)
    b = img[..., 2].astype(np.float64)

    total = r + g + b
    i = total / 3.0

    minc = np.minimum(np.minimum(r, g), b)
    s = np.where(total > 0, 1.0 - 3.0 * minc / np.where(total > 0, total, 1.0), 0.0)

    num = 0.5 * ((r - g) + (r - b))
    den = np.sqrt((r - g) ** 2 + (r - b) * (g - b))
    theta = np.degrees(np.arccos(np.clip(num / np.where(den > 0, den, 1.0), -1.0, 1.0)))
    h = np.where(b <= g, theta, 360.0 - theta)
    h = np.where((s > 0) & (den > 0), h, 0.0)
    h = np.mod(h, 360.0)
    return HsiImage(h=h, s=np.clip(s, 0.0, 1.0), i=i)


def hsi_to_rgb(hsi: HsiImage) -> np.ndarray:
    """Invert rgb_to_hsi; channels clamped to [0, 255], rounded half-up."""
    h = np.mod(np.asarray(hsi.h, dtype=np.float64), 360.0)
    s = np.asarray(hsi.s, dtype=np.float64)
    i = np.asarray(hsi.i, dtype=np.float64)

    r = np.empty_like(i)
    g = np.empty_like(i)
    b = np.empty_like(i)

    for lo, (c1, c2, c3) in ((0.0, (r, g, b)), (120.0, (g, b, r)), (240.0, (b, r, g))):
        sector = (h >= lo) & (h < lo + 120.0)
        hh = np.radians(h - lo)
        first = i * (1.0 - s)
        # cos(60 - h) never vanishes for h in [0, 120)
        second = i * (1.0 + s * np.cos(hh) / np.cos(np.radians(60.0) - hh))
        third = 3.0 * i - (first + second)
        c3[sector] = first[sector]
        c1[sector] = second[sector]
        c2[sector] = third[sector]

    return np.stack([quantize_u8(r), quantize_u8(g), quantize_u8(b)], axis=-1)


def to_grayscale(img) -> np.ndarray:
    """Luminance 0.299 R + 0.587 G + 0.114 B, real-valued in [0, 255]."""
    img = check_rgb_image(img).astype(np.float64)
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
