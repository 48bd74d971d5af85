"""Vessel-guided intensity enhancement.

The default strategy ("weighted-plus-background") brightens vessel
pixels of the HSI intensity channel by mask * 255 * weight, min-max
stretches the result to 0-255, keeps only the vessel pixels of the
stretched image and recombines them with the untouched background:

    i_background = I * (1 - mask)
    i_enhanced   = I + mask * 255 * weight
    i_stretched  = (i_enhanced - min) / (max - min) * 255
    i_vessel     = i_stretched * mask
    i_new        = i_background + i_vessel

H and S are never modified. All intermediates are real-valued;
quantization happens once, at the final RGB recombination.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .colorspace import HsiImage, hsi_to_rgb, rgb_to_hsi
from .raster_io import RasterIOError, load_mask, load_raster, save_raster
from .validation import check_mask, check_rgb_image, quantize_u8

VARIANTS = (
    "vessel-only",
    "weighted-plus-origin",
    "weighted-plus-background",
    "gamma-vessel-plus-origin",
    "heatmap-vessel-plus-origin",
)

DEFAULT_WEIGHT = 0.2
DEFAULT_GAMMA = 0.5


@dataclass(frozen=True)
class SveStrategy:
    variant: str = "weighted-plus-background"
    weight: float = DEFAULT_WEIGHT
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown enhancement variant {self.variant!r}")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")

    def slug(self) -> str:
        return self.variant


@dataclass(frozen=True)
class SveIntermediates:
    """The intensity-channel intermediates, kept for testing."""

    i_background: np.ndarray
    i_enhanced: np.ndarray
    i_enhanced_normalized: np.ndarray
    i_enhanced_normalized_vessel: np.ndarray
    i_new: np.ndarray


def _normalize_0_255(arr: np.ndarray) -> np.ndarray:
    lo, hi = float(arr.min()), float(arr.max())
    if hi == lo:
        # constant image carries no contrast to stretch; park at midpoint
        return np.full_like(arr, 128.0)
    return (arr - lo) / (hi - lo) * 255.0


def enhance_intensity(i: np.ndarray, mask: np.ndarray, weight: float) -> SveIntermediates:
    """Run the weighted-plus-background arithmetic on an intensity plane."""
    i = np.asarray(i, dtype=np.float64)
    mask = check_mask(mask, i.shape)
    m = mask.astype(np.float64)
    i_background = i * (1.0 - m)
    i_enhanced = i + m * 255.0 * weight
    i_enhanced_normalized = _normalize_0_255(i_enhanced)
    i_enhanced_normalized_vessel = i_enhanced_normalized * m
    i_new = i_background + i_enhanced_normalized_vessel
    return SveIntermediates(
        i_background=i_background,
        i_enhanced=i_enhanced,
        i_enhanced_normalized=i_enhanced_normalized,
        i_enhanced_normalized_vessel=i_enhanced_normalized_vessel,
        i_new=i_new,
    )


def sve_weighted_background(img, mask, weight: float = DEFAULT_WEIGHT):
    """Full weighted-plus-background enhancement of an RGB image.

    Returns (enhanced RGB image, intensity intermediates).
    """
    img = check_rgb_image(img)
    mask = check_mask(mask, img.shape)
    hsi = rgb_to_hsi(img)
    inter = enhance_intensity(hsi.i, mask, weight)
    i_new = np.clip(inter.i_new, 0.0, 255.0)
    out = hsi_to_rgb(HsiImage(h=hsi.h, s=hsi.s, i=i_new))
    return out, inter


def build_heatmap_lut() -> np.ndarray:
    """Fixed 256-entry blue-to-red RGB lookup table.

    For t = i/255: R = round(255*t), G = round(255*(1 - |2t - 1|)),
    B = round(255*(1 - t)). Entry 0 is pure blue, entry 128 is near
    green, entry 255 is pure red.
    """
    t = np.arange(256, dtype=np.float64) / 255.0
    r = quantize_u8(255.0 * t)
    g = quantize_u8(255.0 * (1.0 - np.abs(2.0 * t - 1.0)))
    b = quantize_u8(255.0 * (1.0 - t))
    return np.stack([r, g, b], axis=-1)


_HEATMAP_LUT = build_heatmap_lut()


def sve_apply(img, mask, strategy: SveStrategy) -> np.ndarray:
    """Apply one of the enhancement strategies to an RGB image."""
    img = check_rgb_image(img)
    mask = check_mask(mask, img.shape)
    variant = strategy.variant

    if variant == "weighted-plus-background":
        out, _ = sve_weighted_background(img, mask, strategy.weight)
        return out

    if variant == "heatmap-vessel-plus-origin":
        # recolors vessel pixels directly in RGB by intensity
        hsi = rgb_to_hsi(img)
        idx = quantize_u8(hsi.i)
        recolored = _HEATMAP_LUT[idx]
        out = img.copy()
        out[mask == 1] = recolored[mask == 1]
        return out

    hsi = rgb_to_hsi(img)
    m = mask.astype(np.float64)
    if variant == "vessel-only":
        i_new = hsi.i * m
    elif variant == "weighted-plus-origin":
        i_new = np.clip(hsi.i + m * 255.0 * strategy.weight, 0.0, 255.0)
    elif variant == "gamma-vessel-plus-origin":
        gamma_i = 255.0 * (hsi.i / 255.0) ** strategy.gamma
        i_new = np.where(m == 1.0, gamma_i, hsi.i)
    else:  # pragma: no cover - guarded by SveStrategy
        raise ValueError(f"unknown enhancement variant {variant!r}")
    return hsi_to_rgb(HsiImage(h=hsi.h, s=hsi.s, i=i_new))


@dataclass
class BatchResult:
    outputs: dict = field(default_factory=dict)  # sample id -> output path
    errors: dict = field(default_factory=dict)  # sample id -> error message


def batch_enhance(records, strategy: SveStrategy, out_dir) -> BatchResult:
    """Enhance every manifest record that carries an image + mask pair.

    Output files are named "<id>_<variant>.png". Per-record failures are
    collected in the result instead of aborting the batch.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = BatchResult()
    for rec in records:
        try:
            if not rec.mask:
                raise ValueError(f"record {rec.id} has no mask path")
            img = load_raster(rec.image)
            mask = load_mask(rec.mask, img.shape)
            out = sve_apply(img, mask, strategy)
            out_path = out_dir / f"{rec.id}_{strategy.slug()}.png"
            save_raster(out, out_path)
            result.outputs[rec.id] = str(out_path)
        except (RasterIOError, ValueError) as exc:
            result.errors[rec.id] = str(exc)
    return result


class SveTransformer:
    """Estimator-style wrapper: transform (image, mask) pairs.

    fit is a no-op (the enhancement is stateless); transform maps a
    sequence of (rgb_image, mask) pairs to enhanced images.
    """

    def __init__(self, variant="weighted-plus-background", weight=DEFAULT_WEIGHT,
                 gamma=DEFAULT_GAMMA):
        self.variant = variant
        self.weight = weight
        self.gamma = gamma

    def get_params(self, deep=True):
        return {"variant": self.variant, "weight": self.weight, "gamma": self.gamma}

    def set_params(self, **params):
        for key, value in params.items():
            if key not in ("variant", "weight", "gamma"):
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        strategy = SveStrategy(variant=self.variant, weight=self.weight, gamma=self.gamma)
        return [sve_apply(img, mask, strategy) for img, mask in X]

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)
