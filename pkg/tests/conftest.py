import numpy as np
import pytest

from fundus_sve.dataset import Manifest, SampleRecord, save_manifest
from fundus_sve.raster_io import save_mask, save_raster


def make_stroke_image(label, rng, size=64):
    """Synthetic fundus stand-in: dark class-distinct strokes on a noisy
    mid-gray background, plus the matching vessel mask."""
    img = np.clip(rng.normal(110, 8, (size, size, 3)), 0, 255)
    mask = np.zeros((size, size), dtype=np.uint8)
    if label == 0:  # horizontal strokes
        for r in range(6, size, 12):
            mask[r:r + 2, 4:size - 4] = 1
    elif label == 1:  # vertical strokes
        for c in range(6, size, 12):
            mask[4:size - 4, c:c + 2] = 1
    else:  # diagonal strokes
        for off in range(-size, size, 12):
            for i in range(size):
                j = i + off
                if 0 <= j < size:
                    mask[i, j] = 1
                    if j + 1 < size:
                        mask[i, j + 1] = 1
    img[mask == 1] = np.clip(rng.normal(45, 6, (int(mask.sum()), 3)), 0, 255)
    return img.astype(np.uint8), mask


def write_synthetic_dataset(root, n_per_class=20, n_classes=3, seed=42, size=64):
    """Write images, masks and a manifest CSV; returns the manifest path."""
    rng = np.random.default_rng(seed)
    records = []
    for label in range(n_classes):
        for i in range(n_per_class):
            img, mask = make_stroke_image(label % 3, rng, size=size)
            ip = root / f"img_{label}_{i:03d}.png"
            mp = root / f"mask_{label}_{i:03d}.png"
            save_raster(img, ip)
            save_mask(mask, mp)
            records.append(SampleRecord(id=f"c{label}s{i:03d}", image=str(ip),
                                        mask=str(mp), label=label))
    path = root / "manifest.csv"
    save_manifest(Manifest(records=records), path)
    return path


@pytest.fixture
def synthetic_manifest(tmp_path):
    return write_synthetic_dataset(tmp_path)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
