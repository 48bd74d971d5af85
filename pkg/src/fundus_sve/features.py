"""Traditional feature extraction and the feature-table interchange format.

HOG and LBP are computed on grayscale rasters (0-255 floats);
externally computed deep-feature tables enter through the same CSV
format so the downstream classifiers cannot tell them apart.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .colorspace import to_grayscale
from .dataset import NUM_CLASSES
from .raster_io import load_raster
from .validation import check_grayscale

EXTRACT_SIZE = 224  # raster size fed to the extractors, matches the
# 224x224 convention of the external deep-feature producers


class FeatureTableError(Exception):
    pass


@dataclass
class FeatureTable:
    ids: list
    labels: np.ndarray  # int labels, one per row
    X: np.ndarray  # (n_samples, dim) float64
    descriptor: str
    dim: int = field(init=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.ids) != len(set(self.ids)):
            raise FeatureTableError("duplicate sample ids in feature table")
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise FeatureTableError(f"expected a 2-D feature matrix, got shape {self.X.shape}")
        if self.X.size and not np.isfinite(self.X).all():
            raise FeatureTableError("feature matrix contains non-finite values")
        if len(self.ids) != self.X.shape[0] or len(self.ids) != self.labels.shape[0]:
            raise FeatureTableError("ids, labels and rows disagree in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            bad = self.labels[(self.labels < 0) | (self.labels >= NUM_CLASSES)]
            raise FeatureTableError(f"labels outside 0..{NUM_CLASSES - 1}: {sorted(set(bad))}")
        self.dim = self.X.shape[1]

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class HogParams:
    cell_size: int = 8  # pixels per cell side
    block_size: int = 2  # cells per block side
    block_stride: int = 1  # cells
    bins: int = 9
    signed: bool = False
    clip: float = 0.2

    def __post_init__(self):
        if min(self.cell_size, self.block_size, self.block_stride, self.bins) < 1:
            raise ValueError("HOG parameters must be positive")
        if self.block_size < self.block_stride:
            raise ValueError("block size must be >= stride")
        if self.clip <= 0:
            raise ValueError("clip must be positive")

    def descriptor_id(self) -> str:
        return (f"hog(cell={self.cell_size},block={self.block_size},"
                f"stride={self.block_stride},bins={self.bins},"
                f"signed={int(self.signed)},clip={self.clip:g})")


@dataclass(frozen=True)
class LbpParams:
    radius: int = 1
    neighbors: int = 8
    uniform: bool = True

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.neighbors != 8:
            raise ValueError("only 8-neighbor codes are supported")

    def descriptor_id(self) -> str:
        return f"lbp(radius={self.radius},neighbors=8,uniform={int(self.uniform)})"


def hog_dimension(height: int, width: int, params: HogParams) -> int:
    """Closed-form descriptor length for a given raster size."""
    cells_y = height // params.cell_size
    cells_x = width // params.cell_size
    blocks_y = (cells_y - params.block_size) // params.block_stride + 1
    blocks_x = (cells_x - params.block_size) // params.block_stride + 1
    if blocks_y < 1 or blocks_x < 1:
        raise ValueError(f"image {height}x{width} smaller than one HOG block")
    return blocks_y * blocks_x * params.block_size ** 2 * params.bins


def hog(gray, params: HogParams = HogParams()) -> np.ndarray:
    """Block-normalized cell histograms of gradient orientation.

    Central-difference gradients (one-sided at the border), orientation
    votes linearly interpolated between the two nearest bin centers
    (centers at k * bin_width), per-block L2 normalization with clipping
    and renormalization, blocks concatenated row-major.
    """
    gray = check_grayscale(gray)
    h, w = gray.shape
    hog_dimension(h, w, params)  # validates block feasibility

    gy, gx = np.gradient(gray)
    magnitude = np.hypot(gx, gy)
    angle = np.degrees(np.arctan2(gy, gx))
    span = 360.0 if params.signed else 180.0
    angle = np.mod(angle, span)
    bin_width = span / params.bins

    pos = angle / bin_width
    lower = np.floor(pos).astype(np.int64)
    frac = pos - lower
    lo_bin = np.mod(lower, params.bins)
    hi_bin = np.mod(lower + 1, params.bins)

    cells_y = h // params.cell_size
    cells_x = w // params.cell_size
    cell_hist = np.zeros((cells_y, cells_x, params.bins))
    usable_h = cells_y * params.cell_size
    usable_w = cells_x * params.cell_size
    cy = np.arange(usable_h) // params.cell_size
    cx = np.arange(usable_w) // params.cell_size
    cyy, cxx = np.meshgrid(cy, cx, indexing="ij")
    region = np.s_[:usable_h, :usable_w]
    np.add.at(cell_hist, (cyy, cxx, lo_bin[region]), magnitude[region] * (1.0 - frac[region]))
    np.add.at(cell_hist, (cyy, cxx, hi_bin[region]), magnitude[region] * frac[region])

    bs, stride = params.block_size, params.block_stride
    blocks = []
    eps = 1e-12
    for by in range(0, cells_y - bs + 1, stride):
        for bx in range(0, cells_x - bs + 1, stride):
            v = cell_hist[by:by + bs, bx:bx + bs].ravel()
            v = v / np.sqrt(v @ v + eps)
            v = np.minimum(v, params.clip)
            norm = np.sqrt(v @ v)
            if norm > eps:
                v = v / norm
            blocks.append(v)
    return np.concatenate(blocks)


# neighbor offsets on the square ring of radius r, starting top-left,
# clockwise; bit k of the code compares neighbor k against the center
_RING = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def _uniform_mapping() -> np.ndarray:
    """code -> bin for uniform patterns (<= 2 circular transitions)."""
    mapping = np.full(256, -1, dtype=np.int64)
    uniform_codes = []
    for code in range(256):
        bits = [(code >> k) & 1 for k in range(8)]
        transitions = sum(bits[k] != bits[(k + 1) % 8] for k in range(8))
        if transitions <= 2:
            uniform_codes.append(code)
    for bin_idx, code in enumerate(uniform_codes):
        mapping[code] = bin_idx
    mapping[mapping == -1] = len(uniform_codes)  # catch-all bin
    return mapping


_UNIFORM_MAP = _uniform_mapping()
UNIFORM_BINS = 59


def lbp_codes(gray, params: LbpParams = LbpParams()) -> np.ndarray:
    """8-bit neighbor-comparison codes for every interior pixel."""
    gray = check_grayscale(gray)
    r = params.radius
    h, w = gray.shape
    if h <= 2 * r or w <= 2 * r:
        raise ValueError(f"image {h}x{w} too small for LBP radius {r}")
    center = gray[r:h - r, r:w - r]
    codes = np.zeros(center.shape, dtype=np.int64)
    for k, (dy, dx) in enumerate(_RING):
        neighbor = gray[r + dy * r:h - r + dy * r, r + dx * r:w - r + dx * r]
        codes |= (neighbor >= center).astype(np.int64) << k
    return codes


def lbp(gray, params: LbpParams = LbpParams()) -> np.ndarray:
    """L1-normalized code histogram: 59 uniform bins or 256 raw bins."""
    codes = lbp_codes(gray, params)
    if params.uniform:
        hist = np.bincount(_UNIFORM_MAP[codes].ravel(), minlength=UNIFORM_BINS)
    else:
        hist = np.bincount(codes.ravel(), minlength=256)
    return hist.astype(np.float64) / codes.size


class HogExtractor:
    """Estimator-style HOG wrapper over grayscale rasters."""

    def __init__(self, cell_size=8, block_size=2, block_stride=1, bins=9,
                 signed=False, clip=0.2):
        self.cell_size = cell_size
        self.block_size = block_size
        self.block_stride = block_stride
        self.bins = bins
        self.signed = signed
        self.clip = clip

    def get_params(self, deep=True):
        return {k: getattr(self, k) for k in
                ("cell_size", "block_size", "block_stride", "bins", "signed", "clip")}

    def set_params(self, **params):
        for key, value in params.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def _params(self) -> HogParams:
        return HogParams(**self.get_params())

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        params = self._params()
        return np.stack([hog(gray, params) for gray in X])

    def fit_transform(self, X, y=None):
        return self.transform(X)


class LbpExtractor:
    """Estimator-style LBP wrapper over grayscale rasters."""

    def __init__(self, radius=1, uniform=True):
        self.radius = radius
        self.uniform = uniform

    def get_params(self, deep=True):
        return {"radius": self.radius, "uniform": self.uniform}

    def set_params(self, **params):
        for key, value in params.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        params = LbpParams(radius=self.radius, uniform=self.uniform)
        return np.stack([lbp(gray, params) for gray in X])

    def fit_transform(self, X, y=None):
        return self.transform(X)


def _prepare_raster(path) -> np.ndarray:
    img = load_raster(path)
    if img.shape[:2] != (EXTRACT_SIZE, EXTRACT_SIZE):
        img = cv2.resize(img, (EXTRACT_SIZE, EXTRACT_SIZE), interpolation=cv2.INTER_LINEAR)
    return to_grayscale(img)


def extract_batch(records, descriptor: str, params=None) -> FeatureTable:
    """One feature row per manifest record; rasters resized to 224x224."""
    if descriptor == "hog":
        params = params or HogParams()
        extract = lambda g: hog(g, params)
    elif descriptor == "lbp":
        params = params or LbpParams()
        extract = lambda g: lbp(g, params)
    else:
        raise ValueError(f"unknown descriptor {descriptor!r}")
    descriptor_id = params.descriptor_id()

    ids, labels, rows = [], [], []
    for rec in records:
        gray = _prepare_raster(rec.image)
        rows.append(extract(gray))
        ids.append(rec.id)
        labels.append(rec.label)
    if not rows:
        if descriptor == "hog":
            dim = hog_dimension(EXTRACT_SIZE, EXTRACT_SIZE, params)
        else:
            dim = UNIFORM_BINS if params.uniform else 256
        return FeatureTable(ids=[], labels=np.zeros(0, dtype=np.int64),
                            X=np.zeros((0, dim)), descriptor=descriptor_id)
    return FeatureTable(ids=ids, labels=np.array(labels), X=np.stack(rows),
                        descriptor=descriptor_id)


def export_feature_table(table: FeatureTable, path) -> None:
    """Write `id,label,f0..f{n-1}` CSV; floats printed round-trip exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"] + [f"f{i}" for i in range(table.dim)])
        for sid, label, row in zip(table.ids, table.labels, table.X):
            writer.writerow([sid, int(label)] + [repr(float(v)) for v in row])


def import_feature_table(path, descriptor: str = "") -> FeatureTable:
    """Read a feature-table CSV; rejects ragged rows, non-finite cells,
    duplicate ids and out-of-range labels."""
    path = Path(path)
    if not path.is_file():
        raise FeatureTableError(f"no such feature table: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["id", "label"]:
            raise FeatureTableError(f"bad feature-table header in {path}")
        dim = len(header) - 2
        if header[2:] != [f"f{i}" for i in range(dim)]:
            raise FeatureTableError(f"bad feature column names in {path}")
        ids, labels, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 2:
                raise FeatureTableError(f"{path}:{lineno}: ragged row ({len(row)} fields)")
            try:
                values = np.array([float(v) for v in row[2:]])
                label = int(row[1])
            except ValueError:
                raise FeatureTableError(f"{path}:{lineno}: unparsable cell") from None
            if not np.isfinite(values).all():
                raise FeatureTableError(f"{path}:{lineno}: non-finite feature value")
            ids.append(row[0])
            labels.append(label)
            rows.append(values)
    X = np.stack(rows) if rows else np.zeros((0, dim))
    try:
        return FeatureTable(ids=ids, labels=np.array(labels, dtype=np.int64), X=X,
                            descriptor=descriptor or path.stem)
    except FeatureTableError as exc:
        raise FeatureTableError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class StandardizeStats:
    mean: np.ndarray
    std: np.ndarray  # zero entries mean the column passes through


def standardize(train: FeatureTable, *others: FeatureTable):
    """Z-score every table with the training mean/std; constant training
    columns pass through unchanged. Returns (tables..., stats)."""
    for other in others:
        if other.dim != train.dim:
            raise FeatureTableError(
                f"dimension mismatch: {other.dim} vs training {train.dim}")
    mean = train.X.mean(axis=0) if len(train) else np.zeros(train.dim)
    std = train.X.std(axis=0) if len(train) else np.zeros(train.dim)
    safe = np.where(std > 0, std, 1.0)
    shift = np.where(std > 0, mean, 0.0)

    def apply(table: FeatureTable) -> FeatureTable:
        return FeatureTable(ids=list(table.ids), labels=table.labels.copy(),
                            X=(table.X - shift) / safe, descriptor=table.descriptor)

    stats = StandardizeStats(mean=mean, std=std)
    return (*[apply(t) for t in (train, *others)], stats)
