"""Manifest-driven dataset handling and the stratified 6:2:2 split.

The manifest CSV is the interchange format for every pipeline stage:

    id,image,mask,label,split,provenance

with provenance either "original" or
"augmented:<src>[+<src2>]:<op>|<op>|...".
"""

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

NUM_CLASSES = 14

# STARE disease taxonomy, label -> abbreviation
STARE_CLASS_NAMES = {
    0: "None (Normal)",
    1: "Emboli",
    2: "BRAO",
    3: "CRAO",
    4: "BRVO",
    5: "CRVO",
    6: "Hemi-CRVO",
    7: "BDR/NPDR",
    8: "PDR",
    9: "ASR",
    10: "HTR",
    11: "Coat's",
    12: "Macroaneurism",
    13: "CNV",
}

SPLITS = ("train", "val", "test", "unassigned")

MANIFEST_HEADER = ["id", "image", "mask", "label", "split", "provenance"]


class ManifestError(Exception):
    pass


@dataclass(frozen=True)
class Provenance:
    sources: tuple = ()  # empty for original samples
    ops: tuple = ()

    @property
    def original(self) -> bool:
        return not self.sources

    def encode(self) -> str:
        if self.original:
            return "original"
        return "augmented:" + "+".join(self.sources) + ":" + "|".join(self.ops)

    @classmethod
    def decode(cls, text: str) -> "Provenance":
        if text == "original":
            return cls()
        if not text.startswith("augmented:"):
            raise ManifestError(f"bad provenance field: {text!r}")
        try:
            _, sources, ops = text.split(":", 2)
        except ValueError:
            raise ManifestError(f"bad provenance field: {text!r}") from None
        return cls(sources=tuple(sources.split("+")), ops=tuple(ops.split("|")) if ops else ())


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image: str
    mask: str  # empty string when absent
    label: int
    split: str = "unassigned"
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self):
        if not (0 <= self.label < NUM_CLASSES):
            raise ManifestError(f"label {self.label} outside 0..{NUM_CLASSES - 1} (sample {self.id})")
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r} (sample {self.id})")


@dataclass
class Manifest:
    records: list
    name: str = "dataset"
    class_names: dict = field(default_factory=lambda: dict(STARE_CLASS_NAMES))

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate sample ids: {dupes}")

    def by_split(self, split: str) -> list:
        return [r for r in self.records if r.split == split]

    def by_id(self) -> dict:
        return {r.id: r for r in self.records}


def load_manifest(path, check_files: bool = False) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"no such manifest: {path}")
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ManifestError(f"bad manifest header {header!r}, expected {MANIFEST_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} fields")
            sid, image, mask, label, split, prov = row
            try:
                label = int(label)
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: non-integer label {label!r}") from None
            records.append(SampleRecord(
                id=sid, image=image, mask=mask, label=label,
                split=split or "unassigned", provenance=Provenance.decode(prov),
            ))
    if check_files:
        for rec in records:
            for p in (rec.image, rec.mask):
                if p and not Path(p).is_file():
                    raise ManifestError(f"missing file for sample {rec.id}: {p}")
    return Manifest(records=records, name=path.stem)


def save_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for rec in manifest.records:
            writer.writerow([rec.id, rec.image, rec.mask, rec.label, rec.split,
                             rec.provenance.encode()])


def init_manifest(images_dir, labels_file, masks_dir=None, name="dataset") -> Manifest:
    """Build a manifest from loose image files plus an `id<TAB|,>label` list."""
    images_dir = Path(images_dir)
    labels = {}
    for line in Path(labels_file).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace("\t", ",").split(",")
        if len(parts) != 2:
            raise ManifestError(f"bad label line: {line!r}")
        labels[parts[0].strip()] = int(parts[1])
    records = []
    for sid in sorted(labels):
        candidates = sorted(images_dir.glob(f"{sid}.*"))
        if not candidates:
            raise ManifestError(f"no image file for sample {sid} in {images_dir}")
        mask = ""
        if masks_dir is not None:
            mask_candidates = sorted(Path(masks_dir).glob(f"{sid}.*"))
            if mask_candidates:
                mask = str(mask_candidates[0])
        records.append(SampleRecord(id=sid, image=str(candidates[0]), mask=mask,
                                    label=labels[sid]))
    return Manifest(records=records, name=name)


def _largest_remainder(n: int, ratios) -> list:
    """Apportion n among len(ratios) bins; ties go to the earlier bin."""
    exact = [n * r for r in ratios]
    counts = [int(np.floor(e)) for e in exact]
    remainders = [e - c for e, c in zip(exact, counts)]
    leftover = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda j: (-remainders[j], j))
    for j in order[:leftover]:
        counts[j] += 1
    return counts


def stratified_split(manifest: Manifest, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> Manifest:
    """Assign train/val/test per class with largest-remainder rounding.

    Deterministic under seed; every class with >= 3 samples contributes
    at least one training sample (guaranteed by the 0.6 share).
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive values summing to 1, got {ratios}")
    by_label = {}
    for idx, rec in enumerate(manifest.records):
        by_label.setdefault(rec.label, []).append(idx)
    assignment = {}
    rng = np.random.default_rng(seed)
    for label in sorted(by_label):
        idxs = list(by_label[label])
        rng.shuffle(idxs)
        n_train, n_val, n_test = _largest_remainder(len(idxs), ratios)
        for j, idx in enumerate(idxs):
            if j < n_train:
                assignment[idx] = "train"
            elif j < n_train + n_val:
                assignment[idx] = "val"
            else:
                assignment[idx] = "test"
    records = [replace(rec, split=assignment[i]) for i, rec in enumerate(manifest.records)]
    return Manifest(records=records, name=manifest.name, class_names=manifest.class_names)


def summarize_distribution(manifest: Manifest) -> dict:
    """Per-split per-class counts; errors on unassigned records."""
    counts = {}
    for rec in manifest.records:
        if rec.split == "unassigned":
            raise ManifestError(f"sample {rec.id} has no split assigned")
        counts.setdefault(rec.split, {})
        counts[rec.split][rec.label] = counts[rec.split].get(rec.label, 0) + 1
    return counts
