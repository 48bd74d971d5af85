"""Seeded, deterministic image augmentation and class balancing.

Every operation is a pure function of (inputs, seed). Derived-sample
seeds are mixed from the plan seed and the derived id via SHA-256 so
execution order and parallelism cannot change the output.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .dataset import Manifest, Provenance, SampleRecord
from .raster_io import load_raster, save_raster
from .validation import check_rgb_image, quantize_u8

# Small angles first: they preserve anatomy and are cycled per class
# when balancing.
DEFAULT_ANGLES = (5.0, -5.0, 10.0, -10.0, 15.0, -15.0, 30.0, -30.0,
                  45.0, -45.0, 90.0, 180.0, 270.0)

NOISE_STD_DEFAULT = 10.0
CUTMIX_AREA_RANGE = (0.1, 0.4)


def derive_seed(seed: int, token: str) -> int:
    """Stable 64-bit seed mixed from a base seed and a string token."""
    digest = hashlib.sha256(f"{seed}:{token}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def rotate(img, angle: float) -> np.ndarray:
    """Rotate about the image center, bilinear, black fill, same size."""
    img = check_rgb_image(img)
    if angle % 360.0 == 0.0:
        return img.copy()
    h, w = img.shape[:2]
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    matrix = cv2.getRotationMatrix2D(center, angle, 1.0)
    return cv2.warpAffine(img, matrix, (w, h), flags=cv2.INTER_LINEAR,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=0)


def mirror(img, axis: str) -> np.ndarray:
    """Exact pixel permutation; axis 'horizontal' flips left-right."""
    img = check_rgb_image(img)
    if axis == "horizontal":
        return img[:, ::-1].copy()
    if axis == "vertical":
        return img[::-1, :].copy()
    raise ValueError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")


def add_gaussian_noise(img, mean: float, std: float, seed: int) -> np.ndarray:
    """Add iid normal noise per channel, clamp to [0,255], round half-up."""
    img = check_rgb_image(img)
    if std < 0:
        raise ValueError("std must be >= 0")
    if std == 0 and mean == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    noise = rng.normal(mean, std, size=img.shape)
    return quantize_u8(img.astype(np.float64) + noise)


def sample_cutmix_rect(h: int, w: int, rng) -> tuple:
    """Seeded (top, left, rh, rw) with area fraction in [0.1, 0.4]."""
    lo, hi = CUTMIX_AREA_RANGE
    frac = rng.uniform(lo, hi)
    total = h * w
    rh = max(1, min(h, int(round(h * np.sqrt(frac)))))
    rw = max(1, min(w, int(round(frac * total / rh))))
    # rounding can push the fraction slightly outside the range
    min_rw = int(np.ceil(lo * total / rh))
    max_rw = int(np.floor(hi * total / rh))
    if min_rw <= max_rw:
        rw = min(max(rw, min_rw, 1), max_rw, w)
    top = int(rng.integers(0, h - rh + 1))
    left = int(rng.integers(0, w - rw + 1))
    return top, left, rh, rw


def cutmix_same_class(img_a, img_b, label_a: int, label_b: int, seed: int) -> np.ndarray:
    """Paste a seeded rectangle of img_b into img_a (same class only)."""
    if label_a != label_b:
        raise ValueError(f"cutmix requires a single class, got {label_a} and {label_b}")
    img_a = check_rgb_image(img_a)
    img_b = check_rgb_image(img_b)
    if img_a.shape != img_b.shape:
        raise ValueError(f"dimension mismatch: {img_a.shape} vs {img_b.shape}")
    rng = np.random.default_rng(seed)
    top, left, rh, rw = sample_cutmix_rect(img_a.shape[0], img_a.shape[1], rng)
    out = img_a.copy()
    out[top:top + rh, left:left + rw] = img_b[top:top + rh, left:left + rw]
    return out


def random_crop(img, crop_h: int, crop_w: int, seed: int) -> np.ndarray:
    """Contiguous sub-window at a seeded uniform position."""
    img = check_rgb_image(img)
    h, w = img.shape[:2]
    if crop_h > h or crop_w > w:
        raise ValueError(f"crop {crop_h}x{crop_w} larger than image {h}x{w}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, h - crop_h + 1))
    left = int(rng.integers(0, w - crop_w + 1))
    return img[top:top + crop_h, left:left + crop_w].copy()


def random_crop_resize(img, ratio: float, seed: int) -> np.ndarray:
    """Train-time crop of `ratio` per dimension, resized back (bilinear)."""
    img = check_rgb_image(img)
    h, w = img.shape[:2]
    crop = random_crop(img, max(1, int(round(h * ratio))), max(1, int(round(w * ratio))), seed)
    return cv2.resize(crop, (w, h), interpolation=cv2.INTER_LINEAR)


@dataclass(frozen=True)
class PlanEntry:
    label: int
    sources: tuple  # one id, or two for cutmix
    ops: tuple  # op descriptor strings, applied in order
    derived_id: str


@dataclass
class AugmentationPlan:
    seed: int
    target_per_class: int
    entries: list = field(default_factory=list)

    def counts_per_class(self) -> dict:
        counts = {}
        for e in self.entries:
            counts[e.label] = counts.get(e.label, 0) + 1
        return counts

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "target_per_class": self.target_per_class,
            "entries": [
                {"label": e.label, "sources": list(e.sources), "ops": list(e.ops),
                 "derived_id": e.derived_id}
                for e in self.entries
            ],
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AugmentationPlan":
        data = json.loads(text)
        return cls(
            seed=data["seed"],
            target_per_class=data["target_per_class"],
            entries=[PlanEntry(label=e["label"], sources=tuple(e["sources"]),
                               ops=tuple(e["ops"]), derived_id=e["derived_id"])
                     for e in data["entries"]],
        )


def _op_for_round(rnd: int, angles, n_sources: int) -> list:
    """Op descriptors for the rnd-th derived copy of one source.

    Priority: rotations through the angle set, then mirrors, then
    noise, then cutmix, then rotation+noise composites (distinct seeds
    keep later rounds from duplicating earlier ones).
    """
    n_rot = len(angles)
    if rnd < n_rot:
        return [f"rotate({angles[rnd]:g})"]
    if rnd == n_rot:
        return ["mirror(horizontal)"]
    if rnd == n_rot + 1:
        return ["mirror(vertical)"]
    if rnd == n_rot + 2:
        return [f"noise(0,{NOISE_STD_DEFAULT:g})"]
    if rnd == n_rot + 3 and n_sources > 1:
        return ["cutmix"]
    extra = rnd - (n_rot + 3)
    return [f"rotate({angles[extra % n_rot]:g})", f"noise(0,{NOISE_STD_DEFAULT:g})"]


def build_balance_plan(class_samples: dict, target_per_class: int, seed: int,
                       angles=DEFAULT_ANGLES, allow_undershoot: bool = False) -> AugmentationPlan:
    """Schedule derived samples until every class reaches the target.

    class_samples maps label -> ordered list of source sample ids.
    Fully determined by (class_samples, target, seed, angles).
    """
    plan = AugmentationPlan(seed=seed, target_per_class=target_per_class)
    for label in sorted(class_samples):
        sources = list(class_samples[label])
        if not sources:
            raise ValueError(f"cannot augment class {label}: no source samples")
        if not allow_undershoot and target_per_class < len(sources):
            raise ValueError(
                f"target {target_per_class} below class {label} count {len(sources)}; "
                "pass allow_undershoot to keep originals"
            )
        deficit = max(0, target_per_class - len(sources))
        for j in range(deficit):
            source = sources[j % len(sources)]
            rnd = j // len(sources)
            ops = _op_for_round(rnd, angles, len(sources))
            srcs = (source,)
            if ops == ["cutmix"]:
                partner = sources[(j + 1) % len(sources)]
                srcs = (source, partner)
            plan.entries.append(PlanEntry(
                label=label, sources=srcs, ops=tuple(ops),
                derived_id=f"{source}__aug{j:03d}",
            ))
    return plan


def _parse_op(op: str):
    if op == "cutmix":
        return "cutmix", ()
    name, _, args = op.partition("(")
    args = args.rstrip(")")
    return name, tuple(a for a in args.split(",") if a)


def apply_ops(img, ops, partner_img, label: int, sample_seed: int) -> np.ndarray:
    """Apply an ordered op descriptor list to one image."""
    out = img
    for k, op in enumerate(ops):
        name, args = _parse_op(op)
        op_seed = derive_seed(sample_seed, f"op{k}:{op}")
        if name == "rotate":
            out = rotate(out, float(args[0]))
        elif name == "mirror":
            out = mirror(out, args[0])
        elif name == "noise":
            out = add_gaussian_noise(out, float(args[0]), float(args[1]), op_seed)
        elif name == "cutmix":
            if partner_img is None:
                raise ValueError("cutmix op without a partner image")
            out = cutmix_same_class(out, partner_img, label, label, op_seed)
        elif name == "crop":
            out = random_crop_resize(out, float(args[0]), op_seed)
        else:
            raise ValueError(f"unknown op {op!r}")
    return out


def execute_plan(plan: AugmentationPlan, manifest: Manifest, out_dir,
                 allowed_splits=("train",)) -> Manifest:
    """Write every derived image and return the extended manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_id = manifest.by_id()
    new_records = list(manifest.records)
    for entry in plan.entries:
        for sid in entry.sources:
            if sid not in by_id:
                raise ValueError(f"plan references unknown sample id {sid!r}")
        source = by_id[entry.sources[0]]
        if source.split not in allowed_splits:
            raise ValueError(
                f"source {source.id} is in split {source.split!r}, "
                f"augmentation allows {allowed_splits}"
            )
        img = load_raster(source.image)
        partner = None
        if len(entry.sources) == 2:
            partner = load_raster(by_id[entry.sources[1]].image)
        sample_seed = derive_seed(plan.seed, entry.derived_id)
        derived = apply_ops(img, entry.ops, partner, entry.label, sample_seed)
        out_path = out_dir / f"{entry.derived_id}.png"
        save_raster(derived, out_path)
        new_records.append(SampleRecord(
            id=entry.derived_id, image=str(out_path), mask="", label=entry.label,
            split=source.split,
            provenance=Provenance(sources=entry.sources, ops=entry.ops),
        ))
    return Manifest(records=new_records, name=manifest.name,
                    class_names=manifest.class_names)
