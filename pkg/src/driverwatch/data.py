"""Driving-behavior image corpus: scanning, splitting, preprocessing, augmentation.

Expected layout is ten class directories c0..c9 under a root, optionally with
a driver-list CSV (header ``subject,classname,img``) mapping each image to the
driver who appears in it. Splits are deterministic per seed; the grouped
strategy keeps every driver's images inside a single partition so identity
never leaks across train/val/test.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .tensor import Tensor

log = logging.getLogger(__name__)

INPUT_SIZE = 224
IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp"}
SUBJECT_CSV_NAME = "driver_imgs_list.csv"

# Optional horizontal-flip label remap: classes 1-4 encode which hand is
# used, so a mirrored image belongs to the opposite-hand class.
HFLIP_CLASS_SWAP = {1: 3, 3: 1, 2: 4, 4: 2}


@dataclass(frozen=True)
class DriverClass:
    class_id: int
    code: str
    label: str


CLASS_TABLE: tuple[DriverClass, ...] = (
    DriverClass(0, "c0", "Safe driving"),
    DriverClass(1, "c1", "Texting - right hand"),
    DriverClass(2, "c2", "Talking on the phone - right hand"),
    DriverClass(3, "c3", "Texting - left hand"),
    DriverClass(4, "c4", "Talking on the phone - left hand"),
    DriverClass(5, "c5", "Operating the radio"),
    DriverClass(6, "c6", "Drinking a beverage"),
    DriverClass(7, "c7", "Reaching behind"),
    DriverClass(8, "c8", "Hair and makeup"),
    DriverClass(9, "c9", "Talking to passenger"),
)

NUM_CLASSES = len(CLASS_TABLE)


def label_for(class_id: int) -> str:
    return CLASS_TABLE[class_id].label


class DatasetError(Exception):
    pass


class MissingClassDirError(DatasetError):
    pass


class ImageDecodeError(DatasetError):
    pass


class SplitError(DatasetError):
    pass


@dataclass(frozen=True)
class Sample:
    path: Path
    class_id: int
    subject_id: str | None = None


@dataclass(frozen=True)
class DatasetIndex:
    root: Path
    samples: tuple[Sample, ...]

    def __len__(self) -> int:
        return len(self.samples)

    def class_counts(self) -> dict[int, int]:
        counts = {c.class_id: 0 for c in CLASS_TABLE}
        for s in self.samples:
            counts[s.class_id] += 1
        return counts

    def has_subjects(self) -> bool:
        return all(s.subject_id is not None for s in self.samples)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0
    strategy: str = "stratified_random"

    def __post_init__(self):
        if any(r <= 0 for r in self.ratios):
            raise SplitError(f"all split ratios must be > 0, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-6:
            raise SplitError(f"split ratios must sum to 1, got {self.ratios}")
        if self.strategy not in ("stratified_random", "grouped_by_subject"):
            raise SplitError(f"unknown split strategy {self.strategy!r}")


@dataclass(frozen=True)
class Split:
    train: tuple[Sample, ...]
    val: tuple[Sample, ...]
    test: tuple[Sample, ...]

    def part(self, name: str) -> tuple[Sample, ...]:
        try:
            return getattr(self, name)
        except AttributeError:
            raise SplitError(f"unknown split part {name!r}; use train/val/test")


def _load_subject_map(csv_path: Path) -> dict[str, str]:
    subjects: dict[str, str] = {}
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                subjects[f"{row['classname']}/{row['img']}"] = row["subject"]
            except KeyError as e:
                raise DatasetError(
                    f"{csv_path}: expected header subject,classname,img (missing {e})"
                ) from e
    return subjects


def scan(root: str | Path, subject_csv: str | Path | None = None) -> DatasetIndex:
    """Index every image under <root>/c0..c9, sorted by path for determinism."""
    root = Path(root)
    missing = [c.code for c in CLASS_TABLE if not (root / c.code).is_dir()]
    if missing:
        raise MissingClassDirError(f"missing class directories under {root}: {missing}")

    if subject_csv is None:
        candidate = root / SUBJECT_CSV_NAME
        subject_csv = candidate if candidate.is_file() else None
    subjects = _load_subject_map(Path(subject_csv)) if subject_csv else {}

    samples = []
    for cls in CLASS_TABLE:
        count = 0
        for p in sorted((root / cls.code).iterdir()):
            if not p.is_file() or p.suffix.lower() not in IMAGE_EXTENSIONS:
                continue
            subject = subjects.get(f"{cls.code}/{p.name}")
            samples.append(Sample(path=p, class_id=cls.class_id, subject_id=subject))
            count += 1
        log.info("scan: %s (%s): %d images", cls.code, cls.label, count)
    return DatasetIndex(root=root, samples=tuple(samples))


def _apportion(total: int, ratios: tuple[float, float, float]) -> list[int]:
    """Largest-remainder allocation: each part is within 1 of total * ratio."""
    raw = [total * r for r in ratios]
    counts = [math.floor(x) for x in raw]
    remainder = total - sum(counts)
    by_frac = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in by_frac[:remainder]:
        counts[i] += 1
    return counts


def _stratified_split(index: DatasetIndex, spec: SplitSpec) -> Split:
    rng = np.random.default_rng(spec.seed)
    parts: tuple[list[Sample], list[Sample], list[Sample]] = ([], [], [])
    by_class: dict[int, list[Sample]] = {}
    for s in index.samples:
        by_class.setdefault(s.class_id, []).append(s)
    for class_id in sorted(by_class):
        group = by_class[class_id]
        order = rng.permutation(len(group))
        counts = _apportion(len(group), spec.ratios)
        at = 0
        for part, n in zip(parts, counts):
            part.extend(group[i] for i in order[at : at + n])
            at += n
    return Split(*(tuple(p) for p in parts))


def _grouped_split(index: DatasetIndex, spec: SplitSpec) -> Split:
    if not index.has_subjects():
        raise SplitError(
            "grouped_by_subject split requires a subject id on every sample; "
            "provide the driver-list CSV when scanning"
        )
    by_subject: dict[str, list[Sample]] = {}
    for s in index.samples:
        by_subject.setdefault(s.subject_id, []).append(s)
    subject_ids = sorted(by_subject)
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(subject_ids))
    total = len(index.samples)
    targets = [total * r for r in spec.ratios]
    filled = [0, 0, 0]
    parts: tuple[list[Sample], list[Sample], list[Sample]] = ([], [], [])
    for i in order:
        group = by_subject[subject_ids[i]]
        # largest remaining deficit wins; ties resolve to train, then val
        bucket = max(range(3), key=lambda j: (targets[j] - filled[j], -j))
        parts[bucket].extend(group)
        filled[bucket] += len(group)
    return Split(*(tuple(p) for p in parts))


def split(index: DatasetIndex, spec: SplitSpec) -> Split:
    """Disjoint, exhaustive partition of the index; identical inputs give identical output."""
    if spec.strategy == "stratified_random":
        return _stratified_split(index, spec)
    return _grouped_split(index, spec)


def write_split_manifests(sp: Split, index: DatasetIndex, out_dir: str | Path) -> list[Path]:
    """Write train.txt/val.txt/test.txt with root-relative paths, one per line."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("train", "val", "test"):
        path = out_dir / f"{name}.txt"
        lines = [str(s.path.relative_to(index.root)) for s in sp.part(name)]
        path.write_text("\n".join(lines) + ("\n" if lines else ""))
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# preprocessing


def decode_image(source: bytes | str | Path) -> np.ndarray:
    """Decode to an (h, w, 3) uint8 RGB array."""
    try:
        if isinstance(source, bytes):
            img = Image.open(io.BytesIO(source))
        else:
            img = Image.open(source)
        return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise ImageDecodeError(f"cannot decode image {source if not isinstance(source, bytes) else '<bytes>'}: {e}") from e


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel-center alignment and edge clamping.

    Resampling a (h, w)-sized image to the same size is an exact identity.
    """
    h, w = img.shape[:2]
    src = img.astype(np.float32)
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0).astype(np.float32)[:, None, None]
    fx = np.clip(xs - x0, 0.0, 1.0).astype(np.float32)[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def preprocess(source: bytes | str | Path) -> Tensor:
    """Decode, bilinear-resize to 224x224, scale to [0, 1]; returns (1, 3, 224, 224)."""
    rgb = decode_image(source)
    resized = resize_bilinear(rgb, INPUT_SIZE, INPUT_SIZE)
    chw = resized.transpose(2, 0, 1) / np.float32(255.0)
    return Tensor(chw[None, ...])


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentPolicy:
    rotate_deg_max: float = 10.0
    hflip_prob: float = 0.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    flip_with_label_swap: bool = False


def rotate_scale(t: Tensor, angle_deg: float, scale: float) -> Tensor:
    """Rotate counter-clockwise about the image center and zoom, in one resample.

    Inverse-mapped bilinear sampling; coordinates outside the source are
    clamped, which replicates edge pixels.
    """
    if angle_deg == 0.0 and scale == 1.0:
        return t
    n, c, h, w = t.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    u = (xx - cx) / scale
    v = (yy - cy) / scale
    # inverse rotation: positive angle turns content counter-clockwise
    src_x = cos_t * u - sin_t * v + cx
    src_y = sin_t * u + cos_t * v + cy
    x0 = np.clip(np.floor(src_x), 0, w - 1).astype(np.int64)
    y0 = np.clip(np.floor(src_y), 0, h - 1).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(src_x - x0, 0.0, 1.0).astype(np.float32)
    fy = np.clip(src_y - y0, 0.0, 1.0).astype(np.float32)
    img = t.data
    out = (
        img[:, :, y0, x0] * ((1 - fx) * (1 - fy))
        + img[:, :, y0, x1] * (fx * (1 - fy))
        + img[:, :, y1, x0] * ((1 - fx) * fy)
        + img[:, :, y1, x1] * (fx * fy)
    )
    return Tensor(out)


def hflip(t: Tensor) -> Tensor:
    return Tensor(np.ascontiguousarray(t.data[:, :, :, ::-1]))


def augment(t: Tensor, policy: AugmentPolicy, rng: np.random.Generator) -> Tensor:
    """Random rotate/flip/zoom per policy; a degenerate policy is an exact identity."""
    out = t
    if policy.hflip_prob > 0 and rng.random() < policy.hflip_prob:
        out = hflip(out)
    angle = 0.0
    if policy.rotate_deg_max > 0:
        angle = float(rng.uniform(-policy.rotate_deg_max, policy.rotate_deg_max))
    lo, hi = policy.scale_range
    scale = 1.0 if lo == hi == 1.0 else float(rng.uniform(lo, hi))
    return rotate_scale(out, angle, scale)


def augment_sample(t: Tensor, class_id: int, policy: AugmentPolicy,
                   rng: np.random.Generator) -> tuple[Tensor, int]:
    """Augment an image together with its label.

    The label only changes when flip_with_label_swap is enabled and a flip
    fires, remapping the hand-specific classes (1<->3, 2<->4).
    """
    out = t
    label = class_id
    if policy.hflip_prob > 0 and rng.random() < policy.hflip_prob:
        out = hflip(out)
        if policy.flip_with_label_swap:
            label = HFLIP_CLASS_SWAP.get(label, label)
    angle = 0.0
    if policy.rotate_deg_max > 0:
        angle = float(rng.uniform(-policy.rotate_deg_max, policy.rotate_deg_max))
    lo, hi = policy.scale_range
    scale = 1.0 if lo == hi == 1.0 else float(rng.uniform(lo, hi))
    return rotate_scale(out, angle, scale), label
