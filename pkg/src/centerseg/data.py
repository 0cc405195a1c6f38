"""Synthetic shape dataset and the on-disk manifest."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pnm

BACKGROUND = 255

# (color word, RGB, shape)
PALETTE = [
    ("red", (220, 40, 40), "circle"),
    ("blue", (40, 70, 220), "square"),
    ("green", (40, 180, 70), "triangle"),
    ("yellow", (230, 210, 40), "square"),
    ("purple", (150, 60, 190), "circle"),
    ("orange", (240, 140, 30), "triangle"),
]
BACKGROUNDS = [
    ("gray", (128, 128, 128)),
    ("white", (235, 235, 235)),
    ("black", (20, 20, 20)),
    ("brown", (120, 85, 50)),
]
CLASS_NAMES = [f"{color} {shape}" for color, _, shape in PALETTE]


def resolve_classes(classes) -> list[int]:
    """Palette indices from a count or a list of ``"color shape"`` names."""
    if isinstance(classes, int):
        if not 1 <= classes <= len(PALETTE):
            raise ValueError(f"between 1 and {len(PALETTE)} classes available")
        return list(range(classes))
    out = []
    for name in classes:
        if isinstance(name, (int, np.integer)) and 0 <= name < len(PALETTE):
            out.append(int(name))
            continue
        if name not in CLASS_NAMES:
            raise ValueError(f"unknown class {name!r}; choose from {CLASS_NAMES}")
        out.append(CLASS_NAMES.index(name))
    return out


def _shape_mask(shape: str, cy: float, cx: float, r: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    if shape == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if shape == "square":
        return (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    if shape == "triangle":
        top, bottom = cy - r, cy + r
        half = (yy - top) / (2 * r) * r
        return (yy >= top) & (yy <= bottom) & (np.abs(xx - cx) <= half)
    raise ValueError(shape)


@dataclass
class Sample:
    image: np.ndarray  # uint8 [H, W, 3]
    mask: np.ndarray  # uint8 [H, W], class index or BACKGROUND
    caption: str
    classes: list[int]


def make_sample(rng: np.random.Generator, class_ids: list[int], size: int = 64,
                max_shapes: int = 3, name_background: bool = True) -> Sample:
    """Solid background with 1..max_shapes non-overlapping shapes."""
    bg_name, bg_rgb = BACKGROUNDS[rng.integers(len(BACKGROUNDS))]
    image = np.empty((size, size, 3), dtype=np.uint8)
    image[:] = bg_rgb
    mask = np.full((size, size), BACKGROUND, dtype=np.uint8)
    boxes: list[tuple[float, float, float]] = []
    placed: list[tuple[float, int]] = []
    count = int(rng.integers(1, max_shapes + 1))
    lo, hi = size * 0.12, size * 0.22
    for _ in range(count):
        cls = class_ids[rng.integers(len(class_ids))]
        for _attempt in range(50):
            r = float(rng.uniform(lo, hi))
            cy, cx = rng.uniform(r + 1, size - r - 1, size=2)
            if all(abs(cy - y) > r + q + 2 or abs(cx - x) > r + q + 2 for y, x, q in boxes):
                break
        else:
            continue
        boxes.append((cy, cx, r))
        _, rgb, shape = PALETTE[cls]
        region = _shape_mask(shape, cy, cx, r, size)
        image[region] = rgb
        mask[region] = cls
        placed.append((cx, cls))
    placed.sort()
    names = [f"a {CLASS_NAMES[c]}" for _, c in placed]
    listing = names[0] if len(names) == 1 else ", ".join(names[:-1]) + " and " + names[-1]
    caption = f"a photo of {listing}"
    caption += f" on a {bg_name} background." if name_background else "."
    return Sample(image, mask, caption, sorted({c for _, c in placed}))


def generate_samples(count: int, seed: int, classes=2, size: int = 64,
                     max_shapes: int = 3, name_background: bool = True) -> list[Sample]:
    """Deterministic in ``seed``; repeated captions are re-drawn a few times."""
    rng = np.random.default_rng(seed)
    class_ids = resolve_classes(classes)
    samples, seen = [], set()
    for _ in range(count):
        for _attempt in range(20):
            s = make_sample(rng, class_ids, size, max_shapes, name_background)
            if s.caption not in seen:
                break
        seen.add(s.caption)
        samples.append(s)
    return samples


# -- manifest ------------------------------------------------------------------


@dataclass
class Entry:
    image: str
    caption: str
    mask: str = ""
    superpixel: str = ""


@dataclass
class DatasetManifest:
    root: Path
    entries: list[Entry] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)

    FILENAME = "manifest.csv"

    def path(self, rel: str) -> Path:
        return self.root / rel

    def __len__(self) -> int:
        return len(self.entries)

    def save(self) -> Path:
        target = self.root / self.FILENAME
        with target.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["image", "caption", "mask", "superpixel"])
            for e in self.entries:
                writer.writerow([e.image, e.caption, e.mask, e.superpixel])
        (self.root / "classes.txt").write_text("".join(f"{n}\n" for n in self.class_names))
        return target

    @classmethod
    def load(cls, path: str | Path, check: bool = True) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / cls.FILENAME
        root = path.parent
        with path.open(newline="") as fh:
            entries = [Entry(r["image"], r["caption"], r.get("mask", ""), r.get("superpixel", ""))
                       for r in csv.DictReader(fh)]
        names_file = root / "classes.txt"
        names = names_file.read_text().splitlines() if names_file.exists() else []
        manifest = cls(root, entries, [n for n in names if n])
        if check:
            manifest.validate()
        return manifest

    def validate(self) -> None:
        for e in self.entries:
            for rel in (e.image, e.caption, e.mask):
                if rel and not self.path(rel).exists():
                    raise FileNotFoundError(self.path(rel))
            if e.mask:
                img = pnm.read_ppm(self.path(e.image))
                msk = pnm.read_pgm(self.path(e.mask))
                if img.shape[:2] != msk.shape:
                    raise ValueError(f"{e.mask}: mask {msk.shape} vs image {img.shape[:2]}")

    def load_image(self, i: int) -> np.ndarray:
        return pnm.image_to_array(pnm.read_ppm(self.path(self.entries[i].image)))

    def load_caption(self, i: int) -> str:
        return self.path(self.entries[i].caption).read_text().strip()

    def load_mask(self, i: int) -> np.ndarray:
        """Ground truth with -1 for background."""
        raw = pnm.read_pgm(self.path(self.entries[i].mask)).astype(np.int64)
        raw[raw == BACKGROUND] = -1
        return raw


def generate_synthetic(out_dir: str | Path, count: int, seed: int = 0, classes=2,
                       size: int = 64, max_shapes: int = 3,
                       name_background: bool = True) -> DatasetManifest:
    out = Path(out_dir)
    for sub in ("images", "captions", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    class_ids = resolve_classes(classes)
    manifest = DatasetManifest(out, class_names=[CLASS_NAMES[c] for c in class_ids])
    for i, s in enumerate(generate_samples(count, seed, class_ids, size, max_shapes, name_background)):
        stem = f"{i:05d}"
        entry = Entry(f"images/{stem}.ppm", f"captions/{stem}.txt", f"masks/{stem}.pgm")
        pnm.write_ppm(out / entry.image, s.image)
        (out / entry.caption).write_text(s.caption + "\n")
        # mask stores palette ids remapped to positions in class_names
        remapped = np.full_like(s.mask, BACKGROUND)
        for pos, cid in enumerate(class_ids):
            remapped[s.mask == cid] = pos
        pnm.write_pgm(out / entry.mask, remapped)
        manifest.entries.append(entry)
    manifest.save()
    return manifest
