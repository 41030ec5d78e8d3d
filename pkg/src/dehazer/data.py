"""Crop extraction, augmentation, and deterministic batching of paired patches.

A patch set is a manifest of (scene, crop origin, variant) records over
paired hazy/clear images; pixels are materialized lazily through a small
decoded-image cache. Augmentation produces the 12 tag variants of a
square crop: four right-angle rotations, each combined with no flip, a
horizontal flip, or a vertical flip. (As transforms these cover the 8
elements of the square's symmetry group, so 4 of the 12 duplicate
another variant's pixels; the training protocol keeps all 12 records.)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageio import load_image

ROTATIONS = (0, 90, 180, 270)
FLIPS = ("none", "h", "v")
CROP_SIZE = 520
CROP_STRIDE = 260


@dataclass(frozen=True)
class AugmentVariant:
    rotation: int  # degrees, counter-clockwise
    flip: str

    def __post_init__(self):
        if self.rotation not in ROTATIONS:
            raise ValueError(f"rotation must be one of {ROTATIONS}")
        if self.flip not in FLIPS:
            raise ValueError(f"flip must be one of {FLIPS}")


def all_variants() -> list[AugmentVariant]:
    return [AugmentVariant(r, f) for r in ROTATIONS for f in FLIPS]


def apply_variant(img: np.ndarray, variant: AugmentVariant) -> np.ndarray:
    """Rotate counter-clockwise, then flip. Requires a square (h, w, ...) crop."""
    if img.shape[0] != img.shape[1]:
        raise ValueError(
            f"augmentation needs square crops, got {img.shape[0]}x{img.shape[1]}")
    out = np.rot90(img, k=variant.rotation // 90, axes=(0, 1))
    if variant.flip == "h":
        out = out[:, ::-1]
    elif variant.flip == "v":
        out = out[::-1, :]
    return np.ascontiguousarray(out)


def invert_variant(img: np.ndarray, variant: AugmentVariant) -> np.ndarray:
    """Undo apply_variant: flip first, then rotate back."""
    if variant.flip == "h":
        img = img[:, ::-1]
    elif variant.flip == "v":
        img = img[::-1, :]
    return np.ascontiguousarray(np.rot90(img, k=-(variant.rotation // 90),
                                         axes=(0, 1)))


def augment(crop: np.ndarray) -> list[np.ndarray]:
    """The 12 augmentation variants of a square crop, in tag order."""
    return [apply_variant(crop, v) for v in all_variants()]


def crop_origins(h: int, w: int, size: int = CROP_SIZE,
                 stride: int = CROP_STRIDE) -> list[tuple[int, int]]:
    """Top-left corners of all fully interior sliding-window crops."""
    if h < size or w < size:
        raise ValueError(
            f"image {h}x{w} is smaller than the {size}x{size} crop window")
    rows = (h - size) // stride + 1
    cols = (w - size) // stride + 1
    return [(r * stride, c * stride) for r in range(rows) for c in range(cols)]


def extract_crops(img: np.ndarray, size: int = CROP_SIZE,
                  stride: int = CROP_STRIDE):
    """All sliding-window crops with their origins, row-major."""
    out = []
    for r, c in crop_origins(img.shape[0], img.shape[1], size, stride):
        out.append(((r, c), img[r : r + size, c : c + size]))
    return out


@dataclass(frozen=True)
class PatchRecord:
    scene: str
    hazy_path: str
    clear_path: str
    row: int
    col: int
    rotation: int
    flip: str


class _ImageCache:
    """Tiny LRU over decoded images; scenes are revisited in bursts."""

    def __init__(self, capacity: int = 16):
        self.capacity = capacity
        self._store: dict[str, np.ndarray] = {}

    def get(self, path: str) -> np.ndarray:
        if path in self._store:
            data = self._store.pop(path)
        else:
            data = load_image(path).data
            if len(self._store) >= self.capacity:
                self._store.pop(next(iter(self._store)))
        self._store[path] = data
        return data


class PatchSet:
    """Manifest of patch records; pixels materialized on demand."""

    def __init__(self, records: list[PatchRecord], size: int):
        self.records = list(records)
        self.size = size
        self._cache = _ImageCache()

    def __len__(self):
        return len(self.records)

    def load_pair(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        """(hazy, clear) patch as (h, w, c) float32; same variant on both."""
        rec = self.records[index]
        variant = AugmentVariant(rec.rotation, rec.flip)
        pair = []
        for path in (rec.hazy_path, rec.clear_path):
            img = self._cache.get(path)
            crop = img[rec.row : rec.row + self.size, rec.col : rec.col + self.size]
            pair.append(apply_variant(crop, variant))
        return pair[0], pair[1]


def build_patchset(scenes, size: int = CROP_SIZE, stride: int = CROP_STRIDE,
                   augment_crops: bool = True) -> PatchSet:
    """Enumerate crop/variant records for (scene_id, hazy_path, clear_path) triples.

    Raises if a scene's hazy and clear images disagree on dims.
    """
    records = []
    variants = all_variants() if augment_crops else [AugmentVariant(0, "none")]
    for scene, hazy_path, clear_path in scenes:
        hazy = load_image(hazy_path)
        clear = load_image(clear_path)
        if hazy.data.shape != clear.data.shape:
            raise ValueError(
                f"scene {scene}: hazy {hazy.data.shape[:2]} and clear "
                f"{clear.data.shape[:2]} dims differ")
        for r, c in crop_origins(hazy.h, hazy.w, size, stride):
            for v in variants:
                records.append(PatchRecord(scene, str(hazy_path), str(clear_path),
                                           r, c, v.rotation, v.flip))
    return PatchSet(records, size)


def write_manifest(patchset: PatchSet, path):
    """Tab-separated records: scene, hazy, clear, row, col, rotation, flip."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# patch size: {patchset.size}\n")
        for r in patchset.records:
            fh.write(f"{r.scene}\t{r.hazy_path}\t{r.clear_path}\t{r.row}\t"
                     f"{r.col}\t{r.rotation}\t{r.flip}\n")


def read_manifest(path) -> PatchSet:
    records = []
    size = CROP_SIZE
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# patch size:"):
                size = int(line.split(":")[1])
                continue
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 7:
                raise ValueError(f"{path}: malformed manifest line: {line!r}")
            scene, hazy, clear, row, col, rot, flip = parts
            records.append(PatchRecord(scene, hazy, clear, int(row), int(col),
                                       int(rot), flip))
    return PatchSet(records, size)


def epoch_permutation(count: int, seed: int, epoch: int) -> np.ndarray:
    """The deterministic shuffle used for one pass over the patch set."""
    return np.random.default_rng([seed, epoch]).permutation(count)


def make_batches(patchset: PatchSet, batch_size: int, seed: int, epoch: int = 0):
    """Yield (hazy, clear) batches as (n, c, h, w) float32 for one pass.

    Order is the deterministic (seed, epoch) shuffle; the final partial
    batch is dropped.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = epoch_permutation(len(patchset), seed, epoch)
    usable = (len(perm) // batch_size) * batch_size
    for start in range(0, usable, batch_size):
        hazy_list, clear_list = [], []
        for idx in perm[start : start + batch_size]:
            hazy, clear = patchset.load_pair(int(idx))
            hazy_list.append(hazy)
            clear_list.append(clear)
        hazy_b = np.stack(hazy_list).transpose(0, 3, 1, 2)
        clear_b = np.stack(clear_list).transpose(0, 3, 1, 2)
        yield (np.ascontiguousarray(hazy_b, dtype=np.float32),
               np.ascontiguousarray(clear_b, dtype=np.float32))
