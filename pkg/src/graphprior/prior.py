"""Class co-occurrence priors built from object annotations.

The prior is a symmetric C x C matrix of image-level Jaccard co-occurrence
rates: T[k][l] = (#images containing both k and l) / (#images containing k or
l). Diagonal entries hold the probability that a class repeats within an image
given that it appears at all. Classes that never appear get zero rows rather
than a smoothing constant (smoothing is opt-in via smoothing_eps).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tensorcore import as_matrix, load_matrix_csv, save_matrix_csv

__all__ = [
    "Box",
    "ImageRecord",
    "Annotations",
    "PriorMatrix",
    "load_annotations",
    "build_prior",
    "save_prior",
    "load_prior",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with strictly positive extent."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(
                f"degenerate box: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass
class ImageRecord:
    id: int
    objects: list[tuple[int, Box]] = field(default_factory=list)


@dataclass
class Annotations:
    images: list[ImageRecord]
    categories: list[tuple[int, str]]

    def __post_init__(self):
        cat_ids = {cid for cid, _ in self.categories}
        seen = set()
        for img in self.images:
            if img.id in seen:
                raise ValueError(f"duplicate image id {img.id}")
            seen.add(img.id)
            for cid, _ in img.objects:
                if cid not in cat_ids:
                    raise ValueError(f"annotation references unknown category id {cid}")


def load_annotations(path) -> Annotations:
    """Parse a COCO-style subset: images, annotations with [x, y, w, h] bboxes, categories."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise FileNotFoundError(f"annotations file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON: {exc}") from None

    for key in ("images", "annotations", "categories"):
        if key not in raw or not isinstance(raw[key], list):
            raise ValueError(f"{path}: missing or non-list '{key}' section")

    categories = []
    for cat in raw["categories"]:
        try:
            categories.append((int(cat["id"]), str(cat.get("name", ""))))
        except (KeyError, TypeError, ValueError):
            raise ValueError(f"{path}: malformed category entry {cat!r}") from None

    records: dict[int, ImageRecord] = {}
    for img in raw["images"]:
        try:
            iid = int(img["id"])
        except (KeyError, TypeError, ValueError):
            raise ValueError(f"{path}: malformed image entry {img!r}") from None
        if iid in records:
            raise ValueError(f"{path}: duplicate image id {iid}")
        records[iid] = ImageRecord(id=iid)

    for ann in raw["annotations"]:
        try:
            iid = int(ann["image_id"])
            cid = int(ann["category_id"])
            x, y, w, h = (float(v) for v in ann["bbox"])
        except (KeyError, TypeError, ValueError):
            raise ValueError(f"{path}: malformed annotation entry {ann!r}") from None
        if iid not in records:
            raise ValueError(f"{path}: annotation references unknown image id {iid}")
        if w <= 0.0 or h <= 0.0:
            raise ValueError(f"{path}: non-positive bbox size {[x, y, w, h]} on image {iid}")
        records[iid].objects.append((cid, Box(x, y, x + w, y + h)))

    return Annotations(images=list(records.values()), categories=categories)


@dataclass
class PriorMatrix:
    """Symmetric co-occurrence prior with entries in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = as_matrix("prior values", self.values)
        if v.shape[0] != v.shape[1]:
            raise ValueError(f"prior must be square, got shape {v.shape}")
        bad = np.argwhere((v < 0.0) | (v > 1.0))
        if bad.size:
            k, l = bad[0]
            raise ValueError(f"prior entry out of [0, 1] at ({k}, {l}): {v[k, l]}")
        asym = np.argwhere(v != v.T)
        if asym.size:
            k, l = asym[0]
            raise ValueError(f"prior not symmetric at ({k}, {l}): {v[k, l]} vs {v[l, k]}")
        self.values = v

    @property
    def num_classes(self) -> int:
        return self.values.shape[0]


def build_prior(ann: Annotations, num_classes: int, smoothing_eps: float = 0.0) -> PriorMatrix:
    """Count image-level co-occurrence and return the Jaccard prior.

    Off-diagonal: T[k][l] = n_kl / (n_k + n_l - n_kl) over images.
    Diagonal: fraction of k-containing images holding >= 2 instances of k.
    Pairs with no observations stay 0 unless smoothing_eps > 0, in which case
    every entry is floored at smoothing_eps.
    """
    if num_classes <= 0:
        raise ValueError(f"num_classes must be positive, got {num_classes}")
    pair = np.zeros((num_classes, num_classes), dtype=np.float64)
    multi = np.zeros(num_classes, dtype=np.float64)
    for img in ann.images:
        counts = np.zeros(num_classes, dtype=np.int64)
        for cid, _box in img.objects:
            if not 0 <= cid < num_classes:
                raise ValueError(f"category id {cid} out of range [0, {num_classes})")
            counts[cid] += 1
        present = (counts > 0).astype(np.float64)
        pair += np.outer(present, present)
        multi += (counts >= 2).astype(np.float64)

    n = np.diag(pair).copy()  # images containing each class
    union = n[:, None] + n[None, :] - pair
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(union > 0.0, pair / np.where(union > 0.0, union, 1.0), 0.0)
        diag = np.where(n > 0.0, multi / np.where(n > 0.0, n, 1.0), 0.0)
    np.fill_diagonal(t, diag)
    if smoothing_eps > 0.0:
        t = np.clip(np.maximum(t, smoothing_eps), 0.0, 1.0)
    return PriorMatrix(values=t)


def save_prior(t: PriorMatrix, path) -> None:
    save_matrix_csv(path, t.values)


def load_prior(path) -> PriorMatrix:
    """Load a prior CSV; validates squareness, symmetry, and [0, 1] bounds."""
    return PriorMatrix(values=load_matrix_csv(path))
