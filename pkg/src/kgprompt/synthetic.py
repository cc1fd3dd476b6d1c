"""Seeded two-cluster image datasets for desk-scale runs and tests.

Each image has a central "face" region carrying the class template and a
class-independent background border. Pixels are
``template + subject offset + domain shift + noise``, clipped to [0, 1].

Class templates come from a fixed seed, so datasets generated with other
seeds or shifts share the same two classes; that is what a cross-dataset
run needs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import ManifestRow, write_manifest

ATTACK_TYPES = ("resin", "silicone")
_TEMPLATE_SEED = 20240613


def face_mask(size: int) -> np.ndarray:
    """Boolean (size, size, 1) array marking the central face region."""
    inner = np.zeros((size, size, 1), dtype=bool)
    lo, hi = size // 4, size - size // 4
    inner[lo:hi, lo:hi] = True
    return inner


def class_templates(size: int, contrast: float = 0.35) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(_TEMPLATE_SEED)
    base = rng.uniform(0.35, 0.65, size=(size, size, 3))
    delta = rng.normal(0.0, contrast, size=(size, size, 3)) * face_mask(size)
    return {"real": base + delta / 2, "mask": base - delta / 2}


def generate(n_subjects: int = 6, per_class: int = 10, size: int = 64, seed: int = 0,
             shift: float = 0.0, noise: float = 0.1, contrast: float = 0.35,
             splits: dict[str, str] | None = None, prefix: str = "") -> tuple[np.ndarray, list[ManifestRow]]:
    """Images (N, size, size, 3) and their manifest rows, subject by subject.

    `splits` maps subject id to a split name; unlisted subjects get ``auto``.
    Row paths are ``images/<name>.npy``, the layout used by `write_dataset`.
    """
    rng = np.random.default_rng(seed)
    templates = class_templates(size, contrast)
    images, rows = [], []
    for s in range(n_subjects):
        subject = f"{prefix}s{s:02d}"
        offset = rng.normal(0.0, 0.02, size=(1, 1, 3))
        split = (splits or {}).get(subject, "auto")
        for label in ("real", "mask"):
            batch = templates[label] + offset + shift + rng.normal(0.0, noise, size=(per_class, size, size, 3))
            images.append(np.clip(batch, 0.0, 1.0))
            for i in range(per_class):
                attack = ATTACK_TYPES[i % len(ATTACK_TYPES)] if label == "mask" else ""
                rows.append(ManifestRow(f"images/{subject}_{label}_{i:03d}.npy", label, subject, attack, split))
    return np.concatenate(images), rows


def write_dataset(root, images: np.ndarray, rows: list[ManifestRow]) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    for img, row in zip(images, rows):
        np.save(root / row.path, img)
    path = root / "manifest.csv"
    write_manifest(rows, path)
    return path


def make_two_cluster_dataset(root, **kwargs) -> Path:
    """Generate a dataset (see `generate`) and write it under `root`; return the manifest path."""
    return write_dataset(root, *generate(**kwargs))
