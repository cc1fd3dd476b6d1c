"""Dataset manifests and frozen-encoder feature sets."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import load_image
from .errors import IOFailure, MalformedFile

MANIFEST_HEADER = ("path", "label", "subject", "attack_type", "split")
LABELS = ("real", "mask")
SPLITS = ("train", "dev", "test", "auto")


@dataclass(frozen=True)
class ManifestRow:
    path: str
    label: str
    subject: str
    attack_type: str
    split: str

    @property
    def is_genuine(self) -> bool:
        return self.label == "real"


@dataclass(frozen=True)
class Manifest:
    rows: tuple[ManifestRow, ...]
    root: Path  # relative image paths resolve against this directory

    def __len__(self) -> int:
        return len(self.rows)

    def resolve(self, row: ManifestRow) -> Path:
        p = Path(row.path)
        return p if p.is_absolute() else self.root / p

    def select(self, split: str | None = None, subjects: Sequence[str] | None = None) -> "Manifest":
        keep = self.rows
        if split is not None:
            keep = tuple(r for r in keep if r.split == split)
        if subjects is not None:
            wanted = set(subjects)
            keep = tuple(r for r in keep if r.subject in wanted)
        return Manifest(keep, self.root)

    @property
    def subjects(self) -> list[str]:
        return sorted({r.subject for r in self.rows})

    def identity(self) -> frozenset:
        return frozenset(str(self.resolve(r).resolve()) for r in self.rows)


def parse_manifest(text: str, root: Path) -> Manifest:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedFile("manifest is empty") from None
    if tuple(h.strip() for h in header) != MANIFEST_HEADER:
        raise MalformedFile(f"manifest header must be {','.join(MANIFEST_HEADER)}, got {','.join(header)}")
    rows = []
    for lineno, fields in enumerate(reader, start=2):
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != len(MANIFEST_HEADER):
            raise MalformedFile(f"manifest line {lineno}: expected {len(MANIFEST_HEADER)} fields")
        row = ManifestRow(*(f.strip() for f in fields))
        if row.label not in LABELS:
            raise MalformedFile(f"manifest line {lineno}: label must be one of {LABELS}")
        if row.split not in SPLITS:
            raise MalformedFile(f"manifest line {lineno}: split must be one of {SPLITS}")
        if not row.path or not row.subject:
            raise MalformedFile(f"manifest line {lineno}: path and subject are required")
        rows.append(row)
    return Manifest(tuple(rows), root)


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IOFailure(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(text, path.parent)


def write_manifest(rows: Sequence[ManifestRow], path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    for r in rows:
        w.writerow([r.path, r.label, r.subject, r.attack_type, r.split])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


@dataclass(frozen=True)
class FeatureSet:
    """Encoder outputs for a manifest slice, kept in manifest order."""

    global_feats: np.ndarray  # (N, m_enc)
    patch_feats: np.ndarray   # (N, J, m_enc)
    genuine: np.ndarray       # (N,) bool
    subjects: tuple[str, ...]
    attack_types: tuple[str, ...]
    paths: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.paths)

    def take(self, idx) -> "FeatureSet":
        idx = np.asarray(idx, dtype=int)
        return FeatureSet(self.global_feats[idx], self.patch_feats[idx], self.genuine[idx],
                          tuple(self.subjects[i] for i in idx), tuple(self.attack_types[i] for i in idx),
                          tuple(self.paths[i] for i in idx))

    def labels(self, real_index: int, mask_index: int) -> np.ndarray:
        return np.where(self.genuine, real_index, mask_index)


def encode_manifest(manifest: Manifest, encoder, image_size: int, cache: dict | None = None) -> FeatureSet:
    """Run the frozen encoder over every row; `cache` memoises by resolved path."""
    g, p = [], []
    for row in manifest.rows:
        key = str(manifest.resolve(row))
        out = cache.get(key) if cache is not None else None
        if out is None:
            out = encoder.encode(load_image(key, image_size))
            if cache is not None:
                cache[key] = out
        g.append(out.global_feature)
        p.append(out.patch_features)
    if not manifest.rows:
        raise MalformedFile("cannot encode an empty manifest slice")
    return FeatureSet(
        np.stack(g), np.stack(p),
        np.array([r.is_genuine for r in manifest.rows]),
        tuple(r.subject for r in manifest.rows),
        tuple(r.attack_type for r in manifest.rows),
        tuple(r.path for r in manifest.rows),
    )


def encode_arrays(images: np.ndarray, rows: Sequence[ManifestRow], encoder) -> FeatureSet:
    """Like `encode_manifest` for images already in memory."""
    outs = [encoder.encode(img) for img in images]
    return FeatureSet(
        np.stack([o.global_feature for o in outs]), np.stack([o.patch_features for o in outs]),
        np.array([r.is_genuine for r in rows]),
        tuple(r.subject for r in rows), tuple(r.attack_type for r in rows), tuple(r.path for r in rows),
    )
