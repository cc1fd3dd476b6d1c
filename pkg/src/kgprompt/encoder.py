"""Frozen vision encoders producing a global feature and per-patch features."""

from __future__ import annotations

import base64
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .errors import BackendUnavailable, DimensionMismatch, IndivisibleGrid, IOFailure, ValidationError

DEFAULT_IMAGE_SIZE = 224
DEFAULT_GRID = 14


@dataclass(frozen=True)
class EncoderOutput:
    global_feature: np.ndarray   # (m_enc,)
    patch_features: np.ndarray   # (P*P, m_enc), row-major over the grid

    def __post_init__(self):
        if not (np.all(np.isfinite(self.global_feature)) and np.all(np.isfinite(self.patch_features))):
            raise ValidationError("encoder produced non-finite features")

    @property
    def grid(self) -> int:
        return int(round(np.sqrt(self.patch_features.shape[0])))


def check_image(img: np.ndarray, size: int | None = None) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionMismatch(f"expected an (H, W, 3) image, got {img.shape}")
    if img.shape[0] != img.shape[1]:
        raise DimensionMismatch(f"expected a square image, got {img.shape[:2]}")
    if size is not None and img.shape[0] != size:
        raise DimensionMismatch(f"expected {size}x{size} image, got {img.shape[0]}x{img.shape[1]}")
    return img


def patch_grid(img: np.ndarray, P: int) -> list[np.ndarray]:
    """Split an image into P*P non-overlapping patches, row-major."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    if P < 1 or h % P or w % P:
        raise IndivisibleGrid(f"{h}x{w} image cannot be split into a {P}x{P} grid")
    ph, pw = h // P, w // P
    return [img[r * ph:(r + 1) * ph, c * pw:(c + 1) * pw] for r in range(P) for c in range(P)]


def _patch_matrix(img: np.ndarray, P: int) -> np.ndarray:
    h, w, ch = img.shape
    if P < 1 or h % P or w % P:
        raise IndivisibleGrid(f"{h}x{w} image cannot be split into a {P}x{P} grid")
    ph, pw = h // P, w // P
    # (P, ph, P, pw, ch) -> (P, P, ph, pw, ch); same order as patch_grid
    blocks = img.reshape(P, ph, P, pw, ch).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(P * P, ph * pw * ch)


class ToyEncoder:
    """Linear random-projection encoder for desk-scale runs.

    Each patch feature is ``R @ flatten(patch)`` with a seeded matrix R whose
    rows have unit norm; the global feature is the mean of the patch features.
    There is nothing to train here.
    """

    name = "toy"

    def __init__(self, image_size: int = DEFAULT_IMAGE_SIZE, grid: int = DEFAULT_GRID,
                 out_dim: int = 32, seed: int = 0):
        if image_size % grid:
            raise IndivisibleGrid(f"{image_size}px images cannot be split into a {grid}x{grid} grid")
        self.image_size = image_size
        self.grid = grid
        self.out_dim = out_dim
        self.seed = seed
        patch_px = (image_size // grid) ** 2 * 3
        R = np.random.default_rng(seed).normal(size=(out_dim, patch_px))
        R /= np.linalg.norm(R, axis=1, keepdims=True)
        R.setflags(write=False)
        self.R = R

    def encode(self, img: np.ndarray) -> EncoderOutput:
        img = check_image(img, self.image_size)
        patches = _patch_matrix(img, self.grid) @ self.R.T
        return EncoderOutput(patches.mean(axis=0), patches)

    def checksum(self) -> str:
        return hashlib.sha256(self.R.tobytes()).hexdigest()


def toy_encode(img: np.ndarray, seed: int = 0, grid: int | None = None, out_dim: int = 32) -> EncoderOutput:
    img = check_image(img)
    grid = grid or (DEFAULT_GRID if img.shape[0] % DEFAULT_GRID == 0 else 1)
    return ToyEncoder(img.shape[0], grid, out_dim, seed).encode(img)


class ExternalEncoder:
    """Adapter for a pre-trained backbone served behind a local HTTP endpoint.

    Request: ``{"shape": [H, W, 3], "dtype": "float32", "data": <base64>}``.
    Response: ``{"global_feature": [...], "patch_features": [[...], ...]}``.
    """

    name = "external"

    def __init__(self, url: str | None, image_size: int = DEFAULT_IMAGE_SIZE, session=None,
                 timeout: float = 30.0):
        self.url = url
        self.image_size = image_size
        self.session = session or requests.Session()
        self.timeout = timeout

    def encode(self, img: np.ndarray) -> EncoderOutput:
        if not self.url:
            raise BackendUnavailable("external encoder selected but encoder_url is not configured")
        img = check_image(img, self.image_size).astype(np.float32)
        body = {"shape": list(img.shape), "dtype": "float32",
                "data": base64.b64encode(img.tobytes()).decode("ascii")}
        try:
            resp = self.session.post(self.url, json=body, timeout=self.timeout)
            resp.raise_for_status()
            payload = resp.json()
            g = np.asarray(payload["global_feature"], dtype=np.float64)
            p = np.asarray(payload["patch_features"], dtype=np.float64)
        except requests.RequestException as exc:
            raise BackendUnavailable(f"encoder endpoint unreachable: {exc}") from exc
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendUnavailable(f"encoder endpoint returned an unusable response: {exc}") from exc
        if g.ndim != 1 or p.ndim != 2 or p.shape[1] != g.shape[0]:
            raise BackendUnavailable(f"encoder response shapes {g.shape} / {p.shape} are inconsistent")
        return EncoderOutput(g, p)

    def checksum(self) -> str:
        return hashlib.sha256((self.url or "").encode()).hexdigest()


def encode(img: np.ndarray, backend) -> EncoderOutput:
    if backend is None:
        raise BackendUnavailable("no encoder backend configured")
    return backend.encode(img)


def load_image(path, size: int) -> np.ndarray:
    """Read an image as float64 (size, size, 3) in [0, 1].

    ``.npy`` arrays are taken as-is; other formats go through Pillow and are
    resized to the configured input size.
    """
    path = Path(path)
    try:
        if path.suffix == ".npy":
            img = np.load(path)
        else:
            from PIL import Image

            with Image.open(path) as im:
                im = im.convert("RGB")
                if im.size != (size, size):
                    im = im.resize((size, size), Image.BILINEAR)
                img = np.asarray(im, dtype=np.float64) / 255.0
    except OSError as exc:
        raise IOFailure(f"cannot read image {path}: {exc}") from exc
    return check_image(img, size)
