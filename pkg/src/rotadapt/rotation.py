"""Quarter-turn transforms and rotation-label machinery for the pretext task.

A rotation episode independently rotates the two modalities of a sample by
clockwise quarter-turns j (color) and k (depth); the relative label is
z = (k - j) mod 4. The absolute variant rotates only the color image by i and
uses z = i as the label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PairedSample
from .errors import DataError

RELATIVE = "relative"
ABSOLUTE = "absolute"


def rot90(image: np.ndarray, i: int) -> np.ndarray:
    """Rotate a square H×W×ch image clockwise by i*90 degrees (i in [0,3])."""
    if not 0 <= int(i) <= 3:
        raise ValueError(f"rotation index must be in [0,3], got {i}")
    if image.shape[0] != image.shape[1]:
        raise DataError(f"rot90 requires a square image, got {image.shape[:2]}")
    if i == 0:
        return image
    return np.ascontiguousarray(np.rot90(image, k=-int(i), axes=(0, 1)))


def relative_label(j: int, k: int) -> int:
    """Relative rotation label (k - j) mod 4 for per-modality rotations j, k."""
    if not 0 <= int(j) <= 3 or not 0 <= int(k) <= 3:
        raise ValueError(f"rotation indices must be in [0,3], got j={j}, k={k}")
    return (int(k) - int(j)) % 4


@dataclass
class RotationBatch:
    """A batch of rotation episodes.

    For task="relative", z[i] == (k[i] - j[i]) mod 4. For task="absolute" the
    depth images are passed through unrotated (k == 0) and z[i] == j[i], the
    rotation applied to the color image.
    """

    color: np.ndarray   # (N, H, W, ch) rotated color images
    depth: np.ndarray   # (N, H, W, ch) rotated (or pass-through) depth images
    z: np.ndarray       # (N,) labels in [0,3]
    j: np.ndarray       # (N,) color rotation indices
    k: np.ndarray       # (N,) depth rotation indices
    domains: np.ndarray  # (N,) "source"/"target" per item
    task: str = RELATIVE

    def __len__(self) -> int:
        return len(self.z)


def _check_batch(samples: list[PairedSample]) -> None:
    if not samples:
        raise DataError("rotation batch requires a non-empty sample list")
    h, w = samples[0].color.shape[:2]
    if h != w:
        raise DataError(f"rotation batch requires square samples, got {h}×{w}")
    for s in samples:
        if s.color.shape[:2] != (h, w) or s.depth.shape[:2] != (h, w):
            raise DataError(f"sample {s.id}: size differs from batch ({h}×{w})")


def make_rotation_batch(samples: list[PairedSample], rng: np.random.Generator) -> RotationBatch:
    """Draw one relative-rotation episode per sample.

    j and the label z are drawn uniformly over [0,3] and k = (j + z) mod 4, so
    the label distribution is uniform by construction.
    """
    _check_batch(samples)
    n = len(samples)
    j = rng.integers(0, 4, size=n)
    z = rng.integers(0, 4, size=n)
    k = (j + z) % 4
    color = np.stack([rot90(s.color, int(ji)) for s, ji in zip(samples, j)])
    depth = np.stack([rot90(s.depth, int(ki)) for s, ki in zip(samples, k)])
    domains = np.array([s.domain for s in samples])
    return RotationBatch(color=color, depth=depth, z=z.astype(np.int64),
                         j=j.astype(np.int64), k=k.astype(np.int64),
                         domains=domains, task=RELATIVE)


def make_absolute_rotation_batch(samples: list[PairedSample],
                                 rng: np.random.Generator) -> RotationBatch:
    """Draw one absolute-rotation episode per sample (baseline task).

    Only the color modality is rotated, by uniform i in [0,3]; the label is i.
    Depth is passed through unrotated and carries no information about i.
    """
    _check_batch(samples)
    n = len(samples)
    i = rng.integers(0, 4, size=n)
    color = np.stack([rot90(s.color, int(ii)) for s, ii in zip(samples, i)])
    depth = np.stack([np.ascontiguousarray(s.depth) for s in samples])
    domains = np.array([s.domain for s in samples])
    return RotationBatch(color=color, depth=depth, z=i.astype(np.int64),
                         j=i.astype(np.int64), k=np.zeros(n, dtype=np.int64),
                         domains=domains, task=ABSOLUTE)
