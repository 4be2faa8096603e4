"""Dataset representation and on-disk ingestion for paired color+depth samples.

A dataset is a flat list of :class:`PairedSample`. On disk it is described by a
manifest file: a UTF-8 text file with one tab-separated record per line,

    <color-relpath>\t<depth-relpath>\t<label-int>\t<split>

preceded by a header line ``#classes: name0,name1,...`` and optionally
``#depth: colorized`` when the depth files are already 3-channel colorized
images. Color files are 8-bit PNG; raw depth files are 16-bit single-channel
PNG where 0 marks a missing measurement. ``label-int`` of -1 marks an
unlabeled record.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DataError

SOURCE = "source"
TARGET = "target"

LOG_EPS = 1e-7


@dataclass
class PairedSample:
    """One data point: a color image, the paired depth image, and bookkeeping.

    color: H×W×3 float32 in [0, 1].
    depth: H×W×1 raw depth (arbitrary units, 0 = missing) or H×W×3 colorized.
    label: class index in [0, C), or None for unlabeled target samples.
    domain: "source" or "target".
    id: opaque identifier.
    meta: optional generator/bookkeeping metadata (pose, mask, clamp flags).
    """

    color: np.ndarray
    depth: np.ndarray
    label: int | None
    domain: str
    id: str
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.color.ndim != 3 or self.color.shape[2] != 3:
            raise DataError(f"sample {self.id}: color must be H×W×3, got {self.color.shape}")
        if self.depth.ndim not in (2, 3):
            raise DataError(f"sample {self.id}: depth must be H×W or H×W×ch, got {self.depth.shape}")
        if self.color.shape[:2] != self.depth.shape[:2]:
            raise DataError(
                f"sample {self.id}: color {self.color.shape[:2]} and depth "
                f"{self.depth.shape[:2]} spatial dims differ"
            )
        if self.domain not in (SOURCE, TARGET):
            raise DataError(f"sample {self.id}: bad domain {self.domain!r}")
        if self.domain == SOURCE and self.label is None:
            raise DataError(f"sample {self.id}: source samples must be labeled")


@dataclass
class ManifestRecord:
    color_path: str
    depth_path: str
    label: int
    split: str
    line_no: int = 0


@dataclass
class DatasetManifest:
    root: Path
    records: list[ManifestRecord]
    class_names: list[str]
    depth_colorized: bool = False

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.records)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Parse and validate a manifest file.

    Raises DataError naming the offending line for malformed records, dangling
    image references and out-of-range labels.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    root = path.parent
    class_names: list[str] | None = None
    depth_colorized = False
    records: list[ManifestRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                head, _, rest = line[1:].partition(":")
                head = head.strip().lower()
                if head == "classes":
                    class_names = [c.strip() for c in rest.split(",") if c.strip()]
                elif head == "depth":
                    depth_colorized = rest.strip().lower() == "colorized"
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{line_no}: expected 4 tab-separated fields, got {len(parts)}")
            color_rel, depth_rel, label_str, split = parts
            try:
                label = int(label_str)
            except ValueError:
                raise DataError(f"{path}:{line_no}: label {label_str!r} is not an integer") from None
            records.append(ManifestRecord(color_rel, depth_rel, label, split, line_no))
    if class_names is None:
        raise DataError(f"{path}: missing '#classes:' header line")
    manifest = DatasetManifest(root=root, records=records, class_names=class_names,
                               depth_colorized=depth_colorized)
    for rec in manifest.records:
        if not (root / rec.color_path).is_file():
            raise DataError(f"{path}:{rec.line_no}: color file not found: {rec.color_path}")
        if not (root / rec.depth_path).is_file():
            raise DataError(f"{path}:{rec.line_no}: depth file not found: {rec.depth_path}")
        if rec.label >= manifest.num_classes or rec.label < -1:
            raise DataError(
                f"{path}:{rec.line_no}: label out of range: {rec.label} "
                f"(have {manifest.num_classes} classes)"
            )
    return manifest


def save_manifest(path: str | os.PathLike, manifest: DatasetManifest) -> None:
    path = Path(path)
    lines = [f"#classes: {','.join(manifest.class_names)}"]
    if manifest.depth_colorized:
        lines.append("#depth: colorized")
    for rec in manifest.records:
        lines.append(f"{rec.color_path}\t{rec.depth_path}\t{rec.label}\t{rec.split}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_color_png(path: str | os.PathLike) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return img


def write_color_png(path: str | os.PathLike, img: np.ndarray) -> None:
    arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def read_raw_depth_png(path: str | os.PathLike) -> np.ndarray:
    arr = np.asarray(Image.open(path), dtype=np.float32)
    if arr.ndim != 2:
        raise DataError(f"{path}: raw depth PNG must be single-channel, got shape {arr.shape}")
    return arr[:, :, None]


def write_raw_depth_png(path: str | os.PathLike, depth: np.ndarray) -> None:
    arr = np.clip(np.round(np.squeeze(depth)), 0, 65535).astype(np.uint16)
    Image.fromarray(arr).save(path, format="PNG")


def load_dataset(manifest: DatasetManifest, domain: str, split: str | None = None,
                 colorize: bool = True) -> list[PairedSample]:
    """Materialize a manifest into PairedSamples.

    Raw depth files are colorized with the surface-normal encoding unless
    ``colorize=False`` or the manifest declares pre-colorized depth.
    """
    samples: list[PairedSample] = []
    for idx, rec in enumerate(manifest.records):
        if split is not None and rec.split != split:
            continue
        color = read_color_png(manifest.root / rec.color_path)
        if manifest.depth_colorized:
            depth = read_color_png(manifest.root / rec.depth_path)
        else:
            depth = read_raw_depth_png(manifest.root / rec.depth_path)
            if colorize:
                depth = colorize_depth(depth)
        label = None if rec.label < 0 else rec.label
        sample = PairedSample(color=color, depth=depth, label=label, domain=domain,
                              id=f"{domain}/{idx:06d}")
        if domain == TARGET and label is not None:
            # kept for evaluation only; train() never reads target labels
            sample.meta["eval_label"] = label
        sample.validate()
        samples.append(sample)
    if not samples:
        raise DataError(f"no samples for split {split!r} in manifest at {manifest.root}")
    return samples


def fill_missing_depth(depth: np.ndarray) -> np.ndarray:
    """Replace zero (missing) pixels by their nearest valid neighbor."""
    d = np.squeeze(np.asarray(depth, dtype=np.float64))
    valid = d > 0
    if not valid.any():
        raise DataError("no valid depth: depth image is all zeros")
    if valid.all():
        return d
    _, (ir, ic) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return d[ir, ic]


def colorize_depth(depth: np.ndarray) -> np.ndarray:
    """Encode a raw depth image as a 3-channel surface-normal image in [0,1].

    The unit normal is estimated from central-difference depth gradients as
    n = normalize(-dz/dx, -dz/dy, 1) and mapped per channel to (n+1)/2, so a
    flat region renders as (0.5, 0.5, 1.0). Missing pixels (zeros) are filled
    by the nearest valid value before gradient estimation.
    """
    d = fill_missing_depth(depth)
    gy, gx = np.gradient(d)
    nx = -gx
    ny = -gy
    nz = np.ones_like(d)
    norm = np.sqrt(nx * nx + ny * ny + nz * nz)
    out = np.stack([(nx / norm + 1.0) / 2.0,
                    (ny / norm + 1.0) / 2.0,
                    (nz / norm + 1.0) / 2.0], axis=2)
    return out.astype(np.float32)


def _square_window(r0: int, r1: int, c0: int, c1: int, h: int, w: int,
                   padding: float) -> tuple[int, int, int, int, bool]:
    """Expand a tight box by `padding`, squarify, clamp to the image.

    Returns (r0, r1, c0, c1, clamped) with half-open row/col ranges. The
    shorter side is widened symmetrically; if the square window does not fit
    at its centered position it is shifted inside the image, and only if the
    image itself is too small does the window stay rectangular (clamped=True).
    """
    bh, bw = r1 - r0, c1 - c0
    pr, pc = int(round(padding * bh)), int(round(padding * bw))
    r0, r1 = r0 - pr, r1 + pr
    c0, c1 = c0 - pc, c1 + pc
    side = max(r1 - r0, c1 - c0)

    def fit(lo: int, hi: int, limit: int) -> tuple[int, int, bool]:
        extra = side - (hi - lo)
        lo -= extra // 2
        hi += extra - extra // 2
        if hi - lo > limit:
            return 0, limit, True
        if lo < 0:
            lo, hi = 0, side
        elif hi > limit:
            lo, hi = limit - side, limit
        return lo, hi, False

    r0, r1, clamp_r = fit(r0, r1, h)
    c0, c1, clamp_c = fit(c0, c1, w)
    return r0, r1, c0, c1, clamp_r or clamp_c


def extract_crops(color: np.ndarray, depth: np.ndarray, mask: np.ndarray,
                  padding: float = 0.0, domain: str = SOURCE,
                  id_prefix: str = "crop") -> list[PairedSample]:
    """Cut one square crop pair per instance id in an instance-id mask.

    Mask ids >= 1 denote instances, 0 is background. The identical window is
    applied to color and depth. An empty mask yields an empty list.
    """
    if color.shape[:2] != mask.shape or depth.shape[:2] != mask.shape:
        raise DataError(f"mask shape {mask.shape} does not match images {color.shape[:2]}")
    h, w = mask.shape
    crops: list[PairedSample] = []
    for inst in np.unique(mask):
        if inst < 1:
            continue
        rows, cols = np.where(mask == inst)
        r0, r1, c0, c1, clamped = _square_window(
            rows.min(), rows.max() + 1, cols.min(), cols.max() + 1, h, w, padding)
        crops.append(PairedSample(
            color=np.ascontiguousarray(color[r0:r1, c0:c1]),
            depth=np.ascontiguousarray(depth[r0:r1, c0:c1]),
            label=None,  # class labels are assigned by the caller, if known
            domain=domain,
            id=f"{id_prefix}/{int(inst)}",
            meta={"window": (int(r0), int(r1), int(c0), int(c1)), "clamped": bool(clamped),
                  "instance": int(inst)},
        ))
    return crops


def resize_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an H×W×ch float image to size×size."""
    pil = Image.fromarray(np.clip(img * 255.0, 0, 255).astype(np.uint8))
    out = np.asarray(pil.resize((size, size), Image.BILINEAR), dtype=np.float32) / 255.0
    if out.ndim == 2:
        out = out[:, :, None]
    return out


def center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    r0 = (h - size) // 2
    c0 = (w - size) // 2
    return img[r0:r0 + size, c0:c0 + size]


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    r0 = int(rng.integers(0, h - size + 1))
    c0 = int(rng.integers(0, w - size + 1))
    return img[r0:r0 + size, c0:c0 + size]
