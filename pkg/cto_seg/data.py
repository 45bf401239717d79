"""
Dataset ingestion, boundary targets and the synthetic shape generator.

On-disk layout::

    <root>[/<split>]/images/<id>.png   RGB or grayscale (replicated to 3 channels)
    <root>[/<split>]/masks/<id>.png    8-bit labels, 0 = background, k = class k
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from scipy import ndimage
from torch.utils.data import Dataset

from .exceptions import DataError, EmptyDatasetError, MissingPairError, ShapeError
from .exceptions import SizeMismatchError, UnreadableFileError

logger = logging.getLogger("cto_seg.data")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
MASK_SUFFIXES = (".png",)


@dataclass
class Sample:
    image: torch.Tensor
    mask: torch.Tensor
    boundary: torch.Tensor
    id: str


def boundary_from_mask(mask: np.ndarray, width: int = 1) -> np.ndarray:
    """
    Binary boundary map of a label mask.

    A labelled (non-zero) pixel is on the boundary when one of its 4-neighbours
    carries a different label; the image border is edge-replicated so it never
    creates a transition. ``width > 1`` dilates the result by ``width - 1``
    4-connected steps.
    """
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    mask = np.asarray(mask)
    padded = np.pad(mask, 1, mode="edge")
    center = padded[1:-1, 1:-1]
    differs = (
        (padded[:-2, 1:-1] != center)
        | (padded[2:, 1:-1] != center)
        | (padded[1:-1, :-2] != center)
        | (padded[1:-1, 2:] != center)
    )
    boundary = differs & (center != 0)
    if width > 1 and boundary.any():
        boundary = ndimage.binary_dilation(boundary, iterations=width - 1)
    return boundary.astype(np.uint8)


@dataclass
class DatasetManifest:
    root: Path
    split: Optional[str]
    pairs: List[Tuple[Path, Path]] = field(default_factory=list)

    @property
    def base(self) -> Path:
        return self.root / self.split if self.split else self.root

    @property
    def ids(self) -> List[str]:
        return [image.stem for image, _ in self.pairs]

    def __len__(self) -> int:
        return len(self.pairs)

    @classmethod
    def from_directory(cls, root: "Path | str", split: Optional[str] = None) -> "DatasetManifest":
        """
        Pair ``images/<id>.*`` with ``masks/<id>.png``, sorted by id.

        Raises:
            DataError: missing images/ or masks/ directory
            MissingPairError: an image without a mask or a mask without an image
        """
        manifest = cls(root=Path(root), split=split)
        image_dir = manifest.base / "images"
        mask_dir = manifest.base / "masks"
        for directory in (image_dir, mask_dir):
            if not directory.is_dir():
                raise DataError(f"Dataset directory not found: {directory}")

        images = _index(image_dir, IMAGE_SUFFIXES)
        masks = _index(mask_dir, MASK_SUFFIXES)
        for stem in sorted(set(images) | set(masks)):
            if stem not in masks:
                raise MissingPairError(stem, "mask")
            if stem not in images:
                raise MissingPairError(stem, "image")
            manifest.pairs.append((images[stem], masks[stem]))

        logger.debug(f"Indexed {len(manifest.pairs)} pairs under {manifest.base}")
        return manifest


def _index(directory: Path, suffixes: Sequence[str]) -> Dict[str, Path]:
    return {
        path.stem: path
        for path in sorted(directory.iterdir())
        if path.is_file() and path.suffix.lower() in suffixes
    }


def _open(path: Path) -> Image.Image:
    try:
        with Image.open(path) as handle:
            handle.load()
            return handle.copy()
    except (OSError, UnidentifiedImageError) as e:
        raise UnreadableFileError(str(path), str(e)) from e


def read_image(path: "Path | str") -> Image.Image:
    """RGB PIL image; grayscale and palette inputs are converted."""
    return _open(Path(path)).convert("RGB")


def read_mask(path: "Path | str") -> np.ndarray:
    return _mask_array(_open(Path(path)))


def _mask_array(image: Image.Image) -> np.ndarray:
    if image.mode not in ("L", "P", "I", "I;16"):
        image = image.convert("L")
    return np.asarray(image).astype(np.int64)


def image_to_tensor(image: Image.Image) -> torch.Tensor:
    array = np.asarray(image, dtype=np.float32) / 255.0
    return torch.from_numpy(array).permute(2, 0, 1).contiguous()


class SegmentationDataset(Dataset):
    """
    Image/mask pairs resized to ``size`` x ``size``.

    Images are resized bilinearly and masks by nearest neighbour; pairs already
    at the target size are left untouched.
    """

    def __init__(self, manifest: DatasetManifest, size: int = 256, boundary_width: int = 1):
        self.manifest = manifest
        self.size = size
        self.boundary_width = boundary_width

    def __len__(self) -> int:
        return len(self.manifest)

    def __getitem__(self, index: int) -> Sample:
        image_path, mask_path = self.manifest.pairs[index]
        image = read_image(image_path)
        mask_image = _open(mask_path)
        if image.size != mask_image.size:
            raise SizeMismatchError(image_path.stem, image.size, mask_image.size)

        target = (self.size, self.size)
        if image.size != target:
            image = image.resize(target, Image.Resampling.BILINEAR)
        mask = _mask_array(mask_image)
        if mask.shape[::-1] != target:
            mask = np.asarray(
                Image.fromarray(mask.astype(np.int32)).resize(target, Image.Resampling.NEAREST)
            ).astype(np.int64)

        return Sample(
            image=image_to_tensor(image),
            mask=torch.from_numpy(mask),
            boundary=torch.from_numpy(boundary_from_mask(mask, self.boundary_width)),
            id=image_path.stem,
        )


def load_dataset(
    root: "Path | str",
    size: int = 256,
    split: Optional[str] = None,
    boundary_width: int = 1,
) -> Tuple[DatasetManifest, SegmentationDataset]:
    manifest = DatasetManifest.from_directory(root, split)
    return manifest, SegmentationDataset(manifest, size=size, boundary_width=boundary_width)


class SyntheticShapes(Dataset):
    """
    Reproducible images of 1-3 filled ellipses on a darker noisy background.

    Sample ``i`` depends only on ``(seed, i)``. Masks are the binary union of
    the ellipses.
    """

    def __init__(self, n: int, size: int = 64, seed: int = 0, boundary_width: int = 1):
        if n < 1:
            raise DataError(f"n must be >= 1, got {n}")
        if size < 32 or size % 32 != 0:
            raise ShapeError(f"Synthetic size must be a positive multiple of 32, got {size}")
        self.n = n
        self.size = size
        self.seed = seed
        self.boundary_width = boundary_width

    def __len__(self) -> int:
        return self.n

    def render(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        """(H, W, 3) float32 image in [0, 1] and (H, W) uint8 mask."""
        rng = np.random.default_rng([self.seed, index])
        size = self.size
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(int(rng.integers(1, 4))):
            ry, rx = rng.uniform(size / 6, size / 4, size=2)
            margin = max(ry, rx)
            cy, cx = rng.uniform(margin, size - margin, size=2)
            theta = rng.uniform(0, np.pi)
            dy, dx = yy - cy, xx - cx
            u = dx * np.cos(theta) + dy * np.sin(theta)
            v = -dx * np.sin(theta) + dy * np.cos(theta)
            mask |= (u / rx) ** 2 + (v / ry) ** 2 <= 1.0

        background = rng.uniform(0.05, 0.35, size=3)
        foreground = rng.uniform(0.65, 0.95, size=3)
        image = np.where(mask[..., None], foreground, background)
        image = image + rng.normal(0.0, 0.05, size=image.shape)
        return np.clip(image, 0.0, 1.0).astype(np.float32), mask.astype(np.uint8)

    def __getitem__(self, index: int) -> Sample:
        if not 0 <= index < self.n:
            raise IndexError(index)
        image, mask = self.render(index)
        return Sample(
            image=torch.from_numpy(image).permute(2, 0, 1).contiguous(),
            mask=torch.from_numpy(mask.astype(np.int64)),
            boundary=torch.from_numpy(boundary_from_mask(mask, self.boundary_width)),
            id=f"synth_{index:04d}",
        )


def synth_dataset(n: int, size: int, seed: int, boundary_width: int = 1) -> SyntheticShapes:
    return SyntheticShapes(n, size=size, seed=seed, boundary_width=boundary_width)


def write_dataset(samples: Iterable[Sample], root: "Path | str") -> int:
    """Write samples in the standard layout; returns the number written."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    count = 0
    for sample in samples:
        image = (sample.image.permute(1, 2, 0).numpy() * 255.0).round().astype(np.uint8)
        Image.fromarray(image).save(root / "images" / f"{sample.id}.png")
        mask = sample.mask.numpy().astype(np.uint8)
        Image.fromarray(mask).save(root / "masks" / f"{sample.id}.png")
        count += 1
    logger.info(f"Wrote {count} samples to {root}")
    return count


def make_boundaries(root: "Path | str", split: Optional[str] = None, width: int = 1) -> int:
    """Write ``boundaries/<id>.png`` (0/255) next to ``masks/`` at native mask size."""
    manifest = DatasetManifest.from_directory(root, split)
    if not manifest.pairs:
        raise EmptyDatasetError(f"No image/mask pairs under {manifest.base}")
    out_dir = manifest.base / "boundaries"
    out_dir.mkdir(parents=True, exist_ok=True)
    for _, mask_path in manifest.pairs:
        boundary = boundary_from_mask(read_mask(mask_path), width)
        Image.fromarray(boundary * 255).save(out_dir / f"{mask_path.stem}.png")
    logger.info(f"Wrote {len(manifest.pairs)} boundary maps to {out_dir}")
    return len(manifest.pairs)


def collate_samples(batch: Sequence[Sample]) -> Dict[str, Any]:
    return {
        "images": torch.stack([s.image for s in batch]),
        "masks": torch.stack([s.mask for s in batch]),
        "boundaries": torch.stack([s.boundary for s in batch]),
        "ids": [s.id for s in batch],
    }
