"""Samples, preprocessing, edge targets, augmentation and dataset loading."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
MASK_SUFFIX = "_segmentation.png"


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    edge_gt: np.ndarray  # (H, W) float32 in [0, 1]
    id: str = ""

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be (3, H, W), got {self.image.shape}")
        if self.mask.shape != self.image.shape[1:] or self.edge_gt.shape != self.mask.shape:
            raise ValueError("image, mask and edge_gt sizes disagree")


def gray_world_normalize(image: np.ndarray) -> np.ndarray:
    """Rescale channels of a (3, H, W) image so their means equalise, then clip to [0, 1].

    Channels with zero mean are left unscaled.
    """
    image = np.asarray(image)
    img = image.astype(np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got {img.shape}")
    means = img.mean(axis=(1, 2))
    target = means.mean()
    gains = np.where(means > 0, target / np.where(means > 0, means, 1.0), 1.0)
    dtype = image.dtype if np.asarray(image).dtype.kind == "f" else np.float32
    return np.clip(img * gains[:, None, None], 0.0, 1.0).astype(dtype)


def derive_edge_gt(mask: np.ndarray) -> np.ndarray:
    """Morphological gradient of a binary mask with a 3x3 structuring element.

    A pixel is an edge iff its 3x3 neighbourhood (inside the image) holds both
    labels; the image border itself is never an edge.
    """
    m = np.asarray(mask).astype(bool)
    st = np.ones((3, 3), dtype=bool)
    dil = ndimage.binary_dilation(m, structure=st, border_value=0)
    ero = ndimage.binary_erosion(m, structure=st, border_value=1)
    return (dil ^ ero).astype(np.float32)


def largest_component(mask: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(mask)
    if n <= 1:
        return mask.astype(np.uint8)
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    return (labels == 1 + int(np.argmax(sizes))).astype(np.uint8)


@dataclass
class SynthConfig:
    min_area: float = 0.05
    max_area: float = 0.5
    low_contrast_prob: float = 0.25
    hair_prob: float = 0.5
    vignette_prob: float = 0.4


def _smooth_noise(rng: np.random.Generator, shape: Tuple[int, ...], sigma: float) -> np.ndarray:
    n = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode="wrap")
    return n / (n.std() + 1e-12)


def _blob_mask(rng: np.random.Generator, h: int, w: int, cfg: SynthConfig) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    lo, hi = max(cfg.min_area, 0.08), min(cfg.max_area, 0.35)
    for _ in range(50):
        frac = rng.uniform(lo, hi)
        r0 = np.sqrt(frac * h * w / np.pi)
        cy = h / 2 + rng.uniform(-1, 1) * max(h / 2 - r0, 0) * 0.6
        cx = w / 2 + rng.uniform(-1, 1) * max(w / 2 - r0, 0) * 0.6
        ks = np.arange(2, 7)
        amps = rng.uniform(0, 0.3, size=ks.size) / ks
        phases = rng.uniform(0, 2 * np.pi, size=ks.size)
        theta = np.arctan2(yy - cy, xx - cx)
        radius = r0 * (1 + (amps[:, None, None] * np.cos(ks[:, None, None] * theta + phases[:, None, None])).sum(0))
        mask = largest_component(np.hypot(yy - cy, xx - cx) < radius)
        if cfg.min_area <= mask.mean() <= cfg.max_area:
            return mask
    raise RuntimeError("could not draw a blob within the configured area bounds")


def _hair_layer(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    canvas = Image.new("L", (w, h), 0)
    draw = ImageDraw.Draw(canvas)
    for _ in range(int(rng.integers(1, 7))):
        p0, p1, p2 = rng.uniform(0, 1, (3, 2)) * (w, h)
        t = np.linspace(0, 1, 64)[:, None]
        pts = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2
        draw.line([tuple(p) for p in pts], fill=255, width=int(rng.integers(1, 3)))
    return np.asarray(canvas, dtype=np.float64) / 255.0


def synth_lesion_sample(seed: int, h: int = 224, w: int = 224,
                        cfg: SynthConfig | None = None) -> Sample:
    """Deterministic synthetic dermoscopy-like image with its lesion mask."""
    if h < 64 or w < 64:
        raise ValueError("synthetic samples need H, W >= 64")
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    mask = _blob_mask(rng, h, w, cfg)

    skin = np.array([0.86, 0.66, 0.55]) + rng.uniform(-0.06, 0.06, 3)
    skin = skin[:, None, None] * (1 + 0.05 * _smooth_noise(rng, (1, h, w), 10))
    skin = skin + 0.015 * rng.standard_normal((3, h, w))

    lesion = np.array([0.45, 0.28, 0.18]) * rng.uniform(0.6, 1.1)
    if rng.uniform() < cfg.low_contrast_prob:
        lesion = 0.5 * lesion + 0.5 * skin.mean(axis=(1, 2))
    lesion = lesion[:, None, None] * (1 + 0.12 * _smooth_noise(rng, (1, h, w), 4))

    alpha = ndimage.gaussian_filter(mask.astype(np.float64), sigma=rng.uniform(1.0, 2.5))
    img = skin * (1 - alpha) + lesion * alpha

    if rng.uniform() < cfg.hair_prob:
        hair = _hair_layer(rng, h, w)
        img = img * (1 - hair) + 0.15 * hair
    if rng.uniform() < cfg.vignette_prob:
        yy, xx = np.mgrid[0:h, 0:w]
        d = np.hypot((yy - h / 2) / (h / 2), (xx - w / 2) / (w / 2))
        radius = rng.uniform(0.85, 1.1)
        img = img * (1 - 0.9 * np.clip((d - radius) / 0.15, 0, 1))
    img = img * rng.uniform(0.85, 1.15, 3)[:, None, None]  # colour cast

    img = np.clip(img, 0, 1).astype(np.float32)
    return Sample(img, mask, derive_edge_gt(mask), id=f"synth_{seed:06d}")


@dataclass(frozen=True)
class AugmentParams:
    hflip: bool = False
    vflip: bool = False
    angle: float = 0.0
    brightness: float = 1.0
    contrast: float = 1.0


def draw_augment(rng: np.random.Generator, max_angle: float = 15.0,
                 jitter: float = 0.2) -> AugmentParams:
    return AugmentParams(
        hflip=bool(rng.uniform() < 0.5), vflip=bool(rng.uniform() < 0.5),
        angle=float(rng.uniform(-max_angle, max_angle)),
        brightness=float(rng.uniform(1 - jitter, 1 + jitter)),
        contrast=float(rng.uniform(1 - jitter, 1 + jitter)),
    )


def apply_augment(sample: Sample, p: AugmentParams) -> Sample:
    img = sample.image
    mask = sample.mask
    if p.hflip:
        img, mask = img[:, :, ::-1], mask[:, ::-1]
    if p.vflip:
        img, mask = img[:, ::-1, :], mask[::-1, :]
    if p.angle:
        img = ndimage.rotate(img, p.angle, axes=(2, 1), reshape=False, order=1, mode="reflect")
        m = ndimage.rotate(mask.astype(np.float32), p.angle, axes=(1, 0), reshape=False,
                           order=1, mode="constant", cval=0.0)
        mask = (m >= 0.5).astype(np.uint8)
    if p.brightness != 1.0:
        img = img * p.brightness
    if p.contrast != 1.0:
        mean = img.mean()
        img = (img - mean) * p.contrast + mean
    if p.brightness != 1.0 or p.contrast != 1.0 or p.angle:
        img = np.clip(img, 0, 1)
    img = np.ascontiguousarray(img, dtype=np.float32)
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    return Sample(img, mask, derive_edge_gt(mask), sample.id)


def augment(sample: Sample, seed: int) -> Sample:
    return apply_augment(sample, draw_augment(np.random.default_rng(seed)))


@dataclass
class SplitSpec:
    fractions: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    files: Dict[str, List[str]] | None = None

    def __post_init__(self):
        if self.files is None and abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {self.fractions}")


def split_counts(n: int, fractions: Sequence[float]) -> Tuple[int, int, int]:
    """Train and val sizes are floored, test takes the remainder."""
    n_train = int(np.floor(n * fractions[0] + 1e-9))
    n_val = int(np.floor(n * fractions[1] + 1e-9))
    return n_train, n_val, n - n_train - n_val


def split_ids(ids: Sequence[str], spec: SplitSpec, seed: int) -> Dict[str, List[str]]:
    if spec.files is not None:
        return {k: list(spec.files.get(k, [])) for k in ("train", "val", "test")}
    order = sorted(ids)
    perm = np.random.default_rng(seed).permutation(len(order))
    shuffled = [order[i] for i in perm]
    a, b, _ = split_counts(len(order), spec.fractions)
    return {"train": shuffled[:a], "val": shuffled[a : a + b], "test": shuffled[a + b :]}


def read_image(path: Path, size: int | None = None) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None:
            im = im.resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0


def read_mask(path: Path, size: int | None = None) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("L")
        if size is not None:
            im = im.resize((size, size), Image.NEAREST)
        return (np.asarray(im) >= 128).astype(np.uint8)


def pair_files(root: Path) -> Tuple[Dict[str, Tuple[Path, Path]], List[str]]:
    """Match ``<id>.<ext>`` images with ``<id>_segmentation.png`` masks."""
    root = Path(root)
    images, masks = {}, {}
    for p in sorted(root.iterdir()):
        if p.name.endswith(MASK_SUFFIX):
            masks[p.name[: -len(MASK_SUFFIX)]] = p
        elif p.suffix.lower() in IMAGE_SUFFIXES:
            images[p.stem] = p
    pairs = {k: (images[k], masks[k]) for k in sorted(images.keys() & masks.keys())}
    skipped = [f"{k}: no mask" for k in sorted(images.keys() - masks.keys())]
    skipped += [f"{k}: no image" for k in sorted(masks.keys() - images.keys())]
    return pairs, skipped


def load_pair(image_path: Path, mask_path: Path, image_id: str, size: int = 224,
              gray_world: bool = True) -> Sample:
    img = read_image(image_path, size)
    if gray_world:
        img = gray_world_normalize(img)
    mask = read_mask(mask_path, size)
    return Sample(img, mask, derive_edge_gt(mask), image_id)


@dataclass
class LoadedDataset:
    splits: Dict[str, List[Sample]]
    skipped: List[str] = field(default_factory=list)


def load_isic_dir(root, split: SplitSpec | None = None, seed: int = 0, size: int = 224,
                  gray_world: bool = True) -> LoadedDataset:
    pairs, skipped = pair_files(Path(root))
    for s in skipped:
        logger.warning("skipping %s", s)
    if not pairs:
        raise FileNotFoundError(f"no image/mask pairs found under {root}")
    ids = split_ids(list(pairs), split or SplitSpec(), seed)
    splits = {
        name: [load_pair(*pairs[i], i, size=size, gray_world=gray_world) for i in members if i in pairs]
        for name, members in ids.items()
    }
    return LoadedDataset(splits, skipped)


def synth_dataset(n: int, first_seed: int, size: int = 224, gray_world: bool = True,
                  cfg: SynthConfig | None = None) -> List[Sample]:
    out = []
    for i in range(n):
        s = synth_lesion_sample(first_seed + i, size, size, cfg)
        if gray_world:
            s = replace(s, image=gray_world_normalize(s.image))
        out.append(s)
    return out


def write_sample_png(sample: Sample, out_dir) -> Tuple[Path, Path]:
    """Write ``<id>.png`` (RGB) and ``<id>_segmentation.png`` (0/255)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rgb = np.round(sample.image.transpose(1, 2, 0) * 255).astype(np.uint8)
    ip, mp = out_dir / f"{sample.id}.png", out_dir / f"{sample.id}{MASK_SUFFIX}"
    Image.fromarray(rgb).save(ip)
    Image.fromarray(sample.mask.astype(np.uint8) * 255).save(mp)
    return ip, mp
