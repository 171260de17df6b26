"""Image datasets: a procedural synthetic generator and a CIFAR-10 binary loader.

Images are float32 [N, 3, H, W] normalized to [-1, 1] (matching the decoder's
tanh output range).  Datasets are immutable value objects; every transform
returns a new one.
"""

from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

CIFAR10_CLASSES = ["airplane", "automobile", "bird", "cat", "deer",
                   "dog", "frog", "horse", "ship", "truck"]

SYNTHETIC_CLASSES = ["disk", "square", "cross", "stripes"]

# fixed documented bipartition used by the category-absence study:
# synthetic "living" analog classes, and the CIFAR-10 animal classes
LIVING_SYNTHETIC = frozenset({0, 1})
LIVING_CIFAR10 = frozenset({2, 3, 4, 5, 6, 7})

RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


@dataclass(frozen=True)
class ImageDataset:
    images: np.ndarray  # [N, C, H, W] float32 in [-1, 1]
    labels: np.ndarray  # [N] int64
    class_names: list
    provenance: str  # synthetic | cifar10-bin | filtered | subsampled

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels disagree on N")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label out of range")
        lo, hi = float(self.images.min()), float(self.images.max())
        if lo < -1.0 or hi > 1.0:
            raise ValueError(f"values outside [-1, 1]: [{lo}, {hi}]")

    def __len__(self):
        return self.images.shape[0]


@dataclass(frozen=True)
class SyntheticSpec:
    image_size: int = 16  # H == W, 16 or 32
    num_classes: int = 4
    color_jitter: float = 0.1
    position_jitter: int = 2
    background_noise: float = 0.04
    # domain-shift knobs: a per-channel palette offset plus a low-amplitude
    # texture wave, distinguishing an "auxiliary" generator from the private one
    palette_offset: tuple = (0.0, 0.0, 0.0)
    texture_amp: float = 0.0

    def __post_init__(self):
        if self.image_size not in (16, 32):
            raise ValueError("image_size must be 16 or 32")
        if not 1 <= self.num_classes <= len(SYNTHETIC_CLASSES):
            raise ValueError(f"num_classes must be 1..{len(SYNTHETIC_CLASSES)}")

    def shifted(self, palette_offset=(0.08, -0.06, 0.05), texture_amp=0.05):
        return SyntheticSpec(self.image_size, self.num_classes, self.color_jitter,
                             self.position_jitter, self.background_noise,
                             tuple(palette_offset), texture_amp)


# per-class foreground colors, chosen well inside [-1, 1] so palette shifts
# and jitter cannot saturate
_PALETTE = np.array([
    [0.70, -0.20, -0.30],   # disk: red-ish
    [-0.30, 0.65, -0.25],   # square: green-ish
    [-0.25, -0.20, 0.70],   # cross: blue-ish
    [0.55, 0.55, -0.35],    # stripes: yellow-ish
])
_BACKGROUND = np.array([-0.55, -0.50, -0.60])


def _class_mask(cls, s, cy, cx):
    """Boolean foreground mask for one class at center (cy, cx)."""
    yy, xx = np.mgrid[0:s, 0:s]
    r = s // 4
    if cls == 0:  # disk
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if cls == 1:  # square
        return (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    if cls == 2:  # cross
        arm = max(1, s // 16)
        reach = r + arm
        return ((np.abs(yy - cy) <= arm) & (np.abs(xx - cx) <= reach)) | \
               ((np.abs(xx - cx) <= arm) & (np.abs(yy - cy) <= reach))
    if cls == 3:  # stripes
        return ((xx + cx) // (s // 8)) % 2 == 0
    raise ValueError(f"no renderer for class {cls}")


def gen_synthetic(spec: SyntheticSpec, n: int, rng: Rng) -> ImageDataset:
    """Balanced labeled shapes; deterministic for a given rng stream."""
    if n <= 0:
        raise ValueError("n must be positive")
    if n < spec.num_classes:
        raise ValueError("n must be at least num_classes")
    s, k = spec.image_size, spec.num_classes
    labels = rng.permutation(n) % k  # balanced within +-1 per class
    images = np.empty((n, 3, s, s), dtype=np.float64)
    offs = np.asarray(spec.palette_offset, dtype=np.float64)
    for i in range(n):
        cls = int(labels[i])
        jit = spec.position_jitter
        cy = s // 2 + int(rng.integers(-jit, jit + 1))
        cx = s // 2 + int(rng.integers(-jit, jit + 1))
        mask = _class_mask(cls, s, cy, cx)
        color = _PALETTE[cls] + rng.uniform(-spec.color_jitter, spec.color_jitter, 3)
        img = np.broadcast_to(_BACKGROUND[:, None, None], (3, s, s)).copy()
        img[:, mask] = color[:, None]
        img += rng.normal(0.0, spec.background_noise, (3, s, s))
        if spec.texture_amp:
            yy, xx = np.mgrid[0:s, 0:s]
            phase = rng.uniform(0.0, 2.0 * np.pi)
            img += spec.texture_amp * np.sin(2.0 * np.pi * (xx + yy) / 8.0 + phase)
        img += offs[:, None, None]
        images[i] = img
    images = np.clip(images, -1.0, 1.0).astype(np.float32)
    return ImageDataset(images, labels.astype(np.int64),
                        SYNTHETIC_CLASSES[:k], "synthetic")


def load_cifar10(path) -> ImageDataset:
    """Read a CIFAR-10 binary batch: 3073-byte records, R,G,B planes row-major."""
    raw = np.fromfile(str(path), dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES != 0:
        raise ValueError(f"truncated file: {raw.size} bytes is not a multiple of {RECORD_BYTES}")
    rec = raw.reshape(-1, RECORD_BYTES)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise ValueError(f"label byte {labels.max()} > 9")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 127.5 - 1.0
    return ImageDataset(images, labels, list(CIFAR10_CLASSES), "cifar10-bin")


def quantize_to_bytes(images: np.ndarray) -> np.ndarray:
    """[-1,1] floats -> uint8 via the inverse of the loader's mapping."""
    return np.clip(np.round((images.astype(np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def save_cifar10(ds: ImageDataset, path) -> None:
    """Write the CIFAR-style binary format (quantizes pixels to bytes)."""
    if ds.images.shape[1] != 3 or ds.images.shape[2] != 32 or ds.images.shape[3] != 32:
        raise ValueError("CIFAR-10 binary format requires 3x32x32 images")
    n = len(ds)
    rec = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    rec[:, 0] = ds.labels.astype(np.uint8)
    rec[:, 1:] = quantize_to_bytes(ds.images).reshape(n, -1)
    rec.tofile(str(path))


def filter_categories(ds: ImageDataset, keep) -> ImageDataset:
    keep = set(int(c) for c in keep)
    if not keep:
        raise ValueError("keep set is empty")
    if not keep <= set(range(len(ds.class_names))):
        raise ValueError(f"keep set {sorted(keep)} not a subset of classes")
    mask = np.isin(ds.labels, sorted(keep))
    if not mask.any():
        raise ValueError("no items left after filtering")
    return ImageDataset(ds.images[mask], ds.labels[mask], ds.class_names, "filtered")


def subsample(ds: ImageDataset, n: int, rng: Rng) -> ImageDataset:
    if not 1 <= n <= len(ds):
        raise ValueError(f"n={n} out of range 1..{len(ds)}")
    idx = rng.choice(len(ds), size=n, replace=False)
    return ImageDataset(ds.images[idx], ds.labels[idx], ds.class_names, "subsampled")


def living_labels(ds: ImageDataset) -> frozenset:
    """The documented 'living' side of the category bipartition."""
    if ds.class_names == CIFAR10_CLASSES:
        return LIVING_CIFAR10
    return frozenset(c for c in LIVING_SYNTHETIC if c < len(ds.class_names))
