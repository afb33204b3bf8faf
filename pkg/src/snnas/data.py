"""Image datasets: binary/CSV formats, normalization, splits, synthetic patterns."""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

MAGIC = b"SSDS"
VERSION = 1
# magic, version u16, count u32, channels u16, height u16, width u16, classes u16
HEADER = struct.Struct("<4sHIHHHH")


class DatasetError(ValueError):
    pass


@dataclass
class ImageDataset:
    images: np.ndarray  # uint8 (N, C, H, W)
    labels: np.ndarray  # int64 (N,)
    classes: int
    name: str = "dataset"

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.validate()

    def validate(self) -> "ImageDataset":
        if self.images.ndim != 4:
            raise DatasetError(f"images must be (N, C, H, W), got shape {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise DatasetError(f"{len(self.labels)} labels for {len(self.images)} images")
        bad = np.flatnonzero((self.labels < 0) | (self.labels >= self.classes))
        if bad.size:
            i = int(bad[0])
            raise DatasetError(f"label {int(self.labels[i])} at index {i} outside [0, {self.classes})")
        return self

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return self.images.shape[1:]

    def subset(self, idx, name: Optional[str] = None) -> "ImageDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return ImageDataset(self.images[idx], self.labels[idx], self.classes, name or self.name)


# ------------------------------------------------------------------ formats
def save_binary(ds: ImageDataset, path):
    n, c, h, w = ds.images.shape
    if ds.classes > 256:
        raise DatasetError("binary format stores labels as u8; at most 256 classes")
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, n, c, h, w, ds.classes))
        f.write(ds.labels.astype(np.uint8).tobytes())
        f.write(ds.images.tobytes())


def load_binary(path, name: Optional[str] = None) -> ImageDataset:
    buf = Path(path).read_bytes()
    if len(buf) < HEADER.size:
        raise DatasetError(f"{path}: header needs {HEADER.size} bytes, file has {len(buf)}")
    magic, version, n, c, h, w, k = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r} at byte 0, expected {MAGIC!r}")
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported version {version} at byte 4")
    off = HEADER.size
    need = n
    if len(buf) - off < need:
        raise DatasetError(f"{path}: label section at byte {off} expects {need} bytes, "
                           f"found {len(buf) - off}")
    labels = np.frombuffer(buf, np.uint8, n, off).astype(np.int64)
    off += n
    need = n * c * h * w
    if len(buf) - off != need:
        raise DatasetError(f"{path}: pixel section at byte {off} expects {need} bytes, "
                           f"found {len(buf) - off}")
    images = np.frombuffer(buf, np.uint8, need, off).reshape(n, c, h, w)
    return ImageDataset(images.copy(), labels, k, name or Path(path).stem)


def save_csv(ds: ImageDataset, path):
    n, c, h, w = ds.images.shape
    with open(path, "w", newline="") as f:
        f.write(f"# channels={c} height={h} width={w} classes={ds.classes} name={ds.name}\n")
        wr = csv.writer(f)
        wr.writerow(["label"] + [f"p{i}" for i in range(c * h * w)])
        for lab, img in zip(ds.labels, ds.images.reshape(n, -1)):
            wr.writerow([int(lab)] + img.tolist())


def load_csv(path) -> ImageDataset:
    text = Path(path).read_text()
    first, _, rest = text.partition("\n")
    if not first.startswith("#"):
        raise DatasetError(f"{path}: line 1 must be '# channels=.. height=.. width=.. classes=..'")
    meta = dict(tok.split("=", 1) for tok in first[1:].split() if "=" in tok)
    try:
        c, h, w, k = (int(meta[key]) for key in ("channels", "height", "width", "classes"))
    except (KeyError, ValueError) as e:
        raise DatasetError(f"{path}: incomplete header line: {e}") from None
    rows = list(csv.reader(io.StringIO(rest)))
    if not rows or rows[0][:1] != ["label"]:
        raise DatasetError(f"{path}: line 2 must be the column header starting with 'label'")
    labels, pixels = [], []
    for lineno, row in enumerate(rows[1:], 3):
        if not row:
            continue
        if len(row) != 1 + c * h * w:
            raise DatasetError(f"{path}: line {lineno} has {len(row)} fields, "
                               f"expected {1 + c * h * w}")
        vals = [int(v) for v in row]
        if not all(0 <= v <= 255 for v in vals[1:]):
            raise DatasetError(f"{path}: line {lineno} has a pixel outside [0, 255]")
        labels.append(vals[0])
        pixels.append(vals[1:])
    images = np.array(pixels, dtype=np.uint8).reshape(len(labels), c, h, w)
    return ImageDataset(images, np.array(labels, dtype=np.int64), k, meta.get("name", Path(path).stem))


def load_dataset(path, fmt: Optional[str] = None) -> ImageDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "raw-binary")
    if fmt == "csv":
        return load_csv(path)
    if fmt in ("raw-binary", "binary", "bin"):
        return load_binary(path)
    raise DatasetError(f"unknown dataset format {fmt!r}")


def save_dataset(ds: ImageDataset, path, fmt: Optional[str] = None):
    fmt = fmt or ("csv" if str(path).lower().endswith(".csv") else "raw-binary")
    (save_csv if fmt == "csv" else save_binary)(ds, path)


# ------------------------------------------------------------ normalization
def channel_stats(ds: ImageDataset, idx=None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std of pixels scaled to [0, 1]."""
    x = ds.images if idx is None else ds.images[np.asarray(idx)]
    x = x.astype(np.float64) / 255.0
    return x.mean(axis=(0, 2, 3)), x.std(axis=(0, 2, 3))


def write_stats(path, mean, std):
    with open(path, "w") as f:
        for m, s in zip(mean, std):
            f.write(f"{float(m)!r} {float(s)!r}\n")


def read_stats(path) -> Tuple[np.ndarray, np.ndarray]:
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DatasetError(f"{path}: line {lineno} must hold 'mean std'")
        pairs.append((float(parts[0]), float(parts[1])))
    arr = np.array(pairs, dtype=np.float64).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def stats_path(path) -> Path:
    return Path(str(path) + ".stats")


def normalize(images, mean, std, dtype=np.float32) -> np.ndarray:
    """``(pixel/255 - mean)/std`` per channel, returned as (N, C, H, W, 1)."""
    images = np.asarray(getattr(images, "images", images))
    mean = np.asarray(mean, dtype=np.float64).reshape(1, -1, 1, 1)
    std = np.asarray(std, dtype=np.float64).reshape(1, -1, 1, 1)
    if mean.shape[1] != images.shape[1] or std.shape[1] != images.shape[1]:
        raise DatasetError(f"stats for {mean.shape[1]} channels, images have {images.shape[1]}")
    if np.any(std <= 0):
        raise DatasetError(f"std must be > 0 per channel, got {std.ravel().tolist()}")
    out = (images.astype(np.float64) / 255.0 - mean) / std
    return out[..., None].astype(dtype)


def denormalize(x, mean, std) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)[..., 0]
    mean = np.asarray(mean, dtype=np.float64).reshape(1, -1, 1, 1)
    std = np.asarray(std, dtype=np.float64).reshape(1, -1, 1, 1)
    return (x * std + mean) * 255.0


# ------------------------------------------------------------------- splits
SPLIT_RATIOS = {"search": (1, 1), "retrain": (5, 1)}


@dataclass(frozen=True)
class SplitPlan:
    stage: str
    seed: int = 0

    @property
    def ratios(self) -> Tuple[int, int]:
        if self.stage not in SPLIT_RATIOS:
            raise ValueError(f"unknown split stage {self.stage!r}")
        return SPLIT_RATIOS[self.stage]


def split_indices(labels, ratios: Sequence[int], seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded, class-stratified partition into two sorted index arrays.

    The first part gets ``round(N * a/(a+b))`` samples, handed out to classes
    by largest remainder so every class is within one sample of its share.
    """
    labels = np.asarray(labels)
    n = len(labels)
    a, b = ratios
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    frac = a / (a + b)
    n_a = int(round(n * frac))
    if n_a == 0 or n_a == n:
        raise ValueError(f"ratio {a}:{b} infeasible for {n} samples")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    members = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
    want = np.array([len(m) * frac for m in members])
    take = np.floor(want).astype(int)
    rem = n_a - int(take.sum())
    order = sorted(range(len(classes)), key=lambda i: (-(want[i] - take[i]), i))
    for i in order[:rem]:
        take[i] += 1
    part_a = np.concatenate([m[:t] for m, t in zip(members, take)])
    part_b = np.concatenate([m[t:] for m, t in zip(members, take)])
    return np.sort(part_a), np.sort(part_b)


def split(ds: ImageDataset, plan: SplitPlan) -> Tuple[ImageDataset, ImageDataset]:
    ia, ib = split_indices(ds.labels, plan.ratios, plan.seed)
    names = ("train", "test") if plan.stage == "search" else ("train", "val")
    return ds.subset(ia, f"{ds.name}-{names[0]}"), ds.subset(ib, f"{ds.name}-{names[1]}")


# ---------------------------------------------------------------- synthetic
CHANNEL_GAINS = (1.0, 0.8, 0.6, 0.9)


def synthetic_gen(classes: int = 4, per_class: int = 100, size: int = 16, noise: float = 0.0,
                  seed: int = 0, channels: int = 3) -> ImageDataset:
    """Oriented gratings, one orientation/frequency pair per class.

    ``noise`` scales every nuisance factor at once: orientation and
    frequency jitter (neighbouring classes start to overlap near 0.3), phase
    shift, contrast loss and uniform pixel noise. At 0 every sample of a
    class is the same image.
    """
    if size < 8:
        raise ValueError("size must be >= 8")
    if classes < 2 or per_class < 1:
        raise ValueError("need classes >= 2 and per_class >= 1")
    rng = np.random.default_rng(seed)
    n = classes * per_class
    labels = rng.permutation(np.repeat(np.arange(classes), per_class))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    theta = np.pi * labels / classes + rng.uniform(-1, 1, n) * noise * 2.0 * np.pi / classes
    freq = (2.0 + (labels % 2)) * (1.0 + noise * rng.uniform(-1, 1, n))
    phase = rng.uniform(-np.pi, np.pi, n) * min(1.0, 3.0 * noise)
    contrast = np.clip(1.0 - 1.5 * noise * rng.uniform(0, 1, n), 0.05, 1.0)
    proj = np.cos(theta)[:, None, None] * xx + np.sin(theta)[:, None, None] * yy
    base = np.cos(2 * np.pi * freq[:, None, None] * proj + phase[:, None, None])
    gains = np.array([CHANNEL_GAINS[c % len(CHANNEL_GAINS)] for c in range(channels)])
    img = 0.5 + 0.5 * contrast[:, None, None, None] * gains[None, :, None, None] * base[:, None]
    img = img + 1.5 * noise * rng.uniform(-1.0, 1.0, img.shape)
    pix = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return ImageDataset(pix, labels, classes, f"synth-c{classes}-n{per_class}-s{size}")


# ------------------------------------------------------------------ batches
def batch_order(n: int, batch_size: int, rng: Optional[np.random.Generator]) -> Iterator[np.ndarray]:
    """Index batches over ``n`` samples; shuffled when ``rng`` is given."""
    if n == 0:
        raise ValueError("empty data stream")
    idx = rng.permutation(n) if rng is not None else np.arange(n)
    for s in range(0, n, batch_size):
        yield idx[s:s + batch_size]


def augment(x: np.ndarray, rng: np.random.Generator, pad: int = 2) -> np.ndarray:
    """Random crop with zero padding plus horizontal flip, on (N, C, H, W, 1)."""
    n, _, h, w, _ = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (0, 0)))
    out = np.empty_like(x)
    dy = rng.integers(0, 2 * pad + 1, n)
    dx = rng.integers(0, 2 * pad + 1, n)
    flip = rng.random(n) < 0.5
    for i in range(n):
        crop = padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out
