"""Image decoding, preprocessing, augmentation, and dataset assembly.

Images are 8-bit RGB buffers.  The preprocessing chain for the network is
resize (bilinear, half-pixel centers) -> optional augmentation -> normalize
(divide by 255, subtract per-channel training means), producing a [3, S, S]
float32 tensor.

Binary PPM (P6) is the always-available image format since it decodes in a
few lines with no dependencies; PGM (P5) grayscale is replicated to three
channels.  PNG works when Pillow is importable and is otherwise skipped.

Datasets follow the ``<root>/<class_name>/<image files>`` convention with
labels assigned by lexicographic directory order.
"""

from __future__ import annotations

import io
import math
import sys
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DecodeError
from .tensor import rng_from_seed

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
IMAGE_EXTENSIONS = (".ppm", ".pgm", ".png")


@dataclass
class ImageBuffer:
    """Row-major 8-bit RGB raster."""

    width: int
    height: int
    pixels: np.ndarray  # [height, width, 3] uint8

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, 3):
            raise DataError(
                f"pixel buffer shape {self.pixels.shape} does not match "
                f"{self.height}x{self.width} RGB"
            )
        if self.width < 1 or self.height < 1:
            raise DataError(f"degenerate image {self.width}x{self.height}")


@dataclass
class Sample:
    image: ImageBuffer
    label: int
    source_path: str


@dataclass
class Dataset:
    samples: list[Sample]
    label_names: list[str]
    channel_means: tuple[float, float, float]

    def __post_init__(self):
        if len(set(self.label_names)) != len(self.label_names):
            raise DataError("duplicate class names")
        for s in self.samples:
            if not 0 <= s.label < len(self.label_names):
                raise DataError(f"label {s.label} outside [0, {len(self.label_names)})")

    def __len__(self) -> int:
        return len(self.samples)

    def class_counts(self) -> list[int]:
        counts = [0] * len(self.label_names)
        for s in self.samples:
            counts[s.label] += 1
        return counts


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    max_rotation_deg: float = 10.0
    scale_jitter: tuple[float, float] = (0.9, 1.0)
    brightness_jitter: float = 0.1
    horizontal_flip: bool = False

    def __post_init__(self):
        lo, hi = self.scale_jitter
        if self.max_rotation_deg < 0:
            raise ConfigError(f"max_rotation_deg must be >= 0, got {self.max_rotation_deg}")
        if not 0.0 < lo <= hi <= 1.0:
            raise ConfigError(f"scale_jitter must satisfy 0 < lo <= hi <= 1, got {(lo, hi)}")
        if not 0.0 <= self.brightness_jitter < 1.0:
            raise ConfigError(f"brightness_jitter must be in [0,1), got {self.brightness_jitter}")


# ---------------------------------------------------------------------------
# decoding / encoding


def _ppm_tokens(data: bytes, count: int, path: str) -> tuple[list[int], int]:
    """First `count` whitespace/comment-separated integers and the offset just
    past the single whitespace byte that terminates the last one."""
    tokens: list[int] = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(data):
            raise DecodeError(f"truncated header in {path}")
        ch = data[pos : pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            token = data[start:pos]
            try:
                tokens.append(int(token))
            except ValueError:
                raise DecodeError(f"bad header token {token!r} in {path}")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise DecodeError(f"missing header terminator in {path}")
    return tokens, pos + 1


def _decode_pnm(data: bytes, path: str) -> ImageBuffer:
    magic = data[:2]
    (width, height, maxval), offset = _ppm_tokens(data[2:], 3, path)
    offset += 2
    if width < 1 or height < 1:
        raise DecodeError(f"bad dimensions {width}x{height} in {path}")
    if maxval != 255:
        raise DecodeError(f"unsupported maxval {maxval} in {path} (only 255)")
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    payload = data[offset : offset + need]
    if len(payload) != need:
        raise DecodeError(f"truncated pixel data in {path} ({len(payload)} of {need} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    if channels == 1:
        arr = np.repeat(arr, 3, axis=2)
    return ImageBuffer(width, height, arr.copy())


def _decode_png(data: bytes, path: str) -> ImageBuffer:
    try:
        from PIL import Image
    except ImportError:
        raise DecodeError(f"PNG support needs Pillow, cannot read {path}")
    try:
        with Image.open(io.BytesIO(data)) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except Exception as exc:
        raise DecodeError(f"cannot decode PNG {path}: {exc}")
    return ImageBuffer(arr.shape[1], arr.shape[0], arr)


def load_image(path) -> ImageBuffer:
    """Decode a P6/P5 PNM or (with Pillow) PNG file into an RGB buffer."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DecodeError(f"cannot read {path}: {exc}")
    if data[:2] in (b"P6", b"P5"):
        return _decode_pnm(data, str(path))
    if data[: len(PNG_SIGNATURE)] == PNG_SIGNATURE:
        return _decode_png(data, str(path))
    raise DecodeError(f"unrecognized image format in {path}")


def save_ppm(img: ImageBuffer, path) -> None:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.pixels.tobytes())


# ---------------------------------------------------------------------------
# geometry and normalization


def _round_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0.0, 255.0).astype(np.uint8)


def resize_bilinear(img: ImageBuffer, out_w: int, out_h: int) -> ImageBuffer:
    """Bilinear resample with half-pixel centers, channels independent.

    Source coordinate for destination index d is (d + 0.5) * (in/out) - 0.5,
    clamped to the source extent, so interpolation never overshoots.
    """
    if out_w < 1 or out_h < 1:
        raise ConfigError(f"output dims must be >= 1, got {out_w}x{out_h}")
    if out_w == img.width and out_h == img.height:
        return ImageBuffer(img.width, img.height, img.pixels.copy())

    src = img.pixels.astype(np.float64)
    sx = np.clip((np.arange(out_w) + 0.5) * (img.width / out_w) - 0.5, 0.0, img.width - 1.0)
    sy = np.clip((np.arange(out_h) + 0.5) * (img.height / out_h) - 0.5, 0.0, img.height - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, img.width - 1)
    y1 = np.minimum(y0 + 1, img.height - 1)
    fx = (sx - x0)[None, :, None]
    fy = (sy - y0)[:, None, None]

    top = src[np.ix_(y0, x0)] * (1.0 - fx) + src[np.ix_(y0, x1)] * fx
    bottom = src[np.ix_(y1, x0)] * (1.0 - fx) + src[np.ix_(y1, x1)] * fx
    out = top * (1.0 - fy) + bottom * fy
    return ImageBuffer(out_w, out_h, _round_u8(out))


def normalize(img: ImageBuffer, channel_means) -> np.ndarray:
    """[3, H, W] float32 tensor: pixel/255 minus the per-channel mean."""
    means = tuple(float(m) for m in channel_means)
    if len(means) != 3 or any(not 0.0 <= m <= 1.0 for m in means):
        raise ConfigError(f"channel means must be 3 floats in [0,1], got {channel_means}")
    scaled = img.pixels.astype(np.float64) / 255.0
    scaled -= np.asarray(means, dtype=np.float64)[None, None, :]
    return np.ascontiguousarray(scaled.transpose(2, 0, 1).astype(np.float32))


def compute_channel_means(dataset_or_samples) -> tuple[float, float, float]:
    """Per-channel mean of pixel/255 over every pixel of every sample."""
    samples = getattr(dataset_or_samples, "samples", dataset_or_samples)
    if not samples:
        raise DataError("cannot compute channel means of an empty dataset")
    totals = np.zeros(3, dtype=np.float64)
    pixel_count = 0
    for s in samples:
        totals += s.image.pixels.reshape(-1, 3).sum(axis=0, dtype=np.float64)
        pixel_count += s.image.width * s.image.height
    means = totals / (255.0 * pixel_count)
    return (float(means[0]), float(means[1]), float(means[2]))


# ---------------------------------------------------------------------------
# augmentation


def _rotate_edge_clamped(pixels: np.ndarray, angle_deg: float) -> np.ndarray:
    h, w = pixels.shape[:2]
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    xs = np.arange(w, dtype=np.float64) - cx
    ys = np.arange(h, dtype=np.float64) - cy
    # inverse mapping: rotate destination coords by -angle to find the source
    src_x = np.clip(cos_t * xs[None, :] + sin_t * ys[:, None] + cx, 0.0, w - 1.0)
    src_y = np.clip(-sin_t * xs[None, :] + cos_t * ys[:, None] + cy, 0.0, h - 1.0)

    x0 = np.floor(src_x).astype(np.intp)
    y0 = np.floor(src_y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (src_x - x0)[:, :, None]
    fy = (src_y - y0)[:, :, None]

    src = pixels.astype(np.float64)
    top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
    bottom = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
    return _round_u8(top * (1.0 - fy) + bottom * fy)


def augment(img: ImageBuffer, config: AugmentConfig, seed: int) -> ImageBuffer:
    """Random crop-and-rescale, rotation, brightness, optional flip.

    Every random draw happens unconditionally in a fixed order, so the output
    is a pure function of (img, config, seed) and two configs that differ only
    in whether a stage is degenerate still agree on the other stages.
    """
    if not config.enabled:
        return img
    rng = rng_from_seed(seed)
    scale = float(rng.uniform(config.scale_jitter[0], config.scale_jitter[1]))
    crop_w = max(1, round(img.width * scale))
    crop_h = max(1, round(img.height * scale))
    off_x = int(rng.integers(0, img.width - crop_w + 1))
    off_y = int(rng.integers(0, img.height - crop_h + 1))
    angle = float(rng.uniform(-config.max_rotation_deg, config.max_rotation_deg))
    brightness = float(rng.uniform(-config.brightness_jitter, config.brightness_jitter))
    flip = bool(rng.integers(0, 2))

    out = img
    if crop_w != img.width or crop_h != img.height:
        cropped = ImageBuffer(
            crop_w, crop_h, out.pixels[off_y : off_y + crop_h, off_x : off_x + crop_w]
        )
        out = resize_bilinear(cropped, img.width, img.height)
    if angle != 0.0:
        out = ImageBuffer(out.width, out.height, _rotate_edge_clamped(out.pixels, angle))
    if brightness != 0.0:
        out = ImageBuffer(out.width, out.height, _round_u8(out.pixels * (1.0 + brightness)))
    if config.horizontal_flip and flip:
        out = ImageBuffer(out.width, out.height, out.pixels[:, ::-1, :])
    return out


# ---------------------------------------------------------------------------
# dataset assembly


def fisher_yates_order(n: int, seed: int) -> list[int]:
    """Deterministic permutation of range(n)."""
    order = list(range(n))
    rng = rng_from_seed(seed)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def load_dataset(root_dir) -> Dataset:
    """One class per subdirectory, labels by lexicographic directory order.

    Undecodable files are skipped with a warning on stderr; a class directory
    with no decodable images is an error.
    """
    from pathlib import Path

    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if len(class_dirs) < 2:
        raise DataError(f"dataset root {root} needs >= 2 class directories")
    label_names = [d.name for d in class_dirs]
    samples: list[Sample] = []
    for label, class_dir in enumerate(class_dirs):
        loaded = 0
        for path in sorted(class_dir.iterdir()):
            if path.suffix.lower() not in IMAGE_EXTENSIONS or not path.is_file():
                continue
            try:
                image = load_image(path)
            except DecodeError as exc:
                print(f"warning: skipping {path}: {exc}", file=sys.stderr)
                continue
            samples.append(Sample(image, label, str(path)))
            loaded += 1
        if loaded == 0:
            raise DataError(f"class directory {class_dir} has no decodable images")
    return Dataset(samples, label_names, compute_channel_means(samples))


def resize_dataset(dataset: Dataset, size: int) -> Dataset:
    """Every sample resized to size x size; channel means recomputed."""
    resized = [
        Sample(resize_bilinear(s.image, size, size), s.label, s.source_path)
        for s in dataset.samples
    ]
    return Dataset(resized, list(dataset.label_names), compute_channel_means(resized))


def shuffle_split(dataset: Dataset, seed: int, val_fraction: float) -> tuple[Dataset, Dataset]:
    """Fisher-Yates shuffle then a stratified split.

    Each class contributes ceil(val_fraction * count) samples to the
    validation split.  Both splits carry the training split's channel means so
    validation is normalized with training statistics.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in (0,1), got {val_fraction}")
    counts = dataset.class_counts()
    quotas = [math.ceil(val_fraction * c) for c in counts]
    for name, count, quota in zip(dataset.label_names, counts, quotas):
        if count < 2 or quota >= count:
            raise DataError(
                f"class {name!r} has {count} samples, too few to appear in both splits"
            )
    order = fisher_yates_order(len(dataset.samples), seed)
    taken = [0] * len(counts)
    train_samples: list[Sample] = []
    val_samples: list[Sample] = []
    for idx in order:
        sample = dataset.samples[idx]
        if taken[sample.label] < quotas[sample.label]:
            taken[sample.label] += 1
            val_samples.append(sample)
        else:
            train_samples.append(sample)
    means = compute_channel_means(train_samples)
    names = list(dataset.label_names)
    return Dataset(train_samples, names, means), Dataset(val_samples, list(names), means)
