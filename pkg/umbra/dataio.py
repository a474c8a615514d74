# ============================================================
# dataio.py
#
# Image, mask and corpus input/output.
#
# Features:
#   - PNG and binary PPM images, alpha composited over black
#   - PGM masks (nonzero = inside) or the "full" sentinel
#   - brightness filtering of samples on the 0..255 lightness scale
#   - a synthetic 8-class sign corpus drawn with OpenCV
#   - JSON corpus manifests
#   - numbered frame sequences and their per-frame statistics
# ============================================================

import io
import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DecodeError, UnsupportedFormatError
from .geometry import RegionMask
from .shadow import region_lightness

logger = logging.getLogger(__name__)

FULL_MASK = "full"
DARK_THRESHOLD = 120.0
SIGN_SIZE = 32
IMAGE_FORMATS = {".png": "PNG", ".ppm": "PPM"}
PPM_MAGIC = b"P6"
MANIFEST_NAME = "manifest.json"


# ------------------------------------------------------------
# Images and masks
# ------------------------------------------------------------

def _open(path: Path, accepted: tuple) -> Image.Image:
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    if path.stat().st_size == 0:
        raise DecodeError(f"{path} is empty")
    try:
        img = Image.open(path)
    except UnidentifiedImageError as exc:
        raise UnsupportedFormatError(f"{path} is not a PNG or PPM/PGM file") from exc
    if img.format not in accepted:
        raise UnsupportedFormatError(f"{path}: format {img.format} is not supported")
    try:
        img.load()
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path} is truncated or corrupt: {exc}") from exc
    return img


def load_image(path) -> np.ndarray:
    """
    Decode a PNG or PPM file into an H x W x 3 uint8 RGB array.

    Transparent pixels are composited over black; grey images are expanded.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        DecodeError: If the file is empty, truncated or corrupt.
        UnsupportedFormatError: If it is neither PNG nor binary (P6) PPM.
    """
    path = Path(path)
    img = _open(path, ("PNG", "PPM"))
    if img.format == "PPM":
        with open(path, "rb") as f:
            magic = f.read(2)
        if magic != PPM_MAGIC:
            raise UnsupportedFormatError(f"{path}: only binary P6 PPM is supported, found {magic!r}")
    if img.mode in ("RGBA", "LA", "PA") or (img.mode == "P" and "transparency" in img.info):
        black = Image.new("RGBA", img.size, (0, 0, 0, 255))
        img = Image.alpha_composite(black, img.convert("RGBA"))
    return np.array(img.convert("RGB"), dtype=np.uint8)


def _check_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 uint8 image, got {image.dtype} {image.shape}")
    return image


def encode_png(image: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(_check_rgb(image), "RGB").save(buffer, format="PNG")
    return buffer.getvalue()


def save_image(path, image: np.ndarray) -> Path:
    """Write ``image`` as PNG or binary PPM, chosen by the file suffix."""
    path = Path(path)
    fmt = IMAGE_FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise UnsupportedFormatError(f"cannot write {path.suffix or 'suffix-less'} images; use .png or .ppm")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(_check_rgb(image), "RGB").save(path, format=fmt)
    return path


def load_mask(source, shape: tuple | None = None) -> RegionMask:
    """
    Load a target mask.

    Args:
        source: A PGM/PNG path, or ``"full"`` for the whole frame.
        shape (tuple): Expected (height, width); required for ``"full"``.

    Returns:
        RegionMask: Nonzero pixels are inside.
    """
    if str(source) == FULL_MASK:
        if shape is None:
            raise ValueError('the "full" mask needs an image shape')
        return RegionMask.full(*shape[:2])
    path = Path(source)
    values = np.array(_open(path, ("PPM", "PNG")).convert("L"))
    if not np.isin(values, (0, 255)).all():
        logger.warning("%s is not binary; every nonzero value counts as inside", path)
    mask = RegionMask(values != 0)
    if shape is not None and mask.shape != tuple(shape[:2]):
        raise ValueError(f"mask {path} is {mask.shape}, image is {tuple(shape[:2])}")
    return mask


def save_mask(path, mask: RegionMask) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.bitmap.astype(np.uint8) * 255, "L").save(path, format="PPM")
    return path


# ------------------------------------------------------------
# Samples and manifests
# ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Sample:
    """
    A labelled image with its target mask.

    Attributes:
        image (np.ndarray): H x W x 3 uint8 RGB.
        label (int): Class index.
        mask (RegionMask): Target object mask, same size as the image.
        name (str): Identifier used in logs and reports.
    """
    image: np.ndarray
    label: int
    mask: RegionMask
    name: str = ""

    def __post_init__(self):
        _check_rgb(self.image)
        if self.mask.shape != self.image.shape[:2]:
            raise ValueError(f"mask {self.mask.shape} does not match image {self.image.shape[:2]}")
        if int(self.label) < 0:
            raise ValueError("labels are non-negative class indices")


@dataclass(frozen=True)
class ManifestEntry:
    image: str
    mask: str
    label: int


@dataclass
class CorpusManifest:
    """
    A corpus on disk: image and mask paths relative to ``root``, plus class names.

    Attributes:
        root (Path): Directory the entries are relative to.
        entries (list): :class:`ManifestEntry` rows.
        class_names (list): Display name per class index.
    """
    root: Path
    entries: list = field(default_factory=list)
    class_names: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "entries": [{"image": e.image, "mask": e.mask, "label": e.label} for e in self.entries],
        }

    @staticmethod
    def _from_dict(data: dict, root: Path) -> "CorpusManifest":
        try:
            entries = [ManifestEntry(str(e["image"]), str(e.get("mask", FULL_MASK)), int(e["label"]))
                       for e in data["entries"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed manifest: {exc}") from exc
        names = list(data.get("class_names", []))
        for entry in entries:
            if names and not 0 <= entry.label < len(names):
                raise ConfigError(f"{entry.image}: label {entry.label} outside {len(names)} classes")
        return CorpusManifest(root, entries, names)

    @staticmethod
    def from_json(path) -> "CorpusManifest":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        return CorpusManifest._from_dict(data, path.parent)


def save_manifest(manifest: CorpusManifest, path=None) -> Path:
    path = Path(path) if path is not None else Path(manifest.root) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_manifest(path) -> CorpusManifest:
    """Read a manifest (a file, or a directory holding manifest.json) and check every file exists."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"no corpus manifest at {path}")
    manifest = CorpusManifest.from_json(path)
    for entry in manifest.entries:
        for name in (entry.image, entry.mask):
            if name != FULL_MASK and not (manifest.root / name).is_file():
                raise FileNotFoundError(f"manifest {path} references missing file {name}")
    return manifest


def load_samples(manifest: CorpusManifest, workers: int = 4) -> list:
    """Decode every manifest entry into a :class:`Sample`, in manifest order."""
    root = Path(manifest.root)
    masks = {}

    def load(entry: ManifestEntry) -> Sample:
        image = load_image(root / entry.image)
        if entry.mask == FULL_MASK:
            mask = RegionMask.full(*image.shape[:2])
        else:
            mask = masks.get(entry.mask)
            if mask is None:
                mask = masks.setdefault(entry.mask, load_mask(root / entry.mask))
        return Sample(image, entry.label, mask, Path(entry.image).stem)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(load, manifest.entries))


def filter_dark(samples, threshold: float = DARK_THRESHOLD) -> list:
    """
    Drop samples whose target area is too dark to attack.

    The mean in-mask L* is rescaled to 0..255 and compared with ``threshold``;
    samples at or above it are kept. Samples with an empty mask are dropped.
    """
    kept = []
    dark = 0
    for sample in samples:
        if sample.mask.is_empty:
            logger.warning("sample %s has an empty mask; removed", sample.name or "?")
            continue
        value = region_lightness(sample.image, sample.mask) * 255.0 / 100.0
        if value >= threshold:
            kept.append(sample)
        else:
            dark += 1
    if dark:
        logger.warning("removed %d of %d samples darker than %g", dark, len(samples), threshold)
    return kept


# ------------------------------------------------------------
# Synthetic sign corpus
# ------------------------------------------------------------

_SCALE = 4
_BACKGROUND = (128, 128, 128)


def _poly(canvas, points, color, outline=None, thickness=0):
    pts = (np.asarray(points, dtype=np.float64) * _SCALE).astype(np.int32)
    cv2.fillPoly(canvas, [pts], color, lineType=cv2.LINE_AA)
    if outline is not None:
        cv2.polylines(canvas, [pts], True, outline, thickness * _SCALE, lineType=cv2.LINE_AA)


def _regular(sides: int, radius: float, rotation: float = 0.0) -> np.ndarray:
    angles = np.deg2rad(rotation + 360.0 * np.arange(sides) / sides)
    return np.stack([16 + radius * np.cos(angles), 16 + radius * np.sin(angles)], axis=1)


def _text(canvas, text, color, scale=1.0, thickness=2):
    font = cv2.FONT_HERSHEY_SIMPLEX
    (w, h), _ = cv2.getTextSize(text, font, scale * _SCALE / 2, thickness * _SCALE // 2)
    origin = ((SIGN_SIZE * _SCALE - w) // 2, (SIGN_SIZE * _SCALE + h) // 2)
    cv2.putText(canvas, text, origin, font, scale * _SCALE / 2, color, thickness * _SCALE // 2, cv2.LINE_AA)


def _stop(canvas):
    _poly(canvas, _regular(8, 14, 22.5), (210, 40, 40), (245, 245, 245), 1)
    _text(canvas, "STOP", (250, 250, 250), 0.55, 1)


def _warning(canvas):
    _poly(canvas, _regular(4, 14, 0), (245, 205, 30), (20, 20, 20), 1)
    _text(canvas, "!", (20, 20, 20), 1.2, 2)


def _speed(canvas):
    cv2.circle(canvas, (16 * _SCALE, 16 * _SCALE), 14 * _SCALE, (240, 240, 240), -1, cv2.LINE_AA)
    cv2.circle(canvas, (16 * _SCALE, 16 * _SCALE), 13 * _SCALE, (215, 30, 30), 3 * _SCALE, cv2.LINE_AA)
    _text(canvas, "50", (10, 10, 10), 0.9, 2)


def _ahead(canvas):
    cv2.circle(canvas, (16 * _SCALE, 16 * _SCALE), 14 * _SCALE, (30, 80, 200), -1, cv2.LINE_AA)
    _poly(canvas, [(16, 6), (23, 14), (19, 14), (19, 25), (13, 25), (13, 14), (9, 14)], (245, 245, 245))


def _yield(canvas):
    _poly(canvas, _regular(3, 14, 90), (245, 245, 245), (210, 30, 30), 3)


def _priority(canvas):
    _poly(canvas, _regular(4, 14, 45), (245, 245, 245))
    _poly(canvas, _regular(4, 8, 45), (250, 190, 20))


def _parking(canvas):
    _poly(canvas, [(5, 5), (27, 5), (27, 27), (5, 27)], (25, 90, 190), (240, 240, 240), 1)
    _text(canvas, "P", (245, 245, 245), 1.2, 3)


def _no_entry(canvas):
    cv2.circle(canvas, (16 * _SCALE, 16 * _SCALE), 14 * _SCALE, (200, 25, 25), -1, cv2.LINE_AA)
    _poly(canvas, [(7, 14), (25, 14), (25, 18), (7, 18)], (250, 250, 250))


TEMPLATES = (
    ("stop", _stop),
    ("warning", _warning),
    ("speed-50", _speed),
    ("ahead-only", _ahead),
    ("yield", _yield),
    ("priority-road", _priority),
    ("parking", _parking),
    ("no-entry", _no_entry),
)


def render_template(label: int) -> np.ndarray:
    """The clean 32 x 32 sign of class ``label`` on a flat grey background."""
    canvas = np.full((SIGN_SIZE * _SCALE, SIGN_SIZE * _SCALE, 3), _BACKGROUND, dtype=np.uint8)
    TEMPLATES[label][1](canvas)
    return cv2.resize(canvas, (SIGN_SIZE, SIGN_SIZE), interpolation=cv2.INTER_AREA)


def circular_mask(size: int = SIGN_SIZE, radius: float = 15.0) -> RegionMask:
    centres = np.arange(size) + 0.5 - size / 2.0
    rows, cols = np.meshgrid(centres, centres, indexing="ij")
    return RegionMask(rows ** 2 + cols ** 2 <= radius ** 2)


def _jitter(rng: np.random.Generator, template: np.ndarray, mask: RegionMask) -> np.ndarray:
    centre = (SIGN_SIZE / 2.0, SIGN_SIZE / 2.0)
    rotation = cv2.getRotationMatrix2D(centre, float(rng.uniform(-5.0, 5.0)), 1.0)
    image = cv2.warpAffine(template, rotation, (SIGN_SIZE, SIGN_SIZE), flags=cv2.INTER_LINEAR,
                           borderMode=cv2.BORDER_REPLICATE)
    level = rng.uniform(60, 200)
    noise = np.clip(level + rng.normal(0.0, 20.0, size=image.shape), 0, 255).astype(np.uint8)
    image = np.where(mask.bitmap[..., None], image, noise)
    brightness = rng.uniform(0.9, 1.1)
    return np.clip(np.rint(image * brightness), 0, 255).astype(np.uint8)


def generate_samples(seed: int, classes: int = 8, per_class: int = 100) -> list:
    """
    Render the synthetic sign corpus in memory.

    Every sample is its class template rotated by up to 5 degrees, set on a
    noisy background outside the circular mask and scaled in brightness by
    up to 10 percent. The output depends only on the arguments.

    Returns:
        list: ``classes * per_class`` :class:`Sample` objects, grouped by class.
    """
    if not 1 <= classes <= len(TEMPLATES):
        raise ValueError(f"classes must lie in [1, {len(TEMPLATES)}]")
    if per_class < 1:
        raise ValueError("per_class must be positive")
    rng = np.random.default_rng(seed)
    mask = circular_mask()
    samples = []
    for label in range(classes):
        template = render_template(label)
        for i in range(per_class):
            samples.append(Sample(_jitter(rng, template, mask), label, mask, f"{TEMPLATES[label][0]}-{i:04d}"))
    return samples


def generate_corpus(root, seed: int, classes: int = 8, per_class: int = 100) -> CorpusManifest:
    """Write :func:`generate_samples` to ``root`` as PPM images, one PGM mask and a manifest."""
    root = Path(root)
    samples = generate_samples(seed, classes, per_class)
    save_mask(root / "mask.pgm", samples[0].mask)
    entries = []
    for sample in samples:
        name = f"images/{sample.name}.ppm"
        save_image(root / name, sample.image)
        entries.append(ManifestEntry(name, "mask.pgm", sample.label))
    manifest = CorpusManifest(root, entries, [name for name, _ in TEMPLATES[:classes]])
    save_manifest(manifest)
    logger.info("wrote %d samples of %d classes to %s", len(samples), classes, root)
    return manifest


# ------------------------------------------------------------
# Frame sequences
# ------------------------------------------------------------

class Frame(NamedTuple):
    index: int
    path: Path
    image: np.ndarray


_NUMBER = re.compile(r"(\d+)(?!.*\d)")


def load_frames(directory) -> list:
    """Load ``*.png``/``*.ppm`` files whose names carry a number, in numeric order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no frame directory at {directory}")
    numbered = []
    for path in directory.iterdir():
        match = _NUMBER.search(path.stem)
        if path.suffix.lower() in IMAGE_FORMATS and match:
            numbered.append((int(match.group(1)), path))
    if not numbered:
        raise DecodeError(f"{directory} holds no numbered .png/.ppm frames")
    numbered.sort()
    return [Frame(index, path, load_image(path)) for index, path in numbered]


@dataclass(frozen=True)
class FrameStats:
    """
    Per-sequence metrics.

    Attributes:
        frames (int): Number of frames.
        error_rate (float): Percentage of frames not labelled ``true_label``.
        stability (float): Percentage of frames labelled with the most common wrong label.
        primary_error (int | None): That label, None when no frame is wrong.
    """
    frames: int
    error_rate: float
    stability: float
    primary_error: int | None


def frame_statistics(labels, true_label: int) -> FrameStats:
    labels = [int(v) for v in labels]
    if not labels:
        raise ValueError("no frame labels")
    wrong = Counter(v for v in labels if v != true_label)
    n = len(labels)
    if not wrong:
        return FrameStats(n, 0.0, 0.0, None)
    primary, count = min(wrong.items(), key=lambda kv: (-kv[1], kv[0]))
    return FrameStats(n, 100.0 * sum(wrong.values()) / n, 100.0 * count / n, primary)
