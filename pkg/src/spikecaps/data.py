"""Dataset ingestion, normalisation, corruption and canvas placement.

IDX files are read and written exactly (big-endian headers, unsigned-byte
payloads). Corruption operators work on raw ``[0, 1]`` pixels and must be
applied before :func:`normalize`; every image draws from its own
generator seeded by ``(seed, image_index)`` so results do not depend on
batch order.

Directory layout expected under a dataset root::

    <root>/<name>/train-images-idx3-ubyte   (or train-images.idx3-ubyte, optionally .gz)
    <root>/<name>/train-labels-idx1-ubyte
    <root>/<name>/t10k-images-idx3-ubyte
    <root>/<name>/t10k-labels-idx1-ubyte
"""

from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, ParameterError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DATASET_NAMES = ("mnist", "fashion_mnist", "affnist")
DATA_ROOT_ENV = "SPIKECAPS_DATA_ROOT"
NOISE_KINDS = ("none", "salt_pepper", "gaussian")

_SPLIT_PREFIX = {"train": "train", "test": "t10k"}


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    name: str = "mnist"
    num_classes: int = 10

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DimensionError(f"images must be [N, C, H, W], got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DimensionError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def subset(self, n: int | None) -> "Dataset":
        if n is None or n >= len(self):
            return self
        return replace(self, images=self.images[:n], labels=self.labels[:n])


def _open(path: Path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX file into a uint8 array shaped by its header."""
    path = Path(path)
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header, file holds {len(raw)} bytes, magic needs 4 at offset 0")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08 or ndim == 0:
        raise FormatError(f"{path}: bad magic 0x{int.from_bytes(raw[:4], 'big'):08x} at byte offset 0")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated dimension header, expected {header_end} bytes, file ends at offset {len(raw)}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header_end])
    count = int(np.prod(dims))
    if len(raw) < header_end + count:
        raise FormatError(
            f"{path}: truncated payload, expected {count} bytes from offset {header_end}, file ends at offset {len(raw)}"
        )
    if len(raw) > header_end + count:
        raise FormatError(f"{path}: {len(raw) - header_end - count} trailing bytes after offset {header_end + count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header_end, count=count).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ParameterError(f"IDX writer only supports uint8 payloads, got {array.dtype}")
    header = struct.pack(">HBB", 0, 0x08, array.ndim) + struct.pack(">" + "I" * array.ndim, *array.shape)
    data = header + np.ascontiguousarray(array).tobytes()
    path = Path(path)
    if str(path).endswith(".gz"):
        with gzip.GzipFile(path, "wb", mtime=0) as f:
            f.write(data)
    else:
        path.write_bytes(data)


def load_idx(images_path, labels_path, name: str = "mnist") -> Dataset:
    """Load an image/label IDX pair; pixels are scaled to [0, 1]."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: expected a 3-d image file (magic 0x{IMAGE_MAGIC:08x}), got {images.ndim}-d")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: expected a 1-d label file (magic 0x{LABEL_MAGIC:08x}), got {labels.ndim}-d")
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images in {images_path} but {len(labels)} labels in {labels_path}")
    pixels = images.astype(np.float64)[:, None] / 255.0
    return Dataset(images=pixels, labels=labels.astype(np.int64), name=name)


def _find(directory: Path, stem: str, kind: str) -> Path:
    # both "train-images-idx3-ubyte" and "train-images.idx3-ubyte" are in circulation
    names = [f"{stem}-{kind}", f"{stem}.{kind}"]
    for n in names:
        for suffix in ("", ".gz"):
            p = directory / (n + suffix)
            if p.exists():
                return p
    raise FileNotFoundError(f"no {stem} file in {directory} (tried {', '.join(names)}, optionally .gz)")


def split_paths(root, name: str, split: str) -> tuple[Path, Path]:
    if split not in _SPLIT_PREFIX:
        raise ParameterError(f"split must be 'train' or 'test', got {split!r}")
    directory = Path(root) / name
    prefix = _SPLIT_PREFIX[split]
    return _find(directory, f"{prefix}-images", "idx3-ubyte"), _find(directory, f"{prefix}-labels", "idx1-ubyte")


def load_split(root, name: str, split: str) -> Dataset:
    if name not in DATASET_NAMES:
        raise ParameterError(f"dataset name must be one of {DATASET_NAMES}, got {name!r}")
    images_path, labels_path = split_paths(root, name, split)
    return load_idx(images_path, labels_path, name=name)


def default_data_root() -> str | None:
    return os.environ.get(DATA_ROOT_ENV)


# SHA-256 of the uncompressed files
CHECKSUMS = {
    "mnist": {
        "train-images": "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
        "train-labels": "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
        "t10k-images": "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
        "t10k-labels": "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
    },
}


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with _open(Path(path)) as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def verify_checksums(root, name: str) -> dict:
    """Map each known file stem to whether its content hash matches; empty when no hashes are known."""
    result = {}
    for stem, digest in CHECKSUMS.get(name, {}).items():
        kind = "idx3-ubyte" if "images" in stem else "idx1-ubyte"
        try:
            path = _find(Path(root) / name, stem, kind)
        except FileNotFoundError:
            result[stem] = False
            continue
        result[stem] = file_sha256(path) == digest
    return result


def dataset_stats(ds: Dataset) -> tuple[float, float]:
    """Global pixel mean and (population) standard deviation."""
    return float(ds.images.mean()), float(ds.images.std())


def normalize(ds: Dataset, mean: float, std: float) -> Dataset:
    if not std > 0:
        raise ParameterError(f"normalisation std must be positive, got {std}")
    return replace(ds, images=(ds.images - mean) / std)


def _image_rng(seed, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def apply_salt_pepper(ds: Dataset, p: float, seed: int) -> Dataset:
    """Corrupt each pixel with probability ``p``; corrupted pixels become 0 or 1 with equal odds."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"salt-pepper probability must lie in [0, 1], got {p}")
    if p == 0.0:
        return replace(ds, images=ds.images.copy())
    out = np.empty_like(ds.images)
    shape = ds.images.shape[1:]
    for n, img in enumerate(ds.images):
        rng = _image_rng(seed, n)
        hit = rng.random(shape) < p
        salt = rng.random(shape) < 0.5
        out[n] = np.where(hit, salt.astype(np.float64), img)
    return replace(ds, images=out)


def apply_gaussian(ds: Dataset, sigma: float, seed: int) -> Dataset:
    """Add i.i.d. zero-mean Gaussian noise of std ``sigma``; no clamping."""
    if not sigma >= 0.0:
        raise ParameterError(f"gaussian sigma must be non-negative, got {sigma}")
    if sigma == 0.0:
        return replace(ds, images=ds.images.copy())
    out = np.empty_like(ds.images)
    shape = ds.images.shape[1:]
    for n, img in enumerate(ds.images):
        out[n] = img + _image_rng(seed, n).normal(0.0, sigma, size=shape)
    return replace(ds, images=out)


def apply_noise(ds: Dataset, kind: str, intensity: float, seed: int) -> Dataset:
    if kind == "salt_pepper":
        return apply_salt_pepper(ds, intensity, seed)
    if kind == "gaussian":
        return apply_gaussian(ds, intensity, seed)
    if kind == "none":
        return ds
    raise ParameterError(f"noise kind must be salt_pepper, gaussian or none, got {kind!r}")


@dataclass(frozen=True)
class NoiseSpec:
    """Corruption request; ``seed`` of None means "derive from the run seed"."""

    kind: str = "none"
    intensity: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ParameterError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.kind == "salt_pepper" and not 0.0 <= self.intensity <= 1.0:
            raise ParameterError(f"salt-pepper intensity must lie in [0, 1], got {self.intensity}")
        if self.kind == "gaussian" and not self.intensity >= 0.0:
            raise ParameterError(f"gaussian intensity must be non-negative, got {self.intensity}")

    def apply(self, ds: Dataset, seed: int | None = None) -> Dataset:
        s = self.seed if self.seed is not None else seed
        return apply_noise(ds, self.kind, self.intensity, 0 if s is None else s)


def placement_offsets(n: int, size: int, canvas: int, seed: int) -> np.ndarray:
    span = canvas - size + 1
    return np.array([_image_rng(seed, i).integers(0, span, size=2) for i in range(n)], dtype=np.int64).reshape(n, 2)


def place_on_canvas(ds: Dataset, canvas: int = 40, seed: int = 0) -> Dataset:
    """Paste every image at a uniformly random offset on a zero background."""
    _, c, h, w = ds.images.shape
    if canvas < h or canvas < w:
        raise ParameterError(f"canvas {canvas} is smaller than the source images ({h}x{w})")
    if h != w:
        raise DimensionError(f"canvas placement expects square images, got {h}x{w}")
    offsets = placement_offsets(len(ds), h, canvas, seed)
    out = np.zeros((len(ds), c, canvas, canvas))
    for n, (r, col) in enumerate(offsets):
        out[n, :, r : r + h, col : col + w] = ds.images[n]
    return replace(ds, images=out)


def convert_affnist(mat_path, out_dir, split: str = "test", transpose: bool = False) -> tuple[Path, Path]:
    """Convert an affNIST ``.mat`` batch to an IDX image/label pair.

    The archive stores ``affNISTdata.image`` as a 1600 x N uint8 matrix (one
    column per 40x40 image) and ``affNISTdata.label_int`` as 1 x N.
    ``transpose`` swaps the rows and columns of every image, for archives
    stored column-major.
    """
    from scipy.io import loadmat

    mat = loadmat(mat_path, squeeze_me=True, struct_as_record=False)
    if "affNISTdata" not in mat:
        raise FormatError(f"{mat_path}: no 'affNISTdata' struct in archive")
    data = mat["affNISTdata"]
    images = np.asarray(data.image)
    labels = np.atleast_1d(np.asarray(data.label_int)).astype(np.uint8)
    if images.ndim == 1:
        images = images[:, None]
    if images.shape[0] != 1600:
        raise FormatError(f"{mat_path}: expected 1600 pixel rows per image, got {images.shape[0]}")
    images = np.ascontiguousarray(images.T.reshape(-1, 40, 40)).astype(np.uint8)
    if transpose:
        images = np.ascontiguousarray(images.transpose(0, 2, 1))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = _SPLIT_PREFIX[split]
    ip, lp = out_dir / f"{prefix}-images-idx3-ubyte", out_dir / f"{prefix}-labels-idx1-ubyte"
    write_idx(ip, images)
    write_idx(lp, labels)
    return ip, lp
