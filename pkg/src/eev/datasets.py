"""Dataset ingestion: MNIST-style IDX files and NPZ containers.

IDX is the classic big-endian binary layout: a 4-byte magic (two zero bytes,
a type code, the dimension count) followed by one 4-byte big-endian size per
dimension and the raw data. NPZ is a numpy zip archive holding named arrays
"images" (N,H,W,C float in [0,1]) and "labels" (N ints); byte layout is the
standard .npy format inside a zip.
"""

from __future__ import annotations

import struct

import numpy as np

_IDX_TYPES = {
    0x08: np.uint8,
    0x09: np.int8,
    0x0B: ">i2",
    0x0C: ">i4",
    0x0D: ">f4",
    0x0E: ">f8",
}


class DatasetError(ValueError):
    pass


def load_idx(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[0] != 0 or data[1] != 0:
        raise DatasetError(f"{path}: not an IDX file (bad magic)")
    type_code, ndim = data[2], data[3]
    if type_code not in _IDX_TYPES:
        raise DatasetError(f"{path}: unknown IDX type 0x{type_code:02x}")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    arr = np.frombuffer(data, dtype=_IDX_TYPES[type_code],
                        offset=4 + 4 * ndim)
    expect = int(np.prod(dims)) if dims else 0
    if arr.size != expect:
        raise DatasetError(
            f"{path}: payload has {arr.size} items, header says {expect}")
    return arr.reshape(dims)


def load_idx_images(path) -> np.ndarray:
    """(N, H, W, 1) float64 images in [0, 1] from an IDX image file."""
    raw = load_idx(path)
    if raw.ndim != 3:
        raise DatasetError(f"{path}: expected 3-D image data, got {raw.ndim}-D")
    return (raw.astype(np.float64) / 255.0)[..., None]


def load_idx_labels(path) -> np.ndarray:
    raw = load_idx(path)
    if raw.ndim != 1:
        raise DatasetError(f"{path}: expected 1-D label data")
    return raw.astype(np.int64)


def load_npz(path) -> tuple[np.ndarray, np.ndarray]:
    """(images, labels) from an NPZ container with those array names."""
    with np.load(path) as data:
        if "images" not in data or "labels" not in data:
            raise DatasetError(
                f"{path}: NPZ container must hold 'images' and 'labels'")
        images = np.asarray(data["images"], dtype=np.float64)
        labels = np.asarray(data["labels"], dtype=np.int64)
    if images.ndim == 3:
        images = images[..., None]
    if images.ndim != 4:
        raise DatasetError(f"{path}: images must be (N,H,W,C)")
    if len(images) != len(labels):
        raise DatasetError(f"{path}: {len(images)} images vs "
                           f"{len(labels)} labels")
    if images.size and (images.min() < 0 or images.max() > 1):
        raise DatasetError(f"{path}: image values must lie in [0, 1]")
    return images, labels


def load_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    """Dispatch on extension: .npz container, or IDX pair via prefix.

    For IDX, `path` names the image file; the label file is found by the
    conventional suffix swap (images -> labels, idx3 -> idx1).
    """
    p = str(path)
    if p.endswith(".npz"):
        return load_npz(p)
    label_path = (p.replace("images", "labels")
                   .replace("idx3", "idx1"))
    if label_path == p:
        raise DatasetError(
            f"{p}: cannot derive label file name (expected 'images'/'idx3' "
            f"in the file name, or use an .npz container)")
    return load_idx_images(p), load_idx_labels(label_path)
