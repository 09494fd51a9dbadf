"""Dataset loading: MNIST/CIFAR10 from standard files, plus an offline
surrogate built from scikit-learn's bundled digits for sandboxed runs."""

from __future__ import annotations

import gzip
import os
import struct

import numpy as np
import torch


class DataError(ValueError):
    pass


def _read_maybe_gz(path):
    if str(path).endswith(".gz"):
        with gzip.open(path, "rb") as fh:
            return fh.read()
    with open(path, "rb") as fh:
        return fh.read()


def _load_idx_bytes(data, path):
    if len(data) < 4 or data[0] != 0 or data[1] != 0:
        raise DataError(f"{path}: not an IDX file")
    ndim = data[3]
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    arr = np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim)
    return arr.reshape(dims)


def _find(dirname, names):
    for name in names:
        for suffix in ("", ".gz"):
            p = os.path.join(dirname, name + suffix)
            if os.path.exists(p):
                return p
    raise DataError(f"none of {names} found under {dirname}")


def mnist_dir() -> str | None:
    """Directory holding the MNIST IDX files, if configured and present."""
    cand = os.environ.get("EEV_MNIST_DIR", os.path.join("data", "mnist"))
    try:
        _find(cand, ["train-images-idx3-ubyte", "train-images.idx3-ubyte"])
        return cand
    except DataError:
        return None


def load_mnist(dirname, split="train"):
    """(images (N,28,28,1) float64 in [0,1], labels (N,)) from IDX files."""
    prefix = "train" if split == "train" else "t10k"
    img = _find(dirname, [f"{prefix}-images-idx3-ubyte",
                          f"{prefix}-images.idx3-ubyte"])
    lab = _find(dirname, [f"{prefix}-labels-idx1-ubyte",
                          f"{prefix}-labels.idx1-ubyte"])
    images = _load_idx_bytes(_read_maybe_gz(img), img).astype(np.float64) / 255.0
    labels = _load_idx_bytes(_read_maybe_gz(lab), lab).astype(np.int64)
    return images[..., None], labels


def load_cifar10(dirname, split="train"):
    """CIFAR-10 from the standard binary batches (data_batch_*.bin)."""
    names = ([f"data_batch_{i}.bin" for i in range(1, 6)]
             if split == "train" else ["test_batch.bin"])
    images = []
    labels = []
    for name in names:
        path = os.path.join(dirname, name)
        if not os.path.exists(path):
            raise DataError(f"{path} not found")
        raw = np.frombuffer(open(path, "rb").read(), dtype=np.uint8)
        rows = raw.reshape(-1, 3073)
        labels.append(rows[:, 0].astype(np.int64))
        imgs = rows[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
        images.append(imgs.astype(np.float64) / 255.0)
    return np.concatenate(images), np.concatenate(labels)


def load_digits_surrogate(test_fraction=0.2, seed=0):
    """Offline stand-in: scikit-learn's 8x8 digits scaled to [0, 1].

    Used where MNIST files are unavailable; same pipeline, smaller images.
    """
    from sklearn.datasets import load_digits
    ds = load_digits()
    images = (ds.images / 16.0)[..., None]
    labels = ds.target.astype(np.int64)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(images))
    n_test = int(len(images) * test_fraction)
    test_idx, train_idx = order[:n_test], order[n_test:]
    return ((images[train_idx], labels[train_idx]),
            (images[test_idx], labels[test_idx]))


def to_torch(images: np.ndarray, labels: np.ndarray):
    """HWC numpy batches to float64 NCHW tensors plus int64 labels."""
    x = torch.from_numpy(np.ascontiguousarray(
        images.transpose(0, 3, 1, 2))).double()
    y = torch.from_numpy(np.ascontiguousarray(labels)).long()
    return x, y


def save_npz(path, images: np.ndarray, labels: np.ndarray):
    """Write the verifier's NPZ dataset container."""
    np.savez(path, images=images.astype(np.float64),
             labels=labels.astype(np.int64))
