"""Datasets: a seeded synthetic object-scale task and the CIFAR-10 binary format."""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, FormatError

# Side-length buckets (pixels) for 64x64 images with four classes.
BUCKETS_64 = ((4, 8), (12, 16), (24, 32), (40, 56))


@dataclass
class Dataset:
    X: np.ndarray          # [n, H, W, 3], float32 in channel-last layout
    y: np.ndarray          # [n] int64
    X_val: Optional[np.ndarray] = None
    y_val: Optional[np.ndarray] = None
    num_classes: int = 0

    @property
    def img_size(self) -> int:
        return int(self.X.shape[1])


def default_buckets(img_size: int, num_classes: int) -> tuple:
    if num_classes == 4:
        f = img_size / 64.0
        return tuple((max(1, int(round(lo * f))), max(1, int(round(hi * f)))) for lo, hi in BUCKETS_64)
    edges = np.linspace(max(2, img_size // 16), int(img_size * 0.875), 2 * num_classes)
    return tuple((int(edges[2 * k]), int(edges[2 * k + 1])) for k in range(num_classes))


@dataclass(frozen=True)
class SyntheticScaleTask:
    """Noisy images with one filled rectangle; the label is the size bucket of its sides."""

    img_size: int = 64
    num_classes: int = 4
    n_samples: int = 1024
    noise: float = 0.1
    buckets: Optional[tuple] = None

    def resolved_buckets(self) -> tuple:
        b = self.buckets or default_buckets(self.img_size, self.num_classes)
        b = tuple((int(lo), int(hi)) for lo, hi in b)
        if len(b) != self.num_classes:
            raise ConfigError(f"{len(b)} buckets for {self.num_classes} classes")
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        for lo, hi in b:
            if not 1 <= lo <= hi <= self.img_size:
                raise ConfigError(f"bucket ({lo}, {hi}) does not fit a {self.img_size}px image")
        ordered = sorted(b)
        for (_, hi), (lo, _) in zip(ordered, ordered[1:]):
            if lo <= hi:
                raise ConfigError(f"size buckets overlap: {ordered}")
        return b

    def label_of(self, index: int) -> int:
        return (index // 2) % self.num_classes

    def sample(self, index: int, seed: int):
        buckets = self.resolved_buckets()
        rng = np.random.default_rng([int(seed), int(index)])
        label = self.label_of(index)
        lo, hi = buckets[label]
        S = self.img_size
        img = rng.normal(0.0, self.noise, size=(S, S, 3))
        h, w = rng.integers(lo, hi + 1, size=2)
        y0 = rng.integers(0, S - h + 1)
        x0 = rng.integers(0, S - w + 1)
        color = rng.uniform(0.5, 1.0, size=3)
        img[y0:y0 + h, x0:x0 + w] += color
        return img.astype(np.float32), label


def gen_synthetic_dataset(spec: SyntheticScaleTask, seed: int) -> Dataset:
    """Deterministic dataset; even indices train, odd indices validate."""
    spec.resolved_buckets()
    imgs, labels = zip(*(spec.sample(i, seed) for i in range(spec.n_samples)))
    X = np.stack(imgs)
    y = np.asarray(labels, dtype=np.int64)
    return Dataset(X[0::2], y[0::2], X[1::2], y[1::2], spec.num_classes)


CIFAR_RECORD = 1 + 3072
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


def _read_cifar_file(path: Path, records: int):
    raw = path.read_bytes()
    want = records * CIFAR_RECORD
    if len(raw) != want:
        raise FormatError(f"{path.name}: expected {want} bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(records, CIFAR_RECORD)
    labels = arr[:, 0].astype(np.int64)
    if labels.max(initial=0) > 9:
        raise FormatError(f"{path.name}: label byte out of range 0..9")
    pixels = arr[:, 1:].reshape(records, 3, 32, 32).transpose(0, 2, 3, 1)
    return (pixels.astype(np.float32) / 255.0), labels


def load_cifar10_binary(directory, records_per_file: int = 10000) -> Dataset:
    """Load the five training batches and the test batch (channel-last, [0, 1])."""
    d = Path(directory)
    missing = [n for n in CIFAR_TRAIN_FILES + (CIFAR_TEST_FILE,) if not (d / n).is_file()]
    if missing:
        raise FormatError(f"{d}: missing CIFAR-10 file {missing[0]}")
    parts = [_read_cifar_file(d / n, records_per_file) for n in CIFAR_TRAIN_FILES]
    Xt, yt = _read_cifar_file(d / CIFAR_TEST_FILE, records_per_file)
    X = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    return Dataset(X, y, Xt, yt, 10)


def batch_indices(n: int, batch_size: int, seed: int, steps: int) -> np.ndarray:
    """``[steps, batch_size]`` indices; each epoch is a fresh seeded permutation."""
    rng = np.random.default_rng(int(seed))
    per_epoch = max(1, n // batch_size)
    epochs = -(-steps // per_epoch)
    rows = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        rows.append(perm[: per_epoch * batch_size].reshape(per_epoch, batch_size))
    return np.concatenate(rows)[:steps]


def iterate_batches(X, y, order: np.ndarray, prefetch: int = 0):
    """Yield ``(X[idx], y[idx])`` in ``order``; optionally filled by a worker thread."""
    if prefetch <= 0:
        for idx in order:
            yield X[idx], y[idx]
        return
    q: queue.Queue = queue.Queue(maxsize=prefetch)
    stop = threading.Event()

    def worker():
        for idx in order:
            if stop.is_set():
                return
            q.put((X[idx], y[idx]))
        q.put(None)

    t = threading.Thread(target=worker, daemon=True)
    t.start()
    try:
        while True:
            item = q.get()
            if item is None:
                return
            yield item
    finally:
        stop.set()
        while t.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                t.join(timeout=0.01)
