"""Task description and labeled ensemble generation.

Image ``i`` of class ``y`` in split ``s`` always comes from the same seed
streams, so datasets can be generated in chunks, in parallel, or regenerated
later without storing them. Background streams do not depend on the signal,
which lets a signal-length sweep reuse identical backgrounds.
"""
from __future__ import annotations

import hashlib
import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .dataset import ImageSet
from .degrade import (
    DegradationSpec,
    RAYLEIGH_DEGRADATION,
    apply_noise,
    degrade_noise_free,
    finish_degradation,
)
from .objects import (
    ClbParams,
    McSignalSpec,
    RayleighSignalSpec,
    build_mc_library,
    center_crop,
    generate_clb,
    insert_mc_cluster,
    make_rayleigh_signal,
)
from .seeding import SeedLike, derive_seed, make_rng

logger = logging.getLogger("tbiq")

TASK_KINDS = ("rayleigh", "mc_cluster")
RESOLUTIONS = ("HR", "LR")


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "rayleigh"
    clb: ClbParams = field(default_factory=ClbParams)
    rayleigh: RayleighSignalSpec = field(default_factory=RayleighSignalSpec)
    mc: McSignalSpec = field(default_factory=McSignalSpec)
    degradation: DegradationSpec = RAYLEIGH_DEGRADATION
    crop_size: tuple[int, int] = (64, 64)

    @property
    def image_size(self) -> tuple[int, int]:
        return self.clb.shape

    def validate(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ValueError(f"Unsupported task.kind: {self.kind}. Supported values: {', '.join(TASK_KINDS)}.")
        self.clb.validate()
        self.degradation.validate()
        height, width = self.image_size
        crop_h, crop_w = (int(v) for v in self.crop_size)
        if not (0 < crop_h <= height and 0 < crop_w <= width):
            raise ValueError(f"crop_size {self.crop_size} must fit inside image {height}x{width}.")
        if int(self.degradation.downsample_factor) == 2 and (height % 2 or width % 2):
            raise ValueError(f"Downsampling requires even image dimensions, got {height}x{width}.")
        if self.kind == "rayleigh":
            self.rayleigh.validate()
        else:
            self.mc.validate()
            if int(self.mc.crop_size) != height or int(self.mc.crop_size) != width:
                raise ValueError(
                    f"MC crop_size {self.mc.crop_size} must equal the image size {height}x{width}."
                )

    def with_signal_length(self, length: int) -> "TaskSpec":
        return replace(self, rayleigh=replace(self.rayleigh, length=int(length)))


class BackgroundBank:
    """Rendered backgrounds keyed by ``(split, label, index)``, shared by factories of one sweep.

    Backgrounds depend only on the CLB parameters and the master seed, so a
    signal-length sweep renders each of them once. Entries are kept until
    ``max_bytes`` is reached; later backgrounds are rendered on demand.
    """

    def __init__(self, params: ClbParams, master_seed: int, max_bytes: int) -> None:
        params.validate()
        self.params = params
        self.master_seed = int(master_seed)
        self.max_bytes = max(int(max_bytes), 0)
        self.hits = 0
        self._images: dict[tuple[str, int, int], np.ndarray] = {}
        self._bytes = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._images)

    def render(self, split: str, label: int, index: int) -> np.ndarray:
        seed = derive_seed(self.master_seed, split, "background", int(label), int(index))
        return generate_clb(self.params, seed)

    def get(self, split: str, label: int, index: int) -> np.ndarray:
        key = (str(split), int(label), int(index))
        with self._lock:
            cached = self._images.get(key)
            if cached is not None:
                self.hits += 1
                return cached
        image = self.render(*key)
        image.setflags(write=False)
        with self._lock:
            if key not in self._images and self._bytes + image.nbytes <= self.max_bytes:
                self._images[key] = image
                self._bytes += image.nbytes
        return image


class ObjectFactory:
    """Generates noise-free objects ``f`` for one task and master seed."""

    def __init__(
        self,
        task: TaskSpec,
        master_seed: int,
        *,
        library: Optional[Sequence[np.ndarray]] = None,
        backgrounds: Optional[BackgroundBank] = None,
    ) -> None:
        task.validate()
        self.task = task
        self.master_seed = int(master_seed)
        if backgrounds is None:
            backgrounds = BackgroundBank(task.clb, self.master_seed, max_bytes=0)
        elif backgrounds.params != task.clb or backgrounds.master_seed != self.master_seed:
            raise ValueError("Background bank was built for other CLB parameters or another master seed.")
        self.backgrounds = backgrounds
        self._signals: dict[int, np.ndarray] = {}
        self._library = list(library) if library is not None else None

    @property
    def library(self) -> list[np.ndarray]:
        if self._library is None:
            seed = derive_seed(self.master_seed, "mc_library")
            self._library = build_mc_library(self.task.mc, seed)
        return self._library

    def _rayleigh_signal(self, label: int) -> np.ndarray:
        if label not in self._signals:
            hypothesis = "H1_line" if label == 1 else "H0_pair"
            spec = replace(self.task.rayleigh, hypothesis=hypothesis)
            self._signals[label] = make_rayleigh_signal(spec, self.task.image_size)
        return self._signals[label]

    def background(self, split: str, label: int, index: int) -> np.ndarray:
        return self.backgrounds.get(split, label, index)

    def make(self, split: str, label: int, index: int) -> np.ndarray:
        background = self.background(split, label, index)
        if self.task.kind == "rayleigh":
            return background + self._rayleigh_signal(int(label))
        if int(label) == 0:
            return background
        seed = derive_seed(self.master_seed, split, "mc_signal", int(index))
        return insert_mc_cluster(background, self.task.mc, seed, self.library)

    def objects(
        self,
        split: str,
        n_per_class: int,
        *,
        start: int = 0,
        n_jobs: int = 1,
    ) -> ImageSet:
        """Class-interleaved noise-free objects for indices ``start .. start + n_per_class - 1``."""
        if int(n_per_class) < 1:
            raise ValueError(f"n_per_class must be >= 1, got {n_per_class}.")
        # warm shared state before threads fan out
        if self.task.kind == "mc_cluster":
            _ = self.library
        else:
            self._rayleigh_signal(0)
            self._rayleigh_signal(1)
        jobs = [(label, idx) for idx in range(start, start + int(n_per_class)) for label in (0, 1)]
        if n_jobs == 1:
            images = [self.make(split, label, idx) for label, idx in jobs]
        else:
            images = Parallel(n_jobs=n_jobs, prefer="threads")(
                delayed(self.make)(split, label, idx) for label, idx in jobs
            )
        labels = np.array([label for label, _ in jobs], dtype=np.int8)
        ids = np.array([idx for _, idx in jobs], dtype=np.int64)
        return ImageSet(np.stack(images), labels, ids)


def pre_noise(objects: np.ndarray, task: TaskSpec, resolution: str) -> np.ndarray:
    """Noise-free measurement stage: identity for HR, blur (and downsample) for LR."""
    if resolution == "HR":
        return np.asarray(objects, dtype=float).copy()
    if resolution == "LR":
        return np.stack([degrade_noise_free(img, task.degradation) for img in objects])
    raise ValueError(f"Unsupported resolution: {resolution}. Supported values: {', '.join(RESOLUTIONS)}.")


def add_noise(
    clean: np.ndarray,
    task: TaskSpec,
    resolution: str,
    seeds: Sequence[SeedLike],
) -> np.ndarray:
    """Noise stage (plus upsampling for LR) with one seed per image."""
    if resolution == "HR":
        return np.stack([apply_noise(img, task.degradation.noise, s) for img, s in zip(clean, seeds)])
    if resolution == "LR":
        return np.stack([finish_degradation(img, task.degradation, s) for img, s in zip(clean, seeds)])
    raise ValueError(f"Unsupported resolution: {resolution}. Supported values: {', '.join(RESOLUTIONS)}.")


def noise_seeds(
    master_seed: int,
    split: str,
    resolution: str,
    labels: np.ndarray,
    ids: np.ndarray,
    realization: int = 0,
) -> list[int]:
    return [
        derive_seed(master_seed, split, "noise", resolution, int(label), int(idx), int(realization))
        for label, idx in zip(labels, ids)
    ]


def measure(
    objects: ImageSet,
    task: TaskSpec,
    resolution: str,
    master_seed: int,
    split: str,
    *,
    realization: int = 0,
) -> ImageSet:
    clean = pre_noise(objects.images, task, resolution)
    seeds = noise_seeds(master_seed, split, resolution, objects.labels, objects.ids, realization)
    images = add_noise(clean, task, resolution, seeds)
    return ImageSet(images.astype(np.float32), objects.labels.copy(), objects.ids.copy())


def make_noise_refresher(task: TaskSpec, resolution: str):
    """Callable ``(clean_batch, rng) -> noisy_batch`` for semi-online training."""

    def _refresh(clean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        seeds = rng.integers(0, 2**63 - 1, size=clean.shape[0])
        return add_noise(clean, task, resolution, [int(s) for s in seeds]).astype(np.float32)

    return _refresh


def crop_set(images: ImageSet, crop_size: Sequence[int]) -> ImageSet:
    return images.with_images(np.ascontiguousarray(center_crop(images.images, crop_size)))


def generate_ensemble(
    task: TaskSpec,
    n_per_class: int,
    seed: int,
    *,
    split: str = "train",
    resolution: str = "HR",
    n_jobs: int = 1,
) -> ImageSet:
    """``n_per_class`` measured images of each class with labels 0/1."""
    factory = ObjectFactory(task, seed)
    objects = factory.objects(split, n_per_class, n_jobs=n_jobs)
    logger.debug("Generated %d %s objects for split %s", len(objects), task.kind, split)
    return measure(objects, task, resolution, seed, split)


def image_digest(images: np.ndarray) -> set[bytes]:
    """Per-image content hashes, used to check that splits are disjoint."""
    return {hashlib.blake2b(np.ascontiguousarray(img).tobytes(), digest_size=16).digest() for img in images}


def shuffle_rng(master_seed: int, *keys) -> np.random.Generator:
    return make_rng(derive_seed(master_seed, *keys))
