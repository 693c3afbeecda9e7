"""Deterministic synthetic multi-task segmentation datasets.

Each task draws simple shapes (disk, rectangle, ring, cross) of distinct
target sizes onto a task-specific textured background, so the size ranking
is learnable and tasks stay visually separable without any task id being fed
to the model. Generation is a pure function of (spec, seed): the per-sample
RNG stream is derived from (seed, task, split, sample index), so datasets are
byte-identical across runs and platforms.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import Entry, Manifest, compute_fingerprint, save_manifest
from .errors import PlacementFailure, ValidationError
from .pgm import write_pgm

SHAPE_KINDS = ("disk", "rectangle", "ring", "cross")

_MAX_PLACEMENT_ATTEMPTS = 1000


@dataclass
class TaskGenSpec:
    task_id: str
    n_labels: int
    image_size: tuple = (64, 64)
    shape_kinds: tuple = ()  # one per label
    size_scales: tuple = ()  # target area fraction per label, in (0, 0.5]
    background_level: int = 200
    label_contrasts: tuple = ()  # additive foreground intensity per label
    texture_freq: float = 6.0  # cycles across the image
    texture_angle: float = 0.0  # radians
    texture_amplitude: float = 40.0
    noise_amplitude: float = 20.0
    n_train: int = 200
    n_test: int = 40
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.n_labels <= 8):
            raise ValidationError(f"n_labels must be in 1..8, got {self.n_labels}")
        if not self.shape_kinds:
            self.shape_kinds = tuple(
                SHAPE_KINDS[i % len(SHAPE_KINDS)] for i in range(self.n_labels)
            )
        if not self.label_contrasts:
            self.label_contrasts = tuple(
                300 + 150 * i for i in range(self.n_labels)
            )
        if len(self.shape_kinds) != self.n_labels:
            raise ValidationError("shape_kinds must list one kind per label")
        for kind in self.shape_kinds:
            if kind not in SHAPE_KINDS:
                raise ValidationError(f"unknown shape kind {kind!r}")
        if len(self.size_scales) != self.n_labels:
            raise ValidationError("size_scales must list one fraction per label")
        for s in self.size_scales:
            if not (0.0 < s <= 0.5):
                raise ValidationError(f"size scale {s} outside (0, 0.5]")
        if len(set(self.size_scales)) != self.n_labels:
            raise ValidationError("size_scales must be pairwise distinct")

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, doc):
        doc = dict(doc)
        for key in ("image_size", "shape_kinds", "size_scales", "label_contrasts"):
            if key in doc and doc[key] is not None:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def _task_entropy(task_id):
    return int.from_bytes(hashlib.sha256(task_id.encode()).digest()[:8], "big")


def _sample_rng(spec, split, index):
    split_code = 0 if split == "train" else 1
    return np.random.default_rng(
        [int(spec.seed) & (2**64 - 1), _task_entropy(spec.task_id), split_code, index]
    )


def _footprint(kind, area, rng):
    """Boolean footprint of one shape."""
    if kind == "disk":
        r = np.sqrt(area / np.pi)
        d = int(np.ceil(2 * r))
        c = (d - 1) / 2
        yy, xx = np.mgrid[0:d, 0:d]
        return (yy - c) ** 2 + (xx - c) ** 2 <= r**2
    if kind == "rectangle":
        aspect = rng.uniform(0.5, 2.0)
        rw = max(2, int(round(np.sqrt(area * aspect))))
        rh = max(2, int(round(area / rw)))
        return np.ones((rh, rw), dtype=bool)
    if kind == "ring":
        router = np.sqrt(area / (0.64 * np.pi))
        rinner = 0.6 * router
        d = int(np.ceil(2 * router))
        c = (d - 1) / 2
        yy, xx = np.mgrid[0:d, 0:d]
        rr = (yy - c) ** 2 + (xx - c) ** 2
        return (rr <= router**2) & (rr >= rinner**2)
    if kind == "cross":
        arm = int(np.ceil(np.sqrt(9 * area / 5)))
        t = max(2, arm // 3)
        fp = np.zeros((arm, arm), dtype=bool)
        lo = (arm - t) // 2
        fp[lo : lo + t, :] = True
        fp[:, lo : lo + t] = True
        return fp
    raise ValidationError(f"unknown shape kind {kind!r}")


def generate_sample(spec, split, index):
    """One (image, mask) pair; image is uint16-ranged, mask task-local."""
    h, w = spec.image_size
    rng = _sample_rng(spec, split, index)
    mask = np.zeros((h, w), dtype=np.int64)

    # place larger shapes first so dense specs still fit
    order = sorted(range(spec.n_labels), key=lambda i: -spec.size_scales[i])
    for i in order:
        target = spec.size_scales[i] * h * w
        placed = False
        for _ in range(_MAX_PLACEMENT_ATTEMPTS):
            area = target * rng.uniform(0.8, 1.2)
            fp = _footprint(spec.shape_kinds[i], area, rng)
            fh, fw = fp.shape
            if fh > h or fw > w:
                continue
            top = rng.integers(0, h - fh + 1)
            left = rng.integers(0, w - fw + 1)
            window = mask[top : top + fh, left : left + fw]
            if np.any(window[fp] != 0):
                continue
            window[fp] = i + 1
            placed = True
            break
        if not placed:
            raise PlacementFailure(
                f"could not place label {i + 1} of task {spec.task_id!r} "
                f"after {_MAX_PLACEMENT_ATTEMPTS} attempts"
            )

    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    phase = rng.uniform(0, 2 * np.pi)
    k = 2 * np.pi * spec.texture_freq / max(h, w)
    wave = np.sin(
        k * (np.cos(spec.texture_angle) * xx + np.sin(spec.texture_angle) * yy)
        + phase
    )
    image = spec.background_level + spec.texture_amplitude * wave
    for i in range(spec.n_labels):
        image = np.where(mask == i + 1, image + spec.label_contrasts[i], image)
    image += rng.uniform(-spec.noise_amplitude, spec.noise_amplitude, size=(h, w))
    image = np.clip(np.rint(image), 0, 65535).astype(np.int64)
    return image, mask


def generate_task(spec, out_dir):
    """Write a task's train/test PGM layout plus manifests; returns both."""
    task_dir = os.path.join(out_dir, spec.task_id)
    manifests = []
    for split, count in (("train", spec.n_train), ("test", spec.n_test)):
        split_dir = os.path.join(task_dir, split)
        os.makedirs(split_dir, exist_ok=True)
        entries = []
        for i in range(count):
            image, mask = generate_sample(spec, split, i)
            image_name = f"{split}_{i:05d}_image.pgm"
            mask_name = f"{split}_{i:05d}_mask.pgm"
            write_pgm(os.path.join(split_dir, image_name), image)
            write_pgm(os.path.join(split_dir, mask_name), mask)
            entries.append(Entry(image=image_name, mask=mask_name))
        manifest = Manifest(
            task_id=spec.task_id,
            split=split,
            entries=entries,
            label_names={
                i + 1: f"{spec.shape_kinds[i]}_{i + 1}" for i in range(spec.n_labels)
            },
            root=split_dir,
        )
        manifest.fingerprint = compute_fingerprint(manifest)
        save_manifest(manifest, os.path.join(split_dir, "manifest.json"))
        manifests.append(manifest)
    with open(os.path.join(task_dir, "spec.json"), "w") as fh:
        json.dump(spec.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return tuple(manifests)


def default_suite(seed, n_train=200, n_test=40, image_size=(64, 64)):
    """Three base tasks (5, 5, 4 labels) plus a 3-label incremental task.

    Size scales are chosen so within-task rankings are unambiguous and
    cross-task size ranks line up cleanly.
    """
    common = dict(image_size=image_size, n_train=n_train, n_test=n_test, seed=seed)
    base = [
        TaskGenSpec(
            task_id="task_a",
            n_labels=5,
            shape_kinds=("disk", "rectangle", "ring", "cross", "disk"),
            size_scales=(0.14, 0.10, 0.06, 0.035, 0.015),
            background_level=180,
            texture_freq=4.0,
            texture_angle=0.0,
            **common,
        ),
        TaskGenSpec(
            task_id="task_b",
            n_labels=5,
            shape_kinds=("rectangle", "disk", "cross", "ring", "rectangle"),
            size_scales=(0.15, 0.09, 0.055, 0.03, 0.012),
            background_level=320,
            texture_freq=9.0,
            texture_angle=np.pi / 4,
            **common,
        ),
        TaskGenSpec(
            task_id="task_c",
            n_labels=4,
            shape_kinds=("ring", "cross", "disk", "rectangle"),
            size_scales=(0.13, 0.08, 0.05, 0.025),
            background_level=260,
            texture_freq=14.0,
            texture_angle=np.pi / 2,
            **common,
        ),
    ]
    il = TaskGenSpec(
        task_id="task_il",
        n_labels=3,
        shape_kinds=("cross", "disk", "rectangle"),
        size_scales=(0.12, 0.07, 0.03),
        background_level=420,
        texture_freq=6.5,
        texture_angle=3 * np.pi / 4,
        **common,
    )
    return base, il
