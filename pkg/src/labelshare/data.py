"""Dataset manifests, size statistics, mask remapping, and projections.

A task dataset lives in a directory with PGM images/masks plus a JSON
manifest:

    {"task": str, "split": "train"|"test",
     "label_names": {"1": str, ...},
     "entries": [{"image": path, "mask": path}],
     "fingerprint": hex}

Entry paths are relative to the manifest file. A unified (merged) manifest
additionally carries a per-entry "task" field and, when built for the
multichannel baseline, a "channel_blocks" table.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyManifest,
    EmptyVolume,
    IoError,
    LabelNeverPresent,
    OutOfRangeLabel,
    ParseError,
    ShapeError,
    ValidationError,
)
from .pgm import read_pgm, write_pgm

TASK_LOCAL = "task_local"
SHARED = "shared"


@dataclass
class Sample:
    image: np.ndarray  # H x W real intensities
    mask: np.ndarray  # H x W integer labels, 0 = background
    task_id: str = ""
    label_domain: str = TASK_LOCAL

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ShapeError(
                f"image {self.image.shape} vs mask {self.mask.shape}"
            )


@dataclass
class Entry:
    image: str
    mask: str
    task_id: str = ""


@dataclass
class Manifest:
    task_id: str
    split: str
    entries: list
    label_names: dict = field(default_factory=dict)  # local_index -> name
    fingerprint: str = ""
    root: str = "."  # directory the entry paths are relative to
    label_domain: str = TASK_LOCAL
    channel_blocks: dict = field(default_factory=dict)  # task -> (start, end)

    def __len__(self):
        return len(self.entries)

    def image_path(self, entry):
        return os.path.join(self.root, entry.image)

    def mask_path(self, entry):
        return os.path.join(self.root, entry.mask)

    def load(self, entry):
        return Sample(
            image=read_pgm(self.image_path(entry)).astype(float),
            mask=read_pgm(self.mask_path(entry)),
            task_id=entry.task_id or self.task_id,
            label_domain=self.label_domain,
        )


@dataclass
class Volume:
    voxels: np.ndarray  # D x H x W
    mask: np.ndarray

    def __post_init__(self):
        if self.voxels.shape != self.mask.shape:
            raise ShapeError(
                f"voxels {self.voxels.shape} vs mask {self.mask.shape}"
            )


def compute_fingerprint(manifest):
    """Content hash over all referenced files, in entry order."""
    digest = hashlib.sha256()
    for entry in manifest.entries:
        for path in (manifest.image_path(entry), manifest.mask_path(entry)):
            with open(path, "rb") as fh:
                digest.update(hashlib.sha256(fh.read()).digest())
    return digest.hexdigest()


def save_manifest(manifest, path):
    doc = {
        "task": manifest.task_id,
        "split": manifest.split,
        "label_names": {str(k): v for k, v in sorted(manifest.label_names.items())},
        "entries": [
            {"image": e.image, "mask": e.mask, **({"task": e.task_id} if e.task_id else {})}
            for e in manifest.entries
        ],
        "fingerprint": manifest.fingerprint,
    }
    if manifest.label_domain != TASK_LOCAL:
        doc["label_domain"] = manifest.label_domain
    if manifest.channel_blocks:
        doc["channel_blocks"] = {
            t: list(se) for t, se in sorted(manifest.channel_blocks.items())
        }
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_manifest(path, verify=False):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        manifest = Manifest(
            task_id=doc["task"],
            split=doc["split"],
            entries=[
                Entry(image=e["image"], mask=e["mask"], task_id=e.get("task", ""))
                for e in doc["entries"]
            ],
            label_names={int(k): v for k, v in doc.get("label_names", {}).items()},
            fingerprint=doc.get("fingerprint", ""),
            root=os.path.dirname(os.path.abspath(path)),
            label_domain=doc.get("label_domain", TASK_LOCAL),
            channel_blocks={
                t: tuple(se) for t, se in doc.get("channel_blocks", {}).items()
            },
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed manifest ({exc})") from exc
    if verify:
        actual = compute_fingerprint(manifest)
        if manifest.fingerprint and actual != manifest.fingerprint:
            raise ValidationError(
                f"{path}: fingerprint mismatch (manifest {manifest.fingerprint}, "
                f"files {actual})"
            )
    return manifest


def relative_sizes(mask):
    """Per-label area / total foreground area for one mask."""
    labels, counts = np.unique(mask[mask > 0], return_counts=True)
    total = counts.sum()
    return {int(l): c / total for l, c in zip(labels, counts)}


def size_stats(manifest):
    """Per-label average relative size, presence count and mean pixel count.

    The relative size of a label in one sample is its pixel count divided by
    the total pixel count of all non-background labels in that sample; the
    average runs over samples where the label is present.
    """
    if not manifest.entries:
        raise EmptyManifest(f"manifest for task {manifest.task_id!r} has no entries")
    rel_sums, px_sums, presence = {}, {}, {}
    for entry in manifest.entries:
        mask = read_pgm(manifest.mask_path(entry))
        for label, rel in relative_sizes(mask).items():
            rel_sums[label] = rel_sums.get(label, 0.0) + rel
            px_sums[label] = px_sums.get(label, 0) + int((mask == label).sum())
            presence[label] = presence.get(label, 0) + 1
    for label in manifest.label_names:
        if label not in presence:
            raise LabelNeverPresent(manifest.task_id, label)
    return {
        label: {
            "avg_relative_size": rel_sums[label] / presence[label],
            "presence_count": presence[label],
            "mean_pixel_count": px_sums[label] / presence[label],
        }
        for label in sorted(presence)
    }


def remap_mask(mask, space, task_id):
    """Rewrite task-local labels into shared indices (0 stays background)."""
    mapping = space.task_map(task_id)
    max_label = int(mask.max()) if mask.size else 0
    if max_label > max(mapping, default=0):
        raise OutOfRangeLabel(
            f"mask contains label {max_label}, task {task_id!r} has only "
            f"{len(mapping)} labels"
        )
    lut = np.zeros(max(max_label, 0) + 1, dtype=mask.dtype)
    for local, shared in mapping.items():
        if local <= max_label:
            lut[local] = shared
    return lut[mask]


def project_volume(volume, axis, task_id=""):
    """Mean-intensity projection of voxels plus max-label projection of masks."""
    if volume.voxels.size == 0:
        raise EmptyVolume("volume has no voxels")
    if axis not in (0, 1, 2):
        raise ShapeError(f"axis must be 0, 1 or 2, got {axis}")
    return Sample(
        image=volume.voxels.mean(axis=axis),
        mask=volume.mask.max(axis=axis),
        task_id=task_id,
        label_domain=TASK_LOCAL,
    )


def merge_datasets(manifests, space, out_dir, split="train"):
    """Merge task manifests into one shared-domain manifest.

    Remapped masks are written under out_dir; images are referenced in place
    via relative paths. Every entry keeps its source task_id.
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for manifest in manifests:
        mapping = space.task_map(manifest.task_id)  # raises UnknownTask
        del mapping
        for i, entry in enumerate(manifest.entries):
            mask = read_pgm(manifest.mask_path(entry))
            remapped = remap_mask(mask, space, manifest.task_id)
            mask_name = f"{manifest.task_id}_{split}_{i:05d}_mask.pgm"
            write_pgm(os.path.join(out_dir, mask_name), remapped)
            entries.append(
                Entry(
                    image=os.path.relpath(manifest.image_path(entry), out_dir),
                    mask=mask_name,
                    task_id=manifest.task_id,
                )
            )
    merged = Manifest(
        task_id="merged",
        split=split,
        entries=entries,
        root=out_dir,
        label_domain=SHARED,
    )
    merged.fingerprint = compute_fingerprint(merged)
    return merged


def multichannel_merge(manifests, out_dir, split="train"):
    """Merge task manifests into disjoint channel blocks (multichannel mode).

    Task i's labels 1..n_i occupy output channels offset..offset+n_i-1 where
    blocks are laid out in ascending task_id order after channel 0
    (background).
    """
    os.makedirs(out_dir, exist_ok=True)
    blocks = {}
    offset = 1
    for manifest in sorted(manifests, key=lambda m: m.task_id):
        n = len(manifest.label_names)
        blocks[manifest.task_id] = (offset, offset + n - 1)
        offset += n
    entries = []
    for manifest in sorted(manifests, key=lambda m: m.task_id):
        start = blocks[manifest.task_id][0]
        for i, entry in enumerate(manifest.entries):
            mask = read_pgm(manifest.mask_path(entry))
            shifted = np.where(mask > 0, mask + start - 1, 0)
            mask_name = f"{manifest.task_id}_{split}_{i:05d}_mask.pgm"
            write_pgm(os.path.join(out_dir, mask_name), shifted)
            entries.append(
                Entry(
                    image=os.path.relpath(manifest.image_path(entry), out_dir),
                    mask=mask_name,
                    task_id=manifest.task_id,
                )
            )
    merged = Manifest(
        task_id="multichannel",
        split=split,
        entries=entries,
        root=out_dir,
        label_domain=TASK_LOCAL,
        channel_blocks=blocks,
    )
    merged.fingerprint = compute_fingerprint(merged)
    return merged
