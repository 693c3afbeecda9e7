"""Dice, exact Euclidean Hausdorff distance, and experiment reports."""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyForeground,
    EmptySet,
    FingerprintMismatch,
    IoError,
    ShapeError,
)
from .labelspace import structure_fingerprint
from .training import predict

METRICS = ("dice", "hausdorff", "normalized_hausdorff")


def dice(pred, gt, label):
    """2|A∩B| / (|A|+|B|) over pixels equal to `label`; 1.0 when both sets
    are empty, 0.0 when exactly one is."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    a = pred == label
    b = gt == label
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    return 2.0 * int((a & b).sum()) / (na + nb)


def _edt_1d(f):
    """Squared distance transform of a sampled function (lower envelope of
    parabolas), after Felzenszwalb & Huttenlocher."""
    n = len(f)
    d = np.empty(n)
    v = np.empty(n, dtype=int)
    z = np.empty(n + 1)
    k = 0
    v[0] = 0
    z[0] = -math.inf
    z[1] = math.inf
    for q in range(1, n):
        while True:
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2 * q - 2 * p)
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = math.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def distance_transform(mask):
    """Exact Euclidean distance to the nearest foreground pixel.

    Two separable passes of the 1D squared transform: columns first, then
    rows with the column results as additive offsets.
    """
    mask = np.asarray(mask).astype(bool)
    if not mask.any():
        raise EmptyForeground("mask has no foreground pixel")
    inf = float(mask.size**2 + 4)  # larger than any attainable squared distance
    f = np.where(mask, 0.0, inf)
    g = np.empty_like(f)
    for j in range(f.shape[1]):
        g[:, j] = _edt_1d(f[:, j])
    out = np.empty_like(g)
    for i in range(g.shape[0]):
        out[i, :] = _edt_1d(g[i, :])
    return np.sqrt(out)


def hausdorff(a, b):
    """Symmetric Hausdorff distance between two binary masks (or anything
    truthy per pixel), in Euclidean pixel units."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    if not a.any():
        raise EmptySet("first")
    if not b.any():
        raise EmptySet("second")
    dt_a = distance_transform(a)
    dt_b = distance_transform(b)
    return float(max(dt_b[a].max(), dt_a[b].max()))


def normalized_hausdorff(value, image_shape):
    """Hausdorff distance over the image diagonal, clamped to [0, 1]."""
    if value < 0:
        raise ShapeError(f"hausdorff value must be >= 0, got {value}")
    h, w = image_shape
    diagonal = math.sqrt(h * h + w * w)
    return min(value / diagonal, 1.0)


@dataclass
class EvalRow:
    task_id: str
    local_index: int
    label_name: str
    metric: str
    value: float  # None when every sample failed (e.g. empty prediction)
    sample_count: int
    failure_count: int = 0


@dataclass
class Report:
    mode: str
    rows: list = field(default_factory=list)
    task_aggregates: dict = field(default_factory=dict)  # task -> {metric: mean}

    def task_mean(self, task_id, metric="dice"):
        return self.task_aggregates[task_id][metric]


def _aggregate(rows):
    aggregates = {}
    for metric in METRICS:
        by_task = {}
        for row in rows:
            if row.metric == metric and row.value is not None:
                by_task.setdefault(row.task_id, []).append(row.value)
        for task_id, values in by_task.items():
            aggregates.setdefault(task_id, {})[metric] = sum(values) / len(values)
    return aggregates


def evaluate(ckpt, manifests, space=None, relabels=None, mode=None):
    """Per-label Dice and (normalized) Hausdorff on task-local test sets.

    Predictions run in the checkpoint's native domain and are relabeled to
    each sample's task via the space (or an explicit per-task relabel map for
    multichannel checkpoints). Samples where a label is absent from both
    prediction and ground truth still count for Dice (as 1.0) but are skipped
    for Hausdorff; one-sided-empty cases count as Dice failure-free 0.0 and a
    Hausdorff failure.
    """
    if space is not None and ckpt.space_fingerprint:
        if structure_fingerprint(space) != ckpt.space_fingerprint:
            raise FingerprintMismatch(
                "checkpoint was trained against a different label space"
            )
    model = ckpt.model()
    rows = []
    for manifest in manifests:
        task_id = manifest.task_id
        relabel = (relabels or {}).get(task_id)
        scores = {}  # local_index -> {"dice": [...], "hd": [...], "failed": int}
        shape = None
        n_samples = len(manifest.entries)
        for entry in manifest.entries:
            s = manifest.load(entry)
            shape = s.image.shape
            pred = predict(
                model,
                s.image,
                space=space,
                task_id=task_id if (space is not None and relabel is None) else None,
                relabel=relabel,
            )
            for local_index in sorted(manifest.label_names):
                rec = scores.setdefault(
                    local_index, {"dice": [], "hd": [], "failed": 0}
                )
                rec["dice"].append(dice(pred, s.mask, local_index))
                in_pred = bool((pred == local_index).any())
                in_gt = bool((s.mask == local_index).any())
                if in_pred and in_gt:
                    rec["hd"].append(
                        hausdorff(pred == local_index, s.mask == local_index)
                    )
                elif in_pred or in_gt:
                    rec["failed"] += 1
        for local_index, rec in sorted(scores.items()):
            name = manifest.label_names.get(local_index, str(local_index))
            rows.append(
                EvalRow(task_id, local_index, name, "dice",
                        sum(rec["dice"]) / len(rec["dice"]), n_samples)
            )
            hd_mean = sum(rec["hd"]) / len(rec["hd"]) if rec["hd"] else None
            rows.append(
                EvalRow(task_id, local_index, name, "hausdorff", hd_mean,
                        len(rec["hd"]), rec["failed"])
            )
            nhd = normalized_hausdorff(hd_mean, shape) if hd_mean is not None else None
            rows.append(
                EvalRow(task_id, local_index, name, "normalized_hausdorff", nhd,
                        len(rec["hd"]), rec["failed"])
            )
    return Report(
        mode=mode or ckpt.mode, rows=rows, task_aggregates=_aggregate(rows)
    )


# --- report I/O -------------------------------------------------------------


def write_report_csv(report, path):
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["task", "label", "metric", "value", "n"])
            for row in report.rows:
                value = "" if row.value is None else repr(row.value)
                writer.writerow(
                    [row.task_id, row.label_name, row.metric, value, row.sample_count]
                )
    except OSError as exc:
        raise IoError(str(exc)) from exc


def report_to_json(report):
    return {
        "mode": report.mode,
        "rows": [
            {
                "task": r.task_id,
                "label_index": r.local_index,
                "label": r.label_name,
                "metric": r.metric,
                "value": r.value,
                "n": r.sample_count,
                "failures": r.failure_count,
            }
            for r in report.rows
        ],
        "task_aggregates": report.task_aggregates,
    }


def write_report_json(report, path):
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w") as fh:
            json.dump(report_to_json(report), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_report_json(path):
    with open(path) as fh:
        doc = json.load(fh)
    rows = [
        EvalRow(
            task_id=r["task"],
            local_index=r["label_index"],
            label_name=r["label"],
            metric=r["metric"],
            value=r["value"],
            sample_count=r["n"],
            failure_count=r.get("failures", 0),
        )
        for r in doc["rows"]
    ]
    return Report(mode=doc["mode"], rows=rows, task_aggregates=doc["task_aggregates"])
