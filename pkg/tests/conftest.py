"""Shared fixtures and small factories used across the test modules."""

import numpy as np
import pytest

from labelshare import synth
from labelshare.data import size_stats
from labelshare.labelspace import (
    LabelDescriptor,
    SizeTable,
    TaskSpec,
    build_shared_space,
)


def make_task(task_id, sizes):
    """TaskSpec with labels 1..n carrying the given average relative sizes."""
    labels = tuple(
        LabelDescriptor(
            task_id=task_id,
            local_index=i + 1,
            name=f"label_{i + 1}",
            avg_relative_size=float(s),
        )
        for i, s in enumerate(sizes)
    )
    return TaskSpec(task_id=task_id, name=task_id, labels=labels)


def make_table(size_map):
    table = SizeTable()
    for task_id, sizes in size_map.items():
        table.add_task(task_id, {i + 1: float(s) for i, s in enumerate(sizes)})
    return table


def random_task_set(rng, max_tasks=4, max_labels=6):
    """A random family of tasks with strictly positive label sizes."""
    n_tasks = int(rng.integers(1, max_tasks + 1))
    size_map = {
        f"task_{t:02d}": [
            float(s) for s in rng.uniform(0.005, 0.9, size=int(rng.integers(1, max_labels + 1)))
        ]
        for t in range(n_tasks)
    }
    tasks = [make_task(t, s) for t, s in size_map.items()]
    return tasks, make_table(size_map)


@pytest.fixture(scope="session")
def tiny_suite(tmp_path_factory):
    """The default four-task suite at a few samples per split."""
    root = tmp_path_factory.mktemp("suite")
    base, il = synth.default_suite(0, n_train=6, n_test=3)
    out = {}
    for spec in base + [il]:
        train_m, test_m = synth.generate_task(spec, str(root))
        out[spec.task_id] = {"train": train_m, "test": test_m, "spec": spec}
    return out


@pytest.fixture(scope="session")
def tiny_space(tiny_suite):
    """Shared space over the three base tasks of the tiny suite."""
    tasks, table = [], SizeTable()
    for task_id in ("task_a", "task_b", "task_c"):
        manifest = tiny_suite[task_id]["train"]
        stats = size_stats(manifest)
        sizes = {i: s["avg_relative_size"] for i, s in stats.items()}
        tasks.append(make_task(task_id, [sizes[i] for i in sorted(sizes)]))
        table.add_task(task_id, sizes, fingerprint=manifest.fingerprint,
                       sample_count=len(manifest))
    return build_shared_space(tasks, table), table
