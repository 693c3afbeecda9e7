"""Shared label space: construction, validation, incremental extension, I/O.

A shared label space partitions the union of all task labels into groups so
that every (task, label) pair lands in exactly one group and no group holds
two labels of the same task. Groups are size-ranked: group 1 holds the
largest structures. New tasks are absorbed by matching their label sizes
against the existing group representatives at minimum total cost, which is
what makes incremental task addition plug-and-play.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field, replace

from .assignment import hungarian_min_cost
from .errors import (
    DuplicateTask,
    EmptyInput,
    IoError,
    MissingSizeRow,
    ParseError,
    TaskTooLarge,
    UnknownTask,
    ValidationError,
)


@dataclass(frozen=True)
class LabelDescriptor:
    task_id: str
    local_index: int  # >= 1; 0 is reserved for background
    name: str
    avg_relative_size: float

    def __post_init__(self):
        if self.local_index < 1:
            raise ValidationError(f"local_index must be >= 1, got {self.local_index}")
        if not (0.0 < self.avg_relative_size <= 1.0):
            raise ValidationError(
                f"avg_relative_size must be in (0, 1], got {self.avg_relative_size}"
            )


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    name: str
    labels: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 1:
            raise ValidationError(f"task {self.task_id!r} has no labels")
        indices = [l.local_index for l in labels]
        if len(set(indices)) != len(indices):
            raise ValidationError(f"duplicate local_index in task {self.task_id!r}")
        names = [l.name for l in labels]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate label name in task {self.task_id!r}")
        for l in labels:
            if l.task_id != self.task_id:
                raise ValidationError(
                    f"label {l.name!r} belongs to task {l.task_id!r}, "
                    f"not {self.task_id!r}"
                )

    @property
    def n_labels(self):
        return len(self.labels)


@dataclass
class SizeTable:
    """Per-(task, label) average relative sizes plus dataset provenance."""

    rows: dict = field(default_factory=dict)  # (task_id, local_index) -> size
    provenance: dict = field(default_factory=dict)  # task_id -> {fingerprint, sample_count}

    def size_of(self, task_id, local_index):
        try:
            return self.rows[(task_id, local_index)]
        except KeyError:
            raise MissingSizeRow(task_id, local_index) from None

    def add_task(self, task_id, sizes, fingerprint="", sample_count=0):
        for local_index, size in sizes.items():
            self.rows[(task_id, int(local_index))] = float(size)
        self.provenance[task_id] = {
            "fingerprint": fingerprint,
            "sample_count": int(sample_count),
        }


@dataclass(frozen=True)
class SharedGroup:
    shared_index: int  # k in 1..n_star
    members: tuple  # of (task_id, local_index)
    representative_size: float


@dataclass(frozen=True)
class SharedLabelSpace:
    n_star: int
    groups: tuple  # of SharedGroup, ordered by non-increasing representative_size
    task_maps: dict  # task_id -> {local_index: shared_index}

    @property
    def task_ids(self):
        return sorted(self.task_maps)

    def task_map(self, task_id):
        try:
            return dict(self.task_maps[task_id])
        except KeyError:
            raise UnknownTask(f"task {task_id!r} is not in the shared space") from None


def _sorted_by_size(labels):
    # descending size, ties by ascending local_index: deterministic ranking
    return sorted(labels, key=lambda l: (-l.avg_relative_size, l.local_index))


def _space_from_groups(member_lists, sizes):
    """Order groups by representative size and rebuild indices and task maps."""
    order = sorted(
        range(len(member_lists)), key=lambda g: (-sizes[g], member_lists[g])
    )
    groups = []
    task_maps = {}
    for k, g in enumerate(order, start=1):
        groups.append(
            SharedGroup(
                shared_index=k,
                members=tuple(member_lists[g]),
                representative_size=sizes[g],
            )
        )
        for task_id, local_index in member_lists[g]:
            task_maps.setdefault(task_id, {})[local_index] = k
    return SharedLabelSpace(
        n_star=len(groups), groups=tuple(groups), task_maps=task_maps
    )


def build_shared_space(tasks, table):
    """Build the shared space from scratch.

    The task with the most labels (ties: smallest task_id) seeds the groups
    with its size-ranked labels; every other task is then matched in via
    assign_task in ascending task_id order.
    """
    tasks = list(tasks)
    if not tasks:
        raise EmptyInput("no tasks given")
    seen = set()
    for t in tasks:
        if t.task_id in seen:
            raise DuplicateTask(f"task {t.task_id!r} given twice")
        seen.add(t.task_id)
    for t in tasks:
        for l in t.labels:
            table.size_of(t.task_id, l.local_index)

    reference = min(tasks, key=lambda t: (-t.n_labels, t.task_id))
    member_lists = []
    sizes = []
    for l in _sorted_by_size(
        [replace(l, avg_relative_size=table.size_of(reference.task_id, l.local_index))
         for l in reference.labels]
    ):
        member_lists.append([(reference.task_id, l.local_index)])
        sizes.append(l.avg_relative_size)
    space = _space_from_groups(member_lists, sizes)

    for task in sorted(tasks, key=lambda t: t.task_id):
        if task.task_id == reference.task_id:
            continue
        space = assign_task(space, task, table)
    return space


def assign_task(space, task, table):
    """Absorb a new task into an existing space.

    Each new label joins the existing group whose representative size is
    closest, under a minimum-total-cost one-to-one matching. Receiving groups
    update their representative to the mean of member sizes; groups are then
    re-ranked by size. Existing group memberships never change.
    """
    if task.task_id in space.task_maps:
        raise DuplicateTask(f"task {task.task_id!r} is already in the space")
    if task.n_labels > space.n_star:
        raise TaskTooLarge(task.task_id, task.n_labels, space.n_star)

    labels = sorted(task.labels, key=lambda l: l.local_index)
    label_sizes = [table.size_of(task.task_id, l.local_index) for l in labels]

    cost = [
        [abs(s - g.representative_size) for g in space.groups] for s in label_sizes
    ]
    chosen = hungarian_min_cost(cost)

    member_lists = [list(g.members) for g in space.groups]
    sizes = [g.representative_size for g in space.groups]
    all_sizes = {
        (t, i): table.size_of(t, i)
        for t, i in [m for g in space.groups for m in g.members]
    }
    for l, g in zip(labels, chosen):
        member_lists[g].append((task.task_id, l.local_index))
        all_sizes[(task.task_id, l.local_index)] = table.size_of(
            task.task_id, l.local_index
        )
        member_sizes = [all_sizes[m] for m in member_lists[g]]
        sizes[g] = sum(member_sizes) / len(member_sizes)
    return _space_from_groups(member_lists, sizes)


def inverse_map(space, task_id):
    """Map shared index -> local index for one task (partial over groups)."""
    return {k: local for local, k in space.task_map(task_id).items()}


def validate_space(space):
    """Return a list of human-readable invariant violations (empty = valid)."""
    violations = []
    seen = {}
    for g in space.groups:
        task_counts = {}
        for member in g.members:
            if member in seen:
                violations.append(
                    f"partition: label {member} appears in groups "
                    f"{seen[member]} and {g.shared_index}"
                )
            seen[member] = g.shared_index
            task_counts[member[0]] = task_counts.get(member[0], 0) + 1
        for task_id, count in task_counts.items():
            if count > 1:
                violations.append(
                    f"constraint-2: group {g.shared_index} holds {count} labels "
                    f"of task {task_id!r}"
                )
    if space.n_star != len(space.groups):
        violations.append(
            f"n_star={space.n_star} but there are {len(space.groups)} groups"
        )
    n_max = max(
        (len(m) for m in space.task_maps.values()), default=0
    )
    if space.n_star < n_max:
        violations.append(f"n_star={space.n_star} < n_max={n_max}")
    for g, expect_k in zip(space.groups, range(1, len(space.groups) + 1)):
        if g.shared_index != expect_k:
            violations.append(
                f"group at position {expect_k} carries shared_index {g.shared_index}"
            )
    for prev, cur in zip(space.groups, space.groups[1:]):
        if cur.representative_size > prev.representative_size:
            violations.append(
                f"ordering: group {cur.shared_index} "
                f"({cur.representative_size}) larger than group "
                f"{prev.shared_index} ({prev.representative_size})"
            )
    for task_id, mapping in space.task_maps.items():
        for local_index, k in mapping.items():
            group = space.groups[k - 1] if 1 <= k <= len(space.groups) else None
            if group is None or (task_id, local_index) not in group.members:
                violations.append(
                    f"task_map: ({task_id!r}, {local_index}) -> {k} has no "
                    f"matching group membership"
                )
    return violations


# --- persistence ----------------------------------------------------------
#
# On-disk schema (field names are fixed):
# {"n_star": int,
#  "groups": [{"k": int, "representative_size": number,
#              "members": [{"task": str, "label": int}]}],
#  "size_table": {task: {local_index: size}},
#  "provenance": {task: {"fingerprint": str, "sample_count": int}}}


def space_to_document(space, table):
    return {
        "n_star": space.n_star,
        "groups": [
            {
                "k": g.shared_index,
                "representative_size": g.representative_size,
                "members": [{"task": t, "label": i} for t, i in g.members],
            }
            for g in space.groups
        ],
        "size_table": _table_rows_doc(table),
        "provenance": {
            t: {"fingerprint": p["fingerprint"], "sample_count": p["sample_count"]}
            for t, p in sorted(table.provenance.items())
        },
    }


def _table_rows_doc(table):
    doc = {}
    for (task_id, local_index), size in sorted(table.rows.items()):
        doc.setdefault(task_id, {})[str(local_index)] = size
    return doc


def space_json_bytes(space, table):
    # repr-based float serialization round-trips doubles exactly
    doc = space_to_document(space, table)
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()


def space_fingerprint(space, table):
    return hashlib.sha256(space_json_bytes(space, table)).hexdigest()


def structure_fingerprint(space):
    """Hash of the grouping structure alone (no size table), used to tie
    checkpoints to the label space they were trained against."""
    doc = {
        "n_star": space.n_star,
        "groups": [
            {
                "k": g.shared_index,
                "representative_size": g.representative_size,
                "members": [{"task": t, "label": i} for t, i in g.members],
            }
            for g in space.groups
        ],
    }
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True).encode()
    ).hexdigest()


def save_space(space, table, path):
    violations = validate_space(space)
    if violations:
        raise ValidationError("; ".join(violations))
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(space_json_bytes(space, table))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_space(path):
    """Read a space file back; returns (SharedLabelSpace, SizeTable)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc

    try:
        table = SizeTable()
        for task_id, rows in doc["size_table"].items():
            for local_index, size in rows.items():
                table.rows[(task_id, int(local_index))] = float(size)
        for task_id, p in doc.get("provenance", {}).items():
            table.provenance[task_id] = {
                "fingerprint": p.get("fingerprint", ""),
                "sample_count": int(p.get("sample_count", 0)),
            }
        groups = []
        task_maps = {}
        for g in doc["groups"]:
            members = tuple((m["task"], int(m["label"])) for m in g["members"])
            groups.append(
                SharedGroup(
                    shared_index=int(g["k"]),
                    members=members,
                    representative_size=float(g["representative_size"]),
                )
            )
            for task_id, local_index in members:
                task_maps.setdefault(task_id, {})[local_index] = int(g["k"])
        space = SharedLabelSpace(
            n_star=int(doc["n_star"]), groups=tuple(groups), task_maps=task_maps
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed space document ({exc})") from exc

    for task_id, mapping in space.task_maps.items():
        for local_index in mapping:
            if (task_id, local_index) not in table.rows:
                raise MissingSizeRow(task_id, local_index)
    violations = validate_space(space)
    if violations:
        raise ValidationError(f"{path}: " + "; ".join(violations))
    return space, table
