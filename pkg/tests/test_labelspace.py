import numpy as np
import pytest

from conftest import make_table, make_task, random_task_set
from labelshare.errors import (
    DuplicateTask,
    EmptyInput,
    MissingSizeRow,
    ParseError,
    TaskTooLarge,
    UnknownTask,
    ValidationError,
)
from labelshare.labelspace import (
    LabelDescriptor,
    SharedGroup,
    SharedLabelSpace,
    TaskSpec,
    assign_task,
    build_shared_space,
    inverse_map,
    load_space,
    save_space,
    space_fingerprint,
    structure_fingerprint,
    validate_space,
)


def test_single_task_space_is_its_size_ranking():
    tasks = [make_task("t", [0.1, 0.4, 0.2])]
    space = build_shared_space(tasks, make_table({"t": [0.1, 0.4, 0.2]}))
    assert space.n_star == 3
    # groups ranked by size: label 2 (0.4), label 3 (0.2), label 1 (0.1)
    assert [g.members for g in space.groups] == [
        (("t", 2),), (("t", 3),), (("t", 1),)
    ]
    assert space.task_map("t") == {2: 1, 3: 2, 1: 3}
    assert validate_space(space) == []


def test_two_tasks_match_by_closest_size():
    size_map = {"a": [0.40, 0.10], "b": [0.38, 0.12]}
    tasks = [make_task(t, s) for t, s in size_map.items()]
    space = build_shared_space(tasks, make_table(size_map))
    assert space.n_star == 2
    assert space.task_map("a") == {1: 1, 2: 2}
    assert space.task_map("b") == {1: 1, 2: 2}
    # representatives become the mean of member sizes
    assert space.groups[0].representative_size == pytest.approx((0.40 + 0.38) / 2)
    assert space.groups[1].representative_size == pytest.approx((0.10 + 0.12) / 2)


def test_reference_task_is_the_largest_with_ties_by_id():
    size_map = {"b": [0.3, 0.2, 0.1], "a": [0.3, 0.2, 0.1], "c": [0.5]}
    tasks = [make_task(t, s) for t, s in size_map.items()]
    space = build_shared_space(tasks, make_table(size_map))
    assert space.n_star == 3
    assert set(space.task_ids) == {"a", "b", "c"}


def test_smaller_task_leaves_groups_uncovered():
    size_map = {"big": [0.4, 0.2, 0.05], "small": [0.19]}
    tasks = [make_task(t, s) for t, s in size_map.items()]
    space = build_shared_space(tasks, make_table(size_map))
    assert space.task_map("small") == {1: 2}  # closest to 0.2
    assert len(space.task_map("big")) == 3


def test_random_spaces_satisfy_all_invariants():
    rng = np.random.default_rng(7)
    for _ in range(60):
        tasks, table = random_task_set(rng)
        space = build_shared_space(tasks, table)
        assert validate_space(space) == []
        assert space.n_star == max(t.n_labels for t in tasks)
        members = [m for g in space.groups for m in g.members]
        expected = {(t.task_id, l.local_index) for t in tasks for l in t.labels}
        assert len(members) == len(expected)
        assert set(members) == expected
        for g in space.groups:
            tasks_in_group = [m[0] for m in g.members]
            assert len(tasks_in_group) == len(set(tasks_in_group))


def test_assign_task_does_not_move_existing_members():
    rng = np.random.default_rng(11)
    for _ in range(30):
        tasks, table = random_task_set(rng, max_tasks=3)
        space = build_shared_space(tasks, table)
        before = {m: g.representative_size for g in space.groups for m in g.members}
        membership_before = {
            m: frozenset(g.members) - {m} for g in space.groups for m in g.members
        }
        n_new = int(rng.integers(1, space.n_star + 1))
        new = make_task("task_zz", rng.uniform(0.01, 0.8, size=n_new))
        table.add_task("task_zz", {l.local_index: l.avg_relative_size for l in new.labels})
        after = assign_task(space, new, table)
        assert validate_space(after) == []
        # old co-membership is preserved (groups only gain labels)
        for m, peers in membership_before.items():
            group_after = next(g for g in after.groups if m in g.members)
            assert peers <= set(group_after.members)
        del before


def test_assign_task_rejects_oversized_task():
    tasks = [make_task("a", [0.3, 0.1])]
    table = make_table({"a": [0.3, 0.1], "b": [0.4, 0.2, 0.1]})
    space = build_shared_space(tasks, table)
    with pytest.raises(TaskTooLarge):
        assign_task(space, make_task("b", [0.4, 0.2, 0.1]), table)


def test_assign_task_rejects_duplicates():
    table = make_table({"a": [0.3, 0.1]})
    space = build_shared_space([make_task("a", [0.3, 0.1])], table)
    with pytest.raises(DuplicateTask):
        assign_task(space, make_task("a", [0.3, 0.1]), table)


def test_build_rejects_empty_and_duplicate_input():
    with pytest.raises(EmptyInput):
        build_shared_space([], make_table({}))
    tasks = [make_task("a", [0.3]), make_task("a", [0.3])]
    with pytest.raises(DuplicateTask):
        build_shared_space(tasks, make_table({"a": [0.3]}))


def test_missing_size_row_is_reported():
    with pytest.raises(MissingSizeRow):
        build_shared_space([make_task("a", [0.3, 0.1])], make_table({"a": [0.3]}))


def test_inverse_map_and_unknown_task():
    table = make_table({"a": [0.3, 0.1]})
    space = build_shared_space([make_task("a", [0.3, 0.1])], table)
    assert inverse_map(space, "a") == {1: 1, 2: 2}
    with pytest.raises(UnknownTask):
        space.task_map("nope")


def test_validate_catches_broken_spaces():
    dup = SharedLabelSpace(
        n_star=2,
        groups=(
            SharedGroup(1, (("a", 1),), 0.4),
            SharedGroup(2, (("a", 1),), 0.2),
        ),
        task_maps={"a": {1: 1}},
    )
    assert any("partition" in v for v in validate_space(dup))

    two_per_task = SharedLabelSpace(
        n_star=1,
        groups=(SharedGroup(1, (("a", 1), ("a", 2)), 0.4),),
        task_maps={"a": {1: 1, 2: 1}},
    )
    assert any("constraint-2" in v for v in validate_space(two_per_task))

    misordered = SharedLabelSpace(
        n_star=2,
        groups=(
            SharedGroup(1, (("a", 1),), 0.1),
            SharedGroup(2, (("a", 2),), 0.4),
        ),
        task_maps={"a": {1: 1, 2: 2}},
    )
    assert any("ordering" in v for v in validate_space(misordered))


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    tasks, table = random_task_set(rng)
    space = build_shared_space(tasks, table)
    path = tmp_path / "space.json"
    save_space(space, table, str(path))
    loaded_space, loaded_table = load_space(str(path))
    assert loaded_space == space
    assert loaded_table.rows == table.rows
    assert space_fingerprint(loaded_space, loaded_table) == space_fingerprint(
        space, table
    )


def test_fingerprints_are_stable_and_structure_ignores_sizes(tmp_path):
    table = make_table({"a": [0.3, 0.1]})
    space = build_shared_space([make_task("a", [0.3, 0.1])], table)
    fp1 = space_fingerprint(space, table)
    sf1 = structure_fingerprint(space)
    # extra size rows change the full fingerprint but not the structure
    table.add_task("later", {1: 0.2})
    assert space_fingerprint(space, table) != fp1
    assert structure_fingerprint(space) == sf1


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "space.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_space(str(path))
    path.write_text('{"n_star": 1}')
    with pytest.raises(ParseError):
        load_space(str(path))


def test_descriptor_and_spec_validation():
    with pytest.raises(ValidationError):
        LabelDescriptor(task_id="a", local_index=0, name="x", avg_relative_size=0.1)
    with pytest.raises(ValidationError):
        LabelDescriptor(task_id="a", local_index=1, name="x", avg_relative_size=0.0)
    with pytest.raises(ValidationError):
        TaskSpec(task_id="a", name="a", labels=())
    l1 = LabelDescriptor(task_id="a", local_index=1, name="x", avg_relative_size=0.1)
    l2 = LabelDescriptor(task_id="b", local_index=2, name="y", avg_relative_size=0.1)
    with pytest.raises(ValidationError):
        TaskSpec(task_id="a", name="a", labels=(l1, l2))
