import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import make_table, make_task
from labelshare.data import (
    Entry,
    Manifest,
    Sample,
    Volume,
    compute_fingerprint,
    load_manifest,
    merge_datasets,
    multichannel_merge,
    project_volume,
    relative_sizes,
    remap_mask,
    save_manifest,
    size_stats,
)
from labelshare.errors import (
    EmptyManifest,
    EmptyVolume,
    IoError,
    LabelNeverPresent,
    MalformedHeader,
    OutOfRangeLabel,
    ShapeError,
    TruncatedData,
    ValidationError,
)
from labelshare.labelspace import build_shared_space
from labelshare.pgm import read_pgm, write_pgm


# --- PGM --------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(
    hnp.arrays(
        dtype=np.int64,
        shape=hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=12),
        elements=st.integers(0, 65535),
    )
)
def test_pgm_round_trip(tmp_path_factory, array):
    path = tmp_path_factory.mktemp("pgm") / "x.pgm"
    write_pgm(str(path), array)
    assert np.array_equal(read_pgm(str(path)), array)


def test_pgm_picks_the_narrow_maxval(tmp_path):
    p8 = tmp_path / "a.pgm"
    p16 = tmp_path / "b.pgm"
    write_pgm(str(p8), np.array([[0, 255]]))
    write_pgm(str(p16), np.array([[0, 256]]))
    assert b"255" in p8.read_bytes()[:15]
    assert b"65535" in p16.read_bytes()[:15]


def test_pgm_reads_comments_in_header(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment\n2 1\n# another\n255\n\x07\x09")
    assert np.array_equal(read_pgm(str(path)), [[7, 9]])


def test_pgm_rejects_bad_files(tmp_path):
    bad_magic = tmp_path / "m.pgm"
    bad_magic.write_bytes(b"P6\n1 1\n255\n\x00")
    with pytest.raises(MalformedHeader):
        read_pgm(str(bad_magic))
    truncated = tmp_path / "t.pgm"
    truncated.write_bytes(b"P5\n4 4\n255\n\x00\x00")
    with pytest.raises(TruncatedData):
        read_pgm(str(truncated))
    with pytest.raises(IoError):
        read_pgm(str(tmp_path / "missing.pgm"))
    with pytest.raises(IoError):
        write_pgm(str(tmp_path / "neg.pgm"), np.array([[-1]]))


# --- sizes ------------------------------------------------------------------


def test_relative_sizes_are_foreground_fractions():
    mask = np.array([[0, 1, 1], [2, 2, 2], [0, 0, 3]])
    assert relative_sizes(mask) == {1: 2 / 6, 2: 3 / 6, 3: 1 / 6}


def test_size_stats_average_over_presence(tmp_path):
    # label 1 present twice (rel 0.5 and 1.0), label 2 present once (rel 0.5)
    masks = [
        np.array([[1, 2], [0, 0]]),
        np.array([[1, 1], [0, 0]]),
    ]
    entries = []
    for i, mask in enumerate(masks):
        write_pgm(str(tmp_path / f"{i}_img.pgm"), np.zeros_like(mask))
        write_pgm(str(tmp_path / f"{i}_mask.pgm"), mask)
        entries.append(Entry(image=f"{i}_img.pgm", mask=f"{i}_mask.pgm"))
    manifest = Manifest(task_id="t", split="train", entries=entries,
                        label_names={1: "one", 2: "two"}, root=str(tmp_path))
    stats = size_stats(manifest)
    assert stats[1]["avg_relative_size"] == pytest.approx(0.75)
    assert stats[1]["presence_count"] == 2
    assert stats[1]["mean_pixel_count"] == pytest.approx(1.5)
    assert stats[2]["avg_relative_size"] == pytest.approx(0.5)
    assert stats[2]["presence_count"] == 1


def test_size_stats_errors(tmp_path):
    empty = Manifest(task_id="t", split="train", entries=[])
    with pytest.raises(EmptyManifest):
        size_stats(empty)
    mask = np.array([[1, 0]])
    write_pgm(str(tmp_path / "i.pgm"), np.zeros_like(mask))
    write_pgm(str(tmp_path / "m.pgm"), mask)
    manifest = Manifest(
        task_id="t", split="train",
        entries=[Entry(image="i.pgm", mask="m.pgm")],
        label_names={1: "one", 2: "never"}, root=str(tmp_path),
    )
    with pytest.raises(LabelNeverPresent):
        size_stats(manifest)


# --- remap and projections ----------------------------------------------------


def _two_task_space():
    size_map = {"a": [0.4, 0.1], "b": [0.39, 0.11]}
    tasks = [make_task(t, s) for t, s in size_map.items()]
    return build_shared_space(tasks, make_table(size_map))


def test_remap_mask_rewrites_local_labels():
    space = _two_task_space()
    mask = np.array([[0, 1], [2, 2]])
    remapped = remap_mask(mask, space, "a")
    mapping = space.task_map("a")
    assert np.array_equal(remapped, np.vectorize(lambda v: mapping.get(v, 0))(mask))
    assert remapped[0, 0] == 0


def test_remap_mask_rejects_out_of_range():
    space = _two_task_space()
    with pytest.raises(OutOfRangeLabel):
        remap_mask(np.array([[3]]), space, "a")


def test_project_volume():
    voxels = np.arange(8, dtype=float).reshape(2, 2, 2)
    mask = np.array([[[0, 1], [0, 0]], [[2, 0], [0, 0]]])
    sample = project_volume(Volume(voxels=voxels, mask=mask), axis=0)
    assert np.array_equal(sample.image, voxels.mean(axis=0))
    assert np.array_equal(sample.mask, [[2, 1], [0, 0]])
    with pytest.raises(ShapeError):
        project_volume(Volume(voxels=voxels, mask=mask), axis=3)
    with pytest.raises(EmptyVolume):
        project_volume(Volume(voxels=np.empty((0, 0, 0)),
                              mask=np.empty((0, 0, 0))), axis=0)


def test_sample_and_volume_shape_checks():
    with pytest.raises(ShapeError):
        Sample(image=np.zeros((2, 2)), mask=np.zeros((2, 3), dtype=int))
    with pytest.raises(ShapeError):
        Volume(voxels=np.zeros((1, 2, 2)), mask=np.zeros((2, 2, 2), dtype=int))


# --- manifests ----------------------------------------------------------------


def test_manifest_round_trip_and_verify(tmp_path):
    img = np.array([[5, 6]])
    mask = np.array([[0, 1]])
    write_pgm(str(tmp_path / "img.pgm"), img)
    write_pgm(str(tmp_path / "mask.pgm"), mask)
    manifest = Manifest(
        task_id="t", split="test",
        entries=[Entry(image="img.pgm", mask="mask.pgm")],
        label_names={1: "one"}, root=str(tmp_path),
    )
    manifest.fingerprint = compute_fingerprint(manifest)
    path = tmp_path / "manifest.json"
    save_manifest(manifest, str(path))
    loaded = load_manifest(str(path), verify=True)
    assert loaded.task_id == "t"
    assert loaded.label_names == {1: "one"}
    assert loaded.fingerprint == manifest.fingerprint
    sample = loaded.load(loaded.entries[0])
    assert np.array_equal(sample.image, img)
    assert np.array_equal(sample.mask, mask)
    # tampering with a referenced file breaks verification
    write_pgm(str(tmp_path / "mask.pgm"), np.array([[1, 1]]))
    with pytest.raises(ValidationError):
        load_manifest(str(path), verify=True)


def test_merge_datasets_remaps_and_keeps_task_ids(tiny_suite, tiny_space, tmp_path):
    space, _ = tiny_space
    manifests = [tiny_suite[t]["train"] for t in ("task_a", "task_b", "task_c")]
    merged = merge_datasets(manifests, space, str(tmp_path / "merged"))
    assert len(merged) == sum(len(m) for m in manifests)
    assert merged.label_domain == "shared"
    by_task = {}
    for entry in merged.entries:
        by_task.setdefault(entry.task_id, []).append(entry)
    for task_id, entries in by_task.items():
        valid = set(space.task_map(task_id).values()) | {0}
        sample = merged.load(entries[0])
        assert set(np.unique(sample.mask)) <= valid


def test_multichannel_merge_blocks_are_disjoint(tiny_suite, tmp_path):
    manifests = [tiny_suite[t]["train"] for t in ("task_a", "task_b", "task_c")]
    merged = multichannel_merge(manifests, str(tmp_path / "mc"))
    assert merged.channel_blocks == {
        "task_a": (1, 5), "task_b": (6, 10), "task_c": (11, 14)
    }
    for entry in merged.entries:
        start, end = merged.channel_blocks[entry.task_id]
        mask = merged.load(entry).mask
        fg = mask[mask > 0]
        assert fg.size == 0 or (fg.min() >= start and fg.max() <= end)
