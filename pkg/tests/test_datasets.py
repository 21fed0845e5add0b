import numpy as np
import pytest

from app.datasets import (
    SplitTag,
    gaussian_blobs,
    pattern_images,
    rotated_boundary_task,
    sample_forget,
    split,
)
from app.exceptions import RejectedInputError


def test_rotated_boundary_labels_follow_the_normal():
    task = rotated_boundary_task(90.0, 300, seed=1)
    np.testing.assert_array_equal(task.labels, (task.inputs[:, 1] > 0.5).astype(int))
    flipped = rotated_boundary_task(90.0, 300, seed=1, permuted=True)
    np.testing.assert_array_equal(flipped.labels, 1 - task.labels)
    np.testing.assert_array_equal(flipped.inputs, task.inputs)


def test_margin_keeps_points_off_the_boundary():
    task = rotated_boundary_task(30.0, 200, seed=2, margin=0.05)
    normal = np.array([np.cos(np.deg2rad(30.0)), np.sin(np.deg2rad(30.0))])
    assert np.all(np.abs((task.inputs - 0.5) @ normal) >= 0.05 - 1e-6)


def test_generators_stay_in_the_unit_box():
    blobs = gaussian_blobs(100, [[0.0, 0.0], [1.0, 1.0]], 0.3, seed=0)
    images = pattern_images(50, num_classes=3, shape=(8, 8, 2), seed=0)
    for data in (blobs, images):
        assert 0.0 <= data.inputs.min() and data.inputs.max() <= 1.0
    assert images.input_shape == (8, 8, 2)
    assert images.targets().shape == (50, 3)


def test_distribution_id_changes_the_data():
    first = pattern_images(20, seed=0, distribution_id=0)
    second = pattern_images(20, seed=0, distribution_id=1)
    assert not np.array_equal(first.inputs, second.inputs)
    np.testing.assert_array_equal(first.inputs, pattern_images(20, seed=0, distribution_id=0).inputs)


def test_split_is_a_disjoint_partition(boundary_task):
    parts = split(boundary_task, {SplitTag.TRAIN: 0.5, SplitTag.TRANSFER: 0.3, SplitTag.HOLDOUT: 0.2}, seed=4)
    ids = [set(part.ids.tolist()) for part in parts.values()]
    assert sum(len(s) for s in ids) == len(boundary_task)
    assert set.union(*ids) == set(boundary_task.ids.tolist())
    assert len(parts[SplitTag.TRAIN]) == 100
    assert parts[SplitTag.HOLDOUT].tag == SplitTag.HOLDOUT
    with pytest.raises(RejectedInputError):
        split(boundary_task, {SplitTag.TRAIN: -1.0}, seed=0)


def test_forget_subset(boundary_task):
    forget, retained = sample_forget(boundary_task, 30, seed=0)
    assert len(forget) == 30 and len(retained) == len(boundary_task) - 30
    assert not set(forget.ids.tolist()) & set(retained.ids.tolist())
    assert forget.tag == SplitTag.FORGET
    with pytest.raises(RejectedInputError):
        sample_forget(boundary_task, len(boundary_task), seed=0)


def test_select_ids(boundary_task):
    chosen = boundary_task.select_ids([5, 3, 3])
    np.testing.assert_array_equal(chosen.ids, [3, 5])
    with pytest.raises(RejectedInputError):
        boundary_task.select_ids([10_000])
