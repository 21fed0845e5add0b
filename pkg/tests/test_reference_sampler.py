import numpy as np
import pytest

from app.datasets import gaussian_blobs, pattern_images
from app.exceptions import RejectedInputError
from app.reference_sampler import (
    CutMixConfig,
    PGDConfig,
    SamplerKind,
    cutmix,
    pgd_ascend,
    rectangle_mask,
    sample_cutmix,
    sample_given,
    sample_pgd,
    sample_random,
    sample_references,
)
from tests.conftest import linear_model


@pytest.fixture
def images():
    return [pattern_images(40, num_classes=4, shape=(8, 8, 2), seed=1, distribution_id=d) for d in (0, 1)]


@pytest.fixture
def blobs():
    centers = np.array([[0.2, 0.2, 0.5], [0.8, 0.7, 0.4]])
    return [gaussian_blobs(50, centers, 0.1, seed=2, distribution_id=d) for d in (3, 4)]


def test_cutmix_identity_and_full_patch(rng):
    x, x_star = rng.uniform(0, 1, size=(2, 6, 6, 3)).astype(np.float32)
    np.testing.assert_array_equal(cutmix(x, x_star, np.ones((6, 6))), x)
    np.testing.assert_array_equal(cutmix(x, x_star, np.zeros((6, 6))), x_star)


def test_cutmix_pastes_the_rectangle(rng):
    x, x_star = rng.uniform(0, 1, size=(2, 6, 6, 1)).astype(np.float32)
    mask = rectangle_mask((6, 6), top=1, left=2, height=3, width=2)
    assert mask.sum() == 36 - 6
    mixed = cutmix(x, x_star, mask)
    np.testing.assert_array_equal(mixed[1:4, 2:4], x_star[1:4, 2:4])
    np.testing.assert_array_equal(mixed[0], x[0])


def test_pgd_on_a_linear_probe_moves_by_eps_along_the_sign():
    w = np.array([1.0, -2.0, 0.5], dtype=np.float32)
    x0 = np.array([[0.5, 0.5, 0.98], [0.02, 0.3, 0.6]], dtype=np.float32)
    moved = pgd_ascend(x0, lambda x: np.broadcast_to(w, x.shape), PGDConfig(steps=10, alpha=0.01, eps=0.05))
    expected = np.clip(x0.astype(np.float64) + 0.05 * np.sign(w), 0.0, 1.0)
    np.testing.assert_allclose(moved, expected, atol=1e-6)


def test_pgd_with_few_steps_stops_inside_the_ball():
    w = np.array([3.0, -1.0], dtype=np.float32)
    x0 = np.array([[0.5, 0.5]], dtype=np.float32)
    moved = pgd_ascend(x0, lambda x: np.broadcast_to(w, x.shape), PGDConfig(steps=2, alpha=0.01, eps=0.05))
    np.testing.assert_allclose(moved, [[0.52, 0.48]], atol=1e-6)


def test_sample_pgd_ascends_the_probe(blobs):
    w = [1.0, -1.0, 2.0]
    refs = sample_pgd(blobs, 12, linear_model(w), steps=10, alpha=0.01, eps=0.05, seed=4)
    seeds = sample_random(blobs, 12, seed=4)
    expected = np.clip(seeds.points.astype(np.float64) + 0.05 * np.sign(w), 0.0, 1.0)
    np.testing.assert_allclose(refs.points, expected, atol=1e-6)
    assert refs.kind == SamplerKind.PGD
    assert refs.metadata["eps"] == 0.05


def test_pgd_requires_a_positive_budget(blobs):
    with pytest.raises(RejectedInputError):
        sample_pgd(blobs, 4, linear_model([1.0, 1.0, 1.0]), steps=3, alpha=0.01, eps=0.0, seed=0)
    with pytest.raises(RejectedInputError):
        PGDConfig(steps=0)


@pytest.mark.parametrize("kind", [SamplerKind.RANDOM, SamplerKind.CUTMIX])
def test_samples_stay_in_the_unit_box_and_are_reproducible(images, kind):
    first = sample_references(kind, images, 30, seed=9)
    second = sample_references(kind, images, 30, seed=9)
    other = sample_references(kind, images, 30, seed=10)
    assert first.points.shape == (30, 8, 8, 2)
    assert 0.0 <= first.points.min() and first.points.max() <= 1.0
    assert first.points.tobytes() == second.points.tobytes()
    assert first.refset_hash == second.refset_hash
    assert first.refset_hash != other.refset_hash


def test_random_sampling_draws_from_every_distribution(images):
    refs = sample_random(images, 200, seed=0)
    assert set(refs.metadata["dataset_index"]) == {0, 1}
    assert refs.source_ids == (0, 1)


def test_cutmix_area_ratio_respects_the_range(images):
    refs = sample_cutmix(images, 50, seed=3, patch_cfg=CutMixConfig((0.25, 0.5)))
    ratios = np.array(refs.metadata["area_ratio"])
    # the patch is rounded to whole pixels
    assert np.all(ratios >= 0.1) and np.all(ratios <= 0.7)


def test_cutmix_needs_images(blobs):
    with pytest.raises(RejectedInputError):
        sample_cutmix(blobs, 4, seed=0)
    with pytest.raises(RejectedInputError):
        CutMixConfig((0.6, 0.2))


def test_count_and_pool_preconditions(blobs, images):
    with pytest.raises(RejectedInputError):
        sample_random(blobs, 0, seed=0)
    with pytest.raises(RejectedInputError):
        sample_random([], 5, seed=0)
    with pytest.raises(RejectedInputError):
        sample_random([blobs[0], images[0]], 5, seed=0)
    with pytest.raises(RejectedInputError):
        sample_references(SamplerKind.PGD, blobs, 5, seed=0)


def test_given_points_and_prefix(rng):
    refs = sample_given(rng.uniform(0, 1, size=(6, 3)), seed=2, source_ids=[7])
    assert refs.kind == SamplerKind.GIVEN and refs.source_ids == (7,)
    head = refs.prefix(4)
    np.testing.assert_array_equal(head.points, refs.points[:4])
    assert head.refset_hash != refs.refset_hash
    with pytest.raises(RejectedInputError):
        refs.prefix(0)
    with pytest.raises(RejectedInputError):
        sample_given(np.full((2, 3), 1.5))


def test_sampler_kind_parsing():
    assert SamplerKind.parse("cutmix") == SamplerKind.CUTMIX
    assert SamplerKind.PGD.tag == "pgd"
    with pytest.raises(RejectedInputError):
        SamplerKind.parse("mixup")


def test_random_sampling_is_uniform_over_distributions():
    pool = [gaussian_blobs(50, [[0.3, 0.3]], 0.05, seed=0, distribution_id=0),
            gaussian_blobs(50, [[0.7, 0.7]], 0.05, seed=0, distribution_id=1)]
    refs = sample_random(pool, 10_000, seed=11)
    share = np.mean(np.asarray(refs.metadata["dataset_index"]) == 0)
    assert 0.47 <= share <= 0.53
