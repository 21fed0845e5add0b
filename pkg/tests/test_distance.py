import numpy as np
import pytest

from app.distance import (
    DistanceMatrix,
    Metric,
    curve_distance,
    distance_matrix,
    guarded_cosine,
    model_distance,
    to_affinity,
)
from app.exceptions import IncomparableError, RejectedInputError, UnsupportedMetricError
from app.gif_engine import BaselineMode, extract_curve, fingerprint
from app.reference_sampler import sample_given
from app.tensor_core import affine_head
from tests.conftest import linear_model, tanh_mlp


@pytest.fixture
def refs(rng):
    return sample_given(rng.uniform(0.05, 1, size=(5, 4)), seed=1)


def _fp(model, refs, model_id, **options):
    options.setdefault("steps", 8)
    return fingerprint(model, refs, model_id=model_id, **options)


def test_curve_distance_closed_forms():
    x1 = np.array([0.4, 0.9])
    w = linear_model([1.0, 0.0])
    curve = extract_curve(w, np.zeros(2), x1, steps=8)
    orthogonal = extract_curve(linear_model([0.0, 2.0]), np.zeros(2), x1, steps=8)
    opposite = extract_curve(linear_model([-3.0, 0.0]), np.zeros(2), x1, steps=8)
    assert curve_distance(curve, curve) == pytest.approx(0.0, abs=1e-12)
    assert curve_distance(curve, orthogonal) == pytest.approx(1.0)
    assert curve_distance(curve, opposite) == pytest.approx(2.0)


def test_curve_distance_rejects_mismatched_curves():
    model = linear_model([1.0, 1.0])
    curve = extract_curve(model, np.zeros(2), np.ones(2), steps=8)
    with pytest.raises(IncomparableError):
        curve_distance(curve, extract_curve(model, np.zeros(2), np.ones(2), steps=16))
    with pytest.raises(IncomparableError):
        curve_distance(curve, extract_curve(model, np.zeros(2), np.full(2, 0.5), steps=8))


def test_guarded_cosine_on_null_vectors():
    zero, unit = np.zeros(3), np.array([1.0, 0.0, 0.0])
    assert guarded_cosine(zero, zero)[0] == 1.0
    assert guarded_cosine(zero, unit)[0] == 0.0
    assert guarded_cosine(unit, 5 * unit)[0] == pytest.approx(1.0)


def test_orthogonal_linear_models_are_k_apart(rng):
    refs = sample_given(rng.uniform(0.1, 1, size=(7, 2)))
    first = _fp(linear_model([1.0, 0.0]), refs, "a")
    second = _fp(linear_model([0.0, 1.0]), refs, "b")
    assert model_distance(first, second) == pytest.approx(7.0)
    assert model_distance(second, first) == model_distance(first, second)


def test_self_distance_vanishes(refs):
    fp = _fp(tanh_mlp(0), refs, "m")
    assert model_distance(fp, fp) <= 1e-6


def test_distance_is_invariant_to_output_scale_and_shift(refs):
    model = tanh_mlp(8, outputs=1)
    base = _fp(model, refs, "m")
    moved = _fp(affine_head(model, 3.0, 7.0), refs, "3m+7")
    assert model_distance(base, moved) <= 1e-4


def test_model_distance_rejects_incomparable_fingerprints(refs, rng):
    model = tanh_mlp(0)
    fp = _fp(model, refs, "a")
    with pytest.raises(IncomparableError):
        model_distance(fp, _fp(model, sample_given(rng.uniform(0, 1, size=(5, 4))), "b"))
    with pytest.raises(IncomparableError):
        model_distance(fp, _fp(model, refs, "c", baseline_mode=BaselineMode.RANDOM, seed=3))


def test_ig_cosine_compares_attributions(rng):
    refs = sample_given(rng.uniform(0.1, 1, size=(4, 2)))
    first = _fp(linear_model([1.0, 0.0]), refs, "a")
    second = _fp(linear_model([0.0, 1.0]), refs, "b")
    # attributions x * w of orthogonal weights on positive points are orthogonal
    assert model_distance(first, second, Metric.IG_COSINE) == pytest.approx(4.0)
    assert model_distance(first, first, "ig-cosine") == pytest.approx(0.0, abs=1e-9)


def test_metric_parsing():
    assert Metric.parse("cosine") == Metric.COSINE
    for reserved in ("hausdorff", "frechet"):
        with pytest.raises(UnsupportedMetricError):
            Metric.parse(reserved)
    with pytest.raises(RejectedInputError):
        Metric.parse("euclidean")


def test_distance_matrix_matches_brute_force(refs):
    fps = [_fp(tanh_mlp(seed), refs, f"m{seed}") for seed in range(6)]
    dm = distance_matrix(fps)
    assert dm.ids == [f"m{seed}" for seed in range(6)]
    for i in range(6):
        assert dm.values[i, i] == 0.0
        for j in range(6):
            if i != j:
                expected = model_distance(fps[min(i, j)], fps[max(i, j)])
                assert dm.values[i, j] == expected
    np.testing.assert_array_equal(dm.values, dm.values.T)
    assert np.all((dm.values >= 0) & (dm.values <= 2 * refs.count))


def test_two_model_matrix_and_lookup(refs):
    a, b = _fp(tanh_mlp(0), refs, "a"), _fp(tanh_mlp(1), refs, "b")
    dm = distance_matrix([a, b])
    assert dm.values.shape == (2, 2)
    assert dm["a", "b"] == dm["b", "a"] == model_distance(a, b)
    assert dm.curve_count == refs.count
    assert dm.refset_hash == refs.refset_hash


def test_permuting_inputs_permutes_the_matrix(refs):
    fps = [_fp(tanh_mlp(seed), refs, f"m{seed}") for seed in range(4)]
    forward = distance_matrix(fps)
    backward = distance_matrix(fps[::-1])
    np.testing.assert_array_equal(backward.values, forward.values[::-1, ::-1])
    np.testing.assert_array_equal(backward.subset(forward.ids).values, forward.values)


def test_parallel_matrix_equals_serial(refs):
    fps = [_fp(tanh_mlp(seed), refs, f"m{seed}") for seed in range(4)]
    np.testing.assert_array_equal(distance_matrix(fps, jobs=3).values, distance_matrix(fps).values)


def test_distance_matrix_preconditions(refs, rng):
    fp = _fp(tanh_mlp(0), refs, "a")
    with pytest.raises(RejectedInputError):
        distance_matrix([fp])
    with pytest.raises(RejectedInputError):
        distance_matrix([fp, _fp(tanh_mlp(1), refs, "a")])
    stranger = _fp(tanh_mlp(1), sample_given(rng.uniform(0, 1, size=(5, 4))), "z")
    with pytest.raises(IncomparableError) as raised:
        distance_matrix([fp, stranger])
    assert raised.value.ids == ("a", "z")


def test_affinity_normalization():
    dm = DistanceMatrix(["a", "b", "c"], np.array([[0.0, 4.0, 8.0], [4.0, 0.0, 0.0], [8.0, 0.0, 0.0]]),
                        Metric.COSINE, refset_hash=1, curve_count=4)
    affinity = to_affinity(dm)
    np.testing.assert_allclose(affinity.values, [[1.0, 0.5, 0.0], [0.5, 1.0, 1.0], [0.0, 1.0, 1.0]])
    np.testing.assert_allclose(affinity.upper_triangle(), [0.5, 0.0, 1.0])
    np.testing.assert_allclose(affinity.dissimilarity()[0], [0.0, 0.5, 1.0])


def test_affinity_rejects_out_of_range_distances():
    dm = DistanceMatrix(["a", "b"], np.array([[0.0, 9.0], [9.0, 0.0]]), Metric.COSINE, 1, curve_count=4)
    with pytest.raises(RejectedInputError):
        to_affinity(dm)


def test_matrix_shape_must_match_ids():
    with pytest.raises(RejectedInputError):
        DistanceMatrix(["a"], np.zeros((2, 2)), Metric.COSINE, 1, 4)
