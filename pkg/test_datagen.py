import numpy as np
import pytest

from datagen import ScenarioSpec, generate, generate_multisource, separated_scenario
from errors import InvalidInputError
from hierarchical import hierarchical_wasserstein
from hotda import match_structures
from structures import classes_from_labels, clusters_kmeans
from wasserstein import EXACT


def test_deterministic_under_seed():
    spec = separated_scenario(3, d=2, n_source=60, n_target=50, seed=12)
    S1, T1 = generate(spec)
    S2, T2 = generate(spec)
    np.testing.assert_array_equal(S1.points, S2.points)
    np.testing.assert_array_equal(T1.labels, T2.labels)
    S3, _ = generate(separated_scenario(3, d=2, n_source=60, n_target=50, seed=13))
    assert not np.array_equal(S1.points, S3.points)


def test_counts_and_class_proportions():
    spec = separated_scenario(4, d=3, n_source=2000, n_target=1000, seed=1)
    S, T = generate(spec)
    assert S.size == 2000 and T.size == 1000 and S.dim == 3
    for data in (S, T):
        counts = np.bincount(data.labels, minlength=4)
        expected = data.size / 4
        sigma = np.sqrt(data.size * 0.25 * 0.75)
        assert np.all(np.abs(counts - expected) <= 4 * sigma)


def test_target_is_shifted():
    spec = separated_scenario(2, d=2, n_source=400, n_target=400, spread=0.5, shift=[0.0, 7.0], seed=2)
    S, T = generate(spec)
    for c in range(2):
        delta = T.points[T.labels == c].mean(axis=0) - S.points[S.labels == c].mean(axis=0)
        np.testing.assert_allclose(delta, [0.0, 7.0], atol=0.2)


def test_no_shift_gives_small_structure_distance():
    S, T = generate(separated_scenario(2, d=2, n_source=100, n_target=100, seed=3))
    hw = hierarchical_wasserstein(classes_from_labels(S).structures, classes_from_labels(T).structures, 1, EXACT)
    assert hw.distance < 1.0


def test_label_permutation_plants_a_flip():
    spec = separated_scenario(2, d=2, n_source=50, n_target=50, label_permutation=[1, 0], seed=5)
    S, T = generate(spec)
    # target class 0 sits where source class 1 lives
    assert np.linalg.norm(T.points[T.labels == 0].mean(axis=0) - [10.0, 0.0]) < 1.0
    assert np.linalg.norm(T.points[T.labels == 1].mean(axis=0)) < 1.0


def test_separated_scenario_matches_identity():
    S, T = generate(separated_scenario(3, d=2, n_source=150, n_target=150, shift=[0.0, 30.0], seed=6))
    source = classes_from_labels(S)
    target = clusters_kmeans(T.unlabeled(), 3, seed=6)
    matching = match_structures(source.structures, target.structures, backend=EXACT)
    assert matching.sigma.tolist() == [0, 1, 2]


def test_multisource():
    spec = separated_scenario(2, d=2, n_source=40, n_target=30, seed=8)
    sources, T = generate_multisource(spec, [[0.0, 0.0], [0.0, 5.0]])
    assert len(sources) == 2 and T.size == 30
    gap = sources[1].points.mean(axis=0) - sources[0].points.mean(axis=0)
    assert gap[1] == pytest.approx(5.0, abs=1.0)
    with pytest.raises(InvalidInputError):
        generate_multisource(spec, [])


class TestValidation:
    def test_counts_below_k(self):
        with pytest.raises(InvalidInputError):
            separated_scenario(3, n_source=2)

    def test_non_positive_spread(self):
        with pytest.raises(InvalidInputError):
            separated_scenario(2, spread=0.0)

    def test_bad_permutation(self):
        with pytest.raises(InvalidInputError):
            separated_scenario(3, label_permutation=[0, 0, 1])

    def test_center_shape(self):
        with pytest.raises(InvalidInputError):
            ScenarioSpec(2, 2, 10, 10, np.zeros((3, 2)), np.zeros(2), 1.0)

    def test_per_class_shift(self):
        spec = ScenarioSpec(2, 1, 10, 10, [[0.0], [5.0]], [[1.0], [-1.0]], [0.5, 1.0])
        np.testing.assert_allclose(spec.shift, [[1.0], [-1.0]])
        np.testing.assert_allclose(spec.spread, [0.5, 1.0])
