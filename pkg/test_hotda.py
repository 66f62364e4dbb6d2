import numpy as np
import pytest

from conftest import blobs
from datagen import generate, separated_scenario
from errors import InvalidInputError
from hierarchical import MeasureOfMeasures, inner_cost_matrix
from hotda import (AdaptConfig, Loss, NearestNeighborClassifier, adapt, adaptation_accuracy,
                   barycentric_transport, class_means, empirical_risk, match_structures, pair_risk)
from ot_core import DiscreteMeasure, cost_matrix, solve_sinkhorn
from structures import LabeledDataset, classes_from_labels
from wasserstein import EXACT


def separated_atoms(rng, k, spacing=20.0):
    return [DiscreteMeasure.uniform(np.array([spacing * i, 0.0]) + rng.normal(size=(6, 2))) for i in range(k)]


def assert_inside_box(points, box):
    # rows are convex combinations of box points, exact up to rounding
    slack = 1e-12 * (1.0 + np.abs(box).max())
    assert np.all(points >= box.min(axis=0) - slack)
    assert np.all(points <= box.max(axis=0) + slack)


class TestMatchStructures:
    def test_single_pair(self, rng):
        phi = MeasureOfMeasures.uniform(separated_atoms(rng, 1))
        matching = match_structures(phi, phi, backend=EXACT)
        assert matching.sigma.tolist() == [0]
        assert matching.outer_plan.shape == (1, 1)

    def test_recovers_atom_permutation(self, rng):
        for _ in range(10):
            k = int(rng.integers(2, 5))
            atoms = separated_atoms(rng, k)
            perm = rng.permutation(k)
            phi_S = MeasureOfMeasures.uniform(atoms)
            phi_T = MeasureOfMeasures.uniform([atoms[i] for i in np.argsort(perm)])
            # atom h of phi_S sits at position perm[h] of phi_T
            matching = match_structures(phi_S, phi_T, backend=EXACT)
            assert matching.sigma.tolist() == perm.tolist()
            assert matching.collisions == ()
            np.testing.assert_allclose(matching.outer_plan.coupling.sum(axis=1), np.full(k, 1 / k), atol=1e-8)

    def test_huge_epsilon_ties_to_lowest_index(self, rng):
        phi = MeasureOfMeasures.uniform(separated_atoms(rng, 3))
        W = inner_cost_matrix(phi, phi, 2, EXACT)
        matching = match_structures(phi, phi, epsilon=1e12 * W.max(), inner_cost=W)
        assert matching.sigma.tolist() == [0, 0, 0]
        assert matching.tie_report == (0, 1, 2)
        assert matching.collisions == (0,)

    def test_hungarian_is_a_bijection(self, rng):
        phi = MeasureOfMeasures.uniform(separated_atoms(rng, 3))
        W = inner_cost_matrix(phi, phi, 2, EXACT)
        matching = match_structures(phi, phi, epsilon=1e12 * W.max(), inner_cost=W, assignment="hungarian")
        assert sorted(matching.sigma.tolist()) == [0, 1, 2]
        assert matching.collisions == ()

    def test_rejects_unequal_counts(self, rng):
        with pytest.raises(InvalidInputError):
            match_structures(MeasureOfMeasures.uniform(separated_atoms(rng, 2)),
                             MeasureOfMeasures.uniform(separated_atoms(rng, 3)), backend=EXACT)

    def test_as_dict_is_json_ready(self, rng):
        phi = MeasureOfMeasures.uniform(separated_atoms(rng, 2))
        payload = match_structures(phi, phi, backend=EXACT).as_dict()
        assert payload["sigma"] == [0, 1]
        assert isinstance(payload["outer_plan"], list)


class TestBarycentricTransport:
    def test_single_points(self):
        moved = barycentric_transport(DiscreteMeasure.dirac([1.0, 2.0]), DiscreteMeasure.dirac([7.0, -3.0]))
        np.testing.assert_allclose(moved, [[7.0, -3.0]])

    def test_concentrated_target(self, rng):
        source = DiscreteMeasure.uniform(rng.normal(size=(5, 2)))
        target = DiscreteMeasure.uniform(np.tile([4.0, 4.0], (3, 1)))
        np.testing.assert_allclose(barycentric_transport(source, target), np.tile([4.0, 4.0], (5, 1)))

    def test_monotone_rearrangement_on_a_line(self):
        source = DiscreteMeasure.uniform([[0.0], [1.0]])
        target = DiscreteMeasure.uniform([[1.5], [0.5]])
        moved = barycentric_transport(source, target, epsilon_prime=0.1)
        np.testing.assert_allclose(moved, [[0.5], [1.5]], atol=1e-3)

    def test_stays_in_target_bounding_box(self, rng):
        source = DiscreteMeasure.uniform(rng.normal(size=(8, 2)))
        target = DiscreteMeasure.uniform(rng.normal(loc=5.0, size=(6, 2)))
        moved = barycentric_transport(source, target)
        assert_inside_box(moved, target.support)

    def test_is_the_row_normalized_plan(self, rng):
        source = DiscreteMeasure.uniform(rng.normal(size=(5, 2)))
        target = DiscreteMeasure(rng.normal(loc=3.0, size=(4, 2)), rng.dirichlet(np.ones(4)))
        plan = solve_sinkhorn(source.weights, target.weights, cost_matrix(source, target, 2.0), 0.5)
        expected = plan.coupling / plan.coupling.sum(axis=1)[:, None] @ target.support
        np.testing.assert_allclose(barycentric_transport(source, target, 0.5), expected, rtol=1e-12)


class TestAdapt:
    def test_self_adaptation_recovers_labels(self, rng):
        S = blobs(rng, [[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]], per_class=10)
        result = adapt(S, S.unlabeled(), AdaptConfig(init_centers=class_means(S)))
        assert result.matching.sigma.tolist() == [0, 1, 2]
        for h in range(3):
            moved = result.transported.points[S.labels == h]
            members = S.points[S.labels == h]
            assert_inside_box(moved, members)
        predictions = result.classifier()(S.points)
        assert empirical_risk(predictions, S.labels).value == 0.0

    def test_labels_and_cardinality_preserved(self, rng):
        S = blobs(rng, [[0.0, 0.0], [15.0, 0.0]], per_class=12)
        T = blobs(rng, [[3.0, 1.0], [18.0, 1.0]], per_class=9).unlabeled()
        result = adapt(S, T, AdaptConfig(seed=1))
        assert result.transported.size == S.size
        np.testing.assert_array_equal(result.transported.labels, S.labels)
        for h in range(2):
            cluster = T.points[result.target_structures.members(int(result.matching.sigma[h]))]
            moved = result.transported.points[S.labels == h]
            assert_inside_box(moved, cluster)
        np.testing.assert_array_equal(result.transported.provenance[:, 0], S.labels)

    def test_single_class(self, rng):
        S = LabeledDataset(rng.normal(size=(8, 2)), np.zeros(8, dtype=int))
        T = LabeledDataset(rng.normal(loc=10.0, size=(6, 2)), np.zeros(6, dtype=int)).unlabeled()
        result = adapt(S, T)
        assert result.matching.sigma.tolist() == [0]
        assert_inside_box(result.transported.points, T.points)

    def test_shifted_scenario_does_not_hurt_accuracy(self):
        spec = separated_scenario(3, d=2, n_source=200, n_target=200, separation=10.0,
                                  spread=1.0, shift=[4.0, 0.0], seed=4)
        S, T_labeled = generate(spec)
        result = adapt(S, T_labeled.unlabeled(), AdaptConfig(seed=4))
        assert result.matching.sigma.tolist() == [0, 1, 2]
        pre, post = adaptation_accuracy(S, result, T_labeled)
        assert post >= pre

    @pytest.mark.slow
    def test_recovers_planted_matching_across_scenarios(self):
        trials = recovered = 0
        for k in (2, 3, 4):
            for seed in range(34):
                shift = [3.0 + seed % 3, 0.5 * (seed % 5)]
                spec = separated_scenario(k, d=2, n_source=200, n_target=200, separation=10.0,
                                          spread=1.0, shift=shift, seed=seed)
                S, T_labeled = generate(spec)
                result = adapt(S, T_labeled.unlabeled(), AdaptConfig(seed=seed))
                trials += 1
                if result.matching.sigma.tolist() == list(range(k)):
                    recovered += 1
                    pre, post = adaptation_accuracy(S, result, T_labeled)
                    assert post >= pre
        assert recovered >= 0.99 * trials

    def test_deterministic(self, rng):
        S = blobs(rng, [[0.0, 0.0], [12.0, 0.0]], per_class=10)
        T = blobs(rng, [[1.0, 2.0], [13.0, 2.0]], per_class=10).unlabeled()
        first = adapt(S, T, AdaptConfig(seed=9))
        second = adapt(S, T, AdaptConfig(seed=9))
        np.testing.assert_array_equal(first.transported.points, second.transported.points)
        np.testing.assert_array_equal(first.matching.outer_plan.coupling, second.matching.outer_plan.coupling)

    def test_k_must_match_classes(self, two_blobs):
        with pytest.raises(InvalidInputError):
            adapt(two_blobs, two_blobs.unlabeled(), AdaptConfig(k=3))

    def test_dimension_mismatch(self, two_blobs, rng):
        with pytest.raises(InvalidInputError):
            adapt(two_blobs, LabeledDataset(rng.normal(size=(5, 3)), np.zeros(5)).unlabeled())


class TestRisk:
    def test_examples(self):
        labels = np.array([0, 1, 1, 0])
        assert empirical_risk(labels, labels).value == 0.0
        assert empirical_risk(1 - labels, labels).value == 1.0
        assert empirical_risk(np.array([0, 1, 0, 1]), labels).value == 0.5

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            empirical_risk(np.zeros(3), np.zeros(4))

    def test_absolute_loss(self):
        loss = Loss("absolute", q=2.0)
        risk = empirical_risk(np.array([0.0, 1.0]), np.array([0.5, 1.0]), loss)
        assert risk.value == pytest.approx(0.125)
        assert risk.loss == "|h-f|^2"
        with pytest.raises(InvalidInputError):
            empirical_risk(np.array([2.0]), np.array([0.0]), loss)

    def test_pair_risk_counts_disagreement(self):
        points = np.arange(4, dtype=float).reshape(-1, 1)
        left = NearestNeighborClassifier(LabeledDataset([[0.0], [3.0]], [0, 1]))
        right = NearestNeighborClassifier(LabeledDataset([[0.0], [1.5]], [0, 1]))
        # left splits at 1.5, right at 0.75: they disagree only at x=1
        assert pair_risk(left, right, points).value == pytest.approx(0.25)

    def test_class_means_follow_class_order(self):
        S = LabeledDataset([[0.0], [2.0], [10.0]], ["b", "b", "a"])
        np.testing.assert_allclose(class_means(S), [[10.0], [1.0]])
        assert classes_from_labels(S).names == ("a", "b")
