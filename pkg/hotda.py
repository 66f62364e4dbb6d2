"""
HOT-DA adaptation pipeline
Class/cluster matching by regularized hierarchical OT, then per-pair barycentric transport
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.neighbors import KNeighborsClassifier

from config import SETTINGS
from errors import InvalidInputError, SolverError
from hierarchical import MeasureOfMeasures, inner_cost_matrix
from ot_core import DiscreteMeasure, TransportPlan, cost_matrix, positive_count, solve_sinkhorn
from structures import (LabeledDataset, StructureDecomposition, UnlabeledDataset,
                        classes_from_labels, clusters_kmeans)
from wasserstein import Backend, auto_epsilon

logger = logging.getLogger(__name__)

ASSIGNMENTS = ("argmax", "hungarian")
TIE_RTOL = 1e-9

Hypothesis = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Matching:
    """Soft plan between classes and clusters plus the hard assignment read from it"""
    outer_plan: TransportPlan
    sigma: np.ndarray
    tie_report: Tuple[int, ...]
    collisions: Tuple[int, ...] = ()
    inner_cost: Optional[np.ndarray] = None
    assignment: str = "argmax"

    def as_dict(self) -> dict:
        return {
            "assignment": self.assignment,
            "sigma": [int(l) for l in self.sigma],
            "ties": [int(h) for h in self.tie_report],
            "collisions": [int(l) for l in self.collisions],
            "epsilon": self.outer_plan.epsilon,
            "outer_plan": self.outer_plan.coupling.tolist(),
            "marginal_violation": self.outer_plan.marginal_violation,
            "inner_cost": None if self.inner_cost is None else self.inner_cost.tolist(),
        }


@dataclass(frozen=True, eq=False)
class TransportedDataset:
    points: np.ndarray
    labels: np.ndarray
    provenance: np.ndarray  # (n, 2): class index h, matched cluster sigma(h)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def as_labeled(self) -> LabeledDataset:
        return LabeledDataset(self.points, self.labels)


@dataclass(frozen=True)
class Loss:
    """zero-one, or |h - f|^q on numeric labels in [0, 1]"""
    kind: str = "zero-one"
    q: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero-one", "absolute"):
            raise InvalidInputError(f"unknown loss {self.kind!r}")
        if self.q <= 0:
            raise InvalidInputError(f"loss exponent q must be positive, got {self.q}")

    @property
    def label(self) -> str:
        return "zero-one" if self.kind == "zero-one" else f"|h-f|^{self.q:g}"

    def __call__(self, predicted: np.ndarray, truth: np.ndarray) -> np.ndarray:
        if self.kind == "zero-one":
            return (predicted != truth).astype(float)
        predicted = predicted.astype(float)
        truth = truth.astype(float)
        if np.any((predicted < 0) | (predicted > 1) | (truth < 0) | (truth > 1)):
            raise InvalidInputError("absolute loss needs numeric labels in [0, 1]")
        return np.abs(predicted - truth) ** self.q


ZERO_ONE = Loss()


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    loss: str
    n_eval: int


def empirical_risk(predictions, labels, loss: Loss = ZERO_ONE) -> RiskEstimate:
    """Mean loss of predictions against labels."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise InvalidInputError(f"predictions {predictions.shape} and labels {labels.shape} must be equal-length vectors")
    if predictions.size == 0:
        raise InvalidInputError("cannot estimate a risk on zero points")
    value = float(np.mean(loss(predictions, labels)))
    return RiskEstimate(min(max(value, 0.0), 1.0), loss.label, int(predictions.size))


def pair_risk(h: Hypothesis, h_prime: Hypothesis, points, loss: Loss = ZERO_ONE) -> RiskEstimate:
    """Disagreement risk E l(h(x), h'(x)) over the given points."""
    points = np.asarray(points, dtype=float)
    return empirical_risk(h(points), h_prime(points), loss)


class NearestNeighborClassifier:
    """1-NN hypothesis trained on a labeled point set"""

    def __init__(self, dataset: LabeledDataset, name: str = "1nn"):
        self.name = name
        self.model = KNeighborsClassifier(n_neighbors=1)
        self.model.fit(dataset.points, dataset.labels)

    def __call__(self, points) -> np.ndarray:
        return self.model.predict(np.asarray(points, dtype=float))

    def __repr__(self):
        return f"NearestNeighborClassifier({self.name!r})"


def hard_assignment(plan: np.ndarray, assignment: str):
    k = plan.shape[0]
    ties = []
    if assignment == "hungarian":
        rows, cols = linear_sum_assignment(plan, maximize=True)
        sigma = np.empty(k, dtype=int)
        sigma[rows] = cols
    else:
        sigma = np.empty(k, dtype=int)
        for h in range(k):
            row = plan[h]
            top = np.flatnonzero(np.isclose(row, row.max(), rtol=TIE_RTOL, atol=0.0))
            sigma[h] = top[0]
            if top.size > 1:
                ties.append(h)
    for h in ties:
        logger.debug("Matching row %d has a non-unique argmax; chose cluster %d", h, sigma[h])
    return sigma, tuple(ties)


def match_structures(phi_S: MeasureOfMeasures, phi_T: MeasureOfMeasures,
                     epsilon: Optional[float] = None, p: float = 2.0,
                     backend: Optional[Backend] = None, assignment: str = "argmax",
                     inner_cost: Optional[np.ndarray] = None) -> Matching:
    """
    Entropic outer plan on the W_p cost matrix and its hard class -> cluster assignment.

    Args:
        phi_S: source class structures
        phi_T: target cluster structures, same number of atoms
        epsilon: outer regularization; defaults to scale * median(W)
        p: order of the inner Wasserstein costs (2 for the matching objective)
        backend: inner W_p solver
        assignment: "argmax" (row argmax, ties to the lowest index) or "hungarian"
        inner_cost: precomputed W_p matrix

    Returns:
        Matching with sigma[h] = matched cluster of class h
    """
    if phi_S.size != phi_T.size:
        raise InvalidInputError(f"{phi_S.size} classes vs {phi_T.size} clusters; both sides need k atoms")
    if assignment not in ASSIGNMENTS:
        raise InvalidInputError(f"assignment must be one of {ASSIGNMENTS}")
    W = inner_cost if inner_cost is not None else inner_cost_matrix(phi_S, phi_T, p, backend)
    epsilon = auto_epsilon(W) if epsilon is None else epsilon
    plan = solve_sinkhorn(phi_S.weights, phi_T.weights, W, epsilon)
    sigma, ties = hard_assignment(plan.coupling, assignment)
    values, counts = np.unique(sigma, return_counts=True)
    collisions = tuple(int(v) for v in values[counts > 1])
    if collisions:
        logger.warning("Matching is not one-to-one: clusters %s receive several classes", list(collisions))
    return Matching(plan, sigma, ties, collisions, np.array(W, dtype=float), assignment)


def barycentric_transport(C_h: DiscreteMeasure, Cl_l: DiscreteMeasure,
                          epsilon_prime: Optional[float] = None, p: float = 2.0) -> np.ndarray:
    """Map each source point to the plan-weighted average of the target points."""
    C = cost_matrix(C_h, Cl_l, p)
    epsilon_prime = auto_epsilon(C) if epsilon_prime is None else epsilon_prime
    if epsilon_prime <= 0:
        raise InvalidInputError(f"epsilon_prime must be positive, got {epsilon_prime}")
    plan = solve_sinkhorn(C_h.weights, Cl_l.weights, C, epsilon_prime)
    row_mass = plan.coupling.sum(axis=1)
    if np.any(row_mass <= 0):
        raise SolverError("entropic plan has a source point with zero mass",
                          iterations=plan.iterations, marginal_violation=plan.marginal_violation)
    return (plan.coupling / row_mass[:, None]) @ Cl_l.support


@dataclass
class AdaptConfig:
    k: Optional[int] = None
    epsilon: Optional[float] = None
    epsilon_prime: Optional[float] = None
    p: float = 2.0
    seed: Optional[int] = None
    restarts: Optional[int] = None
    assignment: str = "argmax"
    weighting: str = "uniform"
    init_centers: Optional[np.ndarray] = None
    backend: Backend = field(default_factory=Backend)
    max_workers: Optional[int] = None


@dataclass(frozen=True, eq=False)
class AdaptationResult:
    transported: TransportedDataset
    matching: Matching
    source_structures: StructureDecomposition
    target_structures: StructureDecomposition

    def classifier(self) -> NearestNeighborClassifier:
        return NearestNeighborClassifier(self.transported.as_labeled(), name="1nn-transported")


def adapt(S: LabeledDataset, T: UnlabeledDataset, config: Optional[AdaptConfig] = None) -> AdaptationResult:
    """Full pipeline: classes, clusters, matching, per-class barycentric transport."""
    config = config or AdaptConfig()
    if S.dim != T.dim:
        raise InvalidInputError(f"source dimension {S.dim} != target dimension {T.dim}")
    source = classes_from_labels(S, weighting=config.weighting)
    k = config.k or source.k
    if k != source.k:
        raise InvalidInputError(f"k={k} but the source has {source.k} classes")
    target = clusters_kmeans(T, k, seed=config.seed, restarts=config.restarts,
                             init_centers=config.init_centers, weighting=config.weighting,
                             max_workers=config.max_workers)
    matching = match_structures(source.structures, target.structures, config.epsilon,
                                config.p, config.backend, config.assignment)

    def transport_class(h: int) -> np.ndarray:
        l = int(matching.sigma[h])
        return barycentric_transport(source.structures.atoms[h], target.structures.atoms[l],
                                     config.epsilon_prime, config.p)

    max_workers = positive_count(config.max_workers, SETTINGS.max_workers, "max_workers")
    if max_workers > 1 and k > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            moved: List[np.ndarray] = list(pool.map(transport_class, range(k)))
    else:
        moved = [transport_class(h) for h in range(k)]

    points = np.empty_like(S.points)
    provenance = np.empty((S.size, 2), dtype=int)
    for h in range(k):
        rows = source.members(h)
        points[rows] = moved[h]
        provenance[rows, 0] = h
        provenance[rows, 1] = matching.sigma[h]
    logger.info("Adapted %d source points over %d class/cluster pairs", S.size, k)
    return AdaptationResult(TransportedDataset(points, S.labels.copy(), provenance),
                            matching, source, target)


def adaptation_accuracy(S: LabeledDataset, result: AdaptationResult,
                        T_labeled: LabeledDataset) -> Tuple[float, float]:
    """(pre, post) 1-NN target accuracy: trained on S versus on the transported source."""
    pre = NearestNeighborClassifier(S, name="1nn-source")(T_labeled.points)
    post = result.classifier()(T_labeled.points)
    return (1.0 - empirical_risk(pre, T_labeled.labels).value,
            1.0 - empirical_risk(post, T_labeled.labels).value)


def class_means(S: LabeledDataset, order: Optional[Sequence] = None) -> np.ndarray:
    """Per-class centroids in class order; used to seed clustering at known centers."""
    order = tuple(order) if order is not None else S.class_order()
    return np.vstack([S.points[S.labels == label].mean(axis=0) for label in order])
