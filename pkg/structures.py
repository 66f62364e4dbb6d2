"""
Source class structures and target cluster structures
Each domain becomes a measure of measures over its classes or clusters
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import kmeans_plusplus

from config import SETTINGS
from errors import InvalidInputError, SolverError
from hierarchical import MeasureOfMeasures
from ot_core import DiscreteMeasure, positive_count

logger = logging.getLogger(__name__)

WEIGHTINGS = ("uniform", "proportional")


def _as_points(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
        raise InvalidInputError(f"points must be an (n, d) array with n, d >= 1, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise InvalidInputError("points contain non-finite values")
    return points


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Points with class labels; classes optionally declared up front"""
    points: np.ndarray
    labels: np.ndarray
    classes: Optional[Tuple] = None

    def __post_init__(self):
        points = _as_points(self.points)
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.shape[0] != points.shape[0]:
            raise InvalidInputError(f"{points.shape[0]} points but labels has shape {labels.shape}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)
        if self.classes is not None:
            object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def class_order(self) -> Tuple:
        if self.classes is not None:
            return self.classes
        return tuple(np.unique(self.labels).tolist())

    def unlabeled(self) -> "UnlabeledDataset":
        return UnlabeledDataset(self.points)


@dataclass(frozen=True, eq=False)
class UnlabeledDataset:
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class StructureDecomposition:
    structures: MeasureOfMeasures
    membership: np.ndarray
    kind: str
    names: Tuple = ()
    inertia: Optional[float] = None
    inertia_history: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def k(self) -> int:
        return self.structures.size

    def members(self, index: int) -> np.ndarray:
        return np.flatnonzero(self.membership == index)


def _outer_weights(sizes: Sequence[int], weighting: str) -> np.ndarray:
    if weighting not in WEIGHTINGS:
        raise InvalidInputError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    sizes = np.asarray(sizes, dtype=float)
    if weighting == "proportional":
        return sizes / sizes.sum()
    return np.full(sizes.size, 1.0 / sizes.size)


def _decomposition(points: np.ndarray, membership: np.ndarray, k: int, kind: str,
                   weighting: str, **extra) -> StructureDecomposition:
    atoms = [DiscreteMeasure.uniform(points[membership == index]) for index in range(k)]
    weights = _outer_weights([atom.size for atom in atoms], weighting)
    return StructureDecomposition(
        structures=MeasureOfMeasures(atoms, weights),
        membership=membership,
        kind=kind,
        **extra,
    )


def classes_from_labels(S: LabeledDataset, weighting: str = "uniform") -> StructureDecomposition:
    """One uniform atom per class, atoms in class order."""
    order = S.class_order()
    index_of = {label: index for index, label in enumerate(order)}
    unknown = set(np.unique(S.labels).tolist()) - set(index_of)
    if unknown:
        raise InvalidInputError(f"labels {sorted(map(str, unknown))} are not among the declared classes")
    membership = np.array([index_of[label] for label in S.labels.tolist()], dtype=int)
    counts = np.bincount(membership, minlength=len(order))
    empty = [order[i] for i in np.flatnonzero(counts == 0)]
    if empty:
        raise InvalidInputError(f"classes {empty} have no points")
    return _decomposition(S.points, membership, len(order), "class-based", weighting, names=order)


@dataclass
class _LloydRun:
    restart: int
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    history: List[float]
    iterations: int


def _repair_empty(points: np.ndarray, labels: np.ndarray, centers: np.ndarray,
                  sq_dist: np.ndarray) -> None:
    """Re-seed each empty cluster at the point farthest from its nearest center."""
    k = centers.shape[0]
    for cluster in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[cluster] > 0:
            continue
        nearest = sq_dist[np.arange(points.shape[0]), labels]
        # only donors with more than one member, so no new empty cluster appears
        nearest = np.where(counts[labels] > 1, nearest, -np.inf)
        far = int(np.argmax(nearest))
        labels[far] = cluster
        centers[cluster] = points[far]
        sq_dist[:, cluster] = ((points - points[far]) ** 2).sum(axis=1)
        logger.debug("k-means: re-seeded empty cluster %d at point %d", cluster, far)


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int, restart: int = 0) -> _LloydRun:
    """Lloyd iterations until assignments stabilize; inertia is checked to never increase."""
    centers = np.array(centers, dtype=float, copy=True)
    k = centers.shape[0]
    labels = None
    history: List[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        sq_dist = cdist(points, centers, metric="sqeuclidean")
        new_labels = np.argmin(sq_dist, axis=1)
        _repair_empty(points, new_labels, centers, sq_dist)
        inertia = float(sq_dist[np.arange(points.shape[0]), new_labels].sum())
        if history and inertia > history[-1] * (1 + 1e-12) + 1e-12:
            raise SolverError(f"k-means inertia increased from {history[-1]:.6g} to {inertia:.6g}",
                              iterations=iterations)
        history.append(inertia)
        stable = labels is not None and np.array_equal(labels, new_labels)
        labels = new_labels
        for cluster in range(k):
            centers[cluster] = points[labels == cluster].mean(axis=0)
        if stable:
            break
    final = float(((points - centers[labels]) ** 2).sum())
    if final > history[-1] * (1 + 1e-12) + 1e-12:
        raise SolverError("k-means final update increased inertia", iterations=iterations)
    history.append(final)
    return _LloydRun(restart, labels, centers, final, history, iterations)


def _canonical(labels: np.ndarray, k: int) -> np.ndarray:
    """Renumber clusters by first appearance in the data."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(k, dtype=int)
    remap[order] = np.arange(k)
    return remap[labels]


def clusters_kmeans(T: UnlabeledDataset, k: int, seed: Optional[int] = None,
                    restarts: Optional[int] = None, max_iter: Optional[int] = None,
                    init_centers: Optional[np.ndarray] = None, weighting: str = "uniform",
                    max_workers: Optional[int] = None) -> StructureDecomposition:
    """
    Lloyd's k-means with k-means++ seeding; best inertia over restarts.

    Args:
        T: unlabeled points
        k: number of clusters, 1 <= k <= number of points
        seed: base seed; restart r uses the r-th child of SeedSequence(seed)
        restarts: number of k-means++ restarts (HOTDA_KMEANS_RESTARTS)
        max_iter: Lloyd iteration cap (HOTDA_KMEANS_MAX_ITER)
        init_centers: explicit (k, d) starting centers; disables restarts
        weighting: outer weights, "uniform" (1/k) or "proportional"
        max_workers: threads for independent restarts

    Returns:
        cluster-based StructureDecomposition, clusters numbered by first member
    """
    points = T.points
    if k < 1 or int(k) != k:
        raise InvalidInputError(f"k must be a positive integer, got {k}")
    k = int(k)
    if points.shape[0] < k:
        raise InvalidInputError(f"cannot form {k} clusters from {points.shape[0]} points")
    distinct = np.unique(points, axis=0).shape[0]
    if distinct < k:
        raise InvalidInputError(f"only {distinct} distinct points for {k} clusters")
    seed = SETTINGS.seed if seed is None else seed
    restarts = positive_count(restarts, SETTINGS.kmeans_restarts, "restarts")
    max_iter = positive_count(max_iter, SETTINGS.kmeans_max_iter, "max_iter")
    max_workers = positive_count(max_workers, SETTINGS.max_workers, "max_workers")

    if init_centers is not None:
        init_centers = np.asarray(init_centers, dtype=float)
        if init_centers.shape != (k, points.shape[1]):
            raise InvalidInputError(f"init_centers must have shape {(k, points.shape[1])}")
        runs = [_lloyd(points, init_centers, max_iter)]
    else:
        children = np.random.SeedSequence(seed).spawn(restarts)

        def run(restart: int) -> _LloydRun:
            state = int(children[restart].generate_state(1)[0])
            centers, _ = kmeans_plusplus(points, n_clusters=k, random_state=state)
            return _lloyd(points, centers, max_iter, restart)

        if max_workers > 1 and restarts > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                runs = list(pool.map(run, range(restarts)))
        else:
            runs = [run(restart) for restart in range(restarts)]

    best = min(runs, key=lambda r: (r.inertia, r.restart))
    logger.debug("k-means: best restart %d of %d, inertia %.6g after %d iterations",
                 best.restart, len(runs), best.inertia, best.iterations)
    membership = _canonical(best.labels, k)
    return _decomposition(points, membership, k, "cluster-based", weighting,
                          names=tuple(range(k)), inertia=best.inertia,
                          inertia_history=tuple(best.history))
