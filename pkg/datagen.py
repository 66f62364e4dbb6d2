"""
Synthetic Scenario Generator
Gaussian-mixture source and target domains with controllable shift and class separation
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import SETTINGS
from errors import InvalidInputError
from structures import LabeledDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """
    Recipe for one source/target pair

    class_centers is (k, d). shift is one (d,) vector shared by every class or a
    (k, d) per-class displacement. spread is one isotropic std or one per class.
    label_permutation[c] names the source component that target class c is drawn
    around, so a swap on k=2 plants a class flip.
    """
    k: int
    d: int
    n_source: int
    n_target: int
    class_centers: np.ndarray
    shift: np.ndarray
    spread: np.ndarray
    label_permutation: Optional[Tuple[int, ...]] = None
    seed: Optional[int] = None
    proportions: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.k < 1 or self.d < 1:
            raise InvalidInputError(f"k and d must be positive, got k={self.k}, d={self.d}")
        if self.n_source < self.k or self.n_target < self.k:
            raise InvalidInputError(f"counts ({self.n_source}, {self.n_target}) must be >= k={self.k}")
        centers = np.asarray(self.class_centers, dtype=float)
        if centers.shape != (self.k, self.d):
            raise InvalidInputError(f"class_centers must have shape {(self.k, self.d)}, got {centers.shape}")
        shift = np.asarray(self.shift, dtype=float)
        if shift.shape == (self.d,):
            shift = np.tile(shift, (self.k, 1))
        if shift.shape != (self.k, self.d):
            raise InvalidInputError(f"shift must have shape {(self.d,)} or {(self.k, self.d)}")
        spread = np.asarray(self.spread, dtype=float).reshape(-1)
        if spread.size == 1:
            spread = np.full(self.k, spread[0])
        if spread.shape != (self.k,):
            raise InvalidInputError(f"spread must be a scalar or {self.k} values")
        if np.any(spread <= 0):
            raise InvalidInputError("spread must be positive")
        permutation = tuple(range(self.k)) if self.label_permutation is None else tuple(
            int(c) for c in self.label_permutation)
        if sorted(permutation) != list(range(self.k)):
            raise InvalidInputError(f"label_permutation {permutation} is not a permutation of 0..{self.k - 1}")
        proportions = np.full(self.k, 1.0 / self.k) if self.proportions is None else \
            np.asarray(self.proportions, dtype=float)
        if proportions.shape != (self.k,) or np.any(proportions <= 0) or abs(proportions.sum() - 1) > 1e-9:
            raise InvalidInputError("proportions must be k positive weights summing to 1")
        object.__setattr__(self, "class_centers", centers)
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "spread", spread)
        object.__setattr__(self, "label_permutation", permutation)
        object.__setattr__(self, "proportions", proportions)


def _class_counts(rng: np.random.Generator, n: int, proportions: np.ndarray) -> np.ndarray:
    # one guaranteed point per class, the rest multinomial
    k = proportions.size
    return 1 + rng.multinomial(n - k, proportions)


def _sample(rng: np.random.Generator, n: int, centers: np.ndarray, spread: np.ndarray,
            proportions: np.ndarray, components: Sequence[int]) -> LabeledDataset:
    counts = _class_counts(rng, n, proportions)
    labels = np.repeat(np.arange(centers.shape[0]), counts)
    points = np.vstack([
        centers[components[c]] + spread[components[c]] * rng.standard_normal((counts[c], centers.shape[1]))
        for c in range(centers.shape[0])
    ])
    return LabeledDataset(points, labels, classes=tuple(range(centers.shape[0])))


def generate(spec: ScenarioSpec) -> Tuple[LabeledDataset, LabeledDataset]:
    """
    Draw the source and the labeled target of a scenario.

    Source class c ~ N(center_c, spread_c^2 I). Target class c is drawn around
    the shifted component label_permutation[c]. Same seed, same datasets.
    """
    seed = SETTINGS.seed if spec.seed is None else spec.seed
    source_rng, target_rng = (np.random.default_rng(child)
                              for child in np.random.SeedSequence(seed).spawn(2))
    identity = tuple(range(spec.k))
    S = _sample(source_rng, spec.n_source, spec.class_centers, spec.spread, spec.proportions, identity)
    T = _sample(target_rng, spec.n_target, spec.class_centers + spec.shift, spec.spread,
                spec.proportions, spec.label_permutation)
    logger.debug("Generated scenario k=%d d=%d with %d source and %d target points",
                 spec.k, spec.d, S.size, T.size)
    return S, T


def generate_multisource(spec: ScenarioSpec, source_shifts: Sequence) -> Tuple[List[LabeledDataset], LabeledDataset]:
    """One source per entry of source_shifts (each shaped like spec.shift) and the spec's target."""
    if not source_shifts:
        raise InvalidInputError("need at least one source shift")
    seed = SETTINGS.seed if spec.seed is None else spec.seed
    children = np.random.SeedSequence(seed).spawn(len(source_shifts) + 1)
    sources = []
    for j, shift in enumerate(source_shifts):
        # re-validates and broadcasts the shift
        shifted = ScenarioSpec(spec.k, spec.d, spec.n_source, spec.n_target,
                               spec.class_centers, shift, spec.spread, None, seed, spec.proportions)
        sources.append(_sample(np.random.default_rng(children[j]), spec.n_source,
                               spec.class_centers + shifted.shift, spec.spread, spec.proportions,
                               tuple(range(spec.k))))
    T = _sample(np.random.default_rng(children[-1]), spec.n_target, spec.class_centers + spec.shift,
                spec.spread, spec.proportions, spec.label_permutation)
    return sources, T


def separated_scenario(k: int, d: int = 2, n_source: int = 200, n_target: int = 200,
                       separation: float = 10.0, spread: float = 1.0, shift=None,
                       label_permutation: Optional[Sequence[int]] = None,
                       seed: Optional[int] = None) -> ScenarioSpec:
    """Class centers on the first axis, separation * spread apart; zero shift by default."""
    if separation <= 0:
        raise InvalidInputError(f"separation must be positive, got {separation}")
    centers = np.zeros((k, d))
    centers[:, 0] = separation * spread * np.arange(k)
    shift = np.zeros(d) if shift is None else shift
    return ScenarioSpec(k, d, n_source, n_target, centers, shift, spread,
                        None if label_permutation is None else tuple(label_permutation), seed)
