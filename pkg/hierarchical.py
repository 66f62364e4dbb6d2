"""
Hierarchical Wasserstein distance between measures of measures
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from config import SETTINGS
from errors import InvalidInputError
from ot_core import DiscreteMeasure, TransportPlan, check_simplex, frozen_array, positive_count
from wasserstein import EXACT, Backend, root_objective, wasserstein

logger = logging.getLogger(__name__)

INNER_CONVENTIONS = ("power", "literal")


@dataclass(frozen=True, eq=False)
class MeasureOfMeasures:
    """phi = sum_i alpha_i delta_{rho_i}, each rho_i a DiscreteMeasure"""
    atoms: Sequence[DiscreteMeasure]
    weights: np.ndarray

    def __post_init__(self):
        atoms = tuple(self.atoms)
        if not atoms:
            raise InvalidInputError("a measure of measures needs at least one atom")
        if any(not isinstance(atom, DiscreteMeasure) for atom in atoms):
            raise InvalidInputError("every atom must be a DiscreteMeasure")
        dims = {atom.dim for atom in atoms}
        if len(dims) != 1:
            raise InvalidInputError(f"atoms have mixed dimensions {sorted(dims)}")
        weights = check_simplex(self.weights, "outer weights")
        if weights.size != len(atoms):
            raise InvalidInputError(f"{len(atoms)} atoms but {weights.size} outer weights")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", frozen_array(weights))

    @classmethod
    def uniform(cls, atoms: Sequence[DiscreteMeasure]) -> "MeasureOfMeasures":
        atoms = tuple(atoms)
        if not atoms:
            raise InvalidInputError("a measure of measures needs at least one atom")
        return cls(atoms, np.full(len(atoms), 1.0 / len(atoms)))

    @property
    def size(self) -> int:
        return len(self.atoms)

    @property
    def dim(self) -> int:
        return self.atoms[0].dim


@dataclass(frozen=True, eq=False)
class HierarchicalResult:
    distance: float
    outer_plan: TransportPlan
    inner_cost: np.ndarray
    order: float
    convention: str = "power"


def inner_cost_matrix(phi: MeasureOfMeasures, psi: MeasureOfMeasures, p: float = 1.0,
                      backend: Optional[Backend] = None,
                      max_workers: Optional[int] = None) -> np.ndarray:
    """h x l matrix of W_p(rho_i, varrho_j) between the atoms of phi and psi."""
    if phi.dim != psi.dim:
        raise InvalidInputError(f"dimension mismatch: {phi.dim} vs {psi.dim}")
    backend = backend or Backend()
    max_workers = positive_count(max_workers, SETTINGS.max_workers, "max_workers")
    pairs = [(i, j) for i in range(phi.size) for j in range(psi.size)]

    def entry(pair):
        i, j = pair
        return wasserstein(phi.atoms[i], psi.atoms[j], p, backend).distance

    if max_workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            values = list(pool.map(entry, pairs))
    else:
        values = [entry(pair) for pair in pairs]
    return np.array(values, dtype=float).reshape(phi.size, psi.size)


def hierarchical_wasserstein(phi: MeasureOfMeasures, psi: MeasureOfMeasures, p: float = 1.0,
                             backend: Optional[Backend] = None,
                             outer_backend: Optional[Backend] = None,
                             inner_convention: str = "power",
                             inner_cost: Optional[np.ndarray] = None) -> HierarchicalResult:
    """
    Solve the outer transport problem over U(alpha, beta) with Wasserstein costs.

    "power" composes on W_p^p entries and roots the outer objective, which is
    the HW_p distance. "literal" uses the W_p entries as the outer cost and
    reports the outer objective unrooted.

    Args:
        phi, psi: measures of measures of equal dimension
        p: order, >= 1
        backend: solver for the inner W_p problems (auto by default)
        outer_backend: solver for the outer problem (exact by default)
        inner_convention: "power" or "literal"
        inner_cost: precomputed inner W_p matrix, reused when given
    """
    if inner_convention not in INNER_CONVENTIONS:
        raise InvalidInputError(f"inner_convention must be one of {INNER_CONVENTIONS}")
    if p < 1:
        raise InvalidInputError(f"order p must be >= 1, got {p}")
    outer_backend = outer_backend or EXACT
    if inner_cost is None:
        inner_cost = inner_cost_matrix(phi, psi, p, backend)
    elif inner_cost.shape != (phi.size, psi.size):
        raise InvalidInputError(f"inner cost shape {inner_cost.shape} does not match ({phi.size}, {psi.size})")
    outer_cost = inner_cost ** p if inner_convention == "power" else inner_cost
    plan = outer_backend.solve(phi.weights, psi.weights, outer_cost)
    if inner_convention == "power":
        distance = root_objective(plan.objective, p)
    else:
        distance = max(plan.objective, 0.0)
    logger.debug("HW_%g over %dx%d atoms = %.6g (%s)", p, phi.size, psi.size, distance, inner_convention)
    return HierarchicalResult(
        distance=distance,
        outer_plan=plan,
        inner_cost=frozen_array(inner_cost),
        order=float(p),
        convention=inner_convention,
    )


def flatten(phi: MeasureOfMeasures) -> DiscreteMeasure:
    """Mixture sum_i alpha_i rho_i as one measure, duplicate points merged."""
    support = np.vstack([atom.support for atom in phi.atoms])
    weights = np.concatenate([alpha * atom.weights for alpha, atom in zip(phi.weights, phi.atoms)])
    return DiscreteMeasure(support, weights / weights.sum()).merged()


def order_generalization_gap(phi: MeasureOfMeasures, psi: MeasureOfMeasures, p: float = 1.0,
                             q: float = 2.0, backend: Optional[Backend] = None) -> float:
    """HW_q - HW_p for p <= q; non-negative up to solver tolerance."""
    if q < p:
        raise InvalidInputError(f"need p <= q, got p={p}, q={q}")
    backend = backend or EXACT
    low = hierarchical_wasserstein(phi, psi, p, backend).distance
    high = hierarchical_wasserstein(phi, psi, q, backend).distance
    return high - low
