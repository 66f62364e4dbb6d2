"""
Wasserstein distance of order p between discrete measures
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from config import SETTINGS
from errors import InvalidInputError
from ot_core import (CostLike, DiscreteMeasure, TransportPlan, as_cost_entries,
                     cost_matrix, solve_exact, solve_sinkhorn)

logger = logging.getLogger(__name__)

BACKEND_KINDS = ("auto", "exact", "sinkhorn")


def auto_epsilon(C: CostLike, scale: Optional[float] = None) -> float:
    """scale * median of the cost entries, falling back to the max for degenerate costs."""
    scale = SETTINGS.epsilon_scale if scale is None else scale
    entries = as_cost_entries(C)
    reference = float(np.median(entries))
    if reference <= 0:
        reference = float(entries.max())
    if reference <= 0:
        reference = 1.0
    return scale * reference


@dataclass(frozen=True)
class Backend:
    """Solver selection: exact, sinkhorn, or auto (exact for n*m <= size limit)"""
    kind: str = "auto"
    epsilon: Optional[float] = None
    tol: Optional[float] = None
    max_iter: Optional[int] = None
    size_limit: Optional[int] = None

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise InvalidInputError(f"unknown backend {self.kind!r}; expected one of {BACKEND_KINDS}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise InvalidInputError(f"backend epsilon must be positive, got {self.epsilon}")

    @classmethod
    def exact(cls) -> "Backend":
        return cls("exact")

    @classmethod
    def sinkhorn(cls, epsilon: Optional[float] = None, tol: Optional[float] = None,
                 max_iter: Optional[int] = None) -> "Backend":
        return cls("sinkhorn", epsilon, tol, max_iter)

    def resolve(self, n: int, m: int) -> str:
        if self.kind != "auto":
            return self.kind
        limit = SETTINGS.exact_size_limit if self.size_limit is None else self.size_limit
        return "exact" if n * m <= limit else "sinkhorn"

    def solve(self, a, b, C: CostLike) -> TransportPlan:
        M = as_cost_entries(C)
        if self.resolve(*M.shape) == "exact":
            return solve_exact(a, b, M)
        epsilon = self.epsilon if self.epsilon is not None else auto_epsilon(M)
        return solve_sinkhorn(a, b, M, epsilon, tol=self.tol, max_iter=self.max_iter)


EXACT = Backend.exact()


def backend_label(plan: TransportPlan) -> str:
    if plan.solver == "sinkhorn":
        return f"sinkhorn({plan.epsilon:.6g})"
    return "exact"


@dataclass(frozen=True, eq=False)
class WassersteinResult:
    distance: float
    plan: TransportPlan
    order: float
    backend: str


def root_objective(objective: float, p: float) -> float:
    objective = max(float(objective), 0.0)
    return objective if p == 1 else objective ** (1.0 / p)


def wasserstein(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 1.0,
                backend: Optional[Backend] = None) -> WassersteinResult:
    """W_p(mu, nu) = (min_gamma <gamma, C_p>_F)^(1/p)."""
    backend = backend or Backend()
    C = cost_matrix(mu, nu, p)
    plan = backend.solve(mu.weights, nu.weights, C)
    distance = root_objective(plan.objective, p)
    logger.debug("W_%g between %d and %d atoms = %.6g (%s)", p, mu.size, nu.size, distance,
                 backend_label(plan))
    return WassersteinResult(
        distance=distance,
        plan=plan,
        order=float(p),
        backend=backend_label(plan),
    )
