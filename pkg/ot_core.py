"""
Optimal Transport Core
Discrete measures, ground costs, and exact / entropic transport solvers
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import ot
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from config import SETTINGS
from errors import InvalidInputError, SolverError

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-9
MERGE_TOL = 1e-12
EXACT_MARGINAL_TOL = 1e-9
# exp(-x) underflows double precision a little past 745
_KERNEL_EXPONENT_LIMIT = 700.0
_SCALING_LIMIT = 1e300
# log-domain epsilon ladder: halving rungs, each run to a loose tolerance
_STAGE_FACTOR = 0.5
_STAGE_TOL = 1e-6
_STAGE_MAX_ITER = 200

GROUND_METRICS = ("euclidean", "squared_euclidean", "precomputed")


def check_simplex(weights, name: str = "weights") -> np.ndarray:
    """Validate a probability vector and return it as a float array."""
    vec = np.asarray(weights, dtype=float)
    if vec.ndim != 1 or vec.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 1-D vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    if np.any(vec < 0):
        raise InvalidInputError(f"{name} has negative entries (min {vec.min():.3e})")
    total = vec.sum()
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise InvalidInputError(f"{name} must sum to 1 within {SIMPLEX_TOL:g}, got {total!r}")
    return vec


def frozen_array(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud sum_i w_i delta_{x_i} in R^d"""
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        if support.ndim == 1:
            support = support.reshape(-1, 1)
        if support.ndim != 2 or support.shape[0] < 1 or support.shape[1] < 1:
            raise InvalidInputError(f"support must be an (n, d) array with n, d >= 1, got shape {support.shape}")
        if not np.all(np.isfinite(support)):
            raise InvalidInputError("support contains non-finite coordinates")
        weights = check_simplex(self.weights, "measure weights")
        if weights.shape[0] != support.shape[0]:
            raise InvalidInputError(
                f"support has {support.shape[0]} points but weights has {weights.shape[0]} entries"
            )
        object.__setattr__(self, "support", frozen_array(support))
        object.__setattr__(self, "weights", frozen_array(weights))

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        n = points.shape[0]
        if n == 0:
            raise InvalidInputError("cannot build a uniform measure on zero points")
        return cls(points, np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, point) -> "DiscreteMeasure":
        return cls(np.atleast_2d(np.asarray(point, dtype=float)), np.ones(1))

    @property
    def size(self) -> int:
        return self.support.shape[0]

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def merged(self, tol: float = MERGE_TOL) -> "DiscreteMeasure":
        """Merge support points closer than tol, summing their weights.

        Representatives keep first-occurrence order.
        """
        if self.size == 1:
            return self
        tree = cKDTree(self.support)
        owner = np.full(self.size, -1, dtype=int)
        for i in range(self.size):
            if owner[i] >= 0:
                continue
            for j in tree.query_ball_point(self.support[i], r=tol):
                if owner[j] < 0:
                    owner[j] = i
        representatives = np.unique(owner)
        if representatives.size == self.size:
            return self
        weights = np.array([self.weights[owner == r].sum() for r in representatives])
        return DiscreteMeasure(self.support[representatives], weights / weights.sum())

    def same_as(self, other: "DiscreteMeasure", tol: float = MERGE_TOL) -> bool:
        """True when both measures coincide as weighted point sets after merging."""
        if self.dim != other.dim:
            return False
        left, right = self.merged(tol), other.merged(tol)
        if left.size != right.size:
            return False
        left_order = np.lexsort(left.support.T[::-1])
        right_order = np.lexsort(right.support.T[::-1])
        return (np.allclose(left.support[left_order], right.support[right_order], rtol=0.0, atol=tol)
                and np.allclose(left.weights[left_order], right.weights[right_order], rtol=0.0, atol=SIMPLEX_TOL))


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Non-negative n x m ground cost, entries = d(x_i, y_j)^p"""
    entries: np.ndarray
    metric_order: float = 1.0
    ground_metric: str = "euclidean"

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 2 or min(entries.shape) < 1:
            raise InvalidInputError(f"cost matrix must be 2-D and non-empty, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise InvalidInputError("cost matrix contains non-finite entries")
        if np.any(entries < 0):
            raise InvalidInputError("cost matrix entries must be non-negative")
        if self.metric_order < 1:
            raise InvalidInputError(f"metric order p must be >= 1, got {self.metric_order}")
        if self.ground_metric not in GROUND_METRICS:
            raise InvalidInputError(f"unknown ground metric {self.ground_metric!r}")
        object.__setattr__(self, "entries", frozen_array(entries))

    @classmethod
    def precomputed(cls, entries, metric_order: float = 1.0) -> "CostMatrix":
        return cls(entries, metric_order, "precomputed")

    @property
    def shape(self):
        return self.entries.shape

    @property
    def T(self) -> "CostMatrix":
        return CostMatrix(self.entries.T, self.metric_order, self.ground_metric)


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Coupling in U(a, b) together with its certified quality"""
    coupling: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    objective: float
    marginal_violation: float
    solver: str = "exact"
    iterations: int = 0
    converged: bool = True
    epsilon: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "coupling", frozen_array(self.coupling))
        object.__setattr__(self, "row_marginal", frozen_array(self.row_marginal))
        object.__setattr__(self, "col_marginal", frozen_array(self.col_marginal))

    @property
    def shape(self):
        return self.coupling.shape


CostLike = Union[CostMatrix, np.ndarray, Sequence[Sequence[float]]]


def as_cost_entries(C: CostLike) -> np.ndarray:
    if isinstance(C, CostMatrix):
        return C.entries
    return CostMatrix.precomputed(C).entries


def cost_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 1.0,
                ground_metric: str = "euclidean") -> CostMatrix:
    """Pairwise ground cost ||x_i - y_j||^p between the supports of mu and nu."""
    if mu.dim != nu.dim:
        raise InvalidInputError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if p < 1:
        raise InvalidInputError(f"metric order p must be >= 1, got {p}")
    if ground_metric == "euclidean":
        base = cdist(mu.support, nu.support, metric="euclidean")
    elif ground_metric == "squared_euclidean":
        base = cdist(mu.support, nu.support, metric="sqeuclidean")
    else:
        raise InvalidInputError(f"cost_matrix supports euclidean or squared_euclidean, not {ground_metric!r}")
    entries = base if p == 1 else base ** p
    return CostMatrix(entries, float(p), ground_metric)


def marginal_violation(coupling: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """L1 deviation of the realized row and column sums from a and b."""
    return float(np.abs(coupling.sum(axis=1) - a).sum() + np.abs(coupling.sum(axis=0) - b).sum())


def entropy(coupling: np.ndarray) -> float:
    """H(gamma) = -sum gamma (log gamma - 1), with 0 log 0 = 0."""
    gamma = np.asarray(coupling, dtype=float)
    positive = gamma > 0
    g = gamma[positive]
    return float(-np.sum(g * (np.log(g) - 1.0)))


def regularized_objective(plan: TransportPlan, C: CostLike, epsilon: float) -> float:
    """<gamma, C>_F - epsilon H(gamma) for a returned plan."""
    return float(np.sum(plan.coupling * as_cost_entries(C)) - epsilon * entropy(plan.coupling))


def positive_count(value: Optional[int], default: int, name: str) -> int:
    """value when given (must be >= 1), otherwise the configured default."""
    if value is None:
        return default
    if value < 1:
        raise InvalidInputError(f"{name} must be >= 1, got {value}")
    return int(value)


def _check_problem(a, b, C: CostLike):
    a = check_simplex(a, "a")
    b = check_simplex(b, "b")
    M = as_cost_entries(C)
    if M.shape != (a.size, b.size):
        raise InvalidInputError(f"cost matrix shape {M.shape} does not match marginals ({a.size}, {b.size})")
    # renormalize so the exact marginals are the ones the plan is certified against
    return a / a.sum(), b / b.sum(), M


def solve_exact(a, b, C: CostLike, max_iter: Optional[int] = None) -> TransportPlan:
    """Globally optimal plan of min <gamma, C>_F over U(a, b) (network simplex)."""
    a, b, M = _check_problem(a, b, C)
    max_iter = positive_count(max_iter, SETTINGS.exact_max_iter, "max_iter")
    coupling, log = ot.emd(a, b, M, numItermax=max_iter, log=True)
    coupling = np.asarray(coupling, dtype=float)
    violation = marginal_violation(coupling, a, b)
    if log.get("result_code") != 1:
        raise SolverError(f"network simplex did not reach optimality: {log.get('warning')}",
                          iterations=max_iter, marginal_violation=violation)
    if violation > EXACT_MARGINAL_TOL:
        raise SolverError("exact plan violates its marginals", marginal_violation=violation)
    coupling = np.maximum(coupling, 0.0)
    return TransportPlan(
        coupling=coupling,
        row_marginal=a,
        col_marginal=b,
        objective=float(np.sum(coupling * M)),
        marginal_violation=violation,
        solver="exact",
    )


def _sinkhorn_scaling(a, b, M, epsilon, tol, max_iter):
    """Plain matrix scaling; returns None when the scalings leave the safe range."""
    K = np.exp(-M / epsilon)
    u = np.ones_like(a)
    v = np.ones_like(b)
    violation = np.inf
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for iteration in range(1, max_iter + 1):
            u = a / (K @ v)
            v = b / (K.T @ u)
            unsafe = (not np.all(np.isfinite(u)) or not np.all(np.isfinite(v))
                      or u.max() > _SCALING_LIMIT or v.max() > _SCALING_LIMIT
                      or np.any((u == 0) & (a > 0)) or np.any((v == 0) & (b > 0)))
            if unsafe:
                logger.debug("Sinkhorn scaling left the safe range at iteration %d", iteration)
                return None
            coupling = u[:, None] * K * v[None, :]
            violation = marginal_violation(coupling, a, b)
            if violation <= tol:
                return coupling, iteration, violation, True
    return coupling, max_iter, violation, False


def _log_updates(f, g, log_a, log_b, M, epsilon):
    f = epsilon * (log_a - logsumexp((g[None, :] - M) / epsilon, axis=1))
    g = epsilon * (log_b - logsumexp((f[:, None] - M) / epsilon, axis=0))
    return f, g


def _log_stage(f, g, log_a, log_b, a, b, M, epsilon, tol, budget):
    """Iterate at one epsilon until the marginals are within tol or the budget is spent."""
    coupling = np.exp((f[:, None] + g[None, :] - M) / epsilon)
    violation = marginal_violation(coupling, a, b)
    used = 0
    while violation > tol and used < budget:
        f, g = _log_updates(f, g, log_a, log_b, M, epsilon)
        used += 1
        coupling = np.exp((f[:, None] + g[None, :] - M) / epsilon)
        violation = marginal_violation(coupling, a, b)
    return f, g, coupling, used, violation


def _sinkhorn_log(a, b, M, epsilon, tol, max_iter, epsilon_scaling):
    """
    Log-domain iterations on the dual potentials f, g.

    With epsilon_scaling the potentials are warm-started along a halving
    ladder from max(C) down to epsilon; each rung runs to a loose tolerance
    so the final rung starts next to its fixed point.
    """
    with np.errstate(divide="ignore"):
        log_a, log_b = np.log(a), np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    iteration = 0
    if epsilon_scaling:
        stage_epsilon = max(float(M.max()) * _STAGE_FACTOR, epsilon)
        while stage_epsilon > epsilon and iteration < max_iter:
            budget = min(_STAGE_MAX_ITER, max_iter - iteration)
            f, g, _, used, violation = _log_stage(f, g, log_a, log_b, a, b, M, stage_epsilon,
                                                  max(tol, _STAGE_TOL), budget)
            iteration += used
            logger.debug("Epsilon stage %.3e: %d iterations, violation %.3e", stage_epsilon, used, violation)
            stage_epsilon = max(stage_epsilon * _STAGE_FACTOR, epsilon)
    f, g, coupling, used, violation = _log_stage(f, g, log_a, log_b, a, b, M, epsilon, tol,
                                                 max_iter - iteration)
    iteration += used
    return coupling, iteration, violation, violation <= tol


def project_to_marginals(coupling: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Nearby coupling whose row sums are a and column sums are b.

    Rows and then columns carrying too much mass are scaled down, and the
    missing mass is added back as a rank-one correction. The L1 distance to
    the input is at most twice its marginal violation.
    """
    P = np.asarray(coupling, dtype=float)
    rows = P.sum(axis=1)
    P = np.minimum(np.divide(a, rows, out=np.ones_like(a), where=rows > 0), 1.0)[:, None] * P
    cols = P.sum(axis=0)
    P = P * np.minimum(np.divide(b, cols, out=np.ones_like(b), where=cols > 0), 1.0)[None, :]
    missing_a = np.maximum(a - P.sum(axis=1), 0.0)
    missing_b = np.maximum(b - P.sum(axis=0), 0.0)
    total = missing_a.sum()
    if total > 0:
        P = P + np.outer(missing_a, missing_b) / total
    return P


def solve_sinkhorn(a, b, C: CostLike, epsilon: float, tol: Optional[float] = None,
                   max_iter: Optional[int] = None, epsilon_scaling: bool = True) -> TransportPlan:
    """
    Entropic plan of min <gamma, C>_F - epsilon H(gamma) over U(a, b).

    Starts with plain matrix scaling and falls back to log-domain iterations
    when the kernel underflows or a scaling factor leaves [0, 1e300].

    Args:
        a, b: marginals on the simplex
        C: cost matrix (CostMatrix or array)
        epsilon: regularization strength, > 0
        tol: L1 marginal tolerance (defaults to HOTDA_SINKHORN_TOL)
        max_iter: iteration cap (defaults to HOTDA_SINKHORN_MAX_ITER)
        epsilon_scaling: warm-start log-domain runs from a large epsilon

    Returns:
        TransportPlan whose objective is the transport cost <gamma, C>_F
        without the entropic term. The last iterate is projected onto U(a, b),
        so the coupling meets its marginals to rounding error; converged=False
        records that the iterates hit max_iter before reaching tol
    """
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise InvalidInputError(f"epsilon must be positive, got {epsilon}")
    a, b, M = _check_problem(a, b, C)
    tol = SETTINGS.sinkhorn_tol if tol is None else tol
    max_iter = positive_count(max_iter, SETTINGS.sinkhorn_max_iter, "max_iter")

    result = None
    if M.max() / epsilon < _KERNEL_EXPONENT_LIMIT:
        result = _sinkhorn_scaling(a, b, M, epsilon, tol, max_iter)
    if result is None:
        logger.debug("Switching to log-domain Sinkhorn (epsilon=%.3e, max cost=%.3e)", epsilon, M.max())
        result = _sinkhorn_log(a, b, M, epsilon, tol, max_iter, epsilon_scaling)
    coupling, iterations, violation, converged = result

    if not np.all(np.isfinite(coupling)):
        raise SolverError("Sinkhorn produced a non-finite coupling", iterations=iterations,
                          marginal_violation=violation)
    if not converged:
        logger.warning("Sinkhorn hit max_iter=%d with marginal violation %.3e (tol %.1e)",
                       max_iter, violation, tol)
    coupling = project_to_marginals(coupling, a, b)
    return TransportPlan(
        coupling=coupling,
        row_marginal=a,
        col_marginal=b,
        objective=float(np.sum(coupling * M)),
        marginal_violation=marginal_violation(coupling, a, b),
        solver="sinkhorn",
        iterations=iterations,
        converged=converged,
        epsilon=float(epsilon),
    )
