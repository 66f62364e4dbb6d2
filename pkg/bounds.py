"""
Generalization bound evaluators
Every bound is returned as a BoundReport whose rhs_total is the sum of its terms
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from config import SETTINGS
from errors import InvalidInputError
from hierarchical import MeasureOfMeasures, hierarchical_wasserstein, inner_cost_matrix
from hotda import (ZERO_ONE, Hypothesis, Loss, NearestNeighborClassifier, hard_assignment,
                   empirical_risk, pair_risk)
from ot_core import check_simplex, positive_count
from structures import (LabeledDataset, StructureDecomposition, UnlabeledDataset,
                        classes_from_labels, clusters_kmeans)
from wasserstein import EXACT, Backend

logger = logging.getLogger(__name__)

BOUND_KINDS = ("unsupervised", "corollary", "semi-supervised", "multi-pairwise", "multi-combined")
SUM_TOL = 1e-9

Target = Union[LabeledDataset, UnlabeledDataset]


@dataclass(frozen=True)
class ConcentrationParams:
    """Confidence delta, Talagrand-derived constant zeta', structure count k"""
    delta: float
    zeta_prime: float
    k: int

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise InvalidInputError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.zeta_prime > 0:
            raise InvalidInputError(f"zeta_prime must be positive, got {self.zeta_prime}")
        if self.k < 1 or int(self.k) != self.k:
            raise InvalidInputError(f"k must be a positive integer, got {self.k}")


class BoundReport(BaseModel):
    kind: str
    terms: Dict[str, float]
    rhs_total: float
    lhs_target_risk: Optional[float] = None
    satisfied: Optional[bool] = None
    params: Dict[str, Any] = Field(default_factory=dict)
    provenance: Dict[str, Any] = Field(default_factory=dict)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_terms(self):
        if self.kind not in BOUND_KINDS:
            raise ValueError(f"unknown bound kind {self.kind!r}")
        negative = {name: value for name, value in self.terms.items() if value < 0}
        if negative:
            raise ValueError(f"bound terms must be non-negative: {negative}")
        total = math.fsum(self.terms.values())
        if abs(total - self.rhs_total) > SUM_TOL:
            raise ValueError(f"rhs_total {self.rhs_total!r} != sum of terms {total!r}")
        return self


@dataclass(frozen=True)
class SourceCollection:
    """N labeled sources with sample fractions vartheta and mixture weights theta"""
    sources: Tuple[LabeledDataset, ...]
    fractions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        sources = tuple(self.sources)
        if not sources:
            raise InvalidInputError("a source collection needs at least one source")
        fractions = check_simplex(self.fractions, "source fractions vartheta")
        weights = check_simplex(self.weights, "source weights theta")
        if fractions.size != len(sources) or weights.size != len(sources):
            raise InvalidInputError(f"{len(sources)} sources need {len(sources)} fractions and weights")
        if np.any(fractions <= 0):
            raise InvalidInputError("every source fraction vartheta_j must be positive")
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "fractions", fractions)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_sizes(cls, sources: Sequence[LabeledDataset], weights=None) -> "SourceCollection":
        sizes = np.array([s.size for s in sources], dtype=float)
        weights = np.full(len(sources), 1.0 / len(sources)) if weights is None else weights
        return cls(tuple(sources), sizes / sizes.sum(), np.asarray(weights, dtype=float))

    @property
    def total_size(self) -> int:
        return int(sum(s.size for s in self.sources))


def concentration_term(params: ConcentrationParams) -> float:
    """2 sqrt(2 log(1/delta) / (zeta' k))."""
    return 2.0 * math.sqrt(2.0 * math.log(1.0 / params.delta) / (params.zeta_prime * params.k))


def _name(h) -> str:
    return getattr(h, "name", repr(h))


def default_pool(sources: Union[LabeledDataset, Sequence[LabeledDataset]],
                 T_labeled: Optional[LabeledDataset] = None) -> List[Hypothesis]:
    """
    1-NN trained on each source (and on their union when there are several)
    and on the labeled target.

    Every bound builds its default pool here, so a one-source collection gets
    exactly the single-source pool. No member is trained on source and target
    together: such a learner fits both samples and would pin lambda at 0.
    """
    if isinstance(sources, LabeledDataset):
        sources = [sources]
    sources = list(sources)
    if not sources:
        raise InvalidInputError("the hypothesis pool needs at least one source")
    if len(sources) == 1:
        pool: List[Hypothesis] = [NearestNeighborClassifier(sources[0], name="1nn-source")]
    else:
        pool = [NearestNeighborClassifier(S, name=f"1nn-source{j}") for j, S in enumerate(sources)]
        union = LabeledDataset(np.vstack([S.points for S in sources]),
                               np.concatenate([S.labels for S in sources]))
        pool.append(NearestNeighborClassifier(union, name="1nn-sources"))
    if T_labeled is not None:
        pool.append(NearestNeighborClassifier(T_labeled, name="1nn-target"))
    return pool


def _risk(h: Hypothesis, data: LabeledDataset, loss: Loss) -> float:
    return empirical_risk(h(data.points), data.labels, loss).value


def _lambda_with_argmin(S: LabeledDataset, T_labeled: LabeledDataset,
                        pool: Sequence[Hypothesis], loss: Loss):
    if not pool:
        raise InvalidInputError("the hypothesis pool is empty")
    joint = [_risk(h, S, loss) + _risk(h, T_labeled, loss) for h in pool]
    best = int(np.argmin(joint))
    return joint[best], pool[best]


def estimate_lambda(S: LabeledDataset, T_labeled: LabeledDataset,
                    hypothesis_pool: Sequence[Hypothesis], loss: Loss = ZERO_ONE) -> float:
    """min over the pool of eps_S(h) + eps_T(h): a pool-restricted upper estimate of lambda."""
    return _lambda_with_argmin(S, T_labeled, hypothesis_pool, loss)[0]


def weighted_risk(h: Hypothesis, S: LabeledDataset, T_labeled_subset: Optional[LabeledDataset],
                  theta: float, loss: Loss = ZERO_ONE) -> float:
    """theta * eps_T(h) + (1 - theta) * eps_S(h)."""
    if not 0 <= theta <= 1:
        raise InvalidInputError(f"theta must lie in [0, 1], got {theta}")
    source = _risk(h, S, loss)
    if theta == 0:
        return source
    if T_labeled_subset is None or T_labeled_subset.size == 0:
        raise InvalidInputError("theta > 0 needs a non-empty labeled target subset")
    return theta * _risk(h, T_labeled_subset, loss) + (1.0 - theta) * source


def risk_discrepancy(h: Hypothesis, h_prime: Hypothesis, S: LabeledDataset, T: Target,
                     loss: Loss = ZERO_ONE) -> float:
    """|eps_S(h, h') - eps_T(h, h')|, the empirical side of the HW_1 risk relation."""
    return abs(pair_risk(h, h_prime, S.points, loss).value - pair_risk(h, h_prime, T.points, loss).value)


def _target_structures(T: Target, k: int, seed: Optional[int],
                       target_structures: Optional[StructureDecomposition]) -> StructureDecomposition:
    if target_structures is not None:
        if target_structures.k != k:
            raise InvalidInputError(f"target structures have {target_structures.k} atoms, expected {k}")
        return target_structures
    return clusters_kmeans(UnlabeledDataset(T.points), k, seed=seed)


def _source_structures(S: LabeledDataset, k: int) -> StructureDecomposition:
    source = classes_from_labels(S)
    if source.k != k:
        raise InvalidInputError(f"source has {source.k} classes but k={k}")
    return source


def _hw1(phi: MeasureOfMeasures, psi: MeasureOfMeasures, backend: Backend) -> float:
    return hierarchical_wasserstein(phi, psi, 1.0, backend, EXACT).distance


def _params(params: ConcentrationParams, **extra) -> Dict[str, Any]:
    values = {"delta": params.delta, "zeta_prime": params.zeta_prime, "k": params.k}
    values.update({key: value for key, value in extra.items() if value is not None})
    return values


def _provenance(seed: Optional[int], backend: Backend) -> Dict[str, Any]:
    return {"seed": SETTINGS.seed if seed is None else seed, "backend": backend.kind,
            "epsilon": backend.epsilon}


def _finish(kind: str, terms: Dict[str, float], params: Dict[str, Any], provenance: Dict[str, Any],
            diagnostics: Dict[str, Any], lhs: Optional[float] = None) -> BoundReport:
    terms = {name: float(value) for name, value in terms.items()}
    rhs_total = math.fsum(terms.values())
    satisfied = None if lhs is None else bool(lhs <= rhs_total)
    if satisfied is not None:
        # informative only: zeta' and the transport-entropy assumption are not certified
        logger.info("%s bound: target risk %.4f vs rhs %.4f (holds=%s)", kind, lhs, rhs_total, satisfied)
    return BoundReport(kind=kind, terms=terms, rhs_total=rhs_total, lhs_target_risk=lhs,
                       satisfied=satisfied, params=params, provenance=provenance,
                       diagnostics=diagnostics)


def _single_source_core(S: LabeledDataset, T: Target, h: Hypothesis, params: ConcentrationParams,
                        backend: Backend, seed: Optional[int], target_structures, pool, loss):
    source = _source_structures(S, params.k)
    target = _target_structures(T, params.k, seed, target_structures)
    W1 = inner_cost_matrix(source.structures, target.structures, 1.0, backend)
    hw = hierarchical_wasserstein(source.structures, target.structures, 1.0, backend, EXACT,
                                  inner_cost=W1)
    terms = {
        "source_risk": _risk(h, S, loss),
        "concentration": concentration_term(params),
    }
    diagnostics: Dict[str, Any] = {"hypothesis": _name(h), "inertia": target.inertia}
    lhs = None
    if isinstance(T, LabeledDataset):
        pool = list(pool) if pool is not None else default_pool(S, T)
        lam, best = _lambda_with_argmin(S, T, pool, loss)
        terms["lambda"] = lam
        lhs = _risk(h, T, loss)
        diagnostics["lambda_pool"] = [_name(g) for g in pool]
        diagnostics["lambda_argmin"] = _name(best)
        diagnostics["risk_discrepancy"] = risk_discrepancy(h, best, S, T, loss)
    return source, target, W1, hw, terms, diagnostics, lhs


def bound_unsupervised(S: LabeledDataset, T: Target, h: Hypothesis, params: ConcentrationParams,
                       backend: Backend = EXACT, seed: Optional[int] = None,
                       target_structures: Optional[StructureDecomposition] = None,
                       pool: Optional[Sequence[Hypothesis]] = None,
                       loss: Loss = ZERO_ONE) -> BoundReport:
    """
    eps_T(h) <= eps_S(h) + HW_1(phi_S, phi_T) + 2 sqrt(2 log(1/delta) / (zeta' k)) + lambda.

    lambda (and the target-risk diagnostic) need a labeled target; without one
    the lambda term is left out of the report.
    """
    _, _, W1, hw, terms, diagnostics, lhs = _single_source_core(
        S, T, h, params, backend, seed, target_structures, pool, loss)
    terms["hw_distance"] = hw.distance
    diagnostics["inner_cost"] = W1.tolist()
    return _finish("unsupervised", terms, _params(params), _provenance(seed, backend), diagnostics, lhs)


def corollary_terms(W1: np.ndarray, outer_plan: np.ndarray) -> Dict[str, Any]:
    """sigma from the unregularized outer plan, the matched sum, iota, and the uniform cap."""
    k = W1.shape[0]
    if W1.shape != (k, k) or outer_plan.shape != W1.shape:
        raise InvalidInputError("the corollary needs a square class/cluster cost matrix")
    sigma, ties = hard_assignment(outer_plan, "argmax")
    pairwise_sum = float(sum(W1[h, sigma[h]] for h in range(k)))
    off_match = np.ones_like(W1, dtype=bool)
    off_match[np.arange(k), sigma] = False
    # empty off-match set (k = 1) gives iota = 0
    iota = float(W1[off_match].max()) if off_match.any() else 0.0
    return {
        "sigma": [int(l) for l in sigma],
        "ties": [int(h) for h in ties],
        "pairwise_sum": pairwise_sum,
        "iota": iota,
        "iota_term": k * (k - 1) * iota,
        "uniform_cap": float(W1.sum() / k),
    }


def bound_corollary(S: LabeledDataset, T: Target, h: Hypothesis, params: ConcentrationParams,
                    backend: Backend = EXACT, seed: Optional[int] = None,
                    target_structures: Optional[StructureDecomposition] = None,
                    pool: Optional[Sequence[Hypothesis]] = None,
                    loss: Loss = ZERO_ONE) -> BoundReport:
    """Explicit form: HW_1 replaced by sum_h W_1(rho_h, varrho_sigma(h)) + k(k-1) iota."""
    _, _, W1, hw, terms, diagnostics, lhs = _single_source_core(
        S, T, h, params, backend, seed, target_structures, pool, loss)
    chain = corollary_terms(W1, hw.outer_plan.coupling)
    terms["pairwise_sum"] = chain["pairwise_sum"]
    terms["iota_term"] = chain["iota_term"]
    diagnostics.update({
        "hw_distance": hw.distance,
        "sigma": chain["sigma"],
        "ties": chain["ties"],
        "iota": chain["iota"],
        "uniform_cap": chain["uniform_cap"],
        "inner_cost": W1.tolist(),
    })
    return _finish("corollary", terms, _params(params), _provenance(seed, backend), diagnostics, lhs)


def sample_terms_semisupervised(n: int, theta: float, vartheta: float, delta: float,
                                kernel_bound: float) -> Tuple[float, float]:
    """Deviation and bias terms of the weighted-risk concentration for a source/target sample."""
    spread = (1 - theta) ** 2 / (1 - vartheta) + theta ** 2 / vartheta
    deviation = 2.0 * math.sqrt(2.0 * kernel_bound * spread * math.log(2.0 / delta) / n)
    bias = 4.0 * math.sqrt(kernel_bound / n) * (
        theta / (n * vartheta * math.sqrt(vartheta))
        + (1 - theta) / (n * (1 - vartheta) * math.sqrt(1 - vartheta))
    )
    return deviation, bias


def sample_terms_multisource(n: int, theta: np.ndarray, vartheta: np.ndarray, delta: float,
                             kernel_bound: float) -> Tuple[float, float]:
    """2 sqrt(2K sum theta^2/vartheta log(2/delta)/n) and 2 sqrt(sum K theta/(vartheta n))."""
    deviation = 2.0 * math.sqrt(2.0 * kernel_bound * float(np.sum(theta ** 2 / vartheta))
                                * math.log(2.0 / delta) / n)
    bias = 2.0 * math.sqrt(float(np.sum(kernel_bound * theta / (vartheta * n))))
    return deviation, bias


def bound_semisupervised(S: LabeledDataset, T_labeled_fraction: LabeledDataset,
                         params: ConcentrationParams, theta: float, vartheta: Optional[float] = None,
                         T_unlabeled: Optional[UnlabeledDataset] = None,
                         pool: Optional[Sequence[Hypothesis]] = None,
                         kernel_bound: Optional[float] = None, backend: Backend = EXACT,
                         seed: Optional[int] = None,
                         target_structures: Optional[StructureDecomposition] = None,
                         loss: Loss = ZERO_ONE) -> BoundReport:
    """
    Bound on eps_T(h_hat) for the pool member minimizing the theta-weighted empirical risk.

    Args:
        S: labeled source sample, (1 - vartheta) n points
        T_labeled_fraction: labeled target sample, vartheta n points
        params: delta, zeta', k
        theta: weight of the target risk, in [0, 1]
        vartheta: target share of the labeled sample (defaults to the realized share)
        T_unlabeled: extra target points used for the cluster structures
        pool: candidate hypotheses (1-NN on source / target / both by default)
        kernel_bound: K, the kernel bound (HOTDA_KERNEL_BOUND)
    """
    if not 0 <= theta <= 1:
        raise InvalidInputError(f"theta must lie in [0, 1], got {theta}")
    if T_labeled_fraction.size == 0:
        raise InvalidInputError("the labeled target subset is empty")
    n = S.size + T_labeled_fraction.size
    vartheta = T_labeled_fraction.size / n if vartheta is None else vartheta
    if not 0 < vartheta < 1:
        raise InvalidInputError(f"vartheta must lie in (0, 1), got {vartheta}")
    kernel_bound = SETTINGS.kernel_bound if kernel_bound is None else kernel_bound

    pool = list(pool) if pool is not None else default_pool(S, T_labeled_fraction)
    if not pool:
        raise InvalidInputError("the hypothesis pool is empty")
    weighted = [weighted_risk(g, S, T_labeled_fraction, theta, loss) for g in pool]
    h_hat = pool[int(np.argmin(weighted))]
    target_risks = [_risk(g, T_labeled_fraction, loss) for g in pool]

    cluster_points = T_unlabeled if T_unlabeled is not None else T_labeled_fraction
    source = _source_structures(S, params.k)
    target = _target_structures(cluster_points, params.k, seed, target_structures)
    hw = _hw1(source.structures, target.structures, backend)
    lam, best = _lambda_with_argmin(S, T_labeled_fraction, pool, loss)
    concentration = concentration_term(params)
    deviation, bias = sample_terms_semisupervised(n, theta, vartheta, params.delta, kernel_bound)

    terms = {
        "target_optimal_risk": min(target_risks),
        "sample_deviation": deviation,
        "sample_bias": bias,
        "domain_block": 2.0 * (1.0 - theta) * (hw + lam + concentration),
    }
    diagnostics = {
        "selected_hypothesis": _name(h_hat),
        "weighted_risk": min(weighted),
        "hw_distance": hw,
        "lambda": lam,
        "lambda_argmin": _name(best),
        "concentration": concentration,
        "lambda_pool": [_name(g) for g in pool],
        "n": n,
    }
    return _finish("semi-supervised", terms,
                   _params(params, K=kernel_bound, theta=theta, vartheta=vartheta),
                   _provenance(seed, backend), diagnostics, _risk(h_hat, T_labeled_fraction, loss))


def _weighted_source_risk(h: Hypothesis, sources: SourceCollection, loss: Loss) -> float:
    return float(sum(w * _risk(h, S, loss) for w, S in zip(sources.weights, sources.sources)))


def _multisource_pool(sources: SourceCollection, T: Target,
                      pool: Optional[Sequence[Hypothesis]]) -> List[Hypothesis]:
    if pool is not None:
        return list(pool)
    return default_pool(sources.sources, T if isinstance(T, LabeledDataset) else None)


def _multisource_common(sources: SourceCollection, T: Target, params: ConcentrationParams,
                        pool: List[Hypothesis], kernel_bound: Optional[float], loss: Loss):
    kernel_bound = SETTINGS.kernel_bound if kernel_bound is None else kernel_bound
    n = sources.total_size
    deviation, bias = sample_terms_multisource(n, sources.weights, sources.fractions,
                                               params.delta, kernel_bound)
    terms = {"sample_deviation": deviation, "sample_bias": bias}
    weighted = [_weighted_source_risk(g, sources, loss) for g in pool]
    h_hat = pool[int(np.argmin(weighted))]
    diagnostics: Dict[str, Any] = {
        "selected_hypothesis": _name(h_hat),
        "weighted_risk": min(weighted),
        "lambda_pool": [_name(g) for g in pool],
        "n": n,
    }
    lhs = None
    if isinstance(T, LabeledDataset):
        terms["target_optimal_risk"] = min(_risk(g, T, loss) for g in pool)
        lhs = _risk(h_hat, T, loss)
    return terms, diagnostics, lhs, kernel_bound


def _multisource_params(params: ConcentrationParams, sources: SourceCollection, kernel_bound: float):
    return _params(params, K=kernel_bound, theta=sources.weights.tolist(),
                   vartheta=sources.fractions.tolist())


def bound_multisource_pairwise(sources: SourceCollection, T: Target, params: ConcentrationParams,
                               pool: Optional[Sequence[Hypothesis]] = None,
                               kernel_bound: Optional[float] = None, backend: Backend = EXACT,
                               seed: Optional[int] = None,
                               target_structures: Optional[StructureDecomposition] = None,
                               max_workers: Optional[int] = None,
                               loss: Loss = ZERO_ONE) -> BoundReport:
    """Multi-source bound with one HW_1(phi_Sj, phi_T) and one lambda_j per source."""
    pool = _multisource_pool(sources, T, pool)
    terms, diagnostics, lhs, kernel_bound = _multisource_common(sources, T, params, pool,
                                                                kernel_bound, loss)
    target = _target_structures(T, params.k, seed, target_structures)

    def source_distance(S: LabeledDataset) -> float:
        return _hw1(_source_structures(S, params.k).structures, target.structures, backend)

    max_workers = positive_count(max_workers, SETTINGS.max_workers, "max_workers")
    if max_workers > 1 and len(sources.sources) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            distances = list(executor.map(source_distance, sources.sources))
    else:
        distances = [source_distance(S) for S in sources.sources]

    lambdas = None
    if isinstance(T, LabeledDataset):
        lambdas = [estimate_lambda(S, T, pool, loss) for S in sources.sources]
    concentration = concentration_term(params)
    theta = sources.weights
    per_source = [d + (lambdas[j] if lambdas is not None else 0.0) + concentration
                  for j, d in enumerate(distances)]
    terms["domain_block"] = 2.0 * math.fsum(theta[j] * per_source[j] for j in range(len(per_source)))
    diagnostics.update({
        "hw_per_source": distances,
        "hw_distance": math.fsum(theta[j] * distances[j] for j in range(len(distances))),
        "lambda_per_source": lambdas,
        "lambda": None if lambdas is None else math.fsum(theta[j] * lambdas[j] for j in range(len(lambdas))),
        "concentration": concentration,
    })
    return _finish("multi-pairwise", terms, _multisource_params(params, sources, kernel_bound),
                   _provenance(seed, backend), diagnostics, lhs)


def mixture_structures(sources: SourceCollection, k: Optional[int] = None) -> MeasureOfMeasures:
    """Class structures of every source in one measure, source j's atoms weighted theta_j / k_j."""
    atoms = []
    weights = []
    for theta_j, S in zip(sources.weights, sources.sources):
        decomposition = classes_from_labels(S)
        if k is not None and decomposition.k != k:
            raise InvalidInputError(f"a source has {decomposition.k} classes but k={k}")
        atoms.extend(decomposition.structures.atoms)
        weights.extend([theta_j / decomposition.k] * decomposition.k)
    weights = np.asarray(weights, dtype=float)
    return MeasureOfMeasures(atoms, weights / weights.sum())


def bound_multisource_combined(sources: SourceCollection, T: Target, params: ConcentrationParams,
                               pool: Optional[Sequence[Hypothesis]] = None,
                               kernel_bound: Optional[float] = None, backend: Backend = EXACT,
                               seed: Optional[int] = None,
                               target_structures: Optional[StructureDecomposition] = None,
                               loss: Loss = ZERO_ONE) -> BoundReport:
    """Multi-source bound through HW_1 between the theta-mixture of sources and the target."""
    pool = _multisource_pool(sources, T, pool)
    terms, diagnostics, lhs, kernel_bound = _multisource_common(sources, T, params, pool,
                                                                kernel_bound, loss)
    target = _target_structures(T, params.k, seed, target_structures)
    hw = _hw1(mixture_structures(sources, params.k), target.structures, backend)

    lam = None
    if isinstance(T, LabeledDataset):
        # lambda_theta: joint error of the theta-mixture of sources and the target
        joint = [_weighted_source_risk(g, sources, loss) + _risk(g, T, loss) for g in pool]
        lam = min(joint)
    concentration = concentration_term(params)
    terms["domain_block"] = 2.0 * (hw + (lam or 0.0) + concentration)
    diagnostics.update({"hw_distance": hw, "lambda": lam, "concentration": concentration})
    return _finish("multi-combined", terms, _multisource_params(params, sources, kernel_bound),
                   _provenance(seed, backend), diagnostics, lhs)
