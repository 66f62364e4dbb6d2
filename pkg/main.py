#!/usr/bin/env python3
"""
HOT-DA Command Line
Distance queries, the adaptation pipeline, bound reports and synthetic scenarios
"""

import argparse
import logging
import os
import sys
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from bounds import (BOUND_KINDS, BoundReport, ConcentrationParams, SourceCollection,
                    bound_corollary, bound_multisource_combined, bound_multisource_pairwise,
                    bound_semisupervised, bound_unsupervised)
from config import SETTINGS
from datagen import generate, separated_scenario
from errors import ConfigError, HotdaError, InvalidInputError, SolverError
from hierarchical import INNER_CONVENTIONS, hierarchical_wasserstein
from hotda import ASSIGNMENTS, AdaptConfig, NearestNeighborClassifier, adapt, adaptation_accuracy, class_means
from storage import (RunStorage, load_dataset_csv, load_labeled_csv, load_measure_csv,
                     load_unlabeled_csv)
from structures import (WEIGHTINGS, LabeledDataset, StructureDecomposition, classes_from_labels,
                        clusters_kmeans)
from wasserstein import BACKEND_KINDS, Backend, wasserstein

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3

ZETA_PRIME_MISSING = (
    "--zeta-prime is required: zeta' is the constant of the transport-entropy "
    "(Talagrand T1) inequality behind the concentration term, and it is not "
    "determined by the data. Supply a value for your source/target laws."
)


class RunConfig(BaseModel):
    """Validated parameters of one invocation"""
    command: Literal["ot", "hw", "adapt", "bound", "gen"]
    inputs: List[str] = Field(default_factory=list)
    target: Optional[str] = None
    target_labeled: Optional[str] = None
    k: Optional[int] = Field(default=None, ge=1)
    epsilon: Optional[float] = Field(default=None, gt=0)
    epsilon_prime: Optional[float] = Field(default=None, gt=0)
    p: Optional[float] = Field(default=None, ge=1)
    backend: Literal["auto", "exact", "sinkhorn"] = "auto"
    mode: Optional[str] = None
    delta: float = Field(default=0.05, gt=0, lt=1)
    zeta_prime: Optional[float] = Field(default=None, gt=0)
    K: float = Field(default_factory=lambda: SETTINGS.kernel_bound, gt=0)
    theta: Optional[List[float]] = None
    vartheta: Optional[List[float]] = None
    seed: int = Field(default_factory=lambda: SETTINGS.seed)
    output: str = Field(default_factory=lambda: SETTINGS.output_dir)

    def order(self, default: float) -> float:
        """--p when given; distances default to 1, the adapt matching to 2."""
        return self.p if self.p is not None else default

    @field_validator("theta")
    @classmethod
    def _theta_range(cls, value):
        if value is not None and any(not 0 <= t <= 1 for t in value):
            raise ValueError("theta values must lie in [0, 1]")
        return value

    @field_validator("vartheta")
    @classmethod
    def _vartheta_range(cls, value):
        if value is not None and any(not 0 < v < 1 for v in value):
            raise ValueError("vartheta values must lie in (0, 1)")
        return value

    @model_validator(mode="after")
    def _bound_requirements(self):
        if self.command != "bound":
            return self
        if self.mode not in BOUND_KINDS:
            raise ValueError(f"--mode must be one of {BOUND_KINDS}")
        if self.zeta_prime is None:
            raise ValueError(ZETA_PRIME_MISSING)
        if self.mode.startswith("multi") and self.theta is not None:
            if len(self.theta) != len(self.inputs):
                raise ValueError(f"{len(self.inputs)} sources need {len(self.inputs)} theta values")
            if abs(sum(self.theta) - 1.0) > 1e-9:
                raise ValueError("multi-source theta must sum to 1")
        if self.mode == "semi-supervised" and (self.theta is None or len(self.theta) != 1):
            raise ValueError("semi-supervised mode needs exactly one --theta value")
        return self


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _status(message: str):
    print(message, file=sys.stderr)


def _epsilon(value: str) -> Optional[float]:
    if value == "auto":
        return None
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number or 'auto', got {value!r}")


def _run_config(args: argparse.Namespace) -> RunConfig:
    fields = {name: value for name, value in vars(args).items()
              if name in RunConfig.model_fields and value is not None}
    return RunConfig(**fields)


def _backend(config: RunConfig, with_epsilon: bool = True) -> Backend:
    return Backend(config.backend, epsilon=config.epsilon if with_epsilon else None)


def _decompose(data, k: Optional[int], config: RunConfig) -> StructureDecomposition:
    if isinstance(data, LabeledDataset):
        decomposition = classes_from_labels(data)
        if k is not None and decomposition.k != k:
            raise InvalidInputError(f"--k {k} but the labeled file has {decomposition.k} classes")
        return decomposition
    if k is None:
        raise ConfigError("--k is required when a dataset has no label column")
    return clusters_kmeans(data, k, seed=config.seed)


def cmd_ot(args: argparse.Namespace) -> int:
    """W_p between two measure files; optionally writes the plan."""
    config = _run_config(args)
    if len(config.inputs) != 2:
        raise ConfigError("ot needs exactly two measure files")
    _status(f"📥 Loading measures {config.inputs[0]} and {config.inputs[1]}")
    mu = load_measure_csv(config.inputs[0])
    nu = load_measure_csv(config.inputs[1])
    p = config.order(1.0)
    result = wasserstein(mu, nu, p, _backend(config))
    _status(f"✅ W_{p:g} = {result.distance:.6g} ({result.backend})")
    print(repr(result.distance))
    if args.plan_out:
        directory, name = os.path.split(args.plan_out)
        path = RunStorage(directory or ".").save_plan(name, result.plan.coupling)
        _status(f"📁 Saved transport plan: {path}")
    return EXIT_OK


def cmd_hw(args: argparse.Namespace) -> int:
    """HW_p between two datasets decomposed by labels, or by k-means when unlabeled."""
    config = _run_config(args)
    if len(config.inputs) != 2:
        raise ConfigError("hw needs exactly two dataset files")
    first = load_dataset_csv(config.inputs[0])
    second = load_dataset_csv(config.inputs[1])
    k = config.k
    if k is None and isinstance(first, LabeledDataset):
        k = len(first.class_order())
    phi = _decompose(first, k, config)
    psi = _decompose(second, k, config)
    p = config.order(1.0)
    result = hierarchical_wasserstein(phi.structures, psi.structures, p, _backend(config),
                                      inner_convention=args.inner_convention)
    _status(f"✅ HW_{p:g} = {result.distance:.6g} over {phi.k}x{psi.k} structures")
    print(repr(result.distance))
    storage = RunStorage(config.output)
    path = storage.save_json("hw.json", {
        "distance": result.distance,
        "order": result.order,
        "convention": result.convention,
        "inner_cost": result.inner_cost,
        "outer_plan": result.outer_plan.coupling,
    })
    _status(f"📁 Saved {path}")
    return EXIT_OK


def cmd_adapt(args: argparse.Namespace) -> int:
    """Run the pipeline and write transported source, matching and target predictions."""
    config = _run_config(args)
    if len(config.inputs) != 2:
        raise ConfigError("adapt needs a labeled source file and a target file")
    _status("🔬 Starting HOT-DA adaptation")
    S = load_labeled_csv(config.inputs[0])
    T = load_unlabeled_csv(config.inputs[1])
    _status(f"   📋 Source: {S.size} points, {len(S.class_order())} classes; target: {T.size} points")

    init_centers = class_means(S) if args.init == "class-means" else None
    adapt_config = AdaptConfig(
        k=config.k, epsilon=config.epsilon, epsilon_prime=config.epsilon_prime,
        p=config.order(2.0),
        seed=config.seed, restarts=args.restarts, assignment=args.assignment,
        weighting=args.weighting, init_centers=init_centers,
        backend=_backend(config, with_epsilon=False),
    )
    result = adapt(S, T, adapt_config)
    if result.matching.collisions:
        _status(f"⚠️ Matching is not one-to-one at clusters {list(result.matching.collisions)}")
    _status(f"✅ Matched classes to clusters: sigma = {result.matching.sigma.tolist()}")

    predictions = result.classifier()(T.points)
    matching = result.matching.as_dict()
    matching.update({
        "k": result.source_structures.k,
        "classes": list(result.source_structures.names),
        "cluster_inertia": result.target_structures.inertia,
    })
    if config.target_labeled:
        pre, post = adaptation_accuracy(S, result, load_labeled_csv(config.target_labeled))
        matching["accuracy"] = {"pre_adaptation": pre, "post_adaptation": post}
        _status(f"📊 1-NN target accuracy: {pre:.3f} before, {post:.3f} after adaptation")

    storage = RunStorage(config.output)
    storage.save_dataset("transported.csv", result.transported.points, result.transported.labels)
    storage.save_json("matching.json", matching)
    storage.save_dataset("predictions.csv", T.points, predictions)
    _status(f"📁 Saved transported.csv, matching.json and predictions.csv in {storage.base_path}")
    return EXIT_OK


def _bound_report(config: RunConfig) -> BoundReport:
    mode = config.mode
    if mode in ("multi-pairwise", "multi-combined"):
        sources = [load_labeled_csv(path) for path in config.inputs]
        if not sources:
            raise ConfigError("multi-source modes need at least one --source")
        weights = config.theta or [1.0 / len(sources)] * len(sources)
        if config.vartheta is not None:
            collection = SourceCollection(tuple(sources), np.array(config.vartheta), np.array(weights))
        else:
            collection = SourceCollection.from_sizes(sources, np.array(weights))
        if config.target is None:
            raise ConfigError(f"{mode} needs --target")
        T = load_dataset_csv(config.target)
        k = config.k or len(sources[0].class_order())
        params = ConcentrationParams(config.delta, config.zeta_prime, k)
        evaluate = bound_multisource_pairwise if mode == "multi-pairwise" else bound_multisource_combined
        return evaluate(collection, T, params, kernel_bound=config.K, backend=_backend(config),
                        seed=config.seed)

    if len(config.inputs) != 1:
        raise ConfigError(f"{mode} needs exactly one --source")
    S = load_labeled_csv(config.inputs[0])
    k = config.k or len(S.class_order())
    params = ConcentrationParams(config.delta, config.zeta_prime, k)
    if mode == "semi-supervised":
        if config.target_labeled is None:
            raise ConfigError("semi-supervised mode needs --target-labeled")
        T_labeled = load_labeled_csv(config.target_labeled)
        T_unlabeled = load_unlabeled_csv(config.target) if config.target else None
        vartheta = config.vartheta[0] if config.vartheta else None
        return bound_semisupervised(S, T_labeled, params, config.theta[0], vartheta, T_unlabeled,
                                    kernel_bound=config.K, backend=_backend(config), seed=config.seed)

    if config.target is None:
        raise ConfigError(f"{mode} needs --target")
    T = load_dataset_csv(config.target)
    h = NearestNeighborClassifier(S, name="1nn-source")
    evaluate = bound_unsupervised if mode == "unsupervised" else bound_corollary
    return evaluate(S, T, h, params, backend=_backend(config), seed=config.seed)


def cmd_bound(args: argparse.Namespace) -> int:
    """Evaluate one bound and write its report as JSON."""
    try:
        config = _run_config(args)
    except ValidationError as e:
        if any(ZETA_PRIME_MISSING in str(error.get("msg", "")) for error in e.errors()):
            raise ConfigError(ZETA_PRIME_MISSING) from e
        raise
    _status(f"📐 Evaluating the {config.mode} bound")
    report = _bound_report(config)
    if not args.diagnostic:
        report = report.model_copy(update={"lhs_target_risk": None, "satisfied": None})
    elif report.satisfied is not None:
        _status(f"📊 Target risk {report.lhs_target_risk:.4f} vs bound {report.rhs_total:.4f}")
    payload = report.model_dump()
    for key in ("lhs_target_risk", "satisfied"):
        if payload[key] is None:
            del payload[key]
    if not args.diagnostic:
        del payload["diagnostics"]
    path = RunStorage(config.output).save_json(f"bound_{config.mode}.json", payload)
    print(repr(report.rhs_total))
    _status(f"📁 Saved bound report: {path}")
    return EXIT_OK


def cmd_gen(args: argparse.Namespace) -> int:
    """Write source, target and labeled-target CSVs for a separated Gaussian scenario."""
    config = _run_config(args)
    if config.k is None:
        raise ConfigError("gen needs --k")
    try:
        spec = separated_scenario(config.k, args.d, args.n_source, args.n_target, args.separation,
                                  args.spread, args.shift, args.permutation, config.seed)
    except InvalidInputError as e:
        raise ConfigError(str(e)) from e
    S, T = generate(spec)
    storage = RunStorage(config.output)
    storage.save_dataset("source.csv", S.points, S.labels)
    storage.save_dataset("target.csv", T.points)
    storage.save_dataset("target_labeled.csv", T.points, T.labels)
    _status(f"📁 Generated scenario k={spec.k}, d={spec.d} in {storage.base_path}")
    return EXIT_OK


COMMANDS = {
    "ot": cmd_ot,
    "hw": cmd_hw,
    "adapt": cmd_adapt,
    "bound": cmd_bound,
    "gen": cmd_gen,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--verbose", action="store_true", help="debug logging from the library")
    common.add_argument("--backend", choices=BACKEND_KINDS)
    common.add_argument("--epsilon", type=_epsilon, help="regularization, a number or 'auto'")
    common.add_argument("--p", type=float, help="Wasserstein order (default 1; adapt matches on 2)")
    common.add_argument("--k", type=int)
    common.add_argument("--out", dest="output", help="output directory")

    parser = _Parser(prog="hotda", description="Hierarchical optimal transport for domain adaptation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ot_parser = sub.add_parser("ot", parents=[common], help="Wasserstein distance between two measures")
    ot_parser.add_argument("inputs", nargs=2, metavar="MEASURE_CSV")
    ot_parser.add_argument("--plan-out", help="write the coupling as (row, col, mass) CSV")

    hw_parser = sub.add_parser("hw", parents=[common], help="hierarchical Wasserstein distance")
    hw_parser.add_argument("inputs", nargs=2, metavar="DATASET_CSV")
    hw_parser.add_argument("--inner-convention", choices=INNER_CONVENTIONS, default="power")

    adapt_parser = sub.add_parser("adapt", parents=[common], help="run the HOT-DA pipeline")
    adapt_parser.add_argument("inputs", nargs=2, metavar=("SOURCE_CSV", "TARGET_CSV"))
    adapt_parser.add_argument("--epsilon-prime", type=_epsilon)
    adapt_parser.add_argument("--assignment", choices=ASSIGNMENTS, default="argmax")
    adapt_parser.add_argument("--weighting", choices=WEIGHTINGS, default="uniform")
    adapt_parser.add_argument("--restarts", type=int)
    adapt_parser.add_argument("--init", choices=("kmeans++", "class-means"), default="kmeans++")
    adapt_parser.add_argument("--target-labeled", help="labeled target CSV for accuracy diagnostics")

    bound_parser = sub.add_parser("bound", parents=[common], help="evaluate a generalization bound")
    bound_parser.add_argument("--mode", choices=BOUND_KINDS, required=True)
    bound_parser.add_argument("--source", dest="inputs", action="append", default=[])
    bound_parser.add_argument("--target")
    bound_parser.add_argument("--target-labeled")
    bound_parser.add_argument("--delta", type=float)
    bound_parser.add_argument("--zeta-prime", type=float)
    bound_parser.add_argument("--K", type=float, help="kernel bound")
    bound_parser.add_argument("--theta", type=float, nargs="+")
    bound_parser.add_argument("--vartheta", type=float, nargs="+")
    bound_parser.add_argument("--diagnostic", action="store_true",
                              help="record the target risk and whether the bound held")

    gen_parser = sub.add_parser("gen", parents=[common], help="write a synthetic scenario")
    gen_parser.add_argument("--d", type=int, default=2)
    gen_parser.add_argument("--n-source", type=int, default=200)
    gen_parser.add_argument("--n-target", type=int, default=200)
    gen_parser.add_argument("--separation", type=float, default=10.0)
    gen_parser.add_argument("--spread", type=float, default=1.0)
    gen_parser.add_argument("--shift", type=float, nargs="+")
    gen_parser.add_argument("--permutation", type=int, nargs="+")
    return parser


def configure_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else SETTINGS.log_level,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Parse, dispatch, and map errors to exit codes."""
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.verbose)
        return COMMANDS[args.command](args)
    except (ConfigError, ValidationError) as e:
        _status(f"❌ Usage error: {e}")
        return EXIT_USAGE
    except (InvalidInputError, OSError) as e:
        _status(f"❌ Data error: {e}")
        return EXIT_DATA
    except SolverError as e:
        _status(f"❌ Numerical failure: {e}")
        return EXIT_SOLVER
    except HotdaError as e:
        _status(f"❌ Error: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
