"""
Command-line interface

    python -m stochmap run <scenario.json> [-o out.jsonl] [--confidence p] [--degrees]
    python -m stochmap query <snapshots.jsonl> <i> <j> [--step k]
    python -m stochmap validate [--sigma-deg s] [--samples n] [--seed k] [--bound frac] [--second-order]

Exit codes: 0 success, 1 invalid input or unknown entity, 2 numerical
failure during a run, 3 validation bound violated.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import orjson
from pydantic import ValidationError

from .config import Config
from .exceptions import NonPositiveDefinite, StepFailed, StochasticMapError, UnknownEntity
from .propagate import confidence_ellipse
from .scenario import default_chain, monte_carlo_validate, run
from .schema import load_scenario
from .serialization import map_from_dict, read_json_lines, write_json_lines

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2
EXIT_BOUND = 3


def _format_validation_error(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        path = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"   {path}: {item['msg']}")
    return "\n".join(lines)


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"probability must be in (0, 1), got {value}")
    return value


def cmd_run(args: argparse.Namespace) -> int:
    """Run a scenario file and write its snapshot stream."""
    try:
        scenario = load_scenario(args.scenario, degrees=args.degrees)
    except ValidationError as e:
        print(f"❌ Invalid scenario {args.scenario}:\n{_format_validation_error(e)}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, orjson.JSONDecodeError) as e:
        print(f"❌ Cannot read scenario {args.scenario}: {e}", file=sys.stderr)
        return EXIT_INPUT

    print(
        f"🎲 Scenario {args.scenario}: {Config.MODES[scenario.mode]['description']}, "
        f"{len(scenario.steps)} steps, seed {scenario.seed}"
    )

    try:
        snapshots = run(scenario, confidence=args.confidence)
    except StepFailed as e:
        logger.error(e.message)
        print(f"❌ {e.message}", file=sys.stderr)
        return EXIT_NUMERICAL
    except StochasticMapError as e:
        logger.error(f"Scenario failed: {e.message}")
        print(f"❌ Scenario failed: {e.message}", file=sys.stderr)
        return EXIT_INPUT

    out = Path(args.output) if args.output else Path(args.scenario).with_suffix(".jsonl")
    write_json_lines(out, (snapshot.to_dict() for snapshot in snapshots))
    print(f"✅ {len(snapshots)} snapshots written to {out}")
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    """Print the relation between two entities of a recorded snapshot."""
    try:
        documents = read_json_lines(args.snapshots)
    except (OSError, orjson.JSONDecodeError) as e:
        print(f"❌ Cannot read snapshots {args.snapshots}: {e}", file=sys.stderr)
        return EXIT_INPUT
    if not documents:
        print(f"❌ {args.snapshots} holds no snapshots", file=sys.stderr)
        return EXIT_INPUT

    if args.step is None:
        document = documents[-1]
    else:
        matches = [d for d in documents if d.get("step") == args.step]
        if not matches:
            print(f"❌ No snapshot for step {args.step}", file=sys.stderr)
            return EXIT_INPUT
        document = matches[0]

    try:
        m = map_from_dict(document["map"])
        relation = m.extract_relation(args.i, args.j)
    except UnknownEntity as e:
        print(f"❌ {e.message}", file=sys.stderr)
        return EXIT_INPUT
    except StochasticMapError as e:
        print(f"❌ Query failed: {e.message}", file=sys.stderr)
        return EXIT_NUMERICAL

    np.set_printoptions(precision=6, suppress=True)
    print(f"📍 {args.j} relative to {args.i} (step {document.get('step')})")
    print(f"   mean: {relation.mean}")
    print("   covariance:")
    for row in relation.cov:
        print(f"      {row}")
    try:
        ellipse = confidence_ellipse(relation, Config.DEFAULT_CONFIDENCE)
        print(
            f"   {Config.DEFAULT_CONFIDENCE:.1%} ellipse: semi-axes {ellipse.semi_axes}, "
            f"orientation {ellipse.orientation:.6f} rad"
        )
    except NonPositiveDefinite:
        print("   ellipse: degenerate (position block not positive definite)")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    """Monte Carlo check of first-order propagation through one compounding."""
    chain = default_chain(args.sigma_deg, args.translation_sigma)
    try:
        report = monte_carlo_validate(chain, args.samples, args.seed, second_order=args.second_order)
    except StochasticMapError as e:
        print(f"❌ Validation failed: {e.message}", file=sys.stderr)
        return EXIT_INPUT

    print(f"🎲 Monte Carlo validation: σφ = {args.sigma_deg}°, σt = {args.translation_sigma} m, n = {args.samples}")
    print(f"   first-order mean:   {report.first_order.mean}")
    print(f"   Monte Carlo mean:   {report.monte_carlo.mean}")
    print(f"   mean errors:        {report.mean_errors}")
    print(f"   variance errors:    {report.variance_errors}")
    if report.second_order is not None:
        print(f"   second-order mean errors:     {report.second_order_mean_errors}")
        print(f"   second-order variance errors: {report.second_order_variance_errors}")

    if report.within(args.bound):
        print(f"✅ Max relative error {report.max_error:.4%} within {args.bound:.2%}")
        return EXIT_OK
    print(f"⚠️  Max relative error {report.max_error:.4%} exceeds {args.bound:.2%}")
    return EXIT_BOUND


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochmap", description="Stochastic map scenarios and validation")
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="Run a scenario and write snapshots as JSON Lines")
    run_parser.add_argument("scenario")
    run_parser.add_argument("-o", "--output")
    run_parser.add_argument("--confidence", type=_probability, default=Config.DEFAULT_CONFIDENCE)
    run_parser.add_argument("--degrees", action="store_true", help="Angles in the scenario are in degrees")
    run_parser.set_defaults(handler=cmd_run)

    query_parser = sub.add_parser("query", help="Relation between two entities of a snapshot")
    query_parser.add_argument("snapshots")
    query_parser.add_argument("i")
    query_parser.add_argument("j")
    query_parser.add_argument("--step", type=int)
    query_parser.set_defaults(handler=cmd_query)

    defaults = Config.VALIDATION_DEFAULTS
    validate_parser = sub.add_parser("validate", help="Monte Carlo check of first-order propagation")
    validate_parser.add_argument("--sigma-deg", type=float, default=defaults["sigma_deg"])
    validate_parser.add_argument("--translation-sigma", type=float, default=defaults["translation_sigma"])
    validate_parser.add_argument("--samples", type=int, default=defaults["samples"])
    validate_parser.add_argument("--seed", type=int, default=defaults["seed"])
    validate_parser.add_argument("--bound", type=float, default=defaults["bound"])
    validate_parser.add_argument("--second-order", action="store_true")
    validate_parser.set_defaults(handler=cmd_validate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, Config.LOG_LEVEL.upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    return args.handler(args)
