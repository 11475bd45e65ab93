"""Truthful-in-expectation mechanism for combinatorial public projects.

Players report matroid-rank-sum valuations over ``m`` projects; the
mechanism picks at most ``k`` of them by maximising expected welfare over
a convex rounding scheme and charges VCG payments.
"""
from .exceptions import CapacityError, ContractError, CPPError, InputError, NumericalError
from .instance import Instance, instance_from_json, load_instance
from .lottery import (
    ExactDistribution,
    FractionalSolution,
    exact_distribution,
    exact_distribution_plus,
    inclusion_probability,
    round_k,
    round_k_plus,
)
from .mechanism import (
    CPPMechanism,
    MechanismOutcome,
    compute_payments,
    run_composed,
    run_midr,
    sample_adaptive,
)
from .solver import ConvexProgram, SolveReport, estimate_solution, solve
from .valuations import (
    CoverageValuation,
    GraphicMatroid,
    LotterySpec,
    MrsValuation,
    PartitionMatroid,
    UniformMatroid,
    lottery_value,
    lottery_value_mc,
    rank,
    value,
    zero_valuation,
)

__version__ = "0.1.0"

__all__ = [
    "CPPError", "InputError", "CapacityError", "NumericalError", "ContractError",
    "Instance", "instance_from_json", "load_instance",
    "ExactDistribution", "FractionalSolution", "exact_distribution", "exact_distribution_plus",
    "inclusion_probability", "round_k", "round_k_plus",
    "CPPMechanism", "MechanismOutcome", "compute_payments", "run_composed", "run_midr",
    "sample_adaptive",
    "ConvexProgram", "SolveReport", "estimate_solution", "solve",
    "CoverageValuation", "GraphicMatroid", "LotterySpec", "MrsValuation", "PartitionMatroid",
    "UniformMatroid", "lottery_value", "lottery_value_mc", "rank", "value", "zero_valuation",
]
