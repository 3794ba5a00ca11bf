"""Path-independent ancilla-assisted gates: simulation and certification.

The submodules are the primary interface; the most used names are
re-exported here.
"""
from .dyson import (conditional_channel, dyson_terms, evolve_master, no_jump_propagator,
                    path_operator)
from .model import ModelError, PiControlSpec, PiPair, SpecError, SystemModel, build_model
from .picert import certify, check_holonomy, detect_nas, factorize_no_jump, pi_order
from .qec import (build_pi_et_unitary, commutator_condition, error_timing_equivalence,
                  kl_diagonalize)
from .snap import (SnapConfig, binomial_code, build_snap_scenario, exact_pair_propagator,
                   gate_metrics, preset, snap_targets)

__version__ = "0.1.0"

__all__ = [
    "ModelError", "SpecError", "SystemModel", "PiPair", "PiControlSpec", "build_model",
    "evolve_master", "no_jump_propagator", "dyson_terms", "path_operator",
    "conditional_channel",
    "factorize_no_jump", "check_holonomy", "detect_nas", "pi_order", "certify",
    "SnapConfig", "build_snap_scenario", "preset", "binomial_code", "snap_targets",
    "gate_metrics", "exact_pair_propagator",
    "kl_diagonalize", "commutator_condition", "build_pi_et_unitary", "error_timing_equivalence",
]
