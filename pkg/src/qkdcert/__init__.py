"""Numerical verification of certification-weighted security bounds.

The package checks, end to end and with explicit tolerances, that approving
a batch of imperfect devices through parameter certification and then
deploying them over a sequence of key-generation instances keeps the final
output within the claimed distance of an ideal key — and exhibits the
boundary cases where relaxed approval rules or uncharacterized devices
break that guarantee.
"""

__version__ = "0.1.0"

from .errors import (
    ChannelError,
    ConfigError,
    ConsistencyError,
    DimensionCapError,
    LayoutError,
    QkdcertError,
    StateError,
)
from .qstate import (
    DEFAULT_DIM_CAP,
    DensityOperator,
    KrausChannel,
    Layout,
    apply,
    partial_trace,
    trace_distance,
)
from .cq import ClassicalState, StochasticChannel, apply_classical, tv_distance
from .protocol import InstanceChannel, KeyLayout, audit_epsilon, exact_classical_epsilon
from .devices import AttackSpec, DeviceModel, ParameterVector, RobustSet, instance_channel
from .certify import CertificationPlan, ParameterPlan, approval_probability, certify
from .compose import (
    AdaptiveScenario,
    BoundReport,
    InterInstanceSpec,
    Scenario,
    build_counterexample,
    run_sequence,
    verify_adaptive_bound,
    verify_main_bound,
)
from .fixtures import FIXTURES, build_from_config, fixture, load_config
from .suite import run_suite

__all__ = [
    "__version__",
    "QkdcertError",
    "LayoutError",
    "StateError",
    "ChannelError",
    "DimensionCapError",
    "ConsistencyError",
    "ConfigError",
    "DEFAULT_DIM_CAP",
    "Layout",
    "DensityOperator",
    "KrausChannel",
    "apply",
    "partial_trace",
    "trace_distance",
    "ClassicalState",
    "StochasticChannel",
    "apply_classical",
    "tv_distance",
    "KeyLayout",
    "InstanceChannel",
    "audit_epsilon",
    "exact_classical_epsilon",
    "DeviceModel",
    "AttackSpec",
    "ParameterVector",
    "RobustSet",
    "instance_channel",
    "CertificationPlan",
    "ParameterPlan",
    "certify",
    "approval_probability",
    "Scenario",
    "AdaptiveScenario",
    "InterInstanceSpec",
    "BoundReport",
    "run_sequence",
    "verify_main_bound",
    "verify_adaptive_bound",
    "build_counterexample",
    "FIXTURES",
    "fixture",
    "load_config",
    "build_from_config",
    "run_suite",
]
