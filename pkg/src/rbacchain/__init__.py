"""RBAC authorization engine whose policy state lives on a simulated DPoS ledger."""

from .access import AccessRequest, AuditEvent, AuditLog, Decision, check_access
from .bench import Scenario, run_benchmark
from .constraints import (
    CardinalityRule,
    ContextCondition,
    MutualExclusionPair,
    SodRule,
    check_assignment,
    compile_mutual_exclusion,
    evaluate_context,
)
from .delegation import Delegation
from .engine import Engine, TxRecord
from .errors import RbacChainError
from .ledger import (
    Block,
    Ledger,
    ProducerSchedule,
    ResourceTariff,
    Transaction,
    verify_blocks,
)
from .metrics import MetricsWindow, TxTimeline, compute_bttt, compute_cet, compute_throughput
from .policy import Permission, PolicyState, RoleAssignment, detect_redundancy

__version__ = "0.1.0"

__all__ = [
    "AccessRequest",
    "AuditEvent",
    "AuditLog",
    "Block",
    "CardinalityRule",
    "ContextCondition",
    "Decision",
    "Delegation",
    "Engine",
    "Ledger",
    "MetricsWindow",
    "MutualExclusionPair",
    "Permission",
    "PolicyState",
    "ProducerSchedule",
    "RbacChainError",
    "ResourceTariff",
    "RoleAssignment",
    "Scenario",
    "SodRule",
    "Transaction",
    "TxRecord",
    "TxTimeline",
    "check_access",
    "check_assignment",
    "compile_mutual_exclusion",
    "compute_bttt",
    "compute_cet",
    "compute_throughput",
    "detect_redundancy",
    "evaluate_context",
    "run_benchmark",
    "verify_blocks",
]
