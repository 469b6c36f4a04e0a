"""Separation of duty: mutually exclusive roles, a generic rule over
junior/imply facts, a cardinality cap, and redundancy detection.

    python demos/separation_of_duty.py
"""

from rbacchain import Engine, Permission, SodRule
from rbacchain import errors
from rbacchain import ledger as lg

eng = Engine("org", ["bp1"])
eng.declare_role("clerk", "auditor", "manager", "staff")
eng.add_mutual_exclusion("clerk", "auditor")
eng.assign_role("ann", "clerk")
try:
    eng.assign_role("ann", "auditor")
except errors.SoDViolation as exc:
    print("clerk + auditor refused:", exc.details)

# a junior may not hold a right implying one their senior holds
rule = SodRule(
    "no-stronger-than-senior",
    (("junior", "?X", "?Y"), ("play", "?Y", "?R"), ("hold", "?R", "?Q"),
     ("right", "?X", "?P"), ("imply", "?P", "?Q")),
)
eng.execute(lg.ADD_SOD_RULE, "org", rule=rule.to_dict())
eng.execute(lg.ADD_FACT, "org", predicate="junior", x="alice", y="boss")
eng.execute(lg.ADD_FACT, "org", predicate="imply", x="p", y="q")
eng.assign_permission(Permission("q", "A+", "manager", "sign", "budget"))
eng.assign_permission(Permission("p", "A+", "staff", "sign", "budget"))
eng.assign_role("boss", "manager")
try:
    eng.assign_role("alice", "staff")
except errors.SoDViolation as exc:
    print("alice as staff refused:", exc.details)

eng.execute(lg.SET_CARDINALITY, "org", max_roles=1)
try:
    eng.assign_role("boss", "staff")
except errors.CardinalityExceeded as exc:
    print("second role for boss refused:", exc.code)

eng2 = Engine("org", ["bp1"])
eng2.declare_role("lead", "dev")
eng2.add_hierarchy_edge("lead", "dev")
eng2.assign_role("kim", "lead")
eng2.assign_role("kim", "dev")
eng2.assign_permission(Permission("a", "A+", "dev", "push", "repo"))
eng2.assign_permission(Permission("b", "A+", "lead", "push", "repo"))
print("redundancy:", eng2.detect_redundancy().to_dict())
