"""A small hospital policy: role assignment, context-bound permissions,
emergency exceptions and obligations, then the audit trail.

    python demos/hospital_policy.py
"""

import datetime as dt

from rbacchain import AccessRequest, ContextCondition, Engine, Permission
from rbacchain import errors

eng = Engine("hospital", ["bp1", "bp2"])
eng.declare_role("doctor", "nurse", "student", "staff")
eng.add_hierarchy_edge("doctor", "nurse")

office = [
    ContextCondition("weekday", "in-set", frozenset({"Mon", "Tue", "Wed", "Thu", "Fri"})),
    ContextCondition("time", "in-range", (dt.time(8), dt.time(18))),
]
rows = [
    Permission("st1", "A+", "student", "read", "file7"),
    Permission("n1", "A+", "nurse", "read", "chart", tuple(office)),
    Permission("dc1", "O+", "doctor", "read", "file3"),
    Permission("e1", "A-", "staff", "open", "pharmacy", (), "emergency"),
]
for p in rows:
    eng.assign_permission(p)
for subject, role in [("bob", "student"), ("nina", "nurse"), ("dana", "doctor"), ("sam", "staff")]:
    eng.assign_role(subject, role)

tuesday = {"weekday": "Tue", "time": dt.time(10, 15)}
sunday = {"weekday": "Sun", "time": dt.time(3, 0)}
asks = [
    AccessRequest("bob", "read", "file7"),
    AccessRequest("bob", "write", "file7"),
    AccessRequest("nina", "read", "chart", context=tuesday),
    AccessRequest("nina", "read", "chart", context=sunday),
    AccessRequest("dana", "read", "chart", context=tuesday),  # inherited from nurse
    AccessRequest("dana", "read", "file3"),
    AccessRequest("sam", "open", "pharmacy"),
    AccessRequest("sam", "open", "pharmacy", context={"emergency": True}),
]
for req in asks:
    d = eng.check_access(req)
    print(f"{req.subject_id:>5} {req.operation} {req.object:<9} -> {d.reason:<22} via {d.matched_permission}"
          + (f"  obligations {list(d.obligations)}" if d.obligations else ""))

# only the issuer may touch the policy
eng.ledger.register_account("mallory", stake=100)
try:
    eng.assign_role("mallory", "doctor", sender="mallory")
except errors.NotIssuer as exc:
    print("rejected:", exc)

print("\naudit trail for nina:")
for ev in eng.audit_log(subject="nina"):
    print(f"  block {ev.block_height} #{ev.tx_index} {ev.event_kind}")
