"""Delegation chains with a level budget, transfer versus grant, expiry,
weak and strong revocation, and cascading removal.

    python demos/delegation_and_revocation.py
"""

from rbacchain import AccessRequest, Engine, Permission
from rbacchain import errors
from rbacchain import ledger as lg

eng = Engine("org", ["bp1"])
people = ["alice", "bob", "carol", "dave", "erin", "frank", "gina", "hal"]
for p in people:
    eng.ledger.register_account(p, stake=500)
eng.declare_role("R", "J")
eng.add_hierarchy_edge("R", "J")
eng.assign_permission(Permission("r1", "A+", "R", "approve", "budget"))
eng.assign_permission(Permission("j1", "A+", "J", "read", "budget"))
eng.assign_role("alice", "R")


def can(who, op="approve"):
    return eng.query(AccessRequest(who, op, "budget", eng.now_ms)).allowed


print("-- five levels of re-delegation")
root = d = eng.delegate("alice", "bob", "R", multi_step=True, levels=5)
print(f"alice -> bob, remaining {d.remaining_levels}")
for a, b in zip(people[1:], people[2:]):
    try:
        d = eng.delegate(a, b, "R")
        print(f"{a} -> {b}, remaining {d.remaining_levels}")
    except errors.SingleStepExhausted as exc:
        print(f"{a} -> {b} refused: {exc.code}")
        break
removed = eng.execute(lg.REMOVE_RIGHT_TRANSFER, "alice", delegation=root.delegation_id)
print(f"removing the root takes the whole chain: {len(removed)} records")

print("\n-- transfer suspends the delegator")
t = eng.delegate("alice", "carol", "R", mode="transfer")
print("carol can approve:", can("carol"), "| alice can approve:", can("alice"))
eng.execute(lg.REMOVE_RIGHT_TRANSFER, "alice", delegation=t.delegation_id)
print("after removal alice can approve:", can("alice"))

print("\n-- expiry is swept at block boundaries")
eng.delegate("alice", "dave", "J", expiry_ms=eng.now_ms + 1500)
for _ in range(4):
    print(f"t={eng.now_ms} ms dave can read: {can('dave', 'read')}")
    eng.produce_block()

print("\n-- weak and strong revocation")
eng.assign_role("erin", "R")
eng.assign_role("erin", "J")
eng.execute(lg.ROLE_REVOKE, "org", subject="erin", role="J", strength="weak")
print("weak revoke of J leaves", sorted(eng.state.explicit_roles("erin")))
eng.assign_role("erin", "J")
eng.execute(lg.ROLE_REVOKE, "org", subject="erin", role="J", strength="strong")
print("strong revoke of J leaves", sorted(eng.state.explicit_roles("erin")))

print("\n-- cascading revocation")
eng.delegate("alice", "bob", "R")
eng.delegate("alice", "bob", "J")
before = len(eng.state.delegations)
eng.execute(lg.ROLE_REVOKE, "org", subject="alice", role="R", strength="weak")
print(f"delegations {before} -> {len(eng.state.delegations)}; bob can read: {can('bob', 'read')}")
