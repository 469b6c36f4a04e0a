"""Right-transfer (delegation) lifecycle.

Delegations are stored on :class:`~rbacchain.policy.PolicyState`; the
functions here create them, remove them with all their re-delegations, and
sweep expired ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Iterable, Mapping

from . import errors

if TYPE_CHECKING:
    from .policy import PolicyState

GRANT = "grant"
TRANSFER = "transfer"
AUTHORIZATION_MODES = ("A+", "A-")


@dataclass(frozen=True)
class Delegation:
    delegation_id: str
    delegator: str
    delegate: str
    role: str
    expiry_ms: int | None = None
    mode: str = GRANT
    multi_step: bool = False
    levels: int = 1
    remaining_levels: int = 1
    parent: str | None = None
    start_ms: int | None = None
    created_at: int = 0

    def is_live(self, at_ms: int) -> bool:
        if self.start_ms is not None and at_ms < self.start_ms:
            return False
        return self.expiry_ms is None or at_ms < self.expiry_ms

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.delegation_id,
            "delegator": self.delegator,
            "delegate": self.delegate,
            "role": self.role,
            "expiry_ms": self.expiry_ms,
            "start_ms": self.start_ms,
            "mode": self.mode,
            "multiStepDelegatable": self.multi_step,
            "levelsofDelegation": self.levels,
            "remainingLevels": self.remaining_levels,
            "parent": self.parent,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Delegation":
        return cls(
            delegation_id=data["id"],
            delegator=data["delegator"],
            delegate=data["delegate"],
            role=data["role"],
            expiry_ms=data.get("expiry_ms"),
            mode=data.get("mode", GRANT),
            multi_step=data.get("multiStepDelegatable", False),
            levels=data.get("levelsofDelegation", 1),
            remaining_levels=data.get("remainingLevels", 1),
            parent=data.get("parent"),
            start_ms=data.get("start_ms"),
            created_at=data.get("created_at", 0),
        )


def _has_authorization(state: "PolicyState", role: str) -> bool:
    reach = state.junior_closure({role})
    return any(
        p.mode in AUTHORIZATION_MODES and p.role in reach for p in state.permissions.values()
    )


def _covering(state: "PolicyState", subject: str, role: str) -> list[Delegation]:
    """Delegations received by *subject* whose role reaches *role*."""
    return [
        d
        for d in sorted(state.delegations.values(), key=lambda d: d.delegation_id)
        if d.delegate == subject and role in state.junior_closure({d.role})
    ]


def _check_parent(parent: Delegation, at_ms: int) -> None:
    if not parent.is_live(at_ms):
        raise errors.ExpiredParent(parent.delegation_id, delegation=parent.delegation_id)
    if not parent.multi_step or parent.remaining_levels <= 0:
        raise errors.SingleStepExhausted(
            f"{parent.delegation_id} has no remaining levels", delegation=parent.delegation_id
        )


def apply_right_transfer(
    state: "PolicyState",
    delegator: str,
    delegate: str,
    role: str,
    *,
    delegation_id: str,
    at_ms: int = 0,
    expiry_ms: int | None = None,
    start_ms: int | None = None,
    mode: str = GRANT,
    multi_step: bool = False,
    levels: int | None = None,
    parent: str | None = None,
) -> Delegation:
    """Store a delegation of *role* from *delegator* to *delegate*.

    A delegator who holds the role through an explicit assignment (or its
    junior closure) creates a fresh delegation. Otherwise the hold must
    come from a live, multi-step delegation with levels left, which becomes
    the parent of the new record.
    """
    if role not in state.roles:
        raise errors.UnknownRole(role, role=role)
    if mode not in (GRANT, TRANSFER):
        raise errors.InvalidTransaction(f"unknown delegation mode {mode!r}")
    if delegate == delegator:
        raise errors.InvalidTransaction("delegator and delegate must differ")
    if levels is not None and levels < 1:
        raise errors.InvalidTransaction("levelsofDelegation must be >= 1")
    if delegation_id in state.delegations:
        raise errors.InvalidTransaction(f"duplicate delegation id {delegation_id}")
    if not _has_authorization(state, role):
        raise errors.ObligationNotDelegable(role, role=role)

    parent_rec: Delegation | None = None
    if parent is not None:
        parent_rec = state.delegations.get(parent)
        if parent_rec is None:
            raise errors.UnknownDelegation(parent, delegation=parent)
        if parent_rec.delegate != delegator or role not in state.junior_closure({parent_rec.role}):
            raise errors.NotRoleHolder(f"{delegator} does not hold {role} via {parent}")
        _check_parent(parent_rec, at_ms)
    elif role in state.explicit_closure(delegator, at_ms):
        pass
    else:
        covering = _covering(state, delegator, role)
        live = [d for d in covering if d.is_live(at_ms)]
        if not live:
            if covering:
                raise errors.ExpiredParent(covering[0].delegation_id)
            raise errors.NotRoleHolder(f"{delegator} does not hold {role}", subject=delegator, role=role)
        eligible = [d for d in live if d.multi_step and d.remaining_levels > 0]
        if not eligible:
            _check_parent(live[0], at_ms)
        parent_rec = eligible[0]

    if role not in state.effective_roles(delegator, at_ms):
        # held, but suspended by an outgoing transfer
        raise errors.NotRoleHolder(f"{delegator} has transferred {role} away", subject=delegator, role=role)

    if parent_rec is None:
        n = levels if levels is not None else 1
        rec = Delegation(
            delegation_id, delegator, delegate, role, expiry_ms, mode,
            bool(multi_step), n, n, None, start_ms, at_ms,
        )
    else:
        rec = Delegation(
            delegation_id, delegator, delegate, role, expiry_ms, mode,
            parent_rec.multi_step, parent_rec.levels, parent_rec.remaining_levels - 1,
            parent_rec.delegation_id, start_ms, at_ms,
        )
    state.delegations[delegation_id] = rec
    return rec


def remove_with_descendants(state: "PolicyState", roots: Iterable[str]) -> list[str]:
    """Delete *roots* and every delegation derived from them; returns ids removed."""
    children: dict[str, list[str]] = {}
    for d in state.delegations.values():
        if d.parent is not None:
            children.setdefault(d.parent, []).append(d.delegation_id)
    removed: list[str] = []
    stack = [r for r in roots if r in state.delegations]
    seen = set()
    while stack:
        did = stack.pop()
        if did in seen:
            continue
        seen.add(did)
        removed.append(did)
        stack.extend(children.get(did, ()))
    for did in removed:
        del state.delegations[did]
    return sorted(removed)


def apply_remove_right_transfer(state: "PolicyState", requester: str, delegation_id: str) -> list[str]:
    rec = state.delegations.get(delegation_id)
    if rec is None:
        raise errors.UnknownDelegation(delegation_id, delegation=delegation_id)
    if requester not in (rec.delegator, state.issuer):
        raise errors.NotAuthorizedRevoker(
            f"{requester} may not remove {delegation_id}", requester=requester
        )
    return remove_with_descendants(state, [delegation_id])


def expire_delegations(state: "PolicyState", now_ms: int) -> list[str]:
    due = [
        d.delegation_id
        for d in state.delegations.values()
        if d.expiry_ms is not None and d.expiry_ms <= now_ms
    ]
    return remove_with_descendants(state, due) if due else []


def cascade_on_role_revoke(state: "PolicyState", subject_id: str, role_name: str) -> list[str]:
    """Remove *subject_id*'s delegations of *role_name* or any role junior to it."""
    reach = state.junior_closure({role_name})
    due = [
        d.delegation_id
        for d in state.delegations.values()
        if d.delegator == subject_id and d.role in reach
    ]
    return remove_with_descendants(state, due) if due else []
