"""RBAC state: subject-role and role-permission relations, role hierarchy.

Mutating functions take the sending account first and raise ``NotIssuer``
for anyone but the policy's registered issuer. Each one either fully
applies or leaves the state untouched.
"""

from __future__ import annotations

import contextlib
import dataclasses
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping

from . import constraints as cons
from . import delegation as dlg
from . import errors
from .constraints import ConstraintSet, ContextCondition, Facts
from .delegation import Delegation

MODES = ("A+", "A-", "O+", "O-")
WEAK = "weak"
STRONG = "strong"


def normalize_mode(mode: str) -> str:
    m = mode.replace("−", "-").upper()
    if m not in MODES:
        raise errors.InvalidTransaction(f"unknown permission mode {mode!r}")
    return m


@dataclass(frozen=True)
class RoleAssignment:
    subject_id: str
    role_name: str
    assigned_by: str
    assigned_at: int

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Permission:
    identifier: str
    mode: str
    role: str
    action: str
    target: str
    constraints: tuple[ContextCondition, ...] = ()
    exception: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", normalize_mode(self.mode))
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @property
    def is_authorization(self) -> bool:
        return self.mode[0] == "A"

    def to_dict(self) -> dict[str, Any]:
        return {
            "identifier": self.identifier,
            "mode": self.mode,
            "role": self.role,
            "action": self.action,
            "target": self.target,
            "constraints": [c.to_dict() for c in self.constraints],
            "exception": self.exception,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Permission":
        try:
            return cls(
                identifier=data["identifier"],
                mode=data["mode"],
                role=data["role"],
                action=data["action"],
                target=data["target"],
                constraints=tuple(
                    ContextCondition.from_dict(c) for c in data.get("constraints") or ()
                ),
                exception=data.get("exception"),
            )
        except KeyError as exc:
            raise errors.InvalidTransaction(f"permission missing field {exc}") from None


@dataclass
class RedundancyReport:
    role_pairs: list[tuple[str, str, str]] = field(default_factory=list)
    duplicate_permissions: list[dict[str, Any]] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.role_pairs or self.duplicate_permissions)

    def to_dict(self) -> dict[str, Any]:
        return {
            "role_pairs": [list(p) for p in self.role_pairs],
            "duplicate_permissions": self.duplicate_permissions,
        }


@dataclass
class PolicyState:
    issuer: str
    roles: set[str] = field(default_factory=set)
    assignments: dict[tuple[str, str], RoleAssignment] = field(default_factory=dict)
    permissions: dict[str, Permission] = field(default_factory=dict)
    edges: set[tuple[str, str]] = field(default_factory=set)
    delegations: dict[str, Delegation] = field(default_factory=dict)
    constraints: ConstraintSet = field(default_factory=ConstraintSet)

    def copy(self) -> "PolicyState":
        return PolicyState(
            self.issuer,
            set(self.roles),
            dict(self.assignments),
            dict(self.permissions),
            set(self.edges),
            dict(self.delegations),
            self.constraints.copy(),
        )

    def restore(self, other: "PolicyState") -> None:
        self.__dict__.update(other.__dict__)

    # -- queries ---------------------------------------------------------------

    def explicit_roles(self, subject_id: str) -> set[str]:
        return {r for (s, r) in self.assignments if s == subject_id}

    def subjects(self) -> set[str]:
        out = {s for (s, _) in self.assignments}
        for d in self.delegations.values():
            out.update((d.delegator, d.delegate))
        return out

    def juniors_of(self, role: str) -> set[str]:
        return {j for (s, j) in self.edges if s == role}

    def junior_closure(self, roles: Iterable[str], blocked: set[str] | frozenset = frozenset()) -> set[str]:
        """Roles reachable downward from *roles* without entering *blocked*."""
        out: set[str] = set()
        stack = [r for r in roles if r not in blocked]
        while stack:
            r = stack.pop()
            if r in out:
                continue
            out.add(r)
            stack.extend(j for (s, j) in self.edges if s == r and j not in blocked)
        return out

    def seniors_of(self, role: str) -> set[str]:
        """Strict transitive seniors of *role*."""
        out: set[str] = set()
        stack = [role]
        while stack:
            r = stack.pop()
            for s, j in self.edges:
                if j == r and s not in out:
                    out.add(s)
                    stack.append(s)
        out.discard(role)
        return out

    def suspended_roles(self, subject_id: str, at_ms: int) -> set[str]:
        return {
            d.role
            for d in self.delegations.values()
            if d.delegator == subject_id and d.mode == dlg.TRANSFER and d.is_live(at_ms)
        }

    def explicit_closure(self, subject_id: str, at_ms: int) -> set[str]:
        blocked = self.suspended_roles(subject_id, at_ms)
        return self.junior_closure(self.explicit_roles(subject_id), blocked)

    def effective_roles(self, subject_id: str, at_ms: int, include_suspended: bool = False) -> set[str]:
        """Explicit roles, live delegated roles, and their junior closure.

        Roles the subject has transferred away (and anything reachable only
        through them) are excluded while the transfer is live, unless
        *include_suspended* is set.
        """
        base = self.explicit_roles(subject_id)
        base |= {
            d.role for d in self.delegations.values() if d.delegate == subject_id and d.is_live(at_ms)
        }
        blocked = set() if include_suspended else self.suspended_roles(subject_id, at_ms)
        return self.junior_closure(base, blocked)

    def facts(self, extra_assignment: tuple[str, str] | None = None) -> Facts:
        """Ground facts for SoD evaluation.

        ``play`` counts every stored delegation regardless of time or
        transfer suspension, so removals can only shrink the relation.
        """
        held: dict[str, set[str]] = {}
        for s, r in self.assignments:
            held.setdefault(s, set()).add(r)
        if extra_assignment is not None:
            held.setdefault(extra_assignment[0], set()).add(extra_assignment[1])
        for d in self.delegations.values():
            held.setdefault(d.delegate, set()).add(d.role)
        facts = Facts()
        by_role: dict[str, list[str]] = {}
        for p in self.permissions.values():
            facts.hold.add((p.role, p.identifier))
            by_role.setdefault(p.role, []).append(p.identifier)
        for s, roles in held.items():
            for r in self.junior_closure(roles):
                facts.play.add((s, r))
                facts.right.update((s, pid) for pid in by_role.get(r, ()))
        facts.junior = set(self.constraints.juniors)
        facts.imply = self.constraints.implication_closure()
        return facts

    def permissions_for_role(self, role: str) -> list[Permission]:
        return [p for p in self.permissions.values() if p.role == role]

    def snapshot(self) -> dict[str, Any]:
        """Audit snapshot in deterministic order."""
        return {
            "issuer": self.issuer,
            "roles": sorted(self.roles),
            "assignments": [
                self.assignments[k].to_dict() for k in sorted(self.assignments)
            ],
            "permissions": [
                self.permissions[k].to_dict() for k in sorted(self.permissions)
            ],
            "hierarchy_edges": [list(e) for e in sorted(self.edges)],
            "delegations": [
                self.delegations[k].to_dict() for k in sorted(self.delegations)
            ],
            "constraints": self.constraints.to_dict(),
        }


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _require_issuer(state: PolicyState, sender: str) -> None:
    if sender != state.issuer:
        raise errors.NotIssuer(f"{sender} is not the issuer", sender=sender)


def _require_role(state: PolicyState, role: str) -> None:
    if role not in state.roles:
        raise errors.UnknownRole(role, role=role)


def _raise_violation(v: cons.Violation, subject: str | None = None, role: str | None = None) -> None:
    if v.rule_id == "cardinality":
        raise errors.CardinalityExceeded(
            f"{v.binding['S']} would hold {v.binding['count']} roles",
            subject=v.binding["S"],
            role=role,
        )
    subj = subject if subject is not None else v.binding.get("S")
    raise errors.SoDViolation(
        f"rule {v.rule_id} violated by {v.binding}" + (f" assigning {role} to {subj}" if role else ""),
        rule_id=v.rule_id,
        binding=v.binding,
        subject=subj,
        role=role,
    )


def enforce_constraints(state: PolicyState) -> None:
    """Raise if any registered rule body is satisfied by *state*."""
    c = state.constraints
    if c.cardinality is not None:
        counts: dict[str, int] = {}
        for s, _ in state.assignments:
            counts[s] = counts.get(s, 0) + 1
        for s in sorted(counts):
            if counts[s] > c.cardinality.max_roles_per_subject:
                _raise_violation(cons.Violation("cardinality", {"S": s, "count": counts[s]}))
    if c.rules:
        v = cons.find_violation(c.rules, state.facts())
        if v is not None:
            _raise_violation(v)


@contextlib.contextmanager
def atomic(state: PolicyState, check: bool = True) -> Iterator[None]:
    """Roll *state* back if the body raises or leaves a rule violated."""
    saved = state.copy()
    try:
        yield
        if check:
            enforce_constraints(state)
    except BaseException:
        state.restore(saved)
        raise


def _needs_check(state: PolicyState) -> bool:
    return bool(state.constraints.rules)


# ---------------------------------------------------------------------------
# schema actions
# ---------------------------------------------------------------------------


def declare_role(state: PolicyState, sender: str, role: str) -> None:
    _require_issuer(state, sender)
    if not role:
        raise errors.InvalidTransaction("role name must be non-empty")
    if role in state.roles:
        raise errors.DuplicateRole(role, role=role)
    state.roles.add(role)


def add_hierarchy_edge(state: PolicyState, sender: str, senior: str, junior: str) -> None:
    _require_issuer(state, sender)
    _require_role(state, senior)
    _require_role(state, junior)
    if senior == junior or senior in state.junior_closure({junior}):
        raise errors.CycleDetected(f"{senior} -> {junior} closes a cycle", senior=senior, junior=junior)
    if (senior, junior) in state.edges:
        return
    with atomic(state, check=_needs_check(state)):
        state.edges.add((senior, junior))


def add_sod_rule(state: PolicyState, sender: str, rule: cons.SodRule) -> None:
    _require_issuer(state, sender)
    if any(r.rule_id == rule.rule_id for r in state.constraints.rules):
        raise errors.InvalidConstraint(f"duplicate rule id {rule.rule_id}")
    with atomic(state):
        state.constraints.rules.append(rule)


def add_mutual_exclusion(state: PolicyState, sender: str, role_a: str, role_b: str) -> cons.SodRule:
    _require_issuer(state, sender)
    rule = cons.compile_mutual_exclusion(role_a, role_b, state.roles)
    add_sod_rule(state, sender, rule)
    return rule


def set_cardinality(state: PolicyState, sender: str, max_roles: int) -> None:
    _require_issuer(state, sender)
    with atomic(state):
        state.constraints.cardinality = cons.CardinalityRule(max_roles)


def add_fact(state: PolicyState, sender: str, predicate: str, x: str, y: str) -> None:
    """Register a ``junior(subject, subject)`` or ``imply(right, right)`` fact."""
    _require_issuer(state, sender)
    if predicate not in ("junior", "imply"):
        raise errors.InvalidConstraint(f"only junior/imply facts can be registered, not {predicate!r}")
    with atomic(state, check=_needs_check(state)):
        table = state.constraints.juniors if predicate == "junior" else state.constraints.implications
        table.add((x, y))


# ---------------------------------------------------------------------------
# issuer transactions
# ---------------------------------------------------------------------------


def apply_role_assign(
    state: PolicyState, sender: str, subject_id: str, role_name: str, *, at_ms: int = 0
) -> RoleAssignment:
    _require_issuer(state, sender)
    _require_role(state, role_name)
    if (subject_id, role_name) in state.assignments:
        raise errors.DuplicateAssignment(f"{subject_id} already holds {role_name}")
    v = cons.check_assignment((subject_id, role_name), state)
    if v is not None:
        _raise_violation(v, subject_id, role_name)
    rec = RoleAssignment(subject_id, role_name, sender, at_ms)
    state.assignments[(subject_id, role_name)] = rec
    return rec


def apply_role_update(
    state: PolicyState,
    sender: str,
    subject_id: str,
    new_role: str,
    *,
    old_role: str | None = None,
    at_ms: int = 0,
) -> tuple[RoleAssignment, list[str]]:
    """Replace one of the subject's assignments by *new_role*.

    Returns the new assignment and the ids of delegations dropped because
    the subject no longer holds *old_role*.
    """
    _require_issuer(state, sender)
    _require_role(state, new_role)
    held = state.explicit_roles(subject_id)
    if not held:
        raise errors.NoExistingAssignment(f"{subject_id} has no assignment", subject=subject_id)
    if old_role is None:
        if len(held) > 1:
            raise errors.AmbiguousAssignment(
                f"{subject_id} holds {sorted(held)}; name the role to replace", subject=subject_id
            )
        (old_role,) = held
    elif old_role not in held:
        raise errors.NoExistingAssignment(f"{subject_id} does not hold {old_role}", subject=subject_id)
    if new_role != old_role and new_role in held:
        raise errors.DuplicateAssignment(f"{subject_id} already holds {new_role}")
    if new_role == old_role:
        return state.assignments[(subject_id, old_role)], []
    with atomic(state, check=False):
        del state.assignments[(subject_id, old_role)]
        v = cons.check_assignment((subject_id, new_role), state)
        if v is not None:
            _raise_violation(v, subject_id, new_role)
        rec = RoleAssignment(subject_id, new_role, sender, at_ms)
        state.assignments[(subject_id, new_role)] = rec
        dropped = dlg.cascade_on_role_revoke(state, subject_id, old_role)
    return rec, dropped


def apply_role_revoke(
    state: PolicyState, sender: str, subject_id: str, role_name: str, strength: str = WEAK
) -> tuple[list[str], list[str]]:
    """Returns (roles removed, delegation ids cascaded away)."""
    _require_issuer(state, sender)
    if strength not in (WEAK, STRONG):
        raise errors.InvalidTransaction(f"unknown revocation strength {strength!r}")
    held = state.explicit_roles(subject_id)
    targets = {role_name} & held
    if strength == STRONG:
        targets |= state.seniors_of(role_name) & held
    if not targets or (strength == WEAK and role_name not in held):
        raise errors.NoExistingAssignment(
            f"{subject_id} does not hold {role_name}", subject=subject_id, role=role_name
        )
    removed = sorted(targets)
    dropped: list[str] = []
    for r in removed:
        del state.assignments[(subject_id, r)]
    for r in removed:
        dropped += dlg.cascade_on_role_revoke(state, subject_id, r)
    return removed, sorted(dropped)


def apply_permission_assign(state: PolicyState, sender: str, permission: Permission) -> Permission:
    _require_issuer(state, sender)
    if permission.identifier in state.permissions:
        raise errors.DuplicateIdentifier(permission.identifier, identifier=permission.identifier)
    _require_role(state, permission.role)
    with atomic(state, check=_needs_check(state)):
        state.permissions[permission.identifier] = permission
    return permission


UPDATABLE_FIELDS = ("mode", "action", "target", "constraints", "exception")


def apply_permission_update(
    state: PolicyState, sender: str, identifier: str, **fields: Any
) -> Permission:
    _require_issuer(state, sender)
    current = state.permissions.get(identifier)
    if current is None:
        raise errors.UnknownIdentifier(identifier, identifier=identifier)
    unknown = set(fields) - set(UPDATABLE_FIELDS)
    if unknown:
        raise errors.InvalidTransaction(f"cannot update fields {sorted(unknown)}")
    updated = dataclasses.replace(current, **fields)
    state.permissions[identifier] = updated
    return updated


def apply_permission_revoke(state: PolicyState, sender: str, role_name: str) -> list[str]:
    """Delete every permission row of *role_name*; returns removed identifiers."""
    _require_issuer(state, sender)
    _require_role(state, role_name)
    ids = sorted(p.identifier for p in state.permissions.values() if p.role == role_name)
    if not ids:
        raise errors.NoPermissionsForRole(role_name, role=role_name)
    for pid in ids:
        del state.permissions[pid]
    return ids


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------


def effective_roles(state: PolicyState, subject_id: str, at_ms: int) -> set[str]:
    return state.effective_roles(subject_id, at_ms)


def detect_redundancy(state: PolicyState) -> RedundancyReport:
    report = RedundancyReport()
    by_subject: dict[str, set[str]] = {}
    for s, r in state.assignments:
        by_subject.setdefault(s, set()).add(r)
    grants: dict[tuple[str, str], dict[str, list[str]]] = {}
    for p in state.permissions.values():
        grants.setdefault((p.action, p.target), {}).setdefault(p.role, []).append(p.identifier)
    for s in sorted(by_subject):
        explicit = by_subject[s]
        for parent in sorted(explicit):
            for child in sorted(state.junior_closure({parent}) - {parent}):
                if child in explicit:
                    report.role_pairs.append((s, parent, child))
        reach = state.junior_closure(explicit)
        for (action, target), per_role in sorted(grants.items()):
            roles = sorted(r for r in per_role if r in reach)
            if len(roles) >= 2:
                report.duplicate_permissions.append(
                    {
                        "subject": s,
                        "action": action,
                        "target": target,
                        "roles": roles,
                        "permissions": sorted(pid for r in roles for pid in per_role[r]),
                    }
                )
    return report
