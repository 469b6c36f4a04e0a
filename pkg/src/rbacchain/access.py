"""Check-access decisions and the audit trail.

The decision procedure combines matching rows deny-overrides, default-deny:
an applicable A- row without an active exception denies; otherwise any
applicable A+ row allows; otherwise an A- row whose exception is active
allows; otherwise the request is denied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Any, Iterable, Mapping

from .constraints import RequestContext, decode_context, encode_context, evaluate_context
from .policy import Permission, PolicyState

PERMITTED = "Permitted"
PERMITTED_BY_EXCEPTION = "PermittedByException"
DENIED_BY_NEGATIVE = "DeniedByNegative"
CONTEXT_NOT_SATISFIED = "ContextNotSatisfied"
NO_MATCHING_PERMISSION = "NoMatchingPermission"

REASONS = (
    PERMITTED,
    PERMITTED_BY_EXCEPTION,
    DENIED_BY_NEGATIVE,
    CONTEXT_NOT_SATISFIED,
    NO_MATCHING_PERMISSION,
)


@dataclass(frozen=True)
class AccessRequest:
    subject_id: str
    operation: str
    object: str
    at_ms: int = 0
    context: Mapping[str, Any] = field(default_factory=dict)

    def to_payload(self) -> dict[str, Any]:
        return {
            "subject": self.subject_id,
            "operation": self.operation,
            "object": self.object,
            "at_ms": self.at_ms,
            "context": encode_context(self.context),
        }

    @classmethod
    def from_payload(cls, data: Mapping[str, Any], default_at: int = 0) -> "AccessRequest":
        at = data.get("at_ms")
        return cls(
            data["subject"],
            data["operation"],
            data["object"],
            default_at if at is None else at,
            decode_context(data.get("context")),
        )


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: str
    matched_permission: str | None = None
    obligations: tuple[str, ...] = ()
    audit_ref: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "allowed": self.allowed,
            "matched_permission": self.matched_permission,
            "obligations": list(self.obligations),
            "reason": self.reason,
            "audit_ref": self.audit_ref,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def exception_active(name: str | None, ctx: RequestContext) -> bool:
    if not name:
        return False
    return ctx.get(name) not in (None, False, 0, "")


def check_access(state: PolicyState, req: AccessRequest) -> Decision:
    """Pure decision over a committed snapshot; nothing is written."""
    roles = state.effective_roles(req.subject_id, req.at_ms)
    # a transfer hands over authority, not duties
    duty_roles = state.effective_roles(req.subject_id, req.at_ms, include_suspended=True)
    matching = sorted(
        (
            p
            for p in state.permissions.values()
            if p.role in duty_roles and p.action == req.operation and p.target == req.object
        ),
        key=lambda p: p.identifier,
    )
    obligations = tuple(
        p.identifier
        for p in matching
        if not p.is_authorization and evaluate_context(p.constraints, req.context)
    )
    rows: list[Permission] = [p for p in matching if p.is_authorization and p.role in roles]
    live = [p for p in rows if evaluate_context(p.constraints, req.context)]

    deny = [p for p in live if p.mode == "A-" and not exception_active(p.exception, req.context)]
    if deny:
        return Decision(False, DENIED_BY_NEGATIVE, deny[0].identifier, obligations)
    allow = [p for p in live if p.mode == "A+"]
    if allow:
        return Decision(True, PERMITTED, allow[0].identifier, obligations)
    excepted = [p for p in live if p.mode == "A-"]
    if excepted:
        return Decision(True, PERMITTED_BY_EXCEPTION, excepted[0].identifier, obligations)
    if rows:
        return Decision(False, CONTEXT_NOT_SATISFIED, None, obligations)
    # unknown subjects land here too, indistinguishable from a missing grant
    return Decision(False, NO_MATCHING_PERMISSION, None, obligations)


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditEvent:
    block_height: int
    tx_index: int | None
    event_kind: str
    payload: dict[str, Any]

    @property
    def subject(self) -> str | None:
        return self.payload.get("subject")

    @property
    def timestamp_ms(self) -> int:
        return self.payload["timestamp_ms"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "block_height": self.block_height,
            "tx_index": self.tx_index,
            "event_kind": self.event_kind,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AuditEvent":
        return cls(data["block_height"], data["tx_index"], data["event_kind"], dict(data["payload"]))


class AuditLog:
    """Append-only, chain-ordered event list."""

    def __init__(self) -> None:
        self._events: list[AuditEvent] = []

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self):
        return iter(self._events)

    def append(self, event: AuditEvent) -> int:
        self._events.append(event)
        return len(self._events) - 1

    def query(
        self,
        subject: str | None = None,
        from_ms: int | None = None,
        to_ms: int | None = None,
        allowed: bool | None = None,
        kinds: Iterable[str] | None = None,
    ) -> list[AuditEvent]:
        kind_set = set(kinds) if kinds is not None else None
        out = []
        for ev in self._events:
            if subject is not None and ev.subject != subject:
                continue
            if from_ms is not None and ev.timestamp_ms < from_ms:
                continue
            if to_ms is not None and ev.timestamp_ms > to_ms:
                continue
            if kind_set is not None and ev.event_kind not in kind_set:
                continue
            if allowed is not None:
                decision = ev.payload.get("decision")
                if decision is None or decision["allowed"] != allowed:
                    continue
            out.append(ev)
        return out

    def write_jsonl(self, out: IO[str], events: Iterable[AuditEvent] | None = None) -> None:
        for ev in self._events if events is None else events:
            out.write(json.dumps(ev.to_dict(), separators=(",", ":"), sort_keys=False))
            out.write("\n")
