"""Exception hierarchy.

Every engine error carries a machine-readable ``code`` (the class name by
default) that the CLI surfaces verbatim.
"""

from __future__ import annotations

from typing import Any


class RbacChainError(Exception):
    """Base class for all domain errors raised by the engine."""

    code = "RbacChainError"

    def __init__(self, message: str = "", **details: Any) -> None:
        self.message = message
        self.details = details
        super().__init__(f"{self.code}: {message}" if message else self.code)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"error": self.code, "message": self.message}
        if self.details:
            out["details"] = self.details
        return out


def _error(name: str, doc: str) -> type[RbacChainError]:
    return type(name, (RbacChainError,), {"code": name, "__doc__": doc})


# ledger
UnknownAccount = _error("UnknownAccount", "Sender is not a registered account.")
DuplicateAccount = _error("DuplicateAccount", "Account id already registered.")
InvalidAccount = _error("InvalidAccount", "Account id is empty or longer than 12 characters.")
BadSignature = _error("BadSignature", "Signature does not bind sender to payload.")
InsufficientResources = _error("InsufficientResources", "CPU, NET or RAM budget would underflow.")
RamDelegationForbidden = _error("RamDelegationForbidden", "RAM cannot be delegated.")
ClockRegression = _error("ClockRegression", "Requested time is earlier than the chain tip.")
SlotNotDue = _error("SlotNotDue", "The next block slot has not been reached.")
InvalidTransaction = _error("InvalidTransaction", "Unknown kind or malformed payload.")
ReplayMismatch = _error("ReplayMismatch", "Replayed chain diverged from the recorded one.")

# policy
NotIssuer = _error("NotIssuer", "Sender is not the registered issuer.")
UnknownRole = _error("UnknownRole", "Role has not been declared.")
DuplicateRole = _error("DuplicateRole", "Role already declared.")
DuplicateAssignment = _error("DuplicateAssignment", "Subject already holds the role.")
NoExistingAssignment = _error("NoExistingAssignment", "Subject does not hold the role.")
AmbiguousAssignment = _error("AmbiguousAssignment", "Subject holds several roles; name the one to replace.")
DuplicateIdentifier = _error("DuplicateIdentifier", "Permission identifier already in use.")
UnknownIdentifier = _error("UnknownIdentifier", "No permission with this identifier.")
NoPermissionsForRole = _error("NoPermissionsForRole", "Role has no permission rows.")
CycleDetected = _error("CycleDetected", "Hierarchy edge would create a cycle.")

# constraints
SoDViolation = _error("SoDViolation", "A separation-of-duty rule body would be satisfied.")
CardinalityExceeded = _error("CardinalityExceeded", "Subject would exceed the role cap.")
InvalidConstraint = _error("InvalidConstraint", "Malformed or degenerate constraint.")

# delegation
NotRoleHolder = _error("NotRoleHolder", "Delegator does not hold the role.")
ObligationNotDelegable = _error("ObligationNotDelegable", "Role carries no authorization-mode permission.")
SingleStepExhausted = _error("SingleStepExhausted", "Parent delegation cannot be re-delegated further.")
ExpiredParent = _error("ExpiredParent", "Parent delegation has expired.")
NotAuthorizedRevoker = _error("NotAuthorizedRevoker", "Only the delegator or the issuer may remove a delegation.")
UnknownDelegation = _error("UnknownDelegation", "No delegation with this reference.")

# metrics / bench
EmptyWindow = _error("EmptyWindow", "No transactions fall in the window.")
DegenerateWindow = _error("DegenerateWindow", "Window end is not after its start.")
InvalidScenario = _error("InvalidScenario", "Benchmark scenario is malformed.")

# cli
ParseError = _error("ParseError", "Input line could not be parsed.")
