"""Static separation-of-duty / cardinality rules and runtime context conditions.

SoD rules are denials: a rule is violated when some instantiation of its
variables makes every atom true against the current facts. Terms starting
with ``?`` are variables, everything else is a constant::

    SodRule("no-dual", (("play", "?S", "doctor"), ("play", "?S", "nurse")))
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping, Sequence

from . import errors

PREDICATES = ("right", "play", "hold", "junior", "imply")

COMPARATORS = ("=", "!=", "<", "<=", ">", ">=", "in-range", "in-set")
_ALIASES = {"==": "=", "≠": "!=", "≤": "<=", "≥": ">=", "in": "in-set", "between": "in-range"}

_MISSING = object()

Atom = tuple[str, str, str]
RequestContext = Mapping[str, Any]


# ---------------------------------------------------------------------------
# typed values
# ---------------------------------------------------------------------------


def encode_value(value: Any) -> Any:
    """Map a typed context value onto JSON-native data (tagged where needed)."""
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, (int, str)):
        return value
    if isinstance(value, dt.datetime):
        raise TypeError("use date or time values, not datetime")
    if isinstance(value, dt.date):
        return {"date": value.isoformat()}
    if isinstance(value, dt.time):
        return {"time": value.isoformat(timespec="minutes" if not value.second else "seconds")}
    if isinstance(value, (set, frozenset)):
        return {"set": sorted((encode_value(v) for v in value), key=repr)}
    if isinstance(value, tuple) and len(value) == 2:
        return {"range": [encode_value(value[0]), encode_value(value[1])]}
    raise TypeError(f"unsupported context value {value!r}")


def decode_value(data: Any) -> Any:
    if isinstance(data, Mapping):
        if len(data) != 1:
            raise errors.InvalidConstraint(f"bad typed value {data!r}")
        (tag, raw), = data.items()
        if tag == "date":
            return dt.date.fromisoformat(raw)
        if tag == "time":
            return dt.time.fromisoformat(raw)
        if tag == "set":
            return frozenset(decode_value(v) for v in raw)
        if tag == "range":
            lo, hi = raw
            return (decode_value(lo), decode_value(hi))
        raise errors.InvalidConstraint(f"unknown value tag {tag!r}")
    if isinstance(data, list):
        return frozenset(decode_value(v) for v in data)
    return data


def parse_typed(text: str) -> Any:
    """Parse ``i:42``, ``s:ward3``, ``d:2024-05-01`` or ``t:09:30``.

    Unprefixed text is a string. Commas inside a prefixed value build a set,
    e.g. ``s:Mon,Tue``.
    """
    prefix, sep, rest = text.partition(":")
    if not sep or prefix not in ("i", "s", "d", "t"):
        return text
    conv = {"i": int, "s": str, "d": dt.date.fromisoformat, "t": dt.time.fromisoformat}[prefix]
    try:
        if "," in rest:
            return frozenset(conv(p) for p in rest.split(","))
        return conv(rest)
    except ValueError as exc:
        raise errors.InvalidConstraint(f"cannot parse {text!r}: {exc}") from exc


def encode_context(ctx: RequestContext) -> dict[str, Any]:
    return {k: encode_value(v) for k, v in sorted(ctx.items())}


def decode_context(data: Mapping[str, Any] | None) -> dict[str, Any]:
    return {k: decode_value(v) for k, v in (data or {}).items()}


# ---------------------------------------------------------------------------
# context conditions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContextCondition:
    attribute: str
    comparator: str
    expected: Any

    def __post_init__(self) -> None:
        comp = _ALIASES.get(self.comparator, self.comparator)
        if comp not in COMPARATORS:
            raise errors.InvalidConstraint(f"unknown comparator {self.comparator!r}")
        object.__setattr__(self, "comparator", comp)
        if comp == "in-range" and not (isinstance(self.expected, tuple) and len(self.expected) == 2):
            raise errors.InvalidConstraint("in-range expects a (low, high) pair")
        if comp == "in-set" and not isinstance(self.expected, (set, frozenset)):
            object.__setattr__(self, "expected", frozenset(self.expected))

    def holds(self, ctx: RequestContext) -> bool:
        value = ctx.get(self.attribute, _MISSING)
        if value is _MISSING:
            return False
        try:
            return bool(_compare(self.comparator, value, self.expected))
        except TypeError:
            return False

    def to_dict(self) -> dict[str, Any]:
        return {
            "attribute": self.attribute,
            "comparator": self.comparator,
            "expected": encode_value(self.expected),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ContextCondition":
        return cls(data["attribute"], data["comparator"], decode_value(data["expected"]))


def _compare(op: str, value: Any, expected: Any) -> bool:
    if op == "in-set":
        return value in expected
    if op == "in-range":
        lo, hi = expected
        return lo <= value <= hi
    if type(value) is not type(expected) and not (
        isinstance(value, (int, float)) and isinstance(expected, (int, float))
    ):
        # ordering across unrelated types is meaningless; equality is just False
        if op in ("=", "!="):
            return op == "!="
        raise TypeError
    if op == "=":
        return value == expected
    if op == "!=":
        return value != expected
    if op == "<":
        return value < expected
    if op == "<=":
        return value <= expected
    if op == ">":
        return value > expected
    return value >= expected


def evaluate_context(conditions: Iterable[ContextCondition], ctx: RequestContext) -> bool:
    """Conjunction of *conditions* over *ctx*; an empty list is true."""
    return all(c.holds(ctx) for c in conditions)


# ---------------------------------------------------------------------------
# SoD rules
# ---------------------------------------------------------------------------


def is_var(term: str) -> bool:
    return term.startswith("?")


@dataclass(frozen=True)
class SodRule:
    rule_id: str
    atoms: tuple[Atom, ...]

    def __post_init__(self) -> None:
        atoms = tuple(tuple(a) for a in self.atoms)
        if not atoms:
            raise errors.InvalidConstraint("a rule needs at least one atom")
        for atom in atoms:
            if len(atom) != 3 or atom[0] not in PREDICATES:
                raise errors.InvalidConstraint(f"bad atom {atom!r}")
        object.__setattr__(self, "atoms", atoms)

    @property
    def variables(self) -> list[str]:
        seen: dict[str, None] = {}
        for _, a, b in self.atoms:
            for t in (a, b):
                if is_var(t):
                    seen.setdefault(t)
        return list(seen)

    def to_dict(self) -> dict[str, Any]:
        return {"rule_id": self.rule_id, "atoms": [list(a) for a in self.atoms]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SodRule":
        return cls(data["rule_id"], tuple(tuple(a) for a in data["atoms"]))


@dataclass(frozen=True)
class MutualExclusionPair:
    role_a: str
    role_b: str
    limit: int = 2

    @property
    def rule_id(self) -> str:
        a, b = sorted((self.role_a, self.role_b))
        return f"mutex:{a}:{b}"


@dataclass(frozen=True)
class CardinalityRule:
    max_roles_per_subject: int

    def __post_init__(self) -> None:
        if self.max_roles_per_subject < 1:
            raise errors.InvalidConstraint("cardinality must be a positive integer")


def compile_mutual_exclusion(
    role_a: str, role_b: str, known_roles: Iterable[str] | None = None
) -> SodRule:
    """``⊥ ← play(S, role_a), play(S, role_b)`` with S free."""
    if role_a == role_b:
        raise errors.InvalidConstraint(
            f"mutual exclusion of {role_a!r} with itself would ban the role", role=role_a
        )
    if known_roles is not None:
        known = set(known_roles)
        for r in (role_a, role_b):
            if r not in known:
                raise errors.UnknownRole(r, role=r)
    pair = MutualExclusionPair(role_a, role_b)
    return SodRule(pair.rule_id, (("play", "?S", role_a), ("play", "?S", role_b)))


@dataclass
class Facts:
    """Ground relations the rule bodies are evaluated against."""

    play: set[tuple[str, str]] = field(default_factory=set)
    right: set[tuple[str, str]] = field(default_factory=set)
    hold: set[tuple[str, str]] = field(default_factory=set)
    junior: set[tuple[str, str]] = field(default_factory=set)
    imply: set[tuple[str, str]] = field(default_factory=set)

    def table(self, predicate: str) -> set[tuple[str, str]]:
        return getattr(self, predicate)


@dataclass(frozen=True)
class Violation:
    rule_id: str
    binding: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {"rule_id": self.rule_id, "binding": dict(self.binding)}


def iter_bindings(rule: SodRule, facts: Facts) -> Iterator[dict[str, str]]:
    """Every variable binding satisfying all atoms, by backtracking join."""
    tables = {p: sorted(facts.table(p)) for p in {a[0] for a in rule.atoms}}

    def solve(i: int, binding: dict[str, str]) -> Iterator[dict[str, str]]:
        if i == len(rule.atoms):
            yield dict(binding)
            return
        pred, t1, t2 = rule.atoms[i]
        v1 = binding.get(t1, t1) if is_var(t1) else t1
        v2 = binding.get(t2, t2) if is_var(t2) else t2
        free1, free2 = is_var(v1), is_var(v2)
        if not free1 and not free2:
            if (v1, v2) in facts.table(pred):
                yield from solve(i + 1, binding)
            return
        for x, y in tables[pred]:
            if (not free1 and x != v1) or (not free2 and y != v2):
                continue
            if free1 and free2 and v1 == v2 and x != y:
                continue
            added = []
            if free1:
                binding[v1] = x
                added.append(v1)
            if free2 and v2 not in binding:
                binding[v2] = y
                added.append(v2)
            yield from solve(i + 1, binding)
            for k in added:
                del binding[k]

    yield from solve(0, {})


def find_violation(rules: Sequence[SodRule], facts: Facts) -> Violation | None:
    for rule in rules:
        for binding in iter_bindings(rule, facts):
            return Violation(rule.rule_id, {k.lstrip("?"): v for k, v in binding.items()})
    return None


def check_assignment(candidate: tuple[str, str], state: Any) -> Violation | None:
    """Evaluate registered rules against ``state ∪ {candidate}``.

    *state* is a :class:`~rbacchain.policy.PolicyState`; it is not modified.
    """
    subject, role = candidate
    cons = state.constraints
    if cons.cardinality is not None:
        count = len(state.explicit_roles(subject) | {role})
        if count > cons.cardinality.max_roles_per_subject:
            return Violation("cardinality", {"S": subject, "count": count})
    if not cons.rules:
        return None
    return find_violation(cons.rules, state.facts(extra_assignment=candidate))


@dataclass
class ConstraintSet:
    """Everything the issuer has registered for static checking."""

    rules: list[SodRule] = field(default_factory=list)
    cardinality: CardinalityRule | None = None
    juniors: set[tuple[str, str]] = field(default_factory=set)
    implications: set[tuple[str, str]] = field(default_factory=set)

    def copy(self) -> "ConstraintSet":
        return ConstraintSet(list(self.rules), self.cardinality, set(self.juniors), set(self.implications))

    def implication_closure(self) -> set[tuple[str, str]]:
        """Transitive closure of the registered imply pairs."""
        closure = set(self.implications)
        changed = True
        while changed:
            changed = False
            for a, b in list(closure):
                for c, d in list(closure):
                    if b == c and (a, d) not in closure:
                        closure.add((a, d))
                        changed = True
        return closure

    def to_dict(self) -> dict[str, Any]:
        return {
            "rules": [r.to_dict() for r in sorted(self.rules, key=lambda r: r.rule_id)],
            "max_roles_per_subject": (
                self.cardinality.max_roles_per_subject if self.cardinality else None
            ),
            "junior": sorted(list(p) for p in self.juniors),
            "imply": sorted(list(p) for p in self.implications),
        }
