"""Hash-linked chain with a DPoS-lite producer schedule and resource metering.

The ledger owns accounts, the pending pool and the block list. It knows
nothing about RBAC: block application is delegated to an *applier* object
(see :class:`Applier`) which decides whether each pooled transaction
commits.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Iterable, Iterator, Mapping, Protocol, Sequence

from . import errors

logger = logging.getLogger(__name__)

ZERO_HASH = "00" * 32
MAX_ACCOUNT_NAME = 12

# Transaction kinds, one per row of the contract's cost table.
ROLE_ASSIGN = "RoleAssign"
ROLE_UPDATE = "RoleUpdate"
ROLE_REVOKE = "RoleRevoke"
PERMISSION_ASSIGN = "PermissionAssign"
PERMISSION_UPDATE = "PermissionUpdate"
PERMISSION_REVOKE = "PermissionRevoke"
RIGHT_TRANSFER = "RightTransfer"
REMOVE_RIGHT_TRANSFER = "RemoveRightTransfer"
CHECK_ACCESS = "CheckAccess"

TX_KINDS = (
    ROLE_ASSIGN,
    ROLE_UPDATE,
    ROLE_REVOKE,
    PERMISSION_ASSIGN,
    PERMISSION_UPDATE,
    PERMISSION_REVOKE,
    RIGHT_TRANSFER,
    REMOVE_RIGHT_TRANSFER,
    CHECK_ACCESS,
)

# Issuer-only schema actions. They have no cost row, so they are committed
# uncharged alongside ordinary transactions.
DEPLOY = "Deploy"
DECLARE_ROLE = "DeclareRole"
ADD_HIERARCHY_EDGE = "AddHierarchyEdge"
ADD_SOD_RULE = "AddSodRule"
ADD_MUTUAL_EXCLUSION = "AddMutualExclusion"
SET_CARDINALITY = "SetCardinality"
ADD_FACT = "AddFact"

ADMIN_KINDS = (
    DEPLOY,
    DECLARE_ROLE,
    ADD_HIERARCHY_EDGE,
    ADD_SOD_RULE,
    ADD_MUTUAL_EXCLUSION,
    SET_CARDINALITY,
    ADD_FACT,
)

ALL_KINDS = TX_KINDS + ADMIN_KINDS

DEFAULT_COSTS: dict[str, tuple[int, int]] = {
    ROLE_ASSIGN: (606, 168),
    ROLE_UPDATE: (347, 168),
    ROLE_REVOKE: (209, 104),
    CHECK_ACCESS: (305, 104),
    RIGHT_TRANSFER: (511, 176),
    REMOVE_RIGHT_TRANSFER: (254, 104),
    PERMISSION_ASSIGN: (856, 160),
    PERMISSION_UPDATE: (570, 160),
    PERMISSION_REVOKE: (230, 104),
}
DEFAULT_RAM_ROW_BYTES = 128


# ---------------------------------------------------------------------------
# canonical encoding
# ---------------------------------------------------------------------------


def _frame(tag: bytes, body: bytes) -> bytes:
    return tag + len(body).to_bytes(8, "big") + body


def canonical_bytes(obj: Any) -> bytes:
    """Length-prefixed, type-tagged encoding of JSON-like values.

    Mapping keys are sorted, so equal values always encode identically.
    Floats are rejected: nothing hashed on chain may depend on float repr.
    """
    if obj is None:
        return b"n"
    if obj is True:
        return b"T"
    if obj is False:
        return b"F"
    if isinstance(obj, int):
        return _frame(b"i", str(obj).encode("ascii"))
    if isinstance(obj, str):
        return _frame(b"s", obj.encode("utf-8"))
    if isinstance(obj, bytes):
        return _frame(b"y", obj)
    if isinstance(obj, (list, tuple)):
        return _frame(b"l", b"".join(canonical_bytes(x) for x in obj))
    if isinstance(obj, Mapping):
        parts = []
        for key in sorted(obj):
            if not isinstance(key, str):
                raise TypeError(f"mapping keys must be str, got {type(key).__name__}")
            parts.append(canonical_bytes(key) + canonical_bytes(obj[key]))
        return _frame(b"d", b"".join(parts))
    raise TypeError(f"cannot canonically encode {type(obj).__name__}")


def digest(obj: Any) -> str:
    """SHA3-256 of the canonical encoding, hex encoded."""
    return hashlib.sha3_256(canonical_bytes(obj)).hexdigest()


def sign(sender: str, kind: str, payload: Mapping[str, Any]) -> str:
    """Simulated signature binding *sender* to the payload."""
    return digest({"sender": sender, "kind": kind, "payload": payload})


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


_TX_KEYS = frozenset({"kind", "sender", "payload", "submitted_at", "nonce", "signature"})
_BLOCK_KEYS = frozenset({"height", "producer", "timestamp_ms", "prev_hash", "tx_list", "block_hash"})


def _exact_keys(data: Mapping[str, Any], keys: frozenset, what: str) -> None:
    # a renamed or extra key must not decode to the same record
    if set(data) != keys:
        raise ValueError(f"{what} fields {sorted(data)} != {sorted(keys)}")


@dataclass(frozen=True)
class Transaction:
    kind: str
    sender: str
    payload: dict[str, Any]
    submitted_at: int
    nonce: int = 0
    signature: str = ""

    @classmethod
    def create(
        cls,
        kind: str,
        sender: str,
        payload: Mapping[str, Any],
        submitted_at: int,
        nonce: int = 0,
    ) -> "Transaction":
        payload = dict(payload)
        return cls(kind, sender, payload, submitted_at, nonce, sign(sender, kind, payload))

    @property
    def tx_id(self) -> str:
        return digest(self.to_dict())[:16]

    def signature_valid(self) -> bool:
        return self.signature == sign(self.sender, self.kind, self.payload)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "sender": self.sender,
            "payload": self.payload,
            "submitted_at": self.submitted_at,
            "nonce": self.nonce,
            "signature": self.signature,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Transaction":
        _exact_keys(data, _TX_KEYS, "transaction")
        return cls(
            kind=data["kind"],
            sender=data["sender"],
            payload=dict(data["payload"]),
            submitted_at=data["submitted_at"],
            nonce=data["nonce"],
            signature=data["signature"],
        )


@dataclass(frozen=True)
class Block:
    height: int
    producer: str
    timestamp_ms: int
    prev_hash: str
    tx_list: tuple[Transaction, ...]
    block_hash: str

    @staticmethod
    def compute_hash(
        height: int,
        producer: str,
        timestamp_ms: int,
        prev_hash: str,
        tx_list: Sequence[Transaction],
    ) -> str:
        return digest(
            [height, producer, timestamp_ms, prev_hash, [tx.to_dict() for tx in tx_list]]
        )

    @classmethod
    def build(
        cls,
        height: int,
        producer: str,
        timestamp_ms: int,
        prev_hash: str,
        tx_list: Sequence[Transaction],
    ) -> "Block":
        txs = tuple(tx_list)
        return cls(
            height,
            producer,
            timestamp_ms,
            prev_hash,
            txs,
            cls.compute_hash(height, producer, timestamp_ms, prev_hash, txs),
        )

    def hash_ok(self) -> bool:
        return self.block_hash == self.compute_hash(
            self.height, self.producer, self.timestamp_ms, self.prev_hash, self.tx_list
        )

    def to_dict(self) -> dict[str, Any]:
        # field order is the hashing order
        return {
            "height": self.height,
            "producer": self.producer,
            "timestamp_ms": self.timestamp_ms,
            "prev_hash": self.prev_hash,
            "tx_list": [tx.to_dict() for tx in self.tx_list],
            "block_hash": self.block_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), ensure_ascii=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Block":
        _exact_keys(data, _BLOCK_KEYS, "block")
        return cls(
            height=data["height"],
            producer=data["producer"],
            timestamp_ms=data["timestamp_ms"],
            prev_hash=data["prev_hash"],
            tx_list=tuple(Transaction.from_dict(t) for t in data["tx_list"]),
            block_hash=data["block_hash"],
        )


@dataclass
class ResourceTariff:
    costs: dict[str, tuple[int, int]] = field(default_factory=lambda: dict(DEFAULT_COSTS))
    ram_row_bytes: int = DEFAULT_RAM_ROW_BYTES

    def cost(self, kind: str) -> tuple[int, int]:
        """(cpu_us, net_bytes) for *kind*; schema actions are free."""
        if kind in ADMIN_KINDS:
            return (0, 0)
        try:
            return self.costs[kind]
        except KeyError:
            raise errors.InvalidTransaction(f"unknown transaction kind {kind!r}") from None

    def to_config(self) -> str:
        lines = []
        for kind in TX_KINDS:
            cpu, net = self.costs[kind]
            lines += [f"[{kind}]", f"cpu_us = {cpu}", f"net_bytes = {net}", ""]
        lines += ["[ram]", f"row_bytes = {self.ram_row_bytes}", ""]
        return "\n".join(lines)

    @classmethod
    def from_config(cls, text: str) -> "ResourceTariff":
        """Parse an INI document; absent sections keep the default costs."""
        parser = configparser.ConfigParser()
        parser.read_string(text)
        costs = dict(DEFAULT_COSTS)
        for section in parser.sections():
            if section == "ram":
                continue
            if section not in DEFAULT_COSTS:
                raise errors.InvalidTransaction(f"unknown tariff section {section!r}")
            cpu, net = costs[section]
            costs[section] = (
                parser.getint(section, "cpu_us", fallback=cpu),
                parser.getint(section, "net_bytes", fallback=net),
            )
        ram = parser.getint("ram", "row_bytes", fallback=DEFAULT_RAM_ROW_BYTES)
        return cls(costs, ram)

    @classmethod
    def from_file(cls, path: str | Path) -> "ResourceTariff":
        return cls.from_config(Path(path).read_text())


@dataclass(frozen=True)
class ProducerSchedule:
    producers: tuple[str, ...]
    blocks_per_turn: int = 6
    block_interval_ms: int = 500

    def __post_init__(self) -> None:
        if not self.producers:
            raise ValueError("schedule needs at least one producer")
        if self.blocks_per_turn < 1 or self.block_interval_ms < 1:
            raise ValueError("blocks_per_turn and block_interval_ms must be positive")

    def producer_at(self, height: int) -> str:
        return self.producers[(height // self.blocks_per_turn) % len(self.producers)]

    @property
    def turn_ms(self) -> int:
        return self.blocks_per_turn * self.block_interval_ms


@dataclass
class Account:
    id: str
    public_key: str
    staked_tokens: int = 0
    cpu_budget_us: int = 0
    net_budget_bytes: int = 0
    ram_bytes: int = 0
    delegated_out: list[tuple[str, int, int]] = field(default_factory=list)
    # metering state, not part of the public record
    ram_used: int = 0
    cpu_used_us: int = 0
    net_used_bytes: int = 0
    window: int = -1

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "public_key": self.public_key,
            "staked_tokens": self.staked_tokens,
            "cpu_budget_us": self.cpu_budget_us,
            "net_budget_bytes": self.net_budget_bytes,
            "ram_bytes": self.ram_bytes,
            "ram_used": self.ram_used,
            "delegated_out": [list(d) for d in self.delegated_out],
        }


@dataclass(frozen=True)
class Receipt:
    accepted: bool
    cpu_charged_us: int
    net_charged_bytes: int
    tx_id: str = ""
    error: str | None = None


class Applier(Protocol):
    def begin_block(self, height: int, timestamp_ms: int) -> None: ...

    def apply_transaction(
        self, tx: Transaction, height: int, index: int, timestamp_ms: int
    ) -> bool: ...


# ---------------------------------------------------------------------------
# chain verification / persistence
# ---------------------------------------------------------------------------


def verify_blocks(
    blocks: Sequence[Block],
    block_interval_ms: int = 500,
    schedule: ProducerSchedule | None = None,
) -> bool:
    """True iff every hash recomputes and every link and slot is consistent."""
    if not blocks:
        return False
    genesis_ts = blocks[0].timestamp_ms
    prev = ZERO_HASH
    for expected_height, block in enumerate(blocks):
        if block.height != expected_height or block.prev_hash != prev:
            return False
        if block.timestamp_ms != genesis_ts + expected_height * block_interval_ms:
            return False
        if schedule is not None and block.producer != schedule.producer_at(block.height):
            return False
        try:
            if not all(tx.signature_valid() for tx in block.tx_list) or not block.hash_ok():
                return False
        except TypeError:
            # a value the canonical encoding refuses, e.g. a float
            return False
        prev = block.block_hash
    return True


def write_jsonl(blocks: Iterable[Block], out: IO[str]) -> None:
    for block in blocks:
        out.write(block.to_json())
        out.write("\n")


def iter_jsonl(lines: Iterable[str]) -> Iterator[Block]:
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            yield Block.from_dict(json.loads(line))
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise errors.ParseError(f"line {lineno}: {exc}", line=lineno) from exc


def read_jsonl(path: str | Path) -> list[Block]:
    with open(path, encoding="utf-8") as fh:
        return list(iter_jsonl(fh))


def verify_jsonl_bytes(data: bytes, block_interval_ms: int = 500) -> bool:
    """Verify a serialized chain; undecodable input counts as tampered."""
    try:
        blocks = list(iter_jsonl(data.decode("utf-8").splitlines()))
    except (UnicodeDecodeError, errors.ParseError):
        return False
    # whitespace and line-break variants parse to the same blocks, so the
    # bytes themselves must be the canonical export
    if "".join(b.to_json() + "\n" for b in blocks).encode("utf-8") != data:
        return False
    return verify_blocks(blocks, block_interval_ms)


# ---------------------------------------------------------------------------
# ledger
# ---------------------------------------------------------------------------


class Ledger:
    """Accounts, pending pool and chain.

    Budgets are recomputed from stake whenever stake changes; usage resets
    at every producer-turn boundary (``blocks_per_turn`` slots).
    """

    def __init__(
        self,
        schedule: ProducerSchedule,
        tariff: ResourceTariff | None = None,
        *,
        genesis_time_ms: int = 0,
        cpu_capacity_us: int = 10_000_000,
        net_capacity_bytes: int = 10_000_000,
        confirmation_depth: int = 1,
        metered: bool = True,
    ) -> None:
        if confirmation_depth < 1:
            raise ValueError("confirmation_depth must be >= 1")
        self.schedule = schedule
        self.tariff = tariff or ResourceTariff()
        self.genesis_time_ms = genesis_time_ms
        self.cpu_capacity_us = cpu_capacity_us
        self.net_capacity_bytes = net_capacity_bytes
        self.confirmation_depth = confirmation_depth
        self.metered = metered
        self.accounts: dict[str, Account] = {}
        self.chain: list[Block] = []
        self.pool: deque[Transaction] = deque()
        self.missing: set[str] = set()
        self._delegated_in: dict[str, tuple[int, int]] = {}

    # -- accounts ------------------------------------------------------------

    def register_account(
        self,
        account_id: str,
        public_key: str | None = None,
        *,
        stake: int = 0,
        ram_bytes: int = 0,
    ) -> Account:
        if not account_id or len(account_id) > MAX_ACCOUNT_NAME:
            raise errors.InvalidAccount(f"bad account name {account_id!r}", account=account_id)
        if account_id in self.accounts:
            raise errors.DuplicateAccount(account_id, account=account_id)
        if stake < 0 or ram_bytes < 0:
            raise ValueError("stake and ram_bytes must be non-negative")
        acct = Account(account_id, public_key or "PUB_" + digest(account_id)[:24], stake, ram_bytes=ram_bytes)
        self.accounts[account_id] = acct
        self._recompute_budgets()
        return acct

    def account(self, account_id: str) -> Account:
        try:
            return self.accounts[account_id]
        except KeyError:
            raise errors.UnknownAccount(account_id, account=account_id) from None

    @property
    def total_stake(self) -> int:
        return sum(a.staked_tokens for a in self.accounts.values())

    def stake(self, account_id: str, tokens: int) -> Account:
        acct = self.account(account_id)
        if acct.staked_tokens + tokens < 0:
            raise errors.InsufficientResources("cannot unstake more than staked", account=account_id)
        acct.staked_tokens += tokens
        self._recompute_budgets()
        return acct

    def unstake(self, account_id: str, tokens: int) -> Account:
        return self.stake(account_id, -tokens)

    def delegate_bandwidth(
        self, src: str, dst: str, cpu_us: int, net_bytes: int, ram_bytes: int = 0
    ) -> tuple[Account, Account]:
        if ram_bytes:
            raise errors.RamDelegationForbidden("RAM cannot be delegated", account=src)
        if cpu_us < 0 or net_bytes < 0:
            raise ValueError("delegated amounts must be non-negative")
        a, b = self.account(src), self.account(dst)
        if cpu_us == 0 and net_bytes == 0:
            return a, b
        if a.cpu_budget_us < cpu_us or a.net_budget_bytes < net_bytes:
            raise errors.InsufficientResources(
                f"{src} cannot delegate {cpu_us} us / {net_bytes} B", account=src
            )
        a.delegated_out.append((dst, cpu_us, net_bytes))
        cin, nin = self._delegated_in.get(dst, (0, 0))
        self._delegated_in[dst] = (cin + cpu_us, nin + net_bytes)
        self._recompute_budgets()
        return a, b

    def _recompute_budgets(self) -> None:
        total = self.total_stake
        for acct in self.accounts.values():
            if total:
                cpu = self.cpu_capacity_us * acct.staked_tokens // total
                net = self.net_capacity_bytes * acct.staked_tokens // total
            else:
                cpu = net = 0
            cin, nin = self._delegated_in.get(acct.id, (0, 0))
            cout = sum(d[1] for d in acct.delegated_out)
            nout = sum(d[2] for d in acct.delegated_out)
            acct.cpu_budget_us = max(0, cpu - cout + cin)
            acct.net_budget_bytes = max(0, net - nout + nin)

    def dump_accounts(self) -> list[dict[str, Any]]:
        return [self.accounts[k].to_dict() for k in sorted(self.accounts)]

    def load_accounts(self, rows: Iterable[Mapping[str, Any]]) -> None:
        """Restore accounts written by :meth:`dump_accounts` (replaces existing ones)."""
        self.accounts.clear()
        self._delegated_in.clear()
        for row in rows:
            acct = Account(
                row["id"],
                row["public_key"],
                row.get("staked_tokens", 0),
                ram_bytes=row.get("ram_bytes", 0),
                delegated_out=[tuple(d) for d in row.get("delegated_out", ())],
                ram_used=row.get("ram_used", 0),
            )
            self.accounts[acct.id] = acct
            for dst, cpu, net in acct.delegated_out:
                cin, nin = self._delegated_in.get(dst, (0, 0))
                self._delegated_in[dst] = (cin + cpu, nin + net)
        self._recompute_budgets()

    def window_of(self, t_ms: int) -> int:
        return (t_ms - self.genesis_time_ms) // self.schedule.turn_ms

    def remaining(self, account_id: str, at_ms: int) -> tuple[int, int]:
        acct = self.account(account_id)
        if acct.window != self.window_of(at_ms):
            return acct.cpu_budget_us, acct.net_budget_bytes
        return (
            acct.cpu_budget_us - acct.cpu_used_us,
            acct.net_budget_bytes - acct.net_used_bytes,
        )

    def charge_ram(self, account_id: str, nbytes: int) -> None:
        if not self.metered or account_id not in self.accounts:
            return
        acct = self.accounts[account_id]
        if acct.ram_used + nbytes > acct.ram_bytes:
            raise errors.InsufficientResources(
                f"{account_id} needs {nbytes} B RAM, has {acct.ram_bytes - acct.ram_used}",
                account=account_id,
            )
        acct.ram_used += nbytes

    def refund_ram(self, account_id: str, nbytes: int) -> None:
        if not self.metered or account_id not in self.accounts:
            return
        acct = self.accounts[account_id]
        acct.ram_used = max(0, acct.ram_used - nbytes)

    # -- submission ------------------------------------------------------------

    def submit_transaction(self, tx: Transaction) -> Receipt:
        if tx.kind not in ALL_KINDS:
            raise errors.InvalidTransaction(f"unknown transaction kind {tx.kind!r}")
        acct = self.account(tx.sender)
        if not tx.signature_valid():
            raise errors.BadSignature(f"signature mismatch for {tx.sender}", account=tx.sender)
        cpu, net = self.tariff.cost(tx.kind)
        if self.metered and (cpu or net):
            window = self.window_of(tx.submitted_at)
            if acct.window != window:
                acct.window, acct.cpu_used_us, acct.net_used_bytes = window, 0, 0
            if (
                acct.cpu_budget_us - acct.cpu_used_us < cpu
                or acct.net_budget_bytes - acct.net_used_bytes < net
            ):
                raise errors.InsufficientResources(
                    f"{tx.sender} lacks {cpu} us CPU / {net} B NET for {tx.kind}",
                    account=tx.sender,
                    kind=tx.kind,
                )
            acct.cpu_used_us += cpu
            acct.net_used_bytes += net
        self.pool.append(tx)
        return Receipt(True, cpu, net, tx.tx_id)

    def try_submit(self, tx: Transaction) -> Receipt:
        try:
            return self.submit_transaction(tx)
        except errors.RbacChainError as exc:
            return Receipt(False, 0, 0, tx.tx_id, exc.code)

    # -- production ------------------------------------------------------------

    @property
    def tip(self) -> Block:
        return self.chain[-1]

    @property
    def next_slot_ms(self) -> int:
        if not self.chain:
            return self.genesis_time_ms
        return self.tip.timestamp_ms + self.schedule.block_interval_ms

    def mark_missing(self, producer: str, missing: bool = True) -> None:
        if missing:
            self.missing.add(producer)
        else:
            self.missing.discard(producer)

    def create_genesis(self, tx_list: Sequence[Transaction], applier: Applier) -> Block:
        if self.chain:
            raise RuntimeError("genesis already exists")
        return self._seal(tx_list, applier, self.genesis_time_ms)

    def produce_block(self, now_ms: int, applier: Applier) -> Block:
        if not self.chain:
            raise RuntimeError("chain not initialized")
        if now_ms < self.tip.timestamp_ms:
            raise errors.ClockRegression(
                f"now {now_ms} < tip {self.tip.timestamp_ms}", now_ms=now_ms
            )
        slot = self.next_slot_ms
        if now_ms < slot:
            raise errors.SlotNotDue(f"next slot at {slot}, now {now_ms}", now_ms=now_ms)
        height = self.tip.height + 1
        if self.schedule.producer_at(height) in self.missing:
            return self._seal((), applier, slot)
        pending, self.pool = list(self.pool), deque()
        return self._seal(pending, applier, slot)

    def _seal(self, pending: Sequence[Transaction], applier: Applier, ts: int) -> Block:
        height = len(self.chain)
        applier.begin_block(height, ts)
        included: list[Transaction] = []
        for tx in pending:
            if applier.apply_transaction(tx, height, len(included), ts):
                included.append(tx)
        prev = self.tip.block_hash if self.chain else ZERO_HASH
        block = Block.build(height, self.schedule.producer_at(height), ts, prev, included)
        self.chain.append(block)
        logger.debug("sealed block %d with %d txs", height, len(included))
        return block

    def append_block(self, block: Block) -> None:
        """Append an externally built block (replay path); links are checked."""
        prev = self.tip.block_hash if self.chain else ZERO_HASH
        if block.prev_hash != prev or block.height != len(self.chain):
            raise errors.ReplayMismatch(f"block {block.height} does not link")
        self.chain.append(block)

    def confirmed_at(self, height: int) -> int:
        """Simulated time at which a block reaches the confirmation depth."""
        return (
            self.genesis_time_ms
            + (height + self.confirmation_depth - 1) * self.schedule.block_interval_ms
        )

    def verify_chain(self) -> bool:
        return verify_blocks(self.chain, self.schedule.block_interval_ms, self.schedule)

    def export_jsonl(self, out: IO[str]) -> None:
        write_jsonl(self.chain, out)
