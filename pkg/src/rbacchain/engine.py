"""The authorization engine: a ledger whose blocks drive the policy state.

Typical use::

    eng = Engine(issuer="hospital")
    eng.declare_role("doctor")
    eng.execute(ROLE_ASSIGN, "hospital", subject="alice", role="doctor")
    eng.check_access(AccessRequest("alice", "read", "file3"))
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import IO, Any, Iterable, Mapping, Sequence

from . import access as acc
from . import constraints as cons
from . import delegation as dlg
from . import errors
from . import ledger as lg
from . import policy as pol
from .access import AccessRequest, AuditEvent, AuditLog, Decision
from .ledger import Block, Ledger, ProducerSchedule, Receipt, ResourceTariff, Transaction
from .policy import Permission, PolicyState

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TxRecord:
    """Execution trace of one committed transaction."""

    tx_id: str
    kind: str
    block_height: int
    tx_index: int
    exe_start_ms: float
    exe_done_ms: float
    cpu_us: int
    net_bytes: int


def _req(payload: Mapping[str, Any], key: str) -> Any:
    try:
        return payload[key]
    except KeyError:
        raise errors.InvalidTransaction(f"payload missing {key!r}") from None


def _decode_fields(fields: Mapping[str, Any]) -> dict[str, Any]:
    out = dict(fields)
    if "constraints" in out:
        out["constraints"] = tuple(
            cons.ContextCondition.from_dict(c) for c in out["constraints"] or ()
        )
    return out


class Engine:
    def __init__(
        self,
        issuer: str = "issuer",
        producers: Sequence[str] = ("producer1",),
        *,
        blocks_per_turn: int = 6,
        block_interval_ms: int = 500,
        genesis_time_ms: int = 0,
        tariff: ResourceTariff | None = None,
        cpu_capacity_us: int = 10_000_000,
        net_capacity_bytes: int = 10_000_000,
        confirmation_depth: int = 1,
        issuer_stake: int = 1_000,
        issuer_ram: int = 10_000_000,
        metered: bool = True,
        _genesis: Block | None = None,
    ) -> None:
        self.schedule = ProducerSchedule(tuple(producers), blocks_per_turn, block_interval_ms)
        self.ledger = Ledger(
            self.schedule,
            tariff,
            genesis_time_ms=genesis_time_ms,
            cpu_capacity_us=cpu_capacity_us,
            net_capacity_bytes=net_capacity_bytes,
            confirmation_depth=confirmation_depth,
            metered=metered,
        )
        self.state = PolicyState(issuer)
        self.audit = AuditLog()
        self.records: dict[str, TxRecord] = {}
        self.results: dict[str, Any] = {}
        self.rejections: dict[str, errors.RbacChainError] = {}
        self._nonce = 0
        self._block_clock = 0.0
        if metered:
            self.ledger.register_account(issuer, stake=issuer_stake, ram_bytes=issuer_ram)
        if _genesis is not None:
            self.ledger.append_block(_genesis)
        else:
            deploy = Transaction.create(
                lg.DEPLOY,
                issuer,
                {
                    "issuer": issuer,
                    "producers": list(producers),
                    "blocks_per_turn": blocks_per_turn,
                    "block_interval_ms": block_interval_ms,
                    "genesis_time_ms": genesis_time_ms,
                    "confirmation_depth": confirmation_depth,
                },
                genesis_time_ms,
            )
            self.ledger.create_genesis([deploy], self)

    # -- properties --------------------------------------------------------------

    @property
    def issuer(self) -> str:
        return self.state.issuer

    @property
    def chain(self) -> list[Block]:
        return self.ledger.chain

    @property
    def now_ms(self) -> int:
        return self.ledger.tip.timestamp_ms

    # -- submission ----------------------------------------------------------------

    def make_tx(
        self, kind: str, sender: str, payload: Mapping[str, Any], submitted_at: int | None = None
    ) -> Transaction:
        self._nonce += 1
        at = self.now_ms if submitted_at is None else submitted_at
        return Transaction.create(kind, sender, payload, at, self._nonce)

    def submit(self, tx: Transaction) -> Receipt:
        return self.ledger.submit_transaction(tx)

    def produce_block(self, now_ms: int | None = None) -> Block:
        return self.ledger.produce_block(self.ledger.next_slot_ms if now_ms is None else now_ms, self)

    def advance_to(self, now_ms: int) -> list[Block]:
        """Produce every slot due up to *now_ms*."""
        out = []
        while self.ledger.next_slot_ms <= now_ms:
            out.append(self.produce_block(self.ledger.next_slot_ms))
        return out

    def execute(self, kind: str, sender: str, payload: Mapping[str, Any] | None = None, **kw: Any) -> Any:
        """Submit one transaction, seal the next block, return its result.

        Raises the domain error if the transaction was rejected at
        submission or during block application.
        """
        body = dict(payload or {}, **kw)
        tx = self.make_tx(kind, sender, body)
        self.submit(tx)
        self.produce_block()
        tx_id = tx.tx_id
        if tx_id in self.rejections:
            raise self.rejections[tx_id]
        if tx_id not in self.results:
            # scheduled producer was missing; the tx is still pooled
            return None
        return self.results[tx_id]

    def outcome(self, tx: Transaction) -> Any:
        if tx.tx_id in self.rejections:
            raise self.rejections[tx.tx_id]
        return self.results.get(tx.tx_id)

    # convenience wrappers -----------------------------------------------------

    def declare_role(self, *roles: str) -> None:
        for r in roles:
            self.execute(lg.DECLARE_ROLE, self.issuer, role=r)

    def add_hierarchy_edge(self, senior: str, junior: str, sender: str | None = None) -> None:
        self.execute(lg.ADD_HIERARCHY_EDGE, sender or self.issuer, senior=senior, junior=junior)

    def add_mutual_exclusion(self, role_a: str, role_b: str) -> None:
        self.execute(lg.ADD_MUTUAL_EXCLUSION, self.issuer, role_a=role_a, role_b=role_b)

    def assign_role(self, subject: str, role: str, sender: str | None = None) -> Any:
        return self.execute(lg.ROLE_ASSIGN, sender or self.issuer, subject=subject, role=role)

    def assign_permission(self, permission: Permission, sender: str | None = None) -> Any:
        return self.execute(lg.PERMISSION_ASSIGN, sender or self.issuer, permission=permission.to_dict())

    def delegate(self, delegator: str, delegate: str, role: str, **options: Any) -> dlg.Delegation:
        return self.execute(lg.RIGHT_TRANSFER, delegator, delegate=delegate, role=role, **options)

    def check_access(self, req: AccessRequest, sender: str | None = None) -> Decision:
        """Charged CheckAccess transaction; the decision is audited."""
        return self.execute(lg.CHECK_ACCESS, sender or self.issuer, req.to_payload())

    def query(self, req: AccessRequest) -> Decision:
        """Uncharged, unaudited read of the committed state."""
        return acc.check_access(self.state, req)

    # -- block application (ledger Applier protocol) ------------------------------

    def begin_block(self, height: int, timestamp_ms: int) -> None:
        self._block_clock = 0.0
        removed = dlg.expire_delegations(self.state, timestamp_ms)
        if removed:
            self.audit.append(
                AuditEvent(height, None, "expire", {"timestamp_ms": timestamp_ms, "removed": removed})
            )

    def apply_transaction(self, tx: Transaction, height: int, index: int, timestamp_ms: int) -> bool:
        t0 = time.perf_counter()
        try:
            result, subject, details = self._dispatch(tx, timestamp_ms)
        except errors.RbacChainError as exc:
            self.rejections[tx.tx_id] = exc
            self._block_clock += (time.perf_counter() - t0) * 1e3
            logger.debug("tx %s rejected: %s", tx.tx_id, exc)
            return False
        elapsed = (time.perf_counter() - t0) * 1e3
        payload = {"subject": subject, "timestamp_ms": timestamp_ms, "tx": tx.to_dict()}
        payload.update(details)
        if tx.kind != lg.DEPLOY:
            ref = self.audit.append(AuditEvent(height, index, tx.kind, payload))
            if isinstance(result, Decision):
                result = Decision(
                    result.allowed, result.reason, result.matched_permission, result.obligations, ref
                )
        self.results[tx.tx_id] = result
        # execution is placed in the slot leading up to the block; genesis has no slot
        slot_open = timestamp_ms if height == 0 else timestamp_ms - self.schedule.block_interval_ms
        start = slot_open + self._block_clock
        self._block_clock += elapsed
        cpu, net = self.ledger.tariff.cost(tx.kind)
        self.records[tx.tx_id] = TxRecord(tx.tx_id, tx.kind, height, index, start, start + elapsed, cpu, net)
        return True

    def _dispatch(self, tx: Transaction, ts: int) -> tuple[Any, str | None, dict[str, Any]]:
        p, s, st = tx.payload, tx.sender, self.state
        kind = tx.kind
        if kind == lg.DEPLOY:
            if _req(p, "issuer") != st.issuer:
                raise errors.ReplayMismatch("deploy issuer does not match engine")
            return None, None, {}
        if kind == lg.DECLARE_ROLE:
            pol.declare_role(st, s, _req(p, "role"))
            return None, None, {}
        if kind == lg.ADD_HIERARCHY_EDGE:
            pol.add_hierarchy_edge(st, s, _req(p, "senior"), _req(p, "junior"))
            return None, None, {}
        if kind == lg.ADD_SOD_RULE:
            pol.add_sod_rule(st, s, cons.SodRule.from_dict(_req(p, "rule")))
            return None, None, {}
        if kind == lg.ADD_MUTUAL_EXCLUSION:
            rule = pol.add_mutual_exclusion(st, s, _req(p, "role_a"), _req(p, "role_b"))
            return rule, None, {}
        if kind == lg.SET_CARDINALITY:
            pol.set_cardinality(st, s, int(_req(p, "max_roles")))
            return None, None, {}
        if kind == lg.ADD_FACT:
            pol.add_fact(st, s, _req(p, "predicate"), _req(p, "x"), _req(p, "y"))
            return None, None, {}

        if kind == lg.ROLE_ASSIGN:
            subj = _req(p, "subject")
            rec = pol.apply_role_assign(st, s, subj, _req(p, "role"), at_ms=ts)
            return rec, subj, {}
        if kind == lg.ROLE_UPDATE:
            subj = _req(p, "subject")
            rec, dropped = pol.apply_role_update(
                st, s, subj, _req(p, "role"), old_role=p.get("old_role"), at_ms=ts
            )
            return rec, subj, {"cascaded": dropped}
        if kind == lg.ROLE_REVOKE:
            subj = _req(p, "subject")
            removed, dropped = pol.apply_role_revoke(
                st, s, subj, _req(p, "role"), p.get("strength", pol.WEAK)
            )
            return removed, subj, {"removed_roles": removed, "cascaded": dropped}
        if kind == lg.PERMISSION_ASSIGN:
            perm = Permission.from_dict(_req(p, "permission"))
            # authorization outranks the storage charge
            pol._require_issuer(st, s)
            row = self.ledger.tariff.ram_row_bytes
            self.ledger.charge_ram(s, row)
            try:
                pol.apply_permission_assign(st, s, perm)
            except errors.RbacChainError:
                self.ledger.refund_ram(s, row)
                raise
            return perm, None, {}
        if kind == lg.PERMISSION_UPDATE:
            perm = pol.apply_permission_update(
                st, s, _req(p, "identifier"), **_decode_fields(p.get("fields") or {})
            )
            return perm, None, {}
        if kind == lg.PERMISSION_REVOKE:
            ids = pol.apply_permission_revoke(st, s, _req(p, "role"))
            self.ledger.refund_ram(s, self.ledger.tariff.ram_row_bytes * len(ids))
            return ids, None, {"removed": ids}
        if kind == lg.RIGHT_TRANSFER:
            with pol.atomic(st, check=bool(st.constraints.rules)):
                rec = dlg.apply_right_transfer(
                    st,
                    s,
                    _req(p, "delegate"),
                    _req(p, "role"),
                    delegation_id=tx.tx_id,
                    at_ms=ts,
                    expiry_ms=p.get("expiry_ms"),
                    start_ms=p.get("start_ms"),
                    mode=p.get("mode", dlg.GRANT),
                    multi_step=bool(p.get("multi_step", False)),
                    levels=p.get("levels"),
                    parent=p.get("parent"),
                )
            notices = [
                {"to": rec.delegator, "message": "accept", "delegation": rec.delegation_id},
                {"to": rec.delegate, "message": "notify", "delegation": rec.delegation_id},
            ]
            return rec, s, {"delegation": rec.to_dict(), "notifications": notices}
        if kind == lg.REMOVE_RIGHT_TRANSFER:
            removed = dlg.apply_remove_right_transfer(st, s, _req(p, "delegation"))
            return removed, s, {"removed": removed}
        if kind == lg.CHECK_ACCESS:
            try:
                req = AccessRequest.from_payload(p, default_at=ts)
            except KeyError as exc:
                raise errors.InvalidTransaction(f"payload missing {exc}") from None
            decision = acc.check_access(st, req)
            return decision, req.subject_id, {"decision": decision.to_dict()}
        raise errors.InvalidTransaction(f"unknown transaction kind {kind!r}")

    # -- queries ------------------------------------------------------------------

    def effective_roles(self, subject_id: str, at_ms: int | None = None) -> set[str]:
        return self.state.effective_roles(subject_id, self.now_ms if at_ms is None else at_ms)

    def detect_redundancy(self) -> pol.RedundancyReport:
        return pol.detect_redundancy(self.state)

    def audit_log(self, **filters: Any) -> list[AuditEvent]:
        return self.audit.query(**filters)

    def snapshot(self) -> dict[str, Any]:
        return self.state.snapshot()

    def verify_chain(self) -> bool:
        return self.ledger.verify_chain()

    def export_chain(self, out: IO[str]) -> None:
        self.ledger.export_jsonl(out)

    def timelines(self) -> list[TxRecord]:
        """Committed transactions in chain order."""
        return sorted(self.records.values(), key=lambda r: (r.block_height, r.tx_index))

    # -- replay -------------------------------------------------------------------

    @classmethod
    def replay(cls, blocks: Sequence[Block]) -> "Engine":
        """Rebuild an engine from exported blocks, re-applying every transaction.

        Raises ``ReplayMismatch`` if a transaction no longer commits or a
        rebuilt block hash differs from the recorded one.
        """
        if not blocks:
            raise errors.ReplayMismatch("empty chain")
        genesis = blocks[0]
        deploys = [t for t in genesis.tx_list if t.kind == lg.DEPLOY]
        if genesis.height != 0 or len(deploys) != 1 or not genesis.hash_ok():
            raise errors.ReplayMismatch("genesis block lacks a valid deploy record")
        d = deploys[0].payload
        eng = cls(
            d["issuer"],
            d["producers"],
            blocks_per_turn=d["blocks_per_turn"],
            block_interval_ms=d["block_interval_ms"],
            genesis_time_ms=d["genesis_time_ms"],
            confirmation_depth=d.get("confirmation_depth", 1),
            metered=False,
            _genesis=genesis,
        )
        for block in blocks[1:]:
            eng.apply_block(block)
        return eng

    def apply_block(self, block: Block) -> None:
        expected_ts = self.ledger.next_slot_ms
        if block.timestamp_ms != expected_ts or block.height != len(self.chain):
            raise errors.ReplayMismatch(f"block {block.height} is out of schedule")
        self.begin_block(block.height, block.timestamp_ms)
        for i, tx in enumerate(block.tx_list):
            if not tx.signature_valid():
                raise errors.ReplayMismatch(f"bad signature in block {block.height}")
            if not self.apply_transaction(tx, block.height, i, block.timestamp_ms):
                raise errors.ReplayMismatch(
                    f"tx {i} of block {block.height} rejected on replay: {self.rejections[tx.tx_id]}"
                )
        rebuilt = Block.build(block.height, block.producer, block.timestamp_ms, block.prev_hash, block.tx_list)
        if rebuilt.block_hash != block.block_hash:
            raise errors.ReplayMismatch(f"hash mismatch at block {block.height}")
        self.ledger.append_block(block)
        # new transactions must not reuse a recorded nonce
        self._nonce = max([self._nonce, *(tx.nonce for tx in block.tx_list)])

    def replay_audit(self, events: Iterable[AuditEvent]) -> None:
        """Re-apply an audit trail onto this (fresh) engine's policy state."""
        for ev in events:
            ts = ev.timestamp_ms
            if ev.event_kind == "expire":
                dlg.expire_delegations(self.state, ts)
                continue
            tx = Transaction.from_dict(ev.payload["tx"])
            self._dispatch(tx, ts)
