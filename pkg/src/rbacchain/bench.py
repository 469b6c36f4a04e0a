"""Reproducible benchmark scenarios.

A scenario seeds a small organisation, then spreads ``volume`` transactions
uniformly over ``duration_ms`` of simulated time while the chain seals a
block every slot. Extra peers re-execute the produced chain independently
so each contributes its own execution timings.
"""

from __future__ import annotations

import json
import math
import random
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

from . import errors
from . import ledger as lg
from . import metrics as mx
from .access import AccessRequest
from .engine import Engine
from .policy import Permission

DEFAULT_MIX = {
    lg.ROLE_ASSIGN: 3,
    lg.ROLE_UPDATE: 1,
    lg.ROLE_REVOKE: 1,
    lg.PERMISSION_ASSIGN: 1,
    lg.PERMISSION_UPDATE: 1,
    lg.PERMISSION_REVOKE: 0.2,
    lg.RIGHT_TRANSFER: 1,
    lg.REMOVE_RIGHT_TRANSFER: 0.5,
    lg.CHECK_ACCESS: 6,
}

ACTIONS = ("read", "write", "approve")


@dataclass
class Scenario:
    volume: int
    producers: int = 1
    duration_ms: int = 10_000
    tx_mix: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MIX))
    repetitions: int = 1
    seed: int = 0
    subjects: int = 40
    roles: int = 6
    objects: int = 10
    peers: int = 1
    confirmation_depth: int = 1

    def validate(self) -> None:
        if self.volume < 1:
            raise errors.InvalidScenario("volume must be >= 1")
        if self.producers < 1 or self.peers < 1 or self.repetitions < 1:
            raise errors.InvalidScenario("producers, peers and repetitions must be >= 1")
        if self.duration_ms < 1:
            raise errors.InvalidScenario("duration_ms must be positive")
        if self.subjects < 2 or self.roles < 1 or self.objects < 1:
            raise errors.InvalidScenario("need >= 2 subjects, >= 1 role and >= 1 object")
        unknown = set(self.tx_mix) - set(lg.TX_KINDS)
        if unknown:
            raise errors.InvalidScenario(f"unknown kinds in tx_mix: {sorted(unknown)}")
        if not any(w > 0 for w in self.tx_mix.values()):
            raise errors.InvalidScenario("tx_mix needs a positive weight")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Scenario":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise errors.InvalidScenario(f"unknown scenario fields {sorted(extra)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise errors.InvalidScenario(str(exc)) from None

    @classmethod
    def from_file(cls, path: str | Path) -> "Scenario":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise errors.InvalidScenario(f"{path}: {exc}") from None


class LoadGenerator:
    """Picks plausible transactions against the engine's committed state."""

    def __init__(self, eng: Engine, sc: Scenario, rng: random.Random) -> None:
        self.eng, self.sc, self.rng = eng, sc, rng
        self.subjects = [f"s{i}" for i in range(sc.subjects)]
        self.roles = [f"r{i}" for i in range(sc.roles)]
        self.objects = [f"obj{i}" for i in range(sc.objects)]
        self.kinds = [k for k, w in sc.tx_mix.items() if w > 0]
        self.weights = [sc.tx_mix[k] for k in self.kinds]
        self._perm_seq = 0

    def seed_policy(self) -> None:
        eng, issuer = self.eng, self.eng.issuer
        for s in self.subjects:
            eng.ledger.register_account(s, stake=1)
        eng.ledger.register_account("svc", stake=1_000)
        txs = [eng.make_tx(lg.DECLARE_ROLE, issuer, {"role": r}) for r in self.roles]
        for a, b in zip(self.roles[::2], self.roles[1::2]):
            txs.append(eng.make_tx(lg.ADD_HIERARCHY_EDGE, issuer, {"senior": a, "junior": b}))
        for i, r in enumerate(self.roles):
            txs.append(eng.make_tx(lg.PERMISSION_ASSIGN, issuer, {"permission": self._perm(r).to_dict()}))
        for i, s in enumerate(self.subjects):
            if i % 2 == 0:
                txs.append(eng.make_tx(lg.ROLE_ASSIGN, issuer, {"subject": s, "role": self.roles[i % len(self.roles)]}))
        for tx in txs:
            eng.submit(tx)
        eng.produce_block()

    def _perm(self, role: str) -> Permission:
        self._perm_seq += 1
        return Permission(
            f"p{self._perm_seq}",
            "A+",
            role,
            self.rng.choice(ACTIONS),
            self.rng.choice(self.objects),
        )

    def next_tx(self, at_ms: int) -> lg.Transaction:
        kind = self.rng.choices(self.kinds, self.weights)[0]
        sender, payload = self._build(kind, at_ms)
        if payload is None:
            kind = lg.CHECK_ACCESS
            sender, payload = self._check(at_ms)
        return self.eng.make_tx(kind, sender, payload, submitted_at=at_ms)

    def _check(self, at_ms: int) -> tuple[str, dict[str, Any]]:
        req = AccessRequest(
            self.rng.choice(self.subjects),
            self.rng.choice(ACTIONS),
            self.rng.choice(self.objects),
        )
        payload = req.to_payload()
        payload["at_ms"] = None
        return "svc", payload

    def _build(self, kind: str, at_ms: int) -> tuple[str, dict[str, Any] | None]:
        st, rng, issuer = self.eng.state, self.rng, self.eng.issuer
        assigned = sorted(st.assignments)
        if kind == lg.CHECK_ACCESS:
            return self._check(at_ms)
        if kind == lg.ROLE_ASSIGN:
            s, r = rng.choice(self.subjects), rng.choice(self.roles)
            return issuer, {"subject": s, "role": r}
        if kind == lg.ROLE_UPDATE and assigned:
            s, r = rng.choice(assigned)
            return issuer, {"subject": s, "role": rng.choice(self.roles), "old_role": r}
        if kind == lg.ROLE_REVOKE and assigned:
            s, r = rng.choice(assigned)
            return issuer, {"subject": s, "role": r, "strength": "weak"}
        if kind == lg.PERMISSION_ASSIGN:
            return issuer, {"permission": self._perm(rng.choice(self.roles)).to_dict()}
        if kind == lg.PERMISSION_UPDATE and st.permissions:
            pid = rng.choice(sorted(st.permissions))
            return issuer, {"identifier": pid, "fields": {"target": rng.choice(self.objects)}}
        if kind == lg.PERMISSION_REVOKE and st.permissions:
            role = rng.choice(sorted({p.role for p in st.permissions.values()}))
            return issuer, {"role": role}
        if kind == lg.RIGHT_TRANSFER and assigned:
            s, r = rng.choice(assigned)
            to = rng.choice([x for x in self.subjects if x != s])
            return s, {"delegate": to, "role": r, "expiry_ms": at_ms + rng.randint(2_000, 20_000)}
        if kind == lg.REMOVE_RIGHT_TRANSFER and st.delegations:
            d = st.delegations[rng.choice(sorted(st.delegations))]
            return d.delegator, {"delegation": d.delegation_id}
        return "", None


def _engine_for(sc: Scenario) -> Engine:
    return Engine(
        "issuer",
        [f"bp{i}" for i in range(sc.producers)],
        cpu_capacity_us=10**13,
        net_capacity_bytes=10**13,
        confirmation_depth=sc.confirmation_depth,
        issuer_stake=10_000,
        issuer_ram=10**12,
    )


def run_once(sc: Scenario, rep: int) -> dict[str, Any]:
    wall0 = time.perf_counter()
    rng = random.Random(f"{sc.seed}:{rep}")
    eng = _engine_for(sc)
    gen = LoadGenerator(eng, sc, rng)
    gen.seed_policy()
    start_height = eng.ledger.tip.height
    start_ms = eng.now_ms
    interval = eng.schedule.block_interval_ms
    n_blocks = math.ceil(sc.duration_ms / interval)

    resources: dict[str, dict[str, int]] = {}
    submitted_kinds: dict[str, int] = {}
    refused = 0
    k = 0
    for slot in range(1, n_blocks + 1):
        slot_ts = start_ms + slot * interval
        while k < sc.volume:
            at = start_ms + (k * sc.duration_ms) // sc.volume
            if at >= slot_ts:
                break
            tx = gen.next_tx(at)
            receipt = eng.ledger.try_submit(tx)
            submitted_kinds[tx.kind] = submitted_kinds.get(tx.kind, 0) + 1
            if receipt.accepted:
                row = resources.setdefault(tx.kind, {"count": 0, "cpu_us": 0, "net_bytes": 0})
                row["count"] += 1
                row["cpu_us"] += receipt.cpu_charged_us
                row["net_bytes"] += receipt.net_charged_bytes
            else:
                refused += 1
            k += 1
        eng.produce_block(slot_ts)
    for _ in range(sc.confirmation_depth - 1):
        eng.produce_block()

    end_height = start_height + n_blocks
    load_blocks = eng.chain[start_height : end_height + 1]
    deltas = [b.timestamp_ms - a.timestamp_ms for a, b in zip(load_blocks, load_blocks[1:])]

    def load_records(e: Engine):
        return [r for r in e.timelines() if start_height < r.block_height <= end_height]

    peers = [mx.timelines_from_records(load_records(eng), eng.ledger.confirmed_at)]
    for _ in range(sc.peers - 1):
        replica = Engine.replay(eng.chain)
        peers.append(mx.timelines_from_records(load_records(replica), eng.ledger.confirmed_at))

    window = mx.MetricsWindow(start_ms, float(eng.ledger.confirmed_at(end_height)), peers)
    committed = len(peers[0])
    out: dict[str, Any] = {
        "repetition": rep,
        "block_count": n_blocks,
        "bgt_ms": {
            "mean": statistics.fmean(deltas) if deltas else None,
            "min": min(deltas, default=None),
            "max": max(deltas, default=None),
        },
        "block_deltas_ms": sorted(set(deltas)),
        "submitted": sum(submitted_kinds.values()),
        "submitted_by_kind": dict(sorted(submitted_kinds.items())),
        "refused_at_submission": refused,
        "committed": committed,
        "rejected_at_application": sum(r["count"] for r in resources.values()) - committed,
        "resources": dict(sorted(resources.items())),
        "bttt_s": None,
        "cet_s": None,
        "throughput_tps": mx.compute_throughput(window),
        "peers": sc.peers,
        "window_ms": [window.t_i, window.t_j],
    }
    if committed:
        out["bttt_s"] = mx.compute_bttt(window)
        out["cet_s"] = mx.compute_cet(window)
    out["wall_ms"] = (time.perf_counter() - wall0) * 1e3
    return out


def run_benchmark(scenario: Scenario | Mapping[str, Any]) -> dict[str, Any]:
    """Run every repetition of *scenario* and summarise the means."""
    sc = scenario if isinstance(scenario, Scenario) else Scenario.from_dict(scenario)
    sc.validate()
    reps = [run_once(sc, i) for i in range(sc.repetitions)]

    def mean(key: str) -> float | None:
        vals = [r[key] for r in reps if r[key] is not None]
        return statistics.fmean(vals) if vals else None

    return {
        "scenario": asdict(sc),
        "repetitions": reps,
        "mean": {
            "bttt_s": mean("bttt_s"),
            "cet_s": mean("cet_s"),
            "throughput_tps": mean("throughput_tps"),
            "block_count": mean("block_count"),
            "committed": mean("committed"),
        },
    }
