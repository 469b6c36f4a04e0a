"""One test per acceptance criterion; the terminal summary prints PASS/FAIL lines."""

import csv
import io
import itertools
import math
import random
import time

import pytest

from rbacchain import Engine, bench, errors
from rbacchain import ledger as lg
from rbacchain import metrics as mx
from rbacchain.access import AccessRequest, check_access

import oracles
import universe
from conftest import fund, perm

# CPU µs and NET bytes per kind, as published
TARIFF = {
    lg.ROLE_ASSIGN: (606, 168),
    lg.ROLE_UPDATE: (347, 168),
    lg.ROLE_REVOKE: (209, 104),
    lg.CHECK_ACCESS: (305, 104),
    lg.RIGHT_TRANSFER: (511, 176),
    lg.REMOVE_RIGHT_TRANSFER: (254, 104),
    lg.PERMISSION_ASSIGN: (856, 160),
    lg.PERMISSION_UPDATE: (570, 160),
    lg.PERMISSION_REVOKE: (230, 104),
}


@pytest.mark.criterion(1, "tariff exactness for all nine transaction kinds")
def test_tariff_exactness():
    t0 = time.perf_counter()
    e = Engine("org", ["bp"], cpu_capacity_us=10**9, net_capacity_bytes=10**9)
    fund(e, "alice", "svc")
    e.declare_role("R", "S")
    e.assign_role("alice", "R")
    charged = {}

    def run(kind, sender, **payload):
        tx = e.make_tx(kind, sender, payload)
        receipt = e.submit(tx)
        assert receipt.accepted
        e.produce_block()
        assert tx.tx_id in e.results, e.rejections.get(tx.tx_id)
        charged[kind] = (receipt.cpu_charged_us, receipt.net_charged_bytes)
        return e.results[tx.tx_id]

    run(lg.ROLE_ASSIGN, "org", subject="bob", role="R")
    run(lg.ROLE_UPDATE, "org", subject="bob", role="S")
    run(lg.ROLE_REVOKE, "org", subject="bob", role="S", strength="weak")
    run(lg.PERMISSION_ASSIGN, "org", permission=perm("p1", "A+", "R", "read", "f").to_dict())
    run(lg.PERMISSION_UPDATE, "org", identifier="p1", fields={"target": "g"})
    run(lg.CHECK_ACCESS, "svc", **AccessRequest("alice", "read", "g").to_payload())
    d = run(lg.RIGHT_TRANSFER, "alice", delegate="carol", role="R")
    run(lg.REMOVE_RIGHT_TRANSFER, "alice", delegation=d.delegation_id)
    run(lg.PERMISSION_REVOKE, "org", role="R")
    assert charged == TARIFF
    assert time.perf_counter() - t0 < 1.0


@pytest.mark.criterion(2, "block cadence is exactly 500 ms for 1-8 producers and 0-10,000 tx")
def test_block_cadence():
    def deltas(report):
        r = report["repetitions"][0]
        assert r["block_count"] == math.ceil(10_000 / 500)
        return r["block_deltas_ms"]

    # idle chain, no load at all
    for n in range(1, 9):
        e = Engine("org", [f"bp{i}" for i in range(n)])
        e.advance_to(20_000)
        ts = [b.timestamp_ms for b in e.chain]
        assert {b - a for a, b in zip(ts, ts[1:])} == {500}
    for n in range(1, 9):
        for volume in (1, 1000):
            rep = bench.run_benchmark({"volume": volume, "producers": n, "duration_ms": 10_000, "seed": n})
            assert deltas(rep) == [500]
    for n in (1, 4, 8):
        t0 = time.perf_counter()
        rep = bench.run_benchmark({"volume": 10_000, "producers": n, "duration_ms": 10_000, "seed": n})
        assert time.perf_counter() - t0 < 30
        assert deltas(rep) == [500]
        assert rep["repetitions"][0]["submitted"] == 10_000


@pytest.mark.criterion(3, "check_access agrees with the brute-force oracle on 1,000 universes")
def test_oracle_equivalence():
    t0 = time.perf_counter()
    checked = 0
    for seed in range(1000):
        eng, subjects = universe.build(seed)
        snap = eng.snapshot()
        for s in subjects:
            for op in universe.ACTIONS:
                for obj in universe.OBJECTS:
                    for ctx in universe.CONTEXTS:
                        got = check_access(eng.state, AccessRequest(s, op, obj, eng.now_ms, ctx))
                        want = oracles.decide(snap, s, op, obj, eng.now_ms, ctx)
                        assert (got.allowed, got.reason, got.matched_permission, list(got.obligations)) == (
                            want["allowed"], want["reason"], want["matched"], want["obligations"]
                        ), (seed, s, op, obj, ctx)
                        checked += 1
    assert checked >= 1000 * 2 * 3 * 3 * 2
    assert time.perf_counter() - t0 < 60


@pytest.mark.criterion(4, "levelsofDelegation = 5 allows exactly five re-delegations")
def test_delegation_levels():
    e = Engine("org", ["bp"], cpu_capacity_us=10**9, net_capacity_bytes=10**9)
    people = [f"s{i}" for i in range(8)]
    fund(e, *people)
    e.declare_role("R")
    e.assign_permission(perm("p", "A+", "R", "read", "f"))
    e.assign_role("s0", "R")
    e.delegate("s0", "s1", "R", multi_step=True, levels=5)
    ok = 0
    for a, b in zip(people[1:], people[2:]):
        try:
            e.delegate(a, b, "R")
            ok += 1
        except errors.SingleStepExhausted:
            break
    assert ok == 5
    assert e.query(AccessRequest("s6", "read", "f", e.now_ms)).allowed
    assert not e.query(AccessRequest("s7", "read", "f", e.now_ms)).allowed


@pytest.mark.criterion(5, "delegated access holds before expiry and ends at expiry")
def test_expiry_semantics():
    rng = random.Random(5)
    e = Engine("org", ["bp"], cpu_capacity_us=10**9, net_capacity_bytes=10**9)
    fund(e, "boss")
    roles = [f"R{i}" for i in range(100)]
    e.declare_role(*roles)
    for i, r in enumerate(roles):
        e.assign_permission(perm(f"p{i}", "A+", r, "use", f"o{i}"))
        e.assign_role("boss", r)
    start = e.now_ms
    txs = []
    for i, r in enumerate(roles):
        expiry = start + rng.randint(1, 30_000)
        mode = rng.choice(["grant", "transfer"])
        tx = e.make_tx(lg.RIGHT_TRANSFER, "boss", {"delegate": f"d{i}", "role": r, "expiry_ms": expiry, "mode": mode})
        e.submit(tx)
        txs.append((f"d{i}", f"o{i}", expiry, tx))
    e.produce_block()
    for *_, tx in txs:
        assert tx.tx_id in e.results, e.rejections.get(tx.tx_id)
    created = e.now_ms
    # a delegation created at `created` with expiry <= created is swept at the next block
    end = start + 31_000
    while e.now_ms <= end:
        t = e.now_ms
        for who, obj, expiry, _ in txs:
            allowed = e.query(AccessRequest(who, "use", obj, t)).allowed
            assert allowed == (t < expiry), (who, t, expiry)
        e.produce_block()
    assert not e.state.delegations
    assert created == start + 500


@pytest.mark.criterion(6, "weak revoke keeps the senior assignment, strong revoke removes it")
def test_weak_strong_revocation():
    def setup():
        e = Engine("org", ["bp"])
        e.declare_role("R1", "R2")
        e.add_hierarchy_edge("R1", "R2")
        e.assign_role("u", "R1")
        e.assign_role("u", "R2")
        return e

    weak = setup()
    weak.execute(lg.ROLE_REVOKE, "org", subject="u", role="R2", strength="weak")
    assert weak.state.explicit_roles("u") == {"R1"}
    strong = setup()
    removed = strong.execute(lg.ROLE_REVOKE, "org", subject="u", role="R2", strength="strong")
    assert sorted(removed) == ["R1", "R2"]
    assert strong.state.explicit_roles("u") == set()


@pytest.mark.criterion(7, "revoking Alice's role cascades to Bob's delegations, by snapshot diff")
def test_cascading_revocation():
    e = Engine("org", ["bp"], cpu_capacity_us=10**9, net_capacity_bytes=10**9)
    fund(e, "alice", "bob", "carol", "dave")
    e.declare_role("R", "J", "other")
    e.add_hierarchy_edge("R", "J")
    e.assign_permission(perm("r1", "A+", "R", "read", "chart"))
    e.assign_permission(perm("j1", "A+", "J", "read", "notes"))
    e.assign_permission(perm("x1", "A+", "other", "read", "ledger"))
    e.assign_role("alice", "R")
    e.assign_role("carol", "other")
    d_r = e.delegate("alice", "bob", "R", multi_step=True, levels=2)
    d_j = e.delegate("alice", "bob", "J")
    d_re = e.delegate("bob", "dave", "R")
    d_other = e.delegate("carol", "dave", "other")
    before = e.snapshot()
    e.execute(lg.ROLE_REVOKE, "org", subject="alice", role="R", strength="weak")
    after = e.snapshot()

    changed = {k for k in before if before[k] != after[k]}
    assert changed == {"assignments", "delegations"}
    gone_assign = [a for a in before["assignments"] if a not in after["assignments"]]
    assert [(a["subject_id"], a["role_name"]) for a in gone_assign] == [("alice", "R")]
    assert all(a in before["assignments"] for a in after["assignments"])
    gone = {d["id"] for d in before["delegations"]} - {d["id"] for d in after["delegations"]}
    assert gone == {d_r.delegation_id, d_j.delegation_id, d_re.delegation_id}
    assert [d["id"] for d in after["delegations"]] == [d_other.delegation_id]
    assert e.query(AccessRequest("dave", "read", "ledger", e.now_ms)).allowed
    for who, obj in (("bob", "chart"), ("bob", "notes"), ("dave", "chart")):
        assert not e.query(AccessRequest(who, "read", obj, e.now_ms)).allowed


def _sod_load(eng, rng, subjects, roles, seq):
    st = eng.state
    kind = rng.choices(
        [lg.ROLE_ASSIGN, lg.ROLE_UPDATE, lg.ROLE_REVOKE, lg.RIGHT_TRANSFER, lg.REMOVE_RIGHT_TRANSFER,
         lg.PERMISSION_ASSIGN, lg.PERMISSION_UPDATE, lg.PERMISSION_REVOKE, lg.CHECK_ACCESS],
        [6, 2, 1, 4, 1, 1, 1, 0.2, 2],
    )[0]
    assigned = sorted(st.assignments)
    if kind == lg.ROLE_ASSIGN or (kind in (lg.ROLE_UPDATE, lg.ROLE_REVOKE, lg.RIGHT_TRANSFER) and not assigned):
        return lg.ROLE_ASSIGN, "org", {"subject": rng.choice(subjects), "role": rng.choice(roles)}
    if kind == lg.ROLE_UPDATE:
        s, r = rng.choice(assigned)
        return kind, "org", {"subject": s, "role": rng.choice(roles), "old_role": r}
    if kind == lg.ROLE_REVOKE:
        s, r = rng.choice(assigned)
        return kind, "org", {"subject": s, "role": r, "strength": rng.choice(["weak", "strong"])}
    if kind == lg.RIGHT_TRANSFER:
        s, r = rng.choice(assigned)
        return kind, s, {
            "delegate": rng.choice(subjects),
            "role": r,
            "mode": rng.choice(["grant", "transfer"]),
            "multi_step": rng.random() < 0.3,
            "levels": rng.randint(1, 3),
            "expiry_ms": rng.choice([None, eng.now_ms + rng.randint(1, 40) * 500]),
        }
    if kind == lg.REMOVE_RIGHT_TRANSFER and st.delegations:
        d = st.delegations[rng.choice(sorted(st.delegations))]
        return kind, rng.choice([d.delegator, "org"]), {"delegation": d.delegation_id}
    if kind == lg.PERMISSION_UPDATE and st.permissions:
        return kind, "org", {"identifier": rng.choice(sorted(st.permissions)), "fields": {"target": f"o{rng.randint(0, 4)}"}}
    if kind == lg.PERMISSION_REVOKE and st.permissions:
        return kind, "org", {"role": rng.choice(sorted({p.role for p in st.permissions.values()}))}
    if kind == lg.CHECK_ACCESS:
        return kind, "org", AccessRequest(rng.choice(subjects), "use", f"o{rng.randint(0, 4)}").to_payload()
    pid = f"p{next(seq)}"
    return lg.PERMISSION_ASSIGN, "org", {"permission": perm(pid, "A+", rng.choice(roles), "use", f"o{rng.randint(0, 4)}").to_dict()}


@pytest.mark.criterion(8, "no SoD rule body holds after 10,000 accepted random transactions")
def test_sod_soundness():
    rng = random.Random(8)
    e = Engine("org", ["bp"], cpu_capacity_us=10**13, net_capacity_bytes=10**13, issuer_ram=10**12)
    subjects = [f"s{i}" for i in range(24)]
    for s in subjects:
        e.ledger.register_account(s, stake=1)
    roles = [f"r{i}" for i in range(8)]
    e.declare_role(*roles)
    for senior, junior in (("r0", "r1"), ("r2", "r3"), ("r1", "r4")):
        e.add_hierarchy_edge(senior, junior)
    # pairs chosen so that inheritance and delegation both come into play
    for a, b in (("r4", "r5"), ("r3", "r6"), ("r2", "r7")):
        e.add_mutual_exclusion(a, b)
    seq = itertools.count()
    accepted = refused = blocks = 0
    while accepted < 10_000:
        batch = []
        for _ in range(25):
            kind, sender, payload = _sod_load(e, rng, subjects, roles, seq)
            tx = e.make_tx(kind, sender, payload)
            if e.ledger.try_submit(tx).accepted:
                batch.append(tx)
        e.produce_block()
        blocks += 1
        for tx in batch:
            if tx.tx_id in e.results:
                accepted += 1
            else:
                refused += 1
        if blocks % 40 == 0:
            assert oracles.violations(e.snapshot()) == []
    assert accepted >= 10_000
    assert refused > 0  # the mutual exclusions were actually exercised
    assert any(isinstance(x, errors.SoDViolation) for x in e.rejections.values())
    assert oracles.violations(e.snapshot()) == []


@pytest.mark.criterion(9, "any single-byte tamper of a 50-block chain fails verification")
def test_chain_integrity():
    rng = random.Random(9)
    e = Engine("org", ["bp1", "bp2"], cpu_capacity_us=10**9, net_capacity_bytes=10**9)
    e.declare_role("R")
    while len(e.chain) < 50:
        e.assign_role(f"u{len(e.chain)}", "R")
    assert len(e.chain) == 50
    buf = io.StringIO()
    e.export_chain(buf)
    data = buf.getvalue().encode("utf-8")
    assert e.verify_chain() and lg.verify_jsonl_bytes(data)
    for _ in range(100):
        i = rng.randrange(len(data))
        new = rng.choice([b for b in range(256) if b != data[i]])
        tampered = data[:i] + bytes([new]) + data[i + 1 :]
        assert not lg.verify_jsonl_bytes(tampered), (i, data[i], new)


def _random_peers(rng):
    peers = []
    blocks = rng.randint(1, 30)
    for _ in range(rng.randint(1, 5)):
        rows = []
        for k in range(rng.randint(1, 80)):
            h = rng.randint(1, blocks)
            conf = h * 500.0 + rng.choice([0.0, 500.0])
            start = rng.uniform(conf - 500, conf)
            done = rng.uniform(start, conf)
            rows.append(mx.TxTimeline(f"t{k}", start, done, conf, h))
        peers.append(rows)
    return peers


@pytest.mark.criterion(10, "metrics match an independent evaluator within 1e-9")
def test_metrics_oracle():
    rng = random.Random(10)
    done = 0
    while done < 20:
        peers = _random_peers(rng)
        t_i = rng.choice([0, 250, 500])
        t_j = max(max(t.confirmed_ms for t in p) for p in peers) + rng.choice([0, 300])
        w = mx.MetricsWindow(t_i, t_j, peers)
        if any(not w.in_window(p) for p in peers):
            continue  # lag and CET are undefined on an empty peer window
        rows = []
        for p in peers:
            buf = io.StringIO()
            mx.write_timeline_csv(p, buf)
            rows.append(list(csv.DictReader(io.StringIO(buf.getvalue()))))
        want = oracles.metrics_from_csv_rows(rows, t_i, t_j)
        assert mx.compute_bttt(w) == pytest.approx(want["bttt"], rel=1e-9, abs=0)
        assert mx.compute_cet(w) == pytest.approx(want["cet"], rel=1e-9, abs=0)
        assert mx.compute_throughput(w) == pytest.approx(want["throughput"], rel=1e-9, abs=0)
        done += 1


@pytest.mark.criterion(11, "export and replay reproduce chain hashes and snapshot bit-exactly")
def test_audit_replay():
    engines = [universe.build(seed)[0] for seed in range(25)]
    rng = random.Random(11)
    e = Engine("org", ["bp1", "bp2", "bp3"], cpu_capacity_us=10**13, net_capacity_bytes=10**13, issuer_ram=10**12)
    subjects = [f"s{i}" for i in range(10)]
    for s in subjects:
        e.ledger.register_account(s, stake=1)
    roles = [f"r{i}" for i in range(5)]
    e.declare_role(*roles)
    e.add_hierarchy_edge("r0", "r1")
    e.add_mutual_exclusion("r1", "r2")
    seq = itertools.count()
    for _ in range(60):
        for _ in range(10):
            kind, sender, payload = _sod_load(e, rng, subjects, roles, seq)
            e.ledger.try_submit(e.make_tx(kind, sender, payload))
        e.produce_block()
    engines.append(e)

    for eng in engines:
        buf = io.StringIO()
        eng.export_chain(buf)
        text = buf.getvalue()
        blocks = list(lg.iter_jsonl(text.splitlines()))
        fresh = Engine.replay(blocks)
        assert [b.block_hash for b in fresh.chain] == [b.block_hash for b in eng.chain]
        assert fresh.snapshot() == eng.snapshot()
        again = io.StringIO()
        fresh.export_chain(again)
        assert again.getvalue() == text
