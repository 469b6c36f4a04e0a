import io
import json

import pytest

from rbacchain import Engine, cli
from rbacchain import ledger as lg


@pytest.fixture
def run(tmp_path):
    chain = tmp_path / "chain.jsonl"

    def _run(*argv):
        out, err = io.StringIO(), io.StringIO()
        code = cli.dispatch(["--chain", str(chain), *argv], out, err)
        text = out.getvalue()
        doc = json.loads(text) if text.strip() and not text.startswith('{"height"') else text
        return code, doc, err.getvalue()

    _run.chain = chain
    return _run


def student_policy(run):
    assert run("role", "create", "student")[0] == 0
    assert run("perm", "assign", "st1", "--mode", "A+", "--role", "student", "--action", "read", "--target", "file7")[0] == 0
    assert run("role", "assign", "student", "bob")[0] == 0


def test_check_allows_student(run):
    student_policy(run)
    code, doc, err = run("check", "--subject", "bob", "--op", "read", "--object", "file7")
    assert code == 0 and doc["allowed"] is True and doc["matched_permission"] == "st1"
    assert err.strip() == "allow"


def test_check_deny_exits_one(run):
    student_policy(run)
    code, doc, _ = run("check", "--subject", "bob", "--op", "write", "--object", "file7")
    assert code == 1 and doc["allowed"] is False


def test_typed_context_flags(run):
    run("role", "create", "nurse")
    cond = json.dumps([{"attribute": "time", "comparator": "in-range", "expected": {"range": [{"time": "09:00"}, {"time": "17:00"}]}}])
    code, doc, err = run("perm", "assign", "n1", "--mode", "A+", "--role", "nurse", "--action", "read", "--target", "chart", "--constraints", cond)
    assert code == 0, err
    run("role", "assign", "nurse", "nina")
    assert run("check", "--subject", "nina", "--op", "read", "--object", "chart", "--ctx", "time=t:10:30")[0] == 0
    assert run("check", "--subject", "nina", "--op", "read", "--object", "chart", "--ctx", "time=t:18:00")[0] == 1


def test_non_issuer_is_rejected(run):
    run("role", "create", "student")
    run("account", "create", "mallory", "--stake", "100")
    code, doc, err = run("--as", "mallory", "role", "assign", "student", "eve")
    assert code == 1 and doc["error"] == "NotIssuer" and "NotIssuer" in err


def test_usage_errors_exit_two(run):
    assert run("frobnicate")[0] == 2
    assert run("check", "--subject", "x")[0] == 2
    code, doc, _ = run("check", "--subject", "x", "--op", "r", "--object", "o", "--ctx", "novalue")
    assert code == 2 and doc["error"] == "UsageError"


def test_malformed_constraints_are_usage_errors(run):
    run("role", "create", "r")
    code, doc, _ = run("perm", "assign", "p", "--mode", "A+", "--role", "r", "--action", "a", "--target", "t", "--constraints", '[{"attribute": "x"}]')
    assert code == 2 and doc["error"] == "UsageError"


def test_domain_errors_carry_code(run):
    code, doc, err = run("role", "assign", "ghost", "bob")
    assert code == 1 and doc["error"] == "UnknownRole" and "UnknownRole" in err


def test_chain_verify_and_tamper(run, tmp_path):
    student_policy(run)
    assert run("chain", "verify")[:2] == (0, {"valid": True})
    out = tmp_path / "export.jsonl"
    assert run("chain", "export", "--out", str(out))[0] == 0
    assert run("chain", "verify", "--file", str(out))[:2] == (0, {"valid": True})
    data = bytearray(out.read_bytes())
    i = data.index(b"file7")
    data[i] = ord("F")
    out.write_bytes(bytes(data))
    assert run("chain", "verify", "--file", str(out))[:2] == (1, {"valid": False})


def test_export_replay_round_trip(run):
    student_policy(run)
    run("--as", "bob", "account", "create", "bob", "--stake", "10")
    code, rec, _ = run("--as", "bob", "delegate", "create", "carol", "student", "--expiry", "100000")
    assert code == 0 and rec["delegate"] == "carol"
    code, text, _ = run("chain", "export")
    blocks = [lg.Block.from_dict(json.loads(l)) for l in text.splitlines()]
    fresh = Engine.replay(blocks)
    assert [b.block_hash for b in fresh.chain] == [b.block_hash for b in blocks]
    assert fresh.snapshot() == run("snapshot")[1]


def test_snapshot_audit_and_redundancy(run):
    student_policy(run)
    run("check", "--subject", "bob", "--op", "read", "--object", "file7")
    code, events, _ = run("audit", "--subject", "bob", "--allowed")
    assert code == 0 and [e["event_kind"] for e in events] == ["CheckAccess"]
    code, rep, _ = run("redundancy")
    assert code == 0 and rep["role_pairs"] == []


def test_account_commands(run):
    run("account", "create", "alice", "--stake", "1000")
    run("account", "create", "bob")
    code, acct, _ = run("account", "delegate-bw", "alice", "bob", "--cpu", "100")
    assert code == 0
    code, acct, _ = run("account", "show", "bob")
    assert code == 0 and acct["id"] == "bob"
    code, doc, _ = run("account", "delegate-bw", "alice", "bob", "--ram", "5")
    assert code == 1 and doc["error"] == "RamDelegationForbidden"


def _bundle(path, lines):
    path.write_text("".join(json.dumps(l) + "\n" for l in lines))
    return str(path)


def _tx(kind, **payload):
    return {"kind": kind, "sender": "issuer", "payload": payload}


def test_bundle_all_valid(run, tmp_path):
    lines = [
        _tx(lg.DECLARE_ROLE, role="a"),
        _tx(lg.DECLARE_ROLE, role="b"),
        _tx(lg.ADD_MUTUAL_EXCLUSION, role_a="a", role_b="b"),
        _tx(lg.ROLE_ASSIGN, subject="x", role="a"),
        _tx(lg.ROLE_ASSIGN, subject="y", role="b"),
    ]
    assert run("bundle", "load", _bundle(tmp_path / "b.jsonl", lines))[:2] == (0, {"applied": 5})


def test_bundle_stops_at_sod_violation(run, tmp_path):
    run("role", "create", "a", "b")
    run("constraint", "add-pair", "a", "b")
    lines = [
        _tx(lg.ROLE_ASSIGN, subject="x", role="a"),
        _tx(lg.ROLE_ASSIGN, subject="y", role="b"),
        _tx(lg.ROLE_ASSIGN, subject="x", role="b"),
        _tx(lg.ROLE_ASSIGN, subject="z", role="a"),
    ]
    code, doc, err = run("bundle", "load", _bundle(tmp_path / "b.jsonl", lines))
    assert code == 1 and doc["error"] == "SoDViolation"
    assert doc["details"]["line"] == 3 and doc["details"]["applied"] == 2
    snap = run("snapshot")[1]
    assert [a["subject_id"] for a in snap["assignments"]] == ["x", "y"]


def test_bundle_empty_and_garbled(run, tmp_path):
    empty = tmp_path / "e.jsonl"
    empty.write_text("")
    assert run("bundle", "load", str(empty))[:2] == (0, {"applied": 0})
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps(_tx(lg.DECLARE_ROLE, role="a")) + "\n{oops\n")
    code, doc, _ = run("bundle", "load", str(bad))
    assert code == 1 and doc["error"] == "ParseError" and doc["details"]["line"] == 2


def test_bench_run(run, tmp_path):
    sc = tmp_path / "sc.json"
    sc.write_text(json.dumps({"volume": 20, "duration_ms": 1000}))
    code, rep, err = run("bench", "run", str(sc))
    assert code == 0 and rep["repetitions"][0]["block_deltas_ms"] == [500]
    sc.write_text(json.dumps({"volume": 0}))
    code, doc, _ = run("bench", "run", str(sc))
    assert code == 1 and doc["error"] == "InvalidScenario"


def test_env_var_selects_chain(tmp_path, monkeypatch):
    chain = tmp_path / "env.jsonl"
    monkeypatch.setenv(cli.ENV_CHAIN, str(chain))
    assert cli.dispatch(["role", "create", "r"], io.StringIO(), io.StringIO()) == 0
    assert chain.exists()


def test_nonces_keep_increasing_across_invocations(run):
    student_policy(run)
    run("check", "--subject", "bob", "--op", "read", "--object", "file7")
    blocks = lg.read_jsonl(run.chain)
    nonces = [tx.nonce for b in blocks[1:] for tx in b.tx_list]
    assert nonces == sorted(set(nonces))
