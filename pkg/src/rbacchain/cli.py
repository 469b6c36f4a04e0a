"""Command-line front end.

State lives in a JSON-lines chain file (``--chain`` or ``$RBACCHAIN_CHAIN``,
default ``chain.jsonl``) plus an ``.accounts.json`` sidecar. Every mutating
command seals one block per transaction. Output is JSON on stdout and a
one-line summary on stderr.

Exit codes: 0 success, 1 domain violation (deny, SoD, NotIssuer, ...),
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from . import errors
from . import ledger as lg
from .access import AccessRequest, Decision
from .bench import Scenario, run_benchmark
from .constraints import ContextCondition, SodRule, parse_typed
from .engine import Engine

ENV_CHAIN = "RBACCHAIN_CHAIN"
EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _sidecar(chain_path: Path) -> Path:
    return chain_path.with_name(chain_path.name + ".accounts.json")


def open_engine(chain_path: Path, issuer: str, producers: Sequence[str]) -> Engine:
    if not chain_path.exists():
        return Engine(issuer, producers)
    eng = Engine.replay(lg.read_jsonl(chain_path))
    eng.ledger.metered = True
    side = _sidecar(chain_path)
    if side.exists():
        eng.ledger.load_accounts(json.loads(side.read_text())["accounts"])
    return eng


def save_engine(eng: Engine, chain_path: Path) -> None:
    tmp = chain_path.with_name(chain_path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        eng.export_chain(fh)
    os.replace(tmp, chain_path)
    _sidecar(chain_path).write_text(json.dumps({"accounts": eng.ledger.dump_accounts()}, indent=1))


def load_policy_bundle(eng: Engine, path: str | Path) -> int:
    """Apply a JSON-lines bundle of transactions in order; stop at the first error.

    Each line is ``{"kind": ..., "sender": ..., "payload": {...}}``. Errors
    carry ``line`` and ``applied`` in their details.
    """
    applied = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                item = json.loads(line)
                kind, sender, payload = item["kind"], item["sender"], item.get("payload", {})
            except (ValueError, KeyError, TypeError) as exc:
                raise errors.ParseError(f"line {lineno}: {exc}", line=lineno, applied=applied) from exc
            try:
                eng.execute(kind, sender, payload)
            except errors.RbacChainError as exc:
                exc.details.update(line=lineno, applied=applied)
                raise
            applied += 1
    return applied


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _json_arg(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON {text!r}: {exc}") from None


def _ctx(pairs: Sequence[str]) -> dict[str, Any]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise UsageError(f"--ctx expects key=value, got {pair!r}")
        out[key] = parse_typed(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbacchain", description=__doc__.split("\n\n")[0])
    p.add_argument("--chain", default=os.environ.get(ENV_CHAIN, "chain.jsonl"))
    p.add_argument("--as", dest="sender", help="signing account (default: issuer)")
    p.add_argument("--issuer", default="issuer", help="issuer for a new chain")
    p.add_argument("--producers", default="producer1", help="comma-separated, new chain only")
    sub = p.add_subparsers(dest="verb", required=True)

    acct = sub.add_parser("account").add_subparsers(dest="action", required=True)
    a = acct.add_parser("create")
    a.add_argument("id")
    a.add_argument("--stake", type=int, default=0)
    a.add_argument("--ram", type=int, default=0)
    a = acct.add_parser("stake")
    a.add_argument("id")
    a.add_argument("tokens", type=int)
    a = acct.add_parser("delegate-bw")
    a.add_argument("src")
    a.add_argument("dst")
    a.add_argument("--cpu", type=int, default=0)
    a.add_argument("--net", type=int, default=0)
    a.add_argument("--ram", type=int, default=0)
    a = acct.add_parser("show")
    a.add_argument("id")

    role = sub.add_parser("role").add_subparsers(dest="action", required=True)
    a = role.add_parser("create")
    a.add_argument("names", nargs="+")
    a = role.add_parser("assign")
    a.add_argument("role")
    a.add_argument("subjects", nargs="+")
    a = role.add_parser("update")
    a.add_argument("subject")
    a.add_argument("new_role")
    a.add_argument("--old")
    a = role.add_parser("revoke")
    a.add_argument("subject")
    a.add_argument("role")
    a.add_argument("--strong", action="store_true")

    perm = sub.add_parser("perm").add_subparsers(dest="action", required=True)
    a = perm.add_parser("assign")
    a.add_argument("identifier")
    a.add_argument("--mode", required=True)
    a.add_argument("--role", required=True)
    a.add_argument("--action", dest="perm_action", required=True)
    a.add_argument("--target", required=True)
    a.add_argument("--constraints", type=_json_arg, default=[])
    a.add_argument("--exception")
    a = perm.add_parser("update")
    a.add_argument("identifier")
    a.add_argument("--mode")
    a.add_argument("--action", dest="perm_action")
    a.add_argument("--target")
    a.add_argument("--constraints", type=_json_arg)
    a.add_argument("--exception")
    a = perm.add_parser("revoke")
    a.add_argument("role")

    deleg = sub.add_parser("delegate").add_subparsers(dest="action", required=True)
    a = deleg.add_parser("create")
    a.add_argument("delegate")
    a.add_argument("role")
    a.add_argument("--expiry", type=int)
    a.add_argument("--start", type=int)
    a.add_argument("--transfer", action="store_true")
    a.add_argument("--multi-step", action="store_true")
    a.add_argument("--levels", type=int)
    a.add_argument("--parent")
    a = deleg.add_parser("remove")
    a.add_argument("delegation")

    hier = sub.add_parser("hierarchy").add_subparsers(dest="action", required=True)
    a = hier.add_parser("add-edge")
    a.add_argument("senior")
    a.add_argument("junior")

    con = sub.add_parser("constraint").add_subparsers(dest="action", required=True)
    a = con.add_parser("add-sod")
    a.add_argument("rule_id")
    a.add_argument("--atoms", type=_json_arg, required=True)
    a = con.add_parser("add-pair")
    a.add_argument("role_a")
    a.add_argument("role_b")
    a = con.add_parser("add-cardinality")
    a.add_argument("max_roles", type=int)
    a = con.add_parser("add-fact")
    a.add_argument("predicate", choices=("junior", "imply"))
    a.add_argument("x")
    a.add_argument("y")

    a = sub.add_parser("check")
    a.add_argument("--subject", required=True)
    a.add_argument("--op", required=True)
    a.add_argument("--object", required=True)
    a.add_argument("--ctx", action="append", default=[])
    a.add_argument("--at", type=int)

    a = sub.add_parser("audit")
    a.add_argument("--subject")
    a.add_argument("--from", dest="from_ms", type=int)
    a.add_argument("--to", dest="to_ms", type=int)
    g = a.add_mutually_exclusive_group()
    g.add_argument("--allowed", dest="allowed", action="store_const", const=True)
    g.add_argument("--denied", dest="allowed", action="store_const", const=False)

    sub.add_parser("redundancy")
    sub.add_parser("snapshot")

    ch = sub.add_parser("chain").add_subparsers(dest="action", required=True)
    a = ch.add_parser("verify")
    a.add_argument("--file")
    a = ch.add_parser("export")
    a.add_argument("--out")

    b = sub.add_parser("bench").add_subparsers(dest="action", required=True)
    a = b.add_parser("run")
    a.add_argument("scenario")

    b = sub.add_parser("bundle").add_subparsers(dest="action", required=True)
    a = b.add_parser("load")
    a.add_argument("path")
    return p


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


class _Result:
    def __init__(self, doc: Any, code: int = EXIT_OK, summary: str = "", mutated: bool = False):
        self.doc, self.code, self.summary, self.mutated = doc, code, summary, mutated


def _conditions(raw: Any) -> list[dict[str, Any]]:
    if not isinstance(raw, list):
        raise UsageError("--constraints expects a JSON list")
    # round-trip to validate
    try:
        return [ContextCondition.from_dict(c).to_dict() for c in raw]
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise UsageError(f"bad --constraints entry: {exc!r}") from None


def _run(args: argparse.Namespace, eng: Engine) -> _Result:
    sender = args.sender or eng.issuer
    verb, action = args.verb, getattr(args, "action", None)

    def tx(kind: str, **payload: Any) -> Any:
        return eng.execute(kind, sender, payload)

    if verb == "account":
        led = eng.ledger
        if action == "create":
            acct = led.register_account(args.id, stake=args.stake, ram_bytes=args.ram)
        elif action == "stake":
            acct = led.stake(args.id, args.tokens)
        elif action == "delegate-bw":
            acct, _ = led.delegate_bandwidth(args.src, args.dst, args.cpu, args.net, args.ram)
        else:
            acct = led.account(args.id)
        return _Result(acct.to_dict(), summary=f"account {acct.id}", mutated=action != "show")

    if verb == "role":
        if action == "create":
            for name in args.names:
                tx(lg.DECLARE_ROLE, role=name)
            return _Result({"roles": args.names}, summary="roles declared", mutated=True)
        if action == "assign":
            done = []
            for s in args.subjects:
                tx(lg.ROLE_ASSIGN, subject=s, role=args.role)
                done.append(s)
            return _Result({"role": args.role, "assigned": done}, summary=f"{len(done)} assigned", mutated=True)
        if action == "update":
            payload = {"subject": args.subject, "role": args.new_role}
            if args.old:
                payload["old_role"] = args.old
            tx(lg.ROLE_UPDATE, **payload)
            return _Result({"subject": args.subject, "role": args.new_role}, summary="updated", mutated=True)
        removed = tx(lg.ROLE_REVOKE, subject=args.subject, role=args.role, strength="strong" if args.strong else "weak")
        return _Result({"subject": args.subject, "removed_roles": removed}, summary="revoked", mutated=True)

    if verb == "perm":
        if action == "assign":
            perm = {
                "identifier": args.identifier,
                "mode": args.mode,
                "role": args.role,
                "action": args.perm_action,
                "target": args.target,
                "constraints": _conditions(args.constraints),
                "exception": args.exception,
            }
            res = tx(lg.PERMISSION_ASSIGN, permission=perm)
            return _Result(res.to_dict(), summary=f"permission {args.identifier}", mutated=True)
        if action == "update":
            fields: dict[str, Any] = {}
            for key, val in (("mode", args.mode), ("action", args.perm_action), ("target", args.target), ("exception", args.exception)):
                if val is not None:
                    fields[key] = val
            if args.constraints is not None:
                fields["constraints"] = _conditions(args.constraints)
            res = tx(lg.PERMISSION_UPDATE, identifier=args.identifier, fields=fields)
            return _Result(res.to_dict(), summary=f"permission {args.identifier} updated", mutated=True)
        ids = tx(lg.PERMISSION_REVOKE, role=args.role)
        return _Result({"role": args.role, "removed": ids}, summary=f"{len(ids)} removed", mutated=True)

    if verb == "delegate":
        if action == "create":
            payload: dict[str, Any] = {
                "delegate": args.delegate,
                "role": args.role,
                "mode": "transfer" if args.transfer else "grant",
                "multi_step": args.multi_step,
            }
            for key, val in (("expiry_ms", args.expiry), ("start_ms", args.start), ("levels", args.levels), ("parent", args.parent)):
                if val is not None:
                    payload[key] = val
            rec = tx(lg.RIGHT_TRANSFER, **payload)
            return _Result(rec.to_dict(), summary=f"delegation {rec.delegation_id}", mutated=True)
        removed = tx(lg.REMOVE_RIGHT_TRANSFER, delegation=args.delegation)
        return _Result({"removed": removed}, summary=f"{len(removed)} removed", mutated=True)

    if verb == "hierarchy":
        tx(lg.ADD_HIERARCHY_EDGE, senior=args.senior, junior=args.junior)
        return _Result({"edge": [args.senior, args.junior]}, summary="edge added", mutated=True)

    if verb == "constraint":
        if action == "add-sod":
            rule = SodRule(args.rule_id, tuple(tuple(a) for a in args.atoms))
            tx(lg.ADD_SOD_RULE, rule=rule.to_dict())
            doc = rule.to_dict()
        elif action == "add-pair":
            rule = tx(lg.ADD_MUTUAL_EXCLUSION, role_a=args.role_a, role_b=args.role_b)
            doc = rule.to_dict()
        elif action == "add-cardinality":
            tx(lg.SET_CARDINALITY, max_roles=args.max_roles)
            doc = {"max_roles_per_subject": args.max_roles}
        else:
            tx(lg.ADD_FACT, predicate=args.predicate, x=args.x, y=args.y)
            doc = {"fact": [args.predicate, args.x, args.y]}
        return _Result(doc, summary="constraint registered", mutated=True)

    if verb == "check":
        req = AccessRequest(args.subject, args.op, args.object, 0, _ctx(args.ctx))
        payload = req.to_payload()
        payload["at_ms"] = args.at
        decision: Decision = tx(lg.CHECK_ACCESS, **payload)
        code = EXIT_OK if decision.allowed else EXIT_DOMAIN
        return _Result(decision.to_dict(), code, "allow" if decision.allowed else "deny", mutated=True)

    if verb == "audit":
        events = eng.audit_log(subject=args.subject, from_ms=args.from_ms, to_ms=args.to_ms, allowed=args.allowed)
        return _Result([e.to_dict() for e in events], summary=f"{len(events)} events")

    if verb == "redundancy":
        report = eng.detect_redundancy()
        return _Result(report.to_dict(), summary=f"{len(report.role_pairs)} role pairs")

    if verb == "snapshot":
        return _Result(eng.snapshot(), summary="snapshot")

    if verb == "chain":
        if action == "verify":
            if args.file:
                ok = lg.verify_jsonl_bytes(Path(args.file).read_bytes(), eng.schedule.block_interval_ms)
            else:
                ok = eng.verify_chain()
            return _Result({"valid": ok}, EXIT_OK if ok else EXIT_DOMAIN, "valid" if ok else "INVALID")
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                eng.export_chain(fh)
            return _Result({"exported": args.out, "blocks": len(eng.chain)}, summary="exported")
        return _Result(None, summary=f"{len(eng.chain)} blocks")

    if verb == "bench":
        report = run_benchmark(Scenario.from_file(args.scenario))
        return _Result(report, summary=f"throughput {report['mean']['throughput_tps']:.2f} tx/s")

    if verb == "bundle":
        n = load_policy_bundle(eng, args.path)
        return _Result({"applied": n}, summary=f"{n} transactions applied", mutated=True)

    raise UsageError(f"unknown verb {verb}")


def dispatch(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    chain_path = Path(args.chain)
    eng = None
    try:
        eng = open_engine(chain_path, args.issuer, args.producers.split(","))
        result = _run(args, eng)
    except UsageError as exc:
        print(json.dumps({"error": "UsageError", "message": str(exc)}), file=stdout)
        print(f"UsageError: {exc}", file=stderr)
        return EXIT_USAGE
    except errors.RbacChainError as exc:
        if eng is not None and getattr(args, "verb", None) in ("role", "perm", "delegate", "hierarchy", "constraint", "bundle", "check"):
            # blocks sealed before the failure (and the failing tx's block) stay on chain
            save_engine(eng, chain_path)
        print(json.dumps(exc.to_dict(), default=str), file=stdout)
        print(str(exc), file=stderr)
        return EXIT_DOMAIN
    if args.verb == "chain" and args.action == "export" and not args.out:
        eng.export_chain(stdout)
    else:
        print(json.dumps(result.doc, default=str), file=stdout)
    if result.summary:
        print(result.summary, file=stderr)
    if result.mutated:
        save_engine(eng, chain_path)
    return result.code


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
