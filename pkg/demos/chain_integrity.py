"""Export a chain, flip one byte, and watch verification fail; then replay
the untouched export into a fresh engine.

    python demos/chain_integrity.py
"""

import io

from rbacchain import Engine
from rbacchain import ledger as lg

eng = Engine("org", ["bp1", "bp2", "bp3"])
eng.declare_role("reader")
for i in range(20):
    eng.assign_role(f"user{i}", "reader")
buf = io.StringIO()
eng.export_chain(buf)
data = buf.getvalue().encode()
print(f"{len(eng.chain)} blocks, producers {sorted({b.producer for b in eng.chain[1:]})}")
print("verify untouched:", lg.verify_jsonl_bytes(data))

i = data.index(b"user7")
tampered = data[:i] + b"U" + data[i + 1 :]
print("verify with user7 -> User7:", lg.verify_jsonl_bytes(tampered))

fresh = Engine.replay(list(lg.iter_jsonl(data.decode().splitlines())))
print("replayed hashes match:", [b.block_hash for b in fresh.chain] == [b.block_hash for b in eng.chain])
print("replayed snapshot matches:", fresh.snapshot() == eng.snapshot())
