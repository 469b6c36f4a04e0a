"""Run the load generator across producer counts and print the metrics,
then write one timeline CSV.

    python demos/benchmark.py [volume]
"""

import sys

from rbacchain import Engine, bench
from rbacchain import ledger as lg
from rbacchain import metrics as mx

volume = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
print(f"{'producers':>9} {'blocks':>6} {'gap ms':>6} {'committed':>9} {'lag s/tx':>10} {'exec s/tx':>9} {'tx/s':>7}")
for n in (1, 2, 4, 8):
    rep = bench.run_benchmark({"volume": volume, "producers": n, "duration_ms": 10_000, "peers": 2})
    r = rep["repetitions"][0]
    print(f"{n:>9} {r['block_count']:>6} {r['bgt_ms']['mean']:>6.0f} {r['committed']:>9} "
          f"{r['bttt_s']:>10.6f} {r['cet_s']:>9.6f} {r['throughput_tps']:>7.1f}")

rep = bench.run_benchmark({"volume": 500, "tx_mix": {lg.CHECK_ACCESS: 1}, "duration_ms": 5000})
row = rep["repetitions"][0]["resources"][lg.CHECK_ACCESS]
print(f"\n500 CheckAccess calls charged {row['cpu_us']} us CPU and {row['net_bytes']} B NET")

eng = Engine("org", ["bp1"])
eng.declare_role("r")
for i in range(5):
    eng.assign_role(f"u{i}", "r")
timeline = mx.timelines_from_records(eng.timelines(), eng.ledger.confirmed_at)
mx.write_timeline_csv(timeline, sys.stdout)
