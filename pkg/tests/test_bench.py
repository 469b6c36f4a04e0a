import json
import math

import pytest

from rbacchain import bench, errors
from rbacchain import ledger as lg


def test_mixed_load_four_producers():
    rep = bench.run_benchmark({"volume": 1000, "producers": 4, "duration_ms": 10_000})
    r = rep["repetitions"][0]
    assert r["block_count"] == math.ceil(10_000 / 500)
    assert r["block_deltas_ms"] == [500]
    assert r["bgt_ms"] == {"mean": 500, "min": 500, "max": 500}
    assert r["submitted"] == 1000
    assert r["throughput_tps"] > 0 and r["cet_s"] >= 0 and r["bttt_s"] >= 0


def test_all_check_access_tariff():
    n = 300
    rep = bench.run_benchmark({"volume": n, "tx_mix": {lg.CHECK_ACCESS: 1}, "duration_ms": 2000})
    row = rep["repetitions"][0]["resources"][lg.CHECK_ACCESS]
    assert row == {"count": n, "cpu_us": n * 305, "net_bytes": n * 104}


def test_repetitions_and_means():
    rep = bench.run_benchmark({"volume": 50, "repetitions": 3, "duration_ms": 1500, "peers": 2})
    assert len(rep["repetitions"]) == 3
    assert rep["mean"]["block_count"] == 3
    json.dumps(rep)


def test_same_seed_same_counts():
    a = bench.run_benchmark({"volume": 200, "seed": 4})["repetitions"][0]
    b = bench.run_benchmark({"volume": 200, "seed": 4})["repetitions"][0]
    assert a["resources"] == b["resources"] and a["committed"] == b["committed"]


@pytest.mark.parametrize(
    "bad",
    [
        {"volume": 0},
        {"volume": 10, "producers": 0},
        {"volume": 10, "tx_mix": {"Bogus": 1}},
        {"volume": 10, "tx_mix": {lg.CHECK_ACCESS: 0}},
        {"volume": 10, "colour": "red"},
    ],
)
def test_invalid_scenarios(bad):
    with pytest.raises(errors.InvalidScenario):
        bench.run_benchmark(bad)


def test_scenario_from_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"volume": 5, "duration_ms": 1000}))
    assert bench.Scenario.from_file(p).volume == 5
    p.write_text("{")
    with pytest.raises(errors.InvalidScenario):
        bench.Scenario.from_file(p)
