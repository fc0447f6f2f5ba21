"""Acceptance suite: one test per release criterion, at pinned tolerances.

Each test prints a PASS/FAIL line (run with -s or check the captured output)
and enforces the criterion's runtime budget.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from wobblenode.balance import BalanceConfig, balance_percent
from wobblenode.model import load_weights, serialize_weights, synthetic_reference_model
from wobblenode.power import (
    FeasibilityError,
    PowerParams,
    check_frequency,
    cycle_demand_per_s,
    min_feasible_frequency,
    om_power,
    reconcile,
    savings,
)
from wobblenode.qnn import ConvWeights, QuantParams, QuantizedTensor, RequantSpec, conv1d, fully_connected, requantize
from wobblenode.runtime import OperatingMode, parse_scenario, run_scenario
from wobblenode.signals import GeneratorConfig, frame_windows, generate_recording
from wobblenode.model import ExerciseClass

from oracles import ref_conv1d, ref_fully_connected, ref_requantize

P = PowerParams()
MODEL = synthetic_reference_model(3)


@contextmanager
def criterion(name: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"FAIL: {name}")
        raise
    elapsed = time.perf_counter() - start
    print(f"PASS: {name} ({elapsed:.2f} s, budget {budget_s:.0f} s)")
    assert elapsed < budget_s, f"{name} exceeded its {budget_s} s runtime budget"


def hand_expanded_mw():
    raw = (2.96 + 83.96 / 4) * 100 * 1e-3 + 4.546
    bal = 3.76 * (100 / 7) * 1e-3 + (2.73 + 83.96) * 1.0 * 1e-3 + 2.609
    cnn = 3.76 * (100 / 7) * 1e-3 + (852.38 + 2.73 + 83.96) * 1.0 * 1e-3 + 3.101
    return raw, bal, cnn


def motion(cls="R", t1=60.0, seed=1):
    return [{"t0_s": 0, "t1_s": t1, "class": cls, "seed": seed}]


def test_power_model_reproduction():
    with criterion("power model reproduces 6.941 / 2.749 / 4.094 mW within 1%", 1.0):
        raw, bal, cnn = hand_expanded_mw()
        got = {m: om_power(m, P).total_mw for m in OperatingMode}
        assert got[OperatingMode.RAW] == pytest.approx(raw, rel=0.01)
        assert got[OperatingMode.BALANCE] == pytest.approx(bal, rel=0.01)
        assert got[OperatingMode.CNN] == pytest.approx(cnn, rel=0.01)
        assert got[OperatingMode.RAW] == pytest.approx(6.941, rel=0.01)
        assert got[OperatingMode.BALANCE] == pytest.approx(2.749, rel=0.01)
        assert got[OperatingMode.CNN] == pytest.approx(4.094, rel=0.01)


def test_savings_claim():
    with criterion("raw -> balance saves 60% within 1 pp", 1.0):
        s = savings(OperatingMode.RAW, OperatingMode.BALANCE, P)
        assert abs(s - 60.0) <= 1.0


def test_simulation_model_reconciliation():
    with criterion("60 s steady-state simulation within 2% of the model, all modes", 5.0):
        for mode, horizon, skip in (("raw", 60, 0.0), ("balance", 60, 0.0), ("cnn", 75, 15.0)):
            scen = parse_scenario(
                {"horizon_s": horizon, "initial_mode": mode, "motion": motion(t1=horizon)}
            )
            trace = run_scenario(scen, params=P, model=MODEL if mode == "cnn" else None)
            out = reconcile(trace.records, P, skip_s=skip)
            assert out["span_s"] >= 60
            assert out["relative_error"] < 0.02, (mode, out)


def test_frequency_feasibility():
    with criterion("minimum feasible frequencies 8/2/4 MHz; cnn at 2 MHz refused", 1.0):
        assert min_feasible_frequency(OperatingMode.RAW, P) == 8
        assert min_feasible_frequency(OperatingMode.BALANCE, P) == 2
        assert min_feasible_frequency(OperatingMode.CNN, P) == 4
        assert cycle_demand_per_s(OperatingMode.CNN, P) == pytest.approx(2_279_649, abs=1)
        with pytest.raises(FeasibilityError):
            check_frequency(OperatingMode.CNN, 2, P)
        scen = parse_scenario(
            {"horizon_s": 20, "initial_mode": "cnn", "initial_frequency_mhz": 2,
             "motion": motion(t1=20)}
        )
        with pytest.raises(FeasibilityError):
            run_scenario(scen, params=P, model=MODEL)


def test_table5_consistency():
    with criterion("cycle counts reproduce 105 us / 300 us / 277 ms within 1%", 1.0):
        assert P.cycles_get / 8e6 == pytest.approx(105e-6, rel=0.01)
        assert (P.cycles_get + P.cycles_balance) / 8e6 == pytest.approx(300e-6, rel=0.01)
        assert P.cycles_cnn / 8e6 == pytest.approx(277e-3, rel=0.01)


def test_kernel_oracle_suite():
    with criterion("1000 randomized kernel cases bit-exact vs big-integer reference", 10.0):
        rng = np.random.default_rng(2024)
        failures = 0
        for case in range(1000):
            kind = case % 3
            mult = int(rng.integers(1 << 30, 1 << 31))
            shift = int(rng.integers(0, 24))
            zp_out = int(rng.integers(-128, 128))
            spec = RequantSpec(mult, shift, zp_out)
            if kind == 0:
                acc = int(rng.integers(-(1 << 31), 1 << 31))
                got = requantize(acc, spec)
                want = ref_requantize(acc, mult, shift, zp_out)
                failures += got != want
            elif kind == 1:
                c_in, c_out = int(rng.integers(1, 5)), int(rng.integers(1, 5))
                k = int(rng.integers(1, 6))
                length = int(rng.integers(k, 33))
                zp_in = int(rng.integers(-128, 128))
                relu = bool(rng.integers(0, 2))
                x = rng.integers(-128, 128, (c_in, length)).astype(np.int8)
                w = rng.integers(-128, 128, (c_out, c_in, k)).astype(np.int8)
                got = conv1d(
                    QuantizedTensor(x, QuantParams(1.0, zp_in)), ConvWeights(w), spec, relu
                ).data.tolist()
                want = ref_conv1d(x.tolist(), zp_in, w.tolist(), mult, shift, zp_out, relu)
                failures += got != want
            else:
                n_in, n_out = int(rng.integers(1, 65)), int(rng.integers(1, 9))
                zp_in = int(rng.integers(-128, 128))
                relu = bool(rng.integers(0, 2))
                x = rng.integers(-128, 128, (1, n_in)).astype(np.int8)
                w = rng.integers(-128, 128, (n_out, n_in)).astype(np.int8)
                got = fully_connected(
                    QuantizedTensor(x, QuantParams(1.0, zp_in)), w, spec, relu
                ).data.reshape(-1).tolist()
                want = ref_fully_connected(x[0].tolist(), zp_in, w.tolist(), mult, shift, zp_out, relu)
                failures += got != want
        assert failures == 0


def test_shape_and_framing_arithmetic():
    with criterion("weight load asserts the 215...5 chain; 181 and 46 frames per 60 s", 1.0):
        loaded = load_weights(serialize_weights(MODEL))
        assert loaded.length_chain() == (215, 207, 103, 95, 47, 940, 100, 5)
        assert loaded.is_reference_architecture()
        rec = generate_recording(ExerciseClass.S, 60, GeneratorConfig(seed=1))
        assert len(frame_windows(rec, stride_s=0.25)) == 181
        assert len(frame_windows(rec, stride_s=1.0)) == 46


def _scenario_suite():
    suite = []
    for seed, cls in enumerate(["B", "FB", "S", "R", "G"]):
        suite.append(
            {"horizon_s": 40, "initial_mode": "balance",
             "events": [{"t_s": 20, "command": "cnn"}],
             "motion": motion(cls=cls, t1=40, seed=seed)}
        )
    suite.append({"horizon_s": 60, "initial_mode": "raw", "motion": motion(t1=60)})
    suite.append(
        {"horizon_s": 45, "initial_mode": "raw",
         "events": [{"t_s": 10, "command": "balance"}, {"t_s": 25, "command": "cnn"},
                    {"t_s": 40, "command": "raw"}],
         "motion": motion(cls="FB", t1=45, seed=9)}
    )
    suite.append(
        {"horizon_s": 60, "initial_mode": "cnn",
         "motion": [{"t0_s": 0, "t1_s": 25, "class": "R", "seed": 1},
                    {"t0_s": 25, "t1_s": 35, "class": "still"},
                    {"t0_s": 35, "t1_s": 60, "class": "R", "seed": 2}]}
    )
    suite.append(
        {"horizon_s": 30, "initial_mode": "balance",
         "motion": [{"t0_s": 0, "t1_s": 30, "class": "still"}]}
    )
    suite.append(
        {"horizon_s": 50, "initial_mode": "raw",
         "events": [{"t_s": 12.5, "command": "cnn"}, {"t_s": 35, "command": "balance"}],
         "motion": motion(cls="G", t1=50, seed=11)}
    )
    return suite


def test_runtime_invariants():
    with criterion(
        "10-scenario suite: FIFO conservation, byte-identical replays, "
        "packet exclusivity, stop gating", 30.0
    ):
        suite = _scenario_suite()
        assert len(suite) == 10
        for spec_obj in suite:
            trace = run_scenario(parse_scenario(spec_obj), params=P, model=MODEL)
            again = run_scenario(parse_scenario(spec_obj), params=P, model=MODEL)
            assert trace.to_jsonl() == again.to_jsonl()

            for edge, st in trace.summary()["detail"]["fifo"].items():
                assert st["produced"] == st["consumed"] + st["drained"] + st["resident"], edge

            mode = None
            for rec in trace.records:
                if rec["kind"] == "reconfig":
                    mode = rec["detail"]["mode"]
                elif rec["kind"] == "packet":
                    expected = "raw" if mode == "raw" else "result"
                    assert rec["detail"]["type"] == expected

        # scripted 10 s stillness inside cnn mode suppresses every inference
        gated = run_scenario(parse_scenario(_scenario_suite()[7]), params=P, model=MODEL)
        cnn_times = [r["t_s"] for r in gated.tasks("cnn")]
        assert not [t for t in cnn_times if 25 < t <= 35]
        assert gated.summary()["detail"]["gated"] == 10


def test_balance_anchors():
    with criterion("balance anchors 100 / 0 and monotone under magnitude scaling", 5.0):
        cfg = BalanceConfig()
        assert balance_percent(np.zeros((15, 2)), cfg) == 100
        ground = np.zeros((15, 2))
        ground[:, 0] = cfg.ground_magnitude
        assert balance_percent(ground, cfg) == 0
        rng = np.random.default_rng(99)
        for _ in range(200):
            n = int(rng.integers(1, 40))
            window = rng.uniform(-1500, 1500, (n, 2))
            c = float(rng.uniform(1.0, 3.0))
            assert balance_percent(window * c, cfg) <= balance_percent(window, cfg)
